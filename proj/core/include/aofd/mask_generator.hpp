#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "aofd/nn.hpp"
#include "aofd/random.hpp"
#include "aofd/tensor.hpp"

namespace aofd {

inline constexpr int kRoiSize = 7;
inline constexpr int kRoiCells = kRoiSize * kRoiSize;

// Row-major 7x7 grid of scalars (heat values, soft masks, gradients).
using MaskGrid = std::array<double, kRoiCells>;

// One-channel output of the mask generator. Low values mark the cells the
// generator wants masked.
struct MaskHeatMap {
  MaskGrid values{};
};

// 7x7 grid in {0, 1}; 0 marks a masked (occluded) cell.
class BinaryMask {
 public:
  BinaryMask() { cells_.fill(1); }

  static BinaryMask all_ones() { return {}; }
  static BinaryMask all_zeros();

  std::uint8_t operator()(int row, int col) const {
    return cells_[row * kRoiSize + col];
  }
  std::uint8_t cell(int index) const { return cells_[index]; }
  void set(int index, std::uint8_t value);

  int zero_count() const;
  const std::array<std::uint8_t, kRoiCells>& cells() const { return cells_; }

  // Continuous copy for the compact loss.
  MaskGrid as_grid() const;

  bool operator==(const BinaryMask&) const = default;

 private:
  std::array<std::uint8_t, kRoiCells> cells_{};
};

enum class HalfDirection { kLeft, kRight, kTop, kBottom };

struct MaskType {
  enum class Tag { kGenerated, kHalf, kRandomDrop, kNone };
  Tag tag = Tag::kNone;
  HalfDirection direction = HalfDirection::kLeft;  // meaningful for kHalf only
};

const char* to_string(MaskType::Tag tag);

// Sampling weights over the four mask types.
struct MaskTypeProbabilities {
  double generated = 0.25;
  double half = 0.25;
  double random_drop = 0.25;
  double none = 0.25;

  void validate() const;  // non-negative, sums to 1 within 1e-9
};

// Generator head: a main branch of four 3x3 convolutions narrowing the
// channel count C -> C/2 -> C/4 -> C/8 -> 1 with ReLU between them, plus a
// straight mapping (the channel mean of the input) added to the output.
struct MaskGenerator {
  int channels = 0;
  std::array<Conv2d, 4> layers;

  MaskGenerator() = default;
  explicit MaskGenerator(int roi_channels);

  void init(Rng& rng);
  void zero_main_branch();

  template <typename F>
  void for_each_param(F&& f) {
    for (auto& layer : layers) layer.for_each_param(f);
  }
  template <typename F>
  void for_each_param(F&& f) const {
    for (const auto& layer : layers) layer.for_each_param(f);
  }
};

struct GeneratorCache {
  std::array<Conv2dCache, 4> convs;
  std::array<Tensor, 3> activations;  // post-ReLU outputs of layers 0..2
};

MaskHeatMap generate_heatmap(const MaskGenerator& generator, const Tensor& roi,
                             GeneratorCache* cache = nullptr);

// Backpropagates d(loss)/d(heat) into the generator's parameter gradients and
// returns d(loss)/d(roi).
Tensor generate_heatmap_backward(MaskGenerator& generator,
                                 const GeneratorCache& cache,
                                 const MaskGrid& grad_heat);

// Number of cells masked for a given fraction: max(1, floor(49 * fraction)).
int masked_cell_count(double fraction);

// Masks the k lowest heat cells under the order (value, row-major index).
BinaryMask binarize_lowest_k(const MaskHeatMap& heat, double fraction);

// Masks floor(7 / 2) = 3 full rows or columns on the given side.
BinaryMask half_mask(HalfDirection direction);

// Masks exactly floor(49 / 2) = 24 cells chosen by a seeded shuffle.
BinaryMask random_drop_mask(Rng& rng);

// Masks exactly `count` cells chosen uniformly at random.
BinaryMask random_mask(Rng& rng, int count);

MaskType sample_mask_type(Rng& rng, const MaskTypeProbabilities& probabilities);

// Multiplies every channel of a C x 7 x 7 RoI cell-wise by the mask.
Tensor apply_mask(const Tensor& roi, const BinaryMask& mask);

// Continuous counterpart of binarize_lowest_k: sigmoid((h - t) / s), where t
// lies midway between the k-th and (k+1)-th lowest heat values and s is the
// standard deviation of the heat map. Shifting the whole map leaves it
// unchanged, so its gradient only reorders cells.
struct RelaxedMask {
  MaskGrid values{};
  double threshold = 0.0;
  double scale = 1.0;
  int below = 0;  // k-th lowest cell
  int above = 0;  // (k+1)-th lowest cell
};

RelaxedMask relax_lowest_k(const MaskHeatMap& heat, double fraction);

// d(loss)/d(heat) given d(loss)/d(values). The threshold is differentiated
// through its two cells; the scale is held constant.
MaskGrid relax_lowest_k_backward(const RelaxedMask& relaxed, const MaskGrid& grad_values);

}  // namespace aofd
