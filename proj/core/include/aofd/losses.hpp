#pragma once

#include <array>
#include <cstdint>
#include <span>

#include "aofd/mask_generator.hpp"
#include "aofd/tensor.hpp"

namespace aofd {

// Coefficients of the detector objective L = alpha*Lc + beta*Lb + mu*Ls and
// of the generator objective Lg = gamma*Lcom - eta*Lc.
struct LossWeights {
  double alpha = 1.0;
  double beta = 1.0;
  double mu = 1e-5;
  double gamma = 1e-6;
  double eta = 1.0;

  void validate() const;
};

// Zero-sum 3x3 edge kernel: center 1, the eight neighbours -1/8.
inline constexpr std::array<std::array<double, 3>, 3> kCompactKernel{{
    {-0.125, -0.125, -0.125},
    {-0.125, 1.0, -0.125},
    {-0.125, -0.125, -0.125},
}};

enum class CompactMode {
  kRectified,  // sum of max(0, response); a perimeter penalty
  kLiteral,    // plain signed sum of the response
};

// Binary softmax cross-entropy averaged over rows of `logits` (n x 2).
// `labels` holds 0 (background) or 1 (face). Writes d(loss)/d(logits) into
// `grad` when non-null. An empty batch has loss 0.
double classification_loss(const RowMatrix& logits,
                           std::span<const int> labels,
                           RowMatrix* grad = nullptr);

// Smooth-L1 value of a single residual: 0.5 x^2 below 1, |x| - 0.5 above.
double smooth_l1(double x);

struct RegressionLoss {
  double value = 0.0;
  bool no_foreground = false;  // set when the batch had no foreground rows
};

// Smooth-L1 summed over the four deltas and averaged over foreground rows.
RegressionLoss bbox_regression_loss(const RowMatrix& predicted,
                                    const RowMatrix& target,
                                    std::span<const std::uint8_t> foreground,
                                    RowMatrix* grad = nullptr);

// Convolves (1 - mask) with kCompactKernel under zero padding and reduces it.
// Mask values must lie in [0, 1] (tolerance 1e-6). `grad` receives
// d(loss)/d(mask); in rectified mode cells whose response is exactly zero take
// the zero subgradient.
double compact_loss(const MaskGrid& mask, CompactMode mode = CompactMode::kRectified,
                    MaskGrid* grad = nullptr);

// The response grid (before reduction); exposed for diagnostics and tests.
MaskGrid compact_response(const MaskGrid& mask);

double generator_loss(double classification, double compact,
                      const LossWeights& weights);

struct SegmentationLoss {
  double value = 0.0;
  bool empty_gate = false;
};

// Two-class per-pixel softmax loss over the gated pixels only. `logits` is
// 2 x H x W (channel 0 = non-occluder, 1 = occluder); `target` and `gate` are
// H*W row-major arrays in {0, 1}.
SegmentationLoss segmentation_loss(const Tensor& logits,
                                   std::span<const std::uint8_t> target,
                                   std::span<const std::uint8_t> gate,
                                   Tensor* grad = nullptr);

double total_loss(double classification, double regression, double segmentation,
                  const LossWeights& weights);

}  // namespace aofd
