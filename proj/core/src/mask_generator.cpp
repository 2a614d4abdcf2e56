#include "aofd/mask_generator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "aofd/error.hpp"

namespace aofd {

namespace {

void require_roi_shape(const Tensor& roi, const char* what) {
  if (roi.height() != kRoiSize || roi.width() != kRoiSize) {
    throw InvalidArgument(std::string(what) + ": RoI must be C x 7 x 7");
  }
}

}  // namespace

BinaryMask BinaryMask::all_zeros() {
  BinaryMask mask;
  mask.cells_.fill(0);
  return mask;
}

void BinaryMask::set(int index, std::uint8_t value) {
  if (value > 1) throw InvalidArgument("BinaryMask: cell value must be 0 or 1");
  cells_.at(index) = value;
}

int BinaryMask::zero_count() const {
  return static_cast<int>(std::count(cells_.begin(), cells_.end(), 0));
}

MaskGrid BinaryMask::as_grid() const {
  MaskGrid grid;
  for (int i = 0; i < kRoiCells; ++i) grid[i] = cells_[i];
  return grid;
}

const char* to_string(MaskType::Tag tag) {
  switch (tag) {
    case MaskType::Tag::kGenerated:
      return "generated";
    case MaskType::Tag::kHalf:
      return "half";
    case MaskType::Tag::kRandomDrop:
      return "random_drop";
    case MaskType::Tag::kNone:
      return "none";
  }
  return "unknown";
}

void MaskTypeProbabilities::validate() const {
  for (double p : {generated, half, random_drop, none}) {
    if (!(p >= 0.0) || !std::isfinite(p)) {
      throw InvalidArgument("mask-type probabilities must be non-negative");
    }
  }
  if (std::abs(generated + half + random_drop + none - 1.0) > 1e-9) {
    throw InvalidArgument("mask-type probabilities must sum to 1");
  }
}

MaskGenerator::MaskGenerator(int roi_channels) : channels(roi_channels) {
  const int c1 = std::max(1, roi_channels / 2);
  const int c2 = std::max(1, roi_channels / 4);
  const int c3 = std::max(1, roi_channels / 8);
  layers[0] = Conv2d("generator.conv1", roi_channels, c1, 3);
  layers[1] = Conv2d("generator.conv2", c1, c2, 3);
  layers[2] = Conv2d("generator.conv3", c2, c3, 3);
  layers[3] = Conv2d("generator.conv4", c3, 1, 3);
}

void MaskGenerator::init(Rng& rng) {
  for (auto& layer : layers) layer.init(rng);
  // Start close to the straight mapping.
  for (double& w : layers[3].weight.value) w *= 0.1;
}

void MaskGenerator::zero_main_branch() {
  for (auto& layer : layers) {
    std::fill(layer.weight.value.begin(), layer.weight.value.end(), 0.0);
    std::fill(layer.bias.value.begin(), layer.bias.value.end(), 0.0);
  }
}

MaskHeatMap generate_heatmap(const MaskGenerator& generator, const Tensor& roi,
                             GeneratorCache* cache) {
  require_roi_shape(roi, "generate_heatmap");
  if (roi.channels() != generator.channels) {
    throw InvalidArgument("generate_heatmap: RoI channel count " +
                          std::to_string(roi.channels()) +
                          " does not match generator (" +
                          std::to_string(generator.channels) + ")");
  }
  GeneratorCache local;
  GeneratorCache& c = cache ? *cache : local;

  Tensor x = roi;
  for (int i = 0; i < 3; ++i) {
    x = conv2d_forward(generator.layers[i], x, &c.convs[i]);
    relu_inplace(x);
    c.activations[i] = x;
  }
  const Tensor main = conv2d_forward(generator.layers[3], x, &c.convs[3]);

  MaskHeatMap heat;
  const double inv_c = 1.0 / roi.channels();
  for (int cell = 0; cell < kRoiCells; ++cell) {
    double mean = 0.0;
    for (int ch = 0; ch < roi.channels(); ++ch) {
      mean += roi.data()[ch * kRoiCells + cell];
    }
    heat.values[cell] = mean * inv_c + main.data()[cell];
  }
  return heat;
}

Tensor generate_heatmap_backward(MaskGenerator& generator,
                                 const GeneratorCache& cache,
                                 const MaskGrid& grad_heat) {
  Tensor grad(1, kRoiSize, kRoiSize);
  std::copy(grad_heat.begin(), grad_heat.end(), grad.data());
  for (int i = 3; i >= 0; --i) {
    grad = conv2d_backward(generator.layers[i], cache.convs[i], grad, true);
    if (i > 0) relu_backward(cache.activations[i - 1], grad);
  }
  // Straight mapping contribution.
  const double inv_c = 1.0 / generator.channels;
  for (int ch = 0; ch < generator.channels; ++ch) {
    for (int cell = 0; cell < kRoiCells; ++cell) {
      grad.data()[ch * kRoiCells + cell] += grad_heat[cell] * inv_c;
    }
  }
  return grad;
}

int masked_cell_count(double fraction) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw InvalidArgument("mask fraction must lie in (0, 1)");
  }
  const int k = static_cast<int>(std::floor(kRoiCells * fraction + 1e-9));
  return std::max(1, k);
}

BinaryMask binarize_lowest_k(const MaskHeatMap& heat, double fraction) {
  const int k = masked_cell_count(fraction);
  for (double v : heat.values) {
    if (!std::isfinite(v)) {
      throw InvalidArgument("binarize_lowest_k: non-finite heat value");
    }
  }
  std::array<int, kRoiCells> order;
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + k, order.end(),
                    [&](int a, int b) {
                      const double va = heat.values[a];
                      const double vb = heat.values[b];
                      return va < vb || (va == vb && a < b);
                    });
  BinaryMask mask;
  for (int i = 0; i < k; ++i) mask.set(order[i], 0);
  return mask;
}

BinaryMask half_mask(HalfDirection direction) {
  constexpr int kBand = kRoiSize / 2;
  BinaryMask mask;
  for (int r = 0; r < kRoiSize; ++r) {
    for (int c = 0; c < kRoiSize; ++c) {
      bool masked = false;
      switch (direction) {
        case HalfDirection::kLeft:
          masked = c < kBand;
          break;
        case HalfDirection::kRight:
          masked = c >= kRoiSize - kBand;
          break;
        case HalfDirection::kTop:
          masked = r < kBand;
          break;
        case HalfDirection::kBottom:
          masked = r >= kRoiSize - kBand;
          break;
      }
      if (masked) mask.set(r * kRoiSize + c, 0);
    }
  }
  return mask;
}

BinaryMask random_mask(Rng& rng, int count) {
  if (count < 0 || count > kRoiCells) {
    throw InvalidArgument("random_mask: count out of range");
  }
  std::array<int, kRoiCells> order;
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  BinaryMask mask;
  for (int i = 0; i < count; ++i) mask.set(order[i], 0);
  return mask;
}

BinaryMask random_drop_mask(Rng& rng) { return random_mask(rng, kRoiCells / 2); }

MaskType sample_mask_type(Rng& rng, const MaskTypeProbabilities& probabilities) {
  probabilities.validate();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double u = unit(rng);
  MaskType type;
  double edge = probabilities.generated;
  if (u < edge) {
    type.tag = MaskType::Tag::kGenerated;
  } else if (u < (edge += probabilities.half)) {
    type.tag = MaskType::Tag::kHalf;
  } else if (u < (edge += probabilities.random_drop)) {
    type.tag = MaskType::Tag::kRandomDrop;
  } else {
    type.tag = MaskType::Tag::kNone;
  }
  // Guard against u landing in the rounding gap above the last non-zero bin.
  if (type.tag == MaskType::Tag::kNone && probabilities.none == 0.0) {
    if (probabilities.random_drop > 0.0) {
      type.tag = MaskType::Tag::kRandomDrop;
    } else if (probabilities.half > 0.0) {
      type.tag = MaskType::Tag::kHalf;
    } else {
      type.tag = MaskType::Tag::kGenerated;
    }
  }
  if (type.tag == MaskType::Tag::kHalf) {
    std::uniform_int_distribution<int> side(0, 3);
    type.direction = static_cast<HalfDirection>(side(rng));
  }
  return type;
}

Tensor apply_mask(const Tensor& roi, const BinaryMask& mask) {
  require_roi_shape(roi, "apply_mask");
  Tensor out = roi;
  for (int ch = 0; ch < roi.channels(); ++ch) {
    double* plane = out.data() + static_cast<std::ptrdiff_t>(ch) * kRoiCells;
    for (int cell = 0; cell < kRoiCells; ++cell) {
      if (mask.cell(cell) == 0) plane[cell] = 0.0;
    }
  }
  return out;
}

RelaxedMask relax_lowest_k(const MaskHeatMap& heat, double fraction) {
  const int k = masked_cell_count(fraction);
  for (double v : heat.values) {
    if (!std::isfinite(v)) throw InvalidArgument("relax_lowest_k: non-finite heat value");
  }
  std::array<int, kRoiCells> order;
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const double va = heat.values[a];
    const double vb = heat.values[b];
    return va < vb || (va == vb && a < b);
  });
  RelaxedMask r;
  r.below = order[k - 1];
  r.above = order[k];
  r.threshold = 0.5 * (heat.values[r.below] + heat.values[r.above]);
  double mean = 0.0;
  for (double v : heat.values) mean += v;
  mean /= kRoiCells;
  double var = 0.0;
  for (double v : heat.values) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / kRoiCells);
  r.scale = sd > 1e-12 ? sd : 1.0;
  for (int i = 0; i < kRoiCells; ++i) {
    r.values[i] = 1.0 / (1.0 + std::exp(-(heat.values[i] - r.threshold) / r.scale));
  }
  return r;
}

MaskGrid relax_lowest_k_backward(const RelaxedMask& r, const MaskGrid& grad_values) {
  MaskGrid g{};
  double through_threshold = 0.0;
  for (int i = 0; i < kRoiCells; ++i) {
    const double s = r.values[i];
    g[i] = grad_values[i] * s * (1.0 - s) / r.scale;
    through_threshold += g[i];
  }
  g[r.below] -= 0.5 * through_threshold;
  g[r.above] -= 0.5 * through_threshold;
  return g;
}

}  // namespace aofd
