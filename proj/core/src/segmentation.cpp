#include "aofd/segmentation.hpp"

#include <algorithm>
#include <cmath>

#include "aofd/error.hpp"

namespace aofd {

SegmentationHead::SegmentationHead(int feature_channels, int hidden) {
  layers[0] = Conv2d("segmentation.conv1", feature_channels, hidden, 3);
  layers[1] = Conv2d("segmentation.conv2", hidden, hidden, 3);
  layers[2] = Conv2d("segmentation.score", hidden, 2, 1);
}

void SegmentationHead::init(Rng& rng) {
  for (auto& layer : layers) layer.init(rng);
  std::normal_distribution<double> small(0.0, 0.01);
  for (double& w : layers[2].weight.value) w = small(rng);
}

void SegmentationHead::zero() {
  for (auto& layer : layers) {
    std::fill(layer.weight.value.begin(), layer.weight.value.end(), 0.0);
    std::fill(layer.bias.value.begin(), layer.bias.value.end(), 0.0);
  }
}

Tensor seg_forward(const SegmentationHead& head, const Tensor& features,
                   SegmentationCache* cache) {
  Tensor x = features;
  for (int i = 0; i < 2; ++i) {
    x = conv2d_forward(head.layers[i], x, cache ? &cache->convs[i] : nullptr);
    relu_inplace(x);
    if (cache) cache->activations[i] = x;
  }
  return conv2d_forward(head.layers[2], x, cache ? &cache->convs[2] : nullptr);
}

Tensor seg_backward(SegmentationHead& head, const SegmentationCache& cache,
                    const Tensor& grad_logits) {
  Tensor g = conv2d_backward(head.layers[2], cache.convs[2], grad_logits);
  for (int i = 1; i >= 0; --i) {
    relu_backward(cache.activations[i], g);
    g = conv2d_backward(head.layers[i], cache.convs[i], g);
  }
  return g;
}

BinaryGrid build_gate(std::span<const BoundingBox> boxes, double factor,
                      const MapGeometry& geometry) {
  if (!(factor > 0.0)) throw InvalidArgument("build_gate: factor must be positive");
  BinaryGrid gate(static_cast<std::size_t>(geometry.height) * geometry.width, 0);
  for (const auto& raw : boxes) {
    const BoundingBox box = enlarge_box(raw, factor);
    const double s = geometry.stride;
    // Cells whose centers (i + 0.5) * s fall inside [x1, x2].
    const int x_begin = std::max(0, static_cast<int>(std::ceil(box.x1 / s - 0.5)));
    const int x_end = std::min(geometry.width - 1, static_cast<int>(std::floor(box.x2 / s - 0.5)));
    const int y_begin = std::max(0, static_cast<int>(std::ceil(box.y1 / s - 0.5)));
    const int y_end = std::min(geometry.height - 1, static_cast<int>(std::floor(box.y2 / s - 0.5)));
    for (int y = y_begin; y <= y_end; ++y) {
      for (int x = x_begin; x <= x_end; ++x) {
        gate[static_cast<std::size_t>(y) * geometry.width + x] = 1;
      }
    }
  }
  return gate;
}

BinaryGrid gate_labels(const Tensor& logits, const BinaryGrid& gate) {
  const auto pixels = static_cast<std::size_t>(logits.plane_size());
  if (logits.channels() != 2 || gate.size() != pixels) {
    throw InvalidArgument("gate_labels: logits and gate differ in shape");
  }
  BinaryGrid labels(pixels, 0);
  for (std::size_t p = 0; p < pixels; ++p) {
    labels[p] = gate[p] && logits.data()[pixels + p] > logits.data()[p] ? 1 : 0;
  }
  return labels;
}

BinaryGrid segment_occlusions(const SegmentationHead& head, const Tensor& features,
                              std::span<const BoundingBox> boxes, double factor,
                              int stride) {
  const MapGeometry geometry{features.height(), features.width(), stride};
  return gate_labels(seg_forward(head, features), build_gate(boxes, factor, geometry));
}

BinaryGrid downsample_mask(std::span<const std::uint8_t> mask, int image_width,
                           int image_height, const MapGeometry& geometry) {
  if (mask.size() != static_cast<std::size_t>(image_width) * image_height) {
    throw InvalidArgument("downsample_mask: mask size does not match the image");
  }
  BinaryGrid out(static_cast<std::size_t>(geometry.height) * geometry.width, 0);
  const int s = geometry.stride;
  for (int y = 0; y < geometry.height; ++y) {
    for (int x = 0; x < geometry.width; ++x) {
      int on = 0;
      for (int py = y * s; py < std::min((y + 1) * s, image_height); ++py) {
        for (int px = x * s; px < std::min((x + 1) * s, image_width); ++px) {
          on += mask[static_cast<std::size_t>(py) * image_width + px] ? 1 : 0;
        }
      }
      // Majority of the full cell; padding pixels count as background.
      out[static_cast<std::size_t>(y) * geometry.width + x] = 2 * on > s * s ? 1 : 0;
    }
  }
  return out;
}

}  // namespace aofd
