#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "aofd/geometry.hpp"
#include "aofd/nn.hpp"
#include "aofd/tensor.hpp"

namespace aofd {

// Image-level occlusion segmentation on the backbone feature map: three
// convolutions (3x3, 3x3, 1x1) producing two logits per feature cell,
// channel 0 = non-occluder, channel 1 = occluder.
struct SegmentationHead {
  std::array<Conv2d, 3> layers;

  SegmentationHead() = default;
  SegmentationHead(int feature_channels, int hidden);

  void init(Rng& rng);
  void zero();

  template <typename F>
  void for_each_param(F&& f) {
    for (auto& layer : layers) layer.for_each_param(f);
  }
  template <typename F>
  void for_each_param(F&& f) const {
    for (const auto& layer : layers) layer.for_each_param(f);
  }
};

struct SegmentationCache {
  std::array<Conv2dCache, 3> convs;
  std::array<Tensor, 2> activations;
};

// Logits of the occlusion map, 2 x H' x W' for an H' x W' feature map.
Tensor seg_forward(const SegmentationHead& head, const Tensor& features,
                   SegmentationCache* cache = nullptr);

// Accumulates parameter gradients; returns d(loss)/d(features).
Tensor seg_backward(SegmentationHead& head, const SegmentationCache& cache,
                    const Tensor& grad_logits);

// Geometry of a feature map relative to the image it was computed from.
struct MapGeometry {
  int height = 0;  // feature cells
  int width = 0;
  int stride = 1;  // pixels per cell
};

// Row-major H' x W' grid in {0, 1}.
using BinaryGrid = std::vector<std::uint8_t>;

// Union of the boxes enlarged by `factor`, rasterised at feature resolution:
// a cell is inside when its center ((x + 0.5) * stride, (y + 0.5) * stride)
// lies inside an enlarged box. Cells outside the map are dropped.
BinaryGrid build_gate(std::span<const BoundingBox> boxes, double factor,
                      const MapGeometry& geometry);

// Argmax labels of the logits (1 = occluder), forced to 0 outside the gate.
BinaryGrid gate_labels(const Tensor& logits, const BinaryGrid& gate);

// Full branch: logits from the features, gated by `boxes` enlarged by
// `factor`, reduced to labels.
BinaryGrid segment_occlusions(const SegmentationHead& head, const Tensor& features,
                              std::span<const BoundingBox> boxes, double factor,
                              int stride);

// Pixel-level occlusion mask (row-major, image_width x image_height, non-zero
// = occluder) reduced to feature resolution by majority vote per cell.
BinaryGrid downsample_mask(std::span<const std::uint8_t> mask, int image_width,
                           int image_height, const MapGeometry& geometry);

}  // namespace aofd
