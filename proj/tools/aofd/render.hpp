#pragma once

#include <span>
#include <vector>

#include "aofd/detector.hpp"
#include "aofd/evaluation.hpp"
#include "aofd/image.hpp"
#include "aofd/mask_generator.hpp"
#include "aofd/segmentation.hpp"

namespace aofd::tool {

// Half-open pixel rectangle [x1, x2) x [y1, y2).
struct PixelRect {
  int x1 = 0;
  int y1 = 0;
  int x2 = 0;
  int y2 = 0;

  bool empty() const { return x2 <= x1 || y2 <= y1; }
  bool operator==(const PixelRect&) const = default;
};

// Pixels feeding one 7 x 7 RoI cell: its pooling bin scaled by the stride,
// clipped to the image.
PixelRect cell_receptive_field(const BoundingBox& roi, int cell, const MapGeometry& geometry,
                               int image_width, int image_height);

RgbImage draw_detections(const RgbImage& image, std::span<const Detection> detections);

// Tints the pixels of every feature cell labelled 1.
RgbImage draw_occlusion(const RgbImage& image, const BinaryGrid& labels,
                        const MapGeometry& geometry);

// Outlines each RoI and tints the receptive fields of its masked cells.
// With alpha 1 the tinted pixels are exactly the union of those fields.
RgbImage draw_generated_masks(const RgbImage& image, std::span<const BoundingBox> rois,
                              std::span<const BinaryMask> masks, const MapGeometry& geometry,
                              double alpha = 0.6, bool outline = true);

// Precision (y) against recall (x) on a white square canvas.
RgbImage plot_pr_curve(std::span<const PrPoint> curve, int size = 320);

}  // namespace aofd::tool
