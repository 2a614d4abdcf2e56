#include "render.hpp"

#include <algorithm>
#include <cmath>

#include "aofd/error.hpp"

namespace aofd::tool {

namespace {

constexpr Rgb kBoxColor{0, 255, 0};
constexpr Rgb kOccluderColor{255, 0, 255};
constexpr Rgb kMaskColor{255, 40, 40};
constexpr Rgb kRoiColor{255, 255, 0};

}  // namespace

PixelRect cell_receptive_field(const BoundingBox& roi, int cell, const MapGeometry& geometry,
                               int image_width, int image_height) {
  if (cell < 0 || cell >= kRoiCells) throw InvalidArgument("cell index out of range");
  const PoolBin bin = roi_bins(roi, geometry)[static_cast<std::size_t>(cell)];
  const int s = geometry.stride;
  return {std::clamp(bin.x_begin * s, 0, image_width), std::clamp(bin.y_begin * s, 0, image_height),
          std::clamp(bin.x_end * s, 0, image_width), std::clamp(bin.y_end * s, 0, image_height)};
}

RgbImage draw_detections(const RgbImage& image, std::span<const Detection> detections) {
  RgbImage out = image;
  for (const Detection& d : detections) draw_rect(out, d.box, kBoxColor, 2);
  return out;
}

RgbImage draw_occlusion(const RgbImage& image, const BinaryGrid& labels,
                        const MapGeometry& geometry) {
  if (labels.size() != static_cast<std::size_t>(geometry.width) * geometry.height) {
    throw InvalidArgument("draw_occlusion: label grid does not match the geometry");
  }
  RgbImage out = image;
  const int s = geometry.stride;
  for (int y = 0; y < geometry.height; ++y) {
    for (int x = 0; x < geometry.width; ++x) {
      if (labels[static_cast<std::size_t>(y) * geometry.width + x] == 0) continue;
      blend_rect(out, x * s, y * s, (x + 1) * s, (y + 1) * s, kOccluderColor, 0.5);
    }
  }
  return out;
}

RgbImage draw_generated_masks(const RgbImage& image, std::span<const BoundingBox> rois,
                              std::span<const BinaryMask> masks, const MapGeometry& geometry,
                              double alpha, bool outline) {
  if (rois.size() != masks.size()) throw InvalidArgument("draw_generated_masks: size mismatch");
  RgbImage out = image;
  for (std::size_t i = 0; i < rois.size(); ++i) {
    for (int cell = 0; cell < kRoiCells; ++cell) {
      if (masks[i].cell(cell) != 0) continue;
      const PixelRect r = cell_receptive_field(rois[i], cell, geometry, image.width, image.height);
      // Blend from the source so overlapping bins are not tinted twice.
      for (int y = r.y1; y < r.y2; ++y) {
        for (int x = r.x1; x < r.x2; ++x) {
          if (alpha >= 1.0) {
            out.set(x, y, kMaskColor);
          } else {
            const Rgb src = image.get(x, y);
            Rgb mixed;
            for (int c = 0; c < 3; ++c) {
              mixed[c] = static_cast<std::uint8_t>(
                  std::lround((1.0 - alpha) * src[c] + alpha * kMaskColor[c]));
            }
            out.set(x, y, mixed);
          }
        }
      }
    }
  }
  if (outline) {
    for (const BoundingBox& b : rois) draw_rect(out, b, kRoiColor, 1);
  }
  return out;
}

RgbImage plot_pr_curve(std::span<const PrPoint> curve, int size) {
  RgbImage img(size, size, {255, 255, 255});
  const int margin = size / 10;
  const int span = size - 2 * margin;
  const Rgb axis{0, 0, 0};
  draw_line(img, margin, size - margin, size - margin, size - margin, axis);
  draw_line(img, margin, margin, margin, size - margin, axis);
  for (int t = 1; t <= 4; ++t) {
    const int g = margin + t * span / 4;
    draw_line(img, g, size - margin, g, size - margin + 4, axis);
    draw_line(img, margin - 4, size - g, margin, size - g, axis);
  }
  auto px = [&](double recall) { return margin + static_cast<int>(std::lround(recall * span)); };
  auto py = [&](double precision) {
    return size - margin - static_cast<int>(std::lround(precision * span));
  };
  const Rgb line{20, 60, 200};
  for (std::size_t i = 1; i < curve.size(); ++i) {
    draw_line(img, px(curve[i - 1].recall), py(curve[i - 1].precision), px(curve[i].recall),
              py(curve[i].precision), line);
  }
  return img;
}

}  // namespace aofd::tool
