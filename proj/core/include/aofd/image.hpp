#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "aofd/geometry.hpp"
#include "aofd/tensor.hpp"

namespace aofd {

using Rgb = std::array<std::uint8_t, 3>;

// 8-bit interleaved RGB raster.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major, 3 bytes per pixel

  RgbImage() = default;
  RgbImage(int w, int h, Rgb fill = {0, 0, 0});

  Rgb get(int x, int y) const;
  void set(int x, int y, Rgb color);
  bool operator==(const RgbImage&) const = default;
};

// 8-bit single-channel raster.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  GrayImage() = default;
  GrayImage(int w, int h, std::uint8_t fill = 0);

  std::uint8_t get(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  void set(int x, int y, std::uint8_t v) { pixels[static_cast<std::size_t>(y) * width + x] = v; }
  bool operator==(const GrayImage&) const = default;
};

// Binary netpbm I/O (P6 / P5, maxval 255). Readers throw DataError.
void write_ppm(const std::filesystem::path& path, const RgbImage& image);
RgbImage read_ppm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const GrayImage& image);
GrayImage read_pgm(const std::filesystem::path& path);

// 3 x H x W tensor with values (pixel / 255) - 0.5.
Tensor image_to_tensor(const RgbImage& image);

// Drawing helpers for overlays and plots; all clip to the raster.
void draw_rect(RgbImage& image, const BoundingBox& box, Rgb color, int thickness = 1);
void draw_line(RgbImage& image, int x0, int y0, int x1, int y1, Rgb color);
// Alpha-blends `color` over pixels [x1, x2) x [y1, y2).
void blend_rect(RgbImage& image, int x1, int y1, int x2, int y2, Rgb color, double alpha);

}  // namespace aofd
