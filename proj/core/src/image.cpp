#include "aofd/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "aofd/error.hpp"

namespace aofd {

namespace {

void write_netpbm(const std::filesystem::path& path, const char* magic, int width,
                  int height, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << magic << '\n' << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing " + path.string());
}

std::vector<std::uint8_t> read_netpbm(const std::filesystem::path& path,
                                      const std::string& magic, int channels,
                                      int& width, int& height) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image " + path.string());
  std::string tag;
  int maxval = 0;
  in >> tag;
  const auto skip_comments = [&in] {
    in >> std::ws;
    while (in.peek() == '#') {
      std::string line;
      std::getline(in, line);
      in >> std::ws;
    }
  };
  skip_comments();
  in >> width;
  skip_comments();
  in >> height;
  skip_comments();
  in >> maxval;
  if (!in || tag != magic || width <= 0 || height <= 0 || maxval != 255) {
    throw DataError("malformed " + magic + " header in " + path.string());
  }
  in.get();  // single whitespace byte before the raster
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(width) * height * channels);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
    throw DataError("truncated raster in " + path.string());
  }
  return bytes;
}

}  // namespace

RgbImage::RgbImage(int w, int h, Rgb fill) : width(w), height(h) {
  pixels.resize(static_cast<std::size_t>(w) * h * 3);
  for (std::size_t i = 0; i < pixels.size(); i += 3) {
    pixels[i] = fill[0];
    pixels[i + 1] = fill[1];
    pixels[i + 2] = fill[2];
  }
}

Rgb RgbImage::get(int x, int y) const {
  const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
  return {pixels[i], pixels[i + 1], pixels[i + 2]};
}

void RgbImage::set(int x, int y, Rgb color) {
  const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
  pixels[i] = color[0];
  pixels[i + 1] = color[1];
  pixels[i + 2] = color[2];
}

GrayImage::GrayImage(int w, int h, std::uint8_t fill)
    : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}

void write_ppm(const std::filesystem::path& path, const RgbImage& image) {
  write_netpbm(path, "P6", image.width, image.height, image.pixels);
}

RgbImage read_ppm(const std::filesystem::path& path) {
  RgbImage image;
  image.pixels = read_netpbm(path, "P6", 3, image.width, image.height);
  return image;
}

void write_pgm(const std::filesystem::path& path, const GrayImage& image) {
  write_netpbm(path, "P5", image.width, image.height, image.pixels);
}

GrayImage read_pgm(const std::filesystem::path& path) {
  GrayImage image;
  image.pixels = read_netpbm(path, "P5", 1, image.width, image.height);
  return image;
}

Tensor image_to_tensor(const RgbImage& image) {
  Tensor t(3, image.height, image.width);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      const Rgb p = image.get(x, y);
      for (int c = 0; c < 3; ++c) t.at(c, y, x) = p[c] / 255.0 - 0.5;
    }
  }
  return t;
}

void draw_line(RgbImage& image, int x0, int y0, int x1, int y1, Rgb color) {
  const int dx = std::abs(x1 - x0);
  const int dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1;
  const int sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  while (true) {
    if (x0 >= 0 && y0 >= 0 && x0 < image.width && y0 < image.height) image.set(x0, y0, color);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

void draw_rect(RgbImage& image, const BoundingBox& box, Rgb color, int thickness) {
  for (int t = 0; t < thickness; ++t) {
    const int x1 = static_cast<int>(std::floor(box.x1)) + t;
    const int y1 = static_cast<int>(std::floor(box.y1)) + t;
    const int x2 = static_cast<int>(std::ceil(box.x2)) - 1 - t;
    const int y2 = static_cast<int>(std::ceil(box.y2)) - 1 - t;
    if (x2 < x1 || y2 < y1) break;
    draw_line(image, x1, y1, x2, y1, color);
    draw_line(image, x1, y2, x2, y2, color);
    draw_line(image, x1, y1, x1, y2, color);
    draw_line(image, x2, y1, x2, y2, color);
  }
}

void blend_rect(RgbImage& image, int x1, int y1, int x2, int y2, Rgb color, double alpha) {
  x1 = std::max(x1, 0);
  y1 = std::max(y1, 0);
  x2 = std::min(x2, image.width);
  y2 = std::min(y2, image.height);
  for (int y = y1; y < y2; ++y) {
    for (int x = x1; x < x2; ++x) {
      Rgb p = image.get(x, y);
      for (int c = 0; c < 3; ++c) {
        p[c] = static_cast<std::uint8_t>(std::lround((1.0 - alpha) * p[c] + alpha * color[c]));
      }
      image.set(x, y, p);
    }
  }
}

}  // namespace aofd
