#include "aofd/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string_view>

#include <nlohmann/json.hpp>

#include "aofd/error.hpp"
#include "aofd/hash.hpp"
#include "aofd/random.hpp"

namespace aofd {

const char* to_string(OcclusionCategory category) {
  switch (category) {
    case OcclusionCategory::kLandmark: return "landmark_occlusion";
    case OcclusionCategory::kFaceOverFace: return "face_over_face";
    case OcclusionCategory::kObject: return "object_occlusion";
    case OcclusionCategory::kNone: return "none";
  }
  return "?";
}

void OcclusionMix::validate() const {
  for (double p : {landmark, face_over_face, object, none}) {
    if (!(p >= 0.0) || p > 1.0) throw InvalidArgument("occlusion mix entries must lie in [0, 1]");
  }
  if (std::abs(landmark + face_over_face + object + none - 1.0) > 1e-9) {
    throw InvalidArgument("occlusion mix must sum to 1");
  }
}

void SceneSpec::validate() const {
  mix.validate();
  if (width < 32 || height < 32) throw InvalidArgument("scene must be at least 32x32");
  if (min_faces < 1 || max_faces < min_faces) throw InvalidArgument("bad face count range");
  if (min_face_size < 16.0 || max_face_size < min_face_size) {
    throw InvalidArgument("face sizes must be >= 16 px and min <= max");
  }
  if (max_face_size * 1.25 > std::min(width, height)) {
    throw InvalidArgument("max_face_size does not fit the image");
  }
  if (mix.face_over_face > 0.0 && max_faces < 2) {
    throw InvalidArgument("face_over_face occlusion needs max_faces >= 2");
  }
  if (noise < 0.0 || clutter < 0 || max_attempts < 1) throw InvalidArgument("bad texture parameters");
  if (heavy_object_probability < 0.0 || heavy_object_probability > 1.0) {
    throw InvalidArgument("heavy_object_probability must lie in [0, 1]");
  }
}

namespace {

using Color = std::array<double, 3>;

struct Ellipse {
  double cx, cy, a, b;
  bool contains(double x, double y) const {
    const double u = (x - cx) / a;
    const double v = (y - cy) / b;
    return u * u + v * v <= 1.0;
  }
};

// Integer pixel rectangle [x1, x2) x [y1, y2).
struct IRect {
  int x1, y1, x2, y2;
  bool intersects(const IRect& o) const {
    return x1 < o.x2 && o.x1 < x2 && y1 < o.y2 && o.y1 < y2;
  }
  IRect grown(double factor, int w, int h) const {
    const double cx = 0.5 * (x1 + x2), cy = 0.5 * (y1 + y2);
    const double hw = 0.5 * factor * (x2 - x1), hh = 0.5 * factor * (y2 - y1);
    return {std::max(0, static_cast<int>(std::floor(cx - hw))),
            std::max(0, static_cast<int>(std::floor(cy - hh))),
            std::min(w, static_cast<int>(std::ceil(cx + hw))),
            std::min(h, static_cast<int>(std::ceil(cy + hh)))};
  }
};

struct Face {
  IRect rect;
  Ellipse ellipse;
  OcclusionCategory category;
  int layer = 0;
};

enum class ShapeKind { kRect, kEllipse, kStrip };

struct Shape {
  ShapeKind kind = ShapeKind::kRect;
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;   // rect / ellipse extent
  double px = 0, py = 0, nx = 0, ny = 1, half = 1;  // strip: point, normal, half width
  IRect clip{};

  bool contains(int x, int y) const {
    if (x < clip.x1 || x >= clip.x2 || y < clip.y1 || y >= clip.y2) return false;
    const double fx = x + 0.5, fy = y + 0.5;
    switch (kind) {
      case ShapeKind::kRect:
        return fx >= x1 && fx < x2 && fy >= y1 && fy < y2;
      case ShapeKind::kEllipse:
        return Ellipse{0.5 * (x1 + x2), 0.5 * (y1 + y2), 0.5 * (x2 - x1), 0.5 * (y2 - y1)}
            .contains(fx, fy);
      case ShapeKind::kStrip:
        return std::abs((fx - px) * nx + (fy - py) * ny) <= half;
    }
    return false;
  }
};

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int uniform_int(Rng& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

Color skin_color(Rng& rng) {
  const double t = uniform(rng, 0.0, 1.0);
  return {uniform(rng, 175, 235), 120 + 60 * t + uniform(rng, -8, 8), 90 + 55 * t + uniform(rng, -8, 8)};
}

Color occluder_color(Rng& rng) {
  switch (uniform_int(rng, 0, 3)) {
    case 0: {  // dark: sunglasses, hair, scarves
      const double v = uniform(rng, 15, 70);
      return {v, v, v + uniform(rng, 0, 15)};
    }
    case 1:  // pale blue / white: gauze masks
      return {uniform(rng, 170, 225), uniform(rng, 200, 240), uniform(rng, 225, 255)};
    case 2:  // saturated primaries
      return {uniform(rng, 0, 1) < 0.5 ? uniform(rng, 20, 80) : uniform(rng, 180, 250),
              uniform(rng, 20, 120), uniform(rng, 100, 250)};
    default:  // greens / greys
      return {uniform(rng, 40, 110), uniform(rng, 110, 200), uniform(rng, 40, 120)};
  }
}

class Canvas {
 public:
  Canvas(int w, int h) : w_(w), h_(h), rgb_(static_cast<std::size_t>(w) * h * 3, 0.0),
                         owner_(static_cast<std::size_t>(w) * h, 0) {}

  int width() const { return w_; }
  int height() const { return h_; }

  void paint(int x, int y, const Color& c, int layer) {
    const std::size_t i = static_cast<std::size_t>(y) * w_ + x;
    rgb_[3 * i] = c[0];
    rgb_[3 * i + 1] = c[1];
    rgb_[3 * i + 2] = c[2];
    owner_[i] = layer;
  }
  int owner(int x, int y) const { return owner_[static_cast<std::size_t>(y) * w_ + x]; }
  std::vector<int>& owners() { return owner_; }

  template <typename Pred>
  void fill(const IRect& bounds, Pred&& inside, const Color& c, int layer) {
    for (int y = std::max(0, bounds.y1); y < std::min(h_, bounds.y2); ++y) {
      for (int x = std::max(0, bounds.x1); x < std::min(w_, bounds.x2); ++x) {
        if (inside(x, y)) paint(x, y, c, layer);
      }
    }
  }

  RgbImage quantize(Rng& rng, double noise) const {
    RgbImage img(w_, h_);
    std::uniform_real_distribution<double> jitter(-noise, noise);
    for (std::size_t i = 0; i < rgb_.size(); ++i) {
      const double v = rgb_[i] + (noise > 0.0 ? jitter(rng) : 0.0);
      img.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
    return img;
  }

 private:
  int w_, h_;
  std::vector<double> rgb_;
  std::vector<int> owner_;
};

void paint_background(Canvas& canvas, Rng& rng, int clutter) {
  const Color base{uniform(rng, 40, 200), uniform(rng, 40, 200), uniform(rng, 40, 200)};
  const double gx = uniform(rng, -0.5, 0.5), gy = uniform(rng, -0.5, 0.5);
  const double fx = uniform(rng, 0.05, 0.3), fy = uniform(rng, 0.05, 0.3);
  const double amp = uniform(rng, 5, 25);
  for (int y = 0; y < canvas.height(); ++y) {
    for (int x = 0; x < canvas.width(); ++x) {
      const double t = gx * x + gy * y + amp * std::sin(fx * x) * std::cos(fy * y);
      canvas.paint(x, y, {base[0] + t, base[1] + 0.8 * t, base[2] + 0.6 * t}, 0);
    }
  }
  const int n = clutter > 0 ? uniform_int(rng, 0, clutter) : 0;
  for (int i = 0; i < n; ++i) {
    const double w = uniform(rng, 6, 40), h = uniform(rng, 6, 40);
    const double x = uniform(rng, -w / 2, canvas.width() - w / 2);
    const double y = uniform(rng, -h / 2, canvas.height() - h / 2);
    const IRect bounds{static_cast<int>(std::floor(x)), static_cast<int>(std::floor(y)),
                       static_cast<int>(std::ceil(x + w)), static_cast<int>(std::ceil(y + h))};
    // Skin-toned blobs without landmarks act as hard negatives.
    const bool skin = uniform(rng, 0, 1) < 0.3;
    const Color c = skin ? skin_color(rng) : occluder_color(rng);
    if (skin || uniform(rng, 0, 1) < 0.5) {
      const Ellipse e{x + w / 2, y + h / 2, w / 2, h / 2};
      canvas.fill(bounds, [&](int px, int py) { return e.contains(px + 0.5, py + 0.5); }, c, 0);
    } else {
      canvas.fill(bounds, [](int, int) { return true; }, c, 0);
    }
  }
}

void paint_face(Canvas& canvas, const Face& face, Rng& rng) {
  const Ellipse& e = face.ellipse;
  const Color skin = skin_color(rng);
  const double shade = uniform(rng, 0.1, 0.3);
  for (int y = face.rect.y1; y < face.rect.y2; ++y) {
    for (int x = face.rect.x1; x < face.rect.x2; ++x) {
      if (!e.contains(x + 0.5, y + 0.5)) continue;
      const double k = 1.0 - shade * (y + 0.5 - (e.cy - e.b)) / (2 * e.b);
      canvas.paint(x, y, {skin[0] * k, skin[1] * k, skin[2] * k}, face.layer);
    }
  }
  const double w = 2 * e.a, h = 2 * e.b;
  const Color dark{uniform(rng, 10, 50), uniform(rng, 10, 40), uniform(rng, 10, 40)};
  const double eye_r = std::max(1.2, 0.08 * w);
  const double eye_y = e.cy - 0.12 * h;
  for (double sx : {-1.0, 1.0}) {
    const Ellipse eye{e.cx + sx * 0.2 * w, eye_y, eye_r, eye_r * 0.8};
    canvas.fill(face.rect, [&](int px, int py) {
      return eye.contains(px + 0.5, py + 0.5);
    }, dark, face.layer);
  }
  const Color lip{skin[0] * 0.55, skin[1] * 0.3, skin[2] * 0.3};
  const double my1 = e.cy + 0.2 * h, my2 = my1 + std::max(1.5, 0.06 * h);
  const double mx1 = e.cx - 0.18 * w, mx2 = e.cx + 0.18 * w;
  canvas.fill(face.rect, [&](int px, int py) {
    const double fx = px + 0.5, fy = py + 0.5;
    return fx >= mx1 && fx < mx2 && fy >= my1 && fy < my2;
  }, lip, face.layer);
}

// Fraction of the face ellipse's pixels for which `covered` holds.
template <typename Pred>
double ellipse_fraction(const Face& face, Pred&& covered) {
  long inside = 0, hit = 0;
  for (int y = face.rect.y1; y < face.rect.y2; ++y) {
    for (int x = face.rect.x1; x < face.rect.x2; ++x) {
      if (!face.ellipse.contains(x + 0.5, y + 0.5)) continue;
      ++inside;
      if (covered(x, y)) ++hit;
    }
  }
  return inside == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(inside);
}

Shape landmark_occluder(const Face& face, const IRect& clip, Rng& rng) {
  const Ellipse& e = face.ellipse;
  Shape s;
  s.kind = ShapeKind::kRect;
  s.clip = clip;
  s.x1 = e.cx - e.a * uniform(rng, 1.0, 1.15);
  s.x2 = e.cx + e.a * uniform(rng, 1.0, 1.15);
  if (uniform(rng, 0, 1) < 0.5) {  // glasses band over the eyes
    s.y1 = e.cy - e.b * uniform(rng, 0.42, 0.48);
    s.y2 = e.cy + e.b * uniform(rng, -0.02, 0.06);
  } else {  // gauze mask over nose and mouth
    s.y1 = e.cy + e.b * uniform(rng, -0.05, 0.05);
    s.y2 = e.cy + e.b * uniform(rng, 0.8, 1.05);
  }
  return s;
}

Shape object_occluder(const Face& face, const IRect& clip, bool heavy, Rng& rng) {
  const Ellipse& e = face.ellipse;
  const double lo = heavy ? kIgnoredCoverage : 0.25;
  const double hi = heavy ? 1.0 : 0.60;
  Shape s;
  s.clip = clip;
  for (int attempt = 0; attempt < 64; ++attempt) {
    s.kind = static_cast<ShapeKind>(uniform_int(rng, 0, 2));
    const double scale = heavy ? uniform(rng, 1.0, 1.4) : uniform(rng, 0.4, 1.0);
    const double w = 2 * e.a * scale * uniform(rng, 0.7, 1.3);
    const double h = 2 * e.b * scale * uniform(rng, 0.7, 1.3);
    const double cx = e.cx + e.a * uniform(rng, -0.8, 0.8) * (heavy ? 0.2 : 1.0);
    const double cy = e.cy + e.b * uniform(rng, -0.8, 0.8) * (heavy ? 0.2 : 1.0);
    s.x1 = cx - w / 2;
    s.x2 = cx + w / 2;
    s.y1 = cy - h / 2;
    s.y2 = cy + h / 2;
    if (s.kind == ShapeKind::kStrip) {
      const double theta = uniform(rng, 0.0, std::numbers::pi);
      s.nx = std::cos(theta);
      s.ny = std::sin(theta);
      s.px = cx;
      s.py = cy;
      s.half = std::min(e.a, e.b) * (heavy ? 1.2 : uniform(rng, 0.2, 0.5));
    }
    const double c = ellipse_fraction(face, [&](int x, int y) { return s.contains(x, y); });
    if (c >= lo && c <= hi) return s;
  }
  // Deterministic fallback: a rectangle over the lower part of the face.
  s.kind = ShapeKind::kRect;
  s.x1 = e.cx - 1.2 * e.a;
  s.x2 = e.cx + 1.2 * e.a;
  s.y1 = heavy ? e.cy - 1.2 * e.b : e.cy + 0.1 * e.b;
  s.y2 = e.cy + 1.2 * e.b;
  return s;
}

Face make_face(double x1, double y1, int w, OcclusionCategory category) {
  const int h = static_cast<int>(std::lround(1.25 * w));
  const int ix = static_cast<int>(std::lround(x1)), iy = static_cast<int>(std::lround(y1));
  Face f;
  f.rect = {ix, iy, ix + w, iy + h};
  f.ellipse = {ix + 0.5 * w, iy + 0.5 * h, 0.5 * w, 0.5 * h};
  f.category = category;
  return f;
}

bool fits(const Face& f, int w, int h) {
  return f.rect.x1 >= 0 && f.rect.y1 >= 0 && f.rect.x2 <= w && f.rect.y2 <= h;
}

OcclusionCategory draw_category(const OcclusionMix& mix, bool allow_pair, Rng& rng) {
  const double pair = allow_pair ? mix.face_over_face : 0.0;
  const double total = mix.landmark + pair + mix.object + mix.none;
  double u = uniform(rng, 0.0, 1.0) * total;
  if ((u -= mix.landmark) < 0.0) return OcclusionCategory::kLandmark;
  if ((u -= pair) < 0.0) return OcclusionCategory::kFaceOverFace;
  if ((u -= mix.object) < 0.0) return OcclusionCategory::kObject;
  return OcclusionCategory::kNone;
}

}  // namespace

Scene render_scene(const SceneSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  const int W = spec.width, H = spec.height;
  Canvas canvas(W, H);
  paint_background(canvas, rng, spec.clutter);

  std::vector<Face> faces;
  std::vector<IRect> reserved;  // grown group extents; groups never overlap
  int layer = 0;
  const int target = uniform_int(rng, spec.min_faces, spec.max_faces);
  const double log_lo = std::log(spec.min_face_size), log_hi = std::log(spec.max_face_size);
  auto face_width = [&] {
    return static_cast<int>(std::lround(std::exp(uniform(rng, log_lo, log_hi))));
  };
  auto free_of_reserved = [&](const IRect& r) {
    return std::none_of(reserved.begin(), reserved.end(),
                        [&](const IRect& o) { return o.intersects(r); });
  };

  while (static_cast<int>(faces.size()) < target) {
    const bool room_for_pair = static_cast<int>(faces.size()) + 2 <= target;
    const double other = spec.mix.landmark + spec.mix.object + spec.mix.none;
    if (!room_for_pair && other <= 0.0) break;
    const OcclusionCategory category = draw_category(spec.mix, room_for_pair, rng);

    bool placed = false;
    for (int attempt = 0; attempt < spec.max_attempts && !placed; ++attempt) {
      const int w = face_width();
      const int h = static_cast<int>(std::lround(1.25 * w));
      Face back = make_face(uniform(rng, 0, W - w), uniform(rng, 0, H - h), w, category);
      if (!fits(back, W, H)) continue;
      if (category != OcclusionCategory::kFaceOverFace) {
        const IRect grown = back.rect.grown(1.3, W, H);
        if (!free_of_reserved(grown)) continue;
        back.layer = ++layer;
        paint_face(canvas, back, rng);
        if (category != OcclusionCategory::kNone) {
          const IRect clip = back.rect.grown(1.2, W, H);
          const bool heavy = category == OcclusionCategory::kObject &&
                             uniform(rng, 0, 1) < spec.heavy_object_probability;
          const Shape s = category == OcclusionCategory::kLandmark
                              ? landmark_occluder(back, clip, rng)
                              : object_occluder(back, clip, heavy, rng);
          const Color c = occluder_color(rng);
          canvas.fill(clip, [&](int x, int y) { return s.contains(x, y); }, c, ++layer);
        }
        faces.push_back(back);
        reserved.push_back(grown);
        placed = true;
        break;
      }
      // Front face overlapping the back face; it is painted later, so on the
      // overlap it hides the back face.
      const int fw = std::clamp(static_cast<int>(std::lround(w * uniform(rng, 0.8, 1.15))),
                                static_cast<int>(spec.min_face_size),
                                static_cast<int>(spec.max_face_size));
      const double side = uniform(rng, 0, 1) < 0.5 ? -1.0 : 1.0;
      const double dx = side * uniform(rng, 0.35, 0.7) * w;
      const double dy = uniform(rng, -0.3, 0.3) * h;
      Face front = make_face(back.ellipse.cx + dx - 0.5 * fw,
                             back.ellipse.cy + dy - 0.625 * fw, fw, OcclusionCategory::kNone);
      if (!fits(front, W, H)) continue;
      const double overlap = ellipse_fraction(back, [&](int x, int y) {
        return front.ellipse.contains(x + 0.5, y + 0.5);
      });
      if (overlap < 0.25 || overlap > 0.7) continue;
      const IRect uni{std::min(back.rect.x1, front.rect.x1), std::min(back.rect.y1, front.rect.y1),
                      std::max(back.rect.x2, front.rect.x2), std::max(back.rect.y2, front.rect.y2)};
      const IRect grown = uni.grown(1.3, W, H);
      if (!free_of_reserved(grown)) continue;
      back.layer = ++layer;
      paint_face(canvas, back, rng);
      front.layer = ++layer;
      paint_face(canvas, front, rng);
      faces.push_back(back);
      faces.push_back(front);
      reserved.push_back(grown);
      placed = true;
    }
    if (!placed) {
      if (static_cast<int>(faces.size()) >= spec.min_faces) break;
      throw InvalidArgument("could not place " + std::to_string(spec.min_faces) +
                            " faces without overlap after " +
                            std::to_string(spec.max_attempts) + " attempts");
    }
  }

  Scene scene;
  scene.image = canvas.quantize(rng, spec.noise);
  scene.occlusion_mask = GrayImage(W, H, 0);
  for (const Face& f : faces) {
    const double coverage = ellipse_fraction(f, [&](int x, int y) {
      return canvas.owner(x, y) > f.layer;
    });
    Annotation ann;
    ann.box = {static_cast<double>(f.rect.x1), static_cast<double>(f.rect.y1),
               static_cast<double>(f.rect.x2), static_cast<double>(f.rect.y2)};
    const double short_side = std::min(f.rect.x2 - f.rect.x1, f.rect.y2 - f.rect.y1);
    if (short_side < kIgnoredFaceSize || coverage >= kIgnoredCoverage) {
      ann.state = OcclusionState::kIgnored;
    } else if (coverage > kMaskedCoverage) {
      ann.state = OcclusionState::kMasked;
    } else {
      ann.state = OcclusionState::kUnmasked;
    }
    GrayImage own(W, H, 0);
    if (ann.state == OcclusionState::kMasked) {
      PixelRegion region{W, H, 0, 0};
      for (int y = f.rect.y1; y < f.rect.y2; ++y) {
        for (int x = f.rect.x1; x < f.rect.x2; ++x) {
          if (canvas.owner(x, y) <= f.layer) continue;
          own.set(x, y, 255);
          scene.occlusion_mask.set(x, y, 255);
          region.x1 = std::min(region.x1, x);
          region.y1 = std::min(region.y1, y);
          region.x2 = std::max(region.x2, x + 1);
          region.y2 = std::max(region.y2, y + 1);
        }
      }
      ann.occlusion_region = region;
    }
    scene.annotations.push_back(ann);
    scene.categories.push_back(f.category);
    scene.coverage.push_back(coverage);
    scene.face_layer.push_back(f.layer);
    scene.face_occluders.push_back(std::move(own));
  }
  scene.owner = std::move(canvas.owners());
  return scene;
}

// ---------------------------------------------------------------------------
// Dataset directory format

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

json record_to_json(const DatasetRecord& r) {
  json faces = json::array();
  for (const Annotation& a : r.annotations) {
    json f{{"box", {a.box.x1, a.box.y1, a.box.x2, a.box.y2}}, {"state", to_string(a.state)}};
    if (a.occlusion_region) {
      const PixelRegion& p = *a.occlusion_region;
      f["region"] = {p.x1, p.y1, p.x2, p.y2};
    }
    faces.push_back(std::move(f));
  }
  return json{{"image", r.image_file}, {"mask", r.mask_file}, {"split", r.split},
              {"faces", std::move(faces)}};
}

DatasetRecord record_from_json(const json& j) {
  DatasetRecord r;
  r.image_file = j.at("image").get<std::string>();
  r.mask_file = j.at("mask").get<std::string>();
  r.split = j.at("split").get<std::string>();
  for (const json& f : j.at("faces")) {
    Annotation a;
    const auto box = f.at("box").get<std::vector<double>>();
    if (box.size() != 4) throw DataError("box needs 4 numbers");
    a.box = {box[0], box[1], box[2], box[3]};
    if (!a.box.valid()) throw DataError("invalid box");
    const auto state = f.at("state").get<std::string>();
    try {
      a.state = parse_occlusion_state(state.c_str());
    } catch (const InvalidArgument&) {
      throw DataError("unknown occlusion_state '" + state + "'");
    }
    if (f.contains("region")) {
      const auto p = f.at("region").get<std::vector<int>>();
      if (p.size() != 4) throw DataError("region needs 4 integers");
      a.occlusion_region = PixelRegion{p[0], p[1], p[2], p[3]};
    }
    if (a.state == OcclusionState::kMasked &&
        (!a.occlusion_region || a.occlusion_region->empty())) {
      throw DataError("masked face without a non-empty occlusion region");
    }
    if (a.state != OcclusionState::kMasked && a.occlusion_region) {
      throw DataError("occlusion region on a face that is not masked");
    }
    r.annotations.push_back(a);
  }
  return r;
}

}  // namespace

void write_dataset(std::span<const Sample> samples, const fs::path& root, bool export_index) {
  fs::create_directories(root / "images");
  fs::create_directories(root / "masks");
  std::ofstream out(root / "annotations.jsonl", std::ios::trunc);
  if (!out) throw DataError("cannot write " + (root / "annotations.jsonl").string());
  json index{{"images", json::array()}, {"annotations", json::array()},
             {"categories", json::array({json{{"id", 1}, {"name", "face"}}})}};
  int ann_id = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    if (s.record.image_file.empty() || s.record.mask_file.empty()) {
      throw InvalidArgument("dataset record without file names");
    }
    if (s.image.width != s.mask.width || s.image.height != s.mask.height) {
      throw InvalidArgument("mask and image dimensions differ for " + s.record.image_file);
    }
    write_ppm(root / s.record.image_file, s.image);
    write_pgm(root / s.record.mask_file, s.mask);
    out << record_to_json(s.record).dump() << '\n';
    if (export_index) {
      index["images"].push_back({{"id", i}, {"file_name", s.record.image_file},
                                 {"mask_file", s.record.mask_file},
                                 {"width", s.image.width}, {"height", s.image.height},
                                 {"split", s.record.split}});
      for (const Annotation& a : s.record.annotations) {
        index["annotations"].push_back(
            {{"id", ann_id++}, {"image_id", i}, {"category_id", 1},
             {"bbox", {a.box.x1, a.box.y1, a.box.width(), a.box.height()}},
             {"area", a.box.area()}, {"occlusion_state", to_string(a.state)}});
      }
    }
  }
  if (!out) throw DataError("write failed for " + (root / "annotations.jsonl").string());
  if (export_index) {
    std::ofstream idx(root / "index.json", std::ios::trunc);
    idx << index.dump(1) << '\n';
    if (!idx) throw DataError("write failed for " + (root / "index.json").string());
  }
}

std::vector<DatasetRecord> read_dataset(const fs::path& root) {
  std::vector<DatasetRecord> records;
  const fs::path file = root / "annotations.jsonl";
  if (!fs::exists(file)) return records;
  std::ifstream in(file);
  if (!in) throw DataError("cannot open " + file.string());
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = file.string() + ":" + std::to_string(line_no) + ": ";
    DatasetRecord r;
    try {
      r = record_from_json(json::parse(line));
    } catch (const json::exception& e) {
      throw DataError(where + "malformed record: " + e.what());
    } catch (const DataError& e) {
      throw DataError(where + e.what());
    }
    const bool any_masked = std::any_of(r.annotations.begin(), r.annotations.end(), [](const auto& a) {
      return a.state == OcclusionState::kMasked;
    });
    if (any_masked && !fs::exists(root / r.mask_file)) {
      throw DataError(where + "missing occlusion mask file " + (root / r.mask_file).string());
    }
    records.push_back(std::move(r));
  }
  return records;
}

Sample load_sample(const fs::path& root, const DatasetRecord& record) {
  Sample s;
  s.record = record;
  s.image = read_ppm(root / record.image_file);
  const fs::path mask = root / record.mask_file;
  if (fs::exists(mask)) {
    s.mask = read_pgm(mask);
  } else {
    const bool any_masked = std::any_of(record.annotations.begin(), record.annotations.end(),
                                        [](const auto& a) { return a.state == OcclusionState::kMasked; });
    if (any_masked) throw DataError("missing occlusion mask file " + mask.string());
    s.mask = GrayImage(s.image.width, s.image.height, 0);
  }
  if (s.mask.width != s.image.width || s.mask.height != s.image.height) {
    throw DataError("mask dimensions differ from image for " + mask.string());
  }
  return s;
}

// ---------------------------------------------------------------------------
// Benchmark splits

BenchmarkSpec::BenchmarkSpec() {
  // Mostly unoccluded training faces, an occlusion-heavy test split.
  train_scene.mix = {0.1 / 3.0, 0.1 / 3.0, 0.1 / 3.0, 0.9};
  test_scene.mix = {0.35, 0.2, 0.35, 0.1};
  segmentation_scene.mix = {0.35, 0.2, 0.35, 0.1};
}

void BenchmarkSpec::validate() const {
  if (train_size < 1 || val_size < 1 || test_size < 1 || segmentation_size < 0) {
    throw InvalidArgument("split sizes must be positive");
  }
  train_scene.validate();
  test_scene.validate();
  segmentation_scene.validate();
}

std::string content_hash(const RgbImage& image) { return sha256_hex(image.pixels); }

std::vector<Sample> render_split(const SceneSpec& scene, std::uint64_t seed, std::uint64_t stream,
                                 int count, const std::string& split, SplitRule rule) {
  constexpr int kMaxRedraws = 1000;
  std::vector<Sample> samples;
  samples.reserve(static_cast<std::size_t>(std::max(count, 0)));
  for (int i = 0; i < count; ++i) {
    const std::uint64_t image_seed = derive_seed(seed, stream, static_cast<std::uint64_t>(i));
    bool accepted = false;
    for (int attempt = 0; attempt < kMaxRedraws && !accepted; ++attempt) {
      Scene s;
      try {
        s = render_scene(scene, derive_seed(image_seed, 0x7e57, static_cast<std::uint64_t>(attempt)));
      } catch (const InvalidArgument&) {
        if (attempt == 0) scene.validate();  // rethrows genuine spec errors
        continue;
      }
      int masked = 0;
      for (const Annotation& a : s.annotations) masked += a.state == OcclusionState::kMasked;
      const int others = static_cast<int>(s.annotations.size()) - masked;
      switch (rule) {
        case SplitRule::kAny: accepted = true; break;
        case SplitRule::kMajorityMasked: accepted = masked >= 1 && masked >= others; break;
        case SplitRule::kAnyMasked: accepted = masked >= 1; break;
      }
      if (!accepted) continue;
      char name[64];
      std::snprintf(name, sizeof name, "%s_%06d", split.c_str(), i);
      Sample sample;
      sample.record.image_file = std::string("images/") + name + ".ppm";
      sample.record.mask_file = std::string("masks/") + name + ".pgm";
      sample.record.annotations = std::move(s.annotations);
      sample.record.split = split;
      sample.image = std::move(s.image);
      sample.mask = std::move(s.occlusion_mask);
      samples.push_back(std::move(sample));
    }
    if (!accepted) {
      throw InvariantViolation("split '" + split + "': no acceptable scene after " +
                               std::to_string(kMaxRedraws) + " redraws");
    }
  }
  return samples;
}

Benchmark make_benchmark(const BenchmarkSpec& spec) {
  spec.validate();
  Benchmark b;
  b.train = render_split(spec.train_scene, spec.seed, 1, spec.train_size, "train", SplitRule::kAny);
  b.val = render_split(spec.train_scene, spec.seed, 2, spec.val_size, "val", SplitRule::kAny);
  b.test = render_split(spec.test_scene, spec.seed, 3, spec.test_size, "test",
                        SplitRule::kMajorityMasked);
  b.segmentation = render_split(spec.segmentation_scene, spec.seed, 4, spec.segmentation_size,
                                "seg", SplitRule::kAnyMasked);
  return b;
}

}  // namespace aofd
