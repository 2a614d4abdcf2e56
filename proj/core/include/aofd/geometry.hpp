#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace aofd {

// Axis-aligned box in continuous pixel coordinates. Area is
// (x2 - x1) * (y2 - y1); there is no +1 pixel convention.
struct BoundingBox {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double center_x() const { return 0.5 * (x1 + x2); }
  double center_y() const { return 0.5 * (y1 + y2); }

  // Finite coordinates with x1 < x2 and y1 < y2.
  bool valid() const;

  bool operator==(const BoundingBox&) const = default;
};

enum class OcclusionState { kUnmasked, kMasked, kIgnored };

const char* to_string(OcclusionState state);
OcclusionState parse_occlusion_state(const char* text);

// Integer pixel extent [x1, x2) x [y1, y2) of the occluder pixels that belong
// to one annotation inside the dataset's occlusion-mask image.
struct PixelRegion {
  int x1 = 0;
  int y1 = 0;
  int x2 = 0;
  int y2 = 0;

  bool empty() const { return x2 <= x1 || y2 <= y1; }
  bool operator==(const PixelRegion&) const = default;
};

// A labelled face. Only the face category exists, so it is not stored.
// `occlusion_region` is set iff `state == kMasked`.
struct Annotation {
  BoundingBox box;
  OcclusionState state = OcclusionState::kUnmasked;
  std::optional<PixelRegion> occlusion_region;

  bool operator==(const Annotation&) const = default;
};

struct Detection {
  BoundingBox box;
  double score = 0.0;  // in [0, 1]

  bool operator==(const Detection&) const = default;
};

// Intersection over union. Throws InvalidArgument on an invalid box.
double iou(const BoundingBox& a, const BoundingBox& b);

// Same center, width and height scaled by `factor` (> 0).
BoundingBox enlarge_box(const BoundingBox& box, double factor);

enum class SquareMode {
  kLongSide,        // side = max(w, h)
  kAreaPreserving,  // side = sqrt(w * h)
};

// Square with the same center as `box`.
BoundingBox rect_to_square(const BoundingBox& box,
                           SquareMode mode = SquareMode::kLongSide);

BoundingBox clip_box(const BoundingBox& box, double width, double height);

// Greedy non-maximum suppression. Returns the indices of kept boxes ordered by
// descending score (stable on ties). At most `max_keep` indices are returned
// when `max_keep > 0`.
std::vector<std::size_t> nms(std::span<const BoundingBox> boxes,
                             std::span<const double> scores,
                             double iou_threshold, std::size_t max_keep = 0);

// Center-offset / log-size regression deltas (dx, dy, dw, dh), each scaled by
// the matching entry of `weights`.
using BoxDeltas = std::array<double, 4>;
using DeltaWeights = std::array<double, 4>;

inline constexpr DeltaWeights kUnitDeltaWeights{1.0, 1.0, 1.0, 1.0};

BoxDeltas encode_deltas(const BoundingBox& reference, const BoundingBox& target,
                        const DeltaWeights& weights = kUnitDeltaWeights);

// Inverse of encode_deltas. Log-size deltas are clamped at log(1000 / 16) so
// that wild predictions cannot overflow.
BoundingBox apply_deltas(const BoundingBox& reference, const BoxDeltas& deltas,
                         const DeltaWeights& weights = kUnitDeltaWeights);

}  // namespace aofd
