#include "aofd/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <string>

#include "aofd/error.hpp"

namespace aofd {

namespace {

constexpr double kMaxLogSize = 4.135166556742356;  // log(1000 / 16)

void require_valid(const BoundingBox& box, const char* what) {
  if (!box.valid()) {
    throw InvalidArgument(std::string(what) + ": degenerate or non-finite box");
  }
}

}  // namespace

bool BoundingBox::valid() const {
  return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) &&
         std::isfinite(y2) && x1 < x2 && y1 < y2;
}

const char* to_string(OcclusionState state) {
  switch (state) {
    case OcclusionState::kUnmasked:
      return "unmasked";
    case OcclusionState::kMasked:
      return "masked";
    case OcclusionState::kIgnored:
      return "ignored";
  }
  return "unknown";
}

OcclusionState parse_occlusion_state(const char* text) {
  if (std::strcmp(text, "unmasked") == 0) return OcclusionState::kUnmasked;
  if (std::strcmp(text, "masked") == 0) return OcclusionState::kMasked;
  if (std::strcmp(text, "ignored") == 0) return OcclusionState::kIgnored;
  throw InvalidArgument(std::string("unknown occlusion state '") + text + "'");
}

double iou(const BoundingBox& a, const BoundingBox& b) {
  require_valid(a, "iou");
  require_valid(b, "iou");
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

BoundingBox enlarge_box(const BoundingBox& box, double factor) {
  if (!(factor > 0.0) || !std::isfinite(factor)) {
    throw InvalidArgument("enlarge_box: factor must be positive");
  }
  require_valid(box, "enlarge_box");
  const double cx = box.center_x();
  const double cy = box.center_y();
  const double hw = 0.5 * box.width() * factor;
  const double hh = 0.5 * box.height() * factor;
  return {cx - hw, cy - hh, cx + hw, cy + hh};
}

BoundingBox rect_to_square(const BoundingBox& box, SquareMode mode) {
  require_valid(box, "rect_to_square");
  const double w = box.width();
  const double h = box.height();
  if (w == h) return box;
  const double side =
      mode == SquareMode::kLongSide ? std::max(w, h) : std::sqrt(w * h);
  const double cx = box.center_x();
  const double cy = box.center_y();
  const double half = 0.5 * side;
  return {cx - half, cy - half, cx + half, cy + half};
}

BoundingBox clip_box(const BoundingBox& box, double width, double height) {
  return {std::clamp(box.x1, 0.0, width), std::clamp(box.y1, 0.0, height),
          std::clamp(box.x2, 0.0, width), std::clamp(box.y2, 0.0, height)};
}

std::vector<std::size_t> nms(std::span<const BoundingBox> boxes,
                             std::span<const double> scores,
                             double iou_threshold, std::size_t max_keep) {
  if (boxes.size() != scores.size()) {
    throw InvalidArgument("nms: boxes and scores differ in length");
  }
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });

  std::vector<std::size_t> kept;
  std::vector<char> suppressed(boxes.size(), 0);
  for (std::size_t i = 0; i < order.size(); ++i) {
    const std::size_t idx = order[i];
    if (suppressed[idx]) continue;
    kept.push_back(idx);
    if (max_keep > 0 && kept.size() == max_keep) break;
    for (std::size_t j = i + 1; j < order.size(); ++j) {
      const std::size_t other = order[j];
      if (!suppressed[other] && iou(boxes[idx], boxes[other]) > iou_threshold) {
        suppressed[other] = 1;
      }
    }
  }
  return kept;
}

BoxDeltas encode_deltas(const BoundingBox& reference, const BoundingBox& target,
                        const DeltaWeights& weights) {
  require_valid(reference, "encode_deltas");
  require_valid(target, "encode_deltas");
  const double rw = reference.width();
  const double rh = reference.height();
  return {weights[0] * (target.center_x() - reference.center_x()) / rw,
          weights[1] * (target.center_y() - reference.center_y()) / rh,
          weights[2] * std::log(target.width() / rw),
          weights[3] * std::log(target.height() / rh)};
}

BoundingBox apply_deltas(const BoundingBox& reference, const BoxDeltas& deltas,
                         const DeltaWeights& weights) {
  const double rw = reference.width();
  const double rh = reference.height();
  const double cx = reference.center_x() + deltas[0] / weights[0] * rw;
  const double cy = reference.center_y() + deltas[1] / weights[1] * rh;
  const double w = rw * std::exp(std::min(deltas[2] / weights[2], kMaxLogSize));
  const double h = rh * std::exp(std::min(deltas[3] / weights[3], kMaxLogSize));
  return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

}  // namespace aofd
