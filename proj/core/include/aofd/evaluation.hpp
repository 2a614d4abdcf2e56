#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "aofd/geometry.hpp"

namespace aofd {

enum class Disposition { kTruePositive, kFalsePositive, kIgnored };

// Which ground truths are evaluated. In kAll, ignored-state faces count as
// ordinary faces.
enum class Subset { kAll, kMaskedOnly, kNonIgnored };

// What happens to a detection whose best match is a face outside the subset.
enum class IgnorePolicy {
  kDiscount,             // disposition kIgnored: neither TP nor FP
  kCountFalsePositive,   // disposition kFalsePositive
};

enum class BoxProtocol { kRect, kSquare };

const char* to_string(Disposition d);
const char* to_string(Subset s);
const char* to_string(BoxProtocol p);
Subset parse_subset(const std::string& text);
BoxProtocol parse_box_protocol(const std::string& text);

bool in_subset(OcclusionState state, Subset subset);

struct MatchResult {
  std::vector<Disposition> dispositions;  // one per detection
  std::vector<double> scores;
  std::vector<bool> gt_matched;           // one per gt; only in-subset gts can be set
  std::size_t num_gts = 0;                // gts inside the subset
  double iou_threshold = 0.5;
};

// Greedy matching in score order. Each detection goes to the gt with the
// highest IoU >= threshold among unmatched in-subset gts and all out-of-subset
// gts; ties favour the in-subset gt. Throws InvalidArgument when `dets` is not
// sorted by descending score.
MatchResult match_detections(std::span<const Detection> dets, std::span<const Annotation> gts,
                             double iou_threshold, IgnorePolicy policy = IgnorePolicy::kDiscount,
                             Subset subset = Subset::kAll);

struct PrPoint {
  double precision = 0.0;
  double recall = 0.0;
  double threshold = 0.0;  // detections with score >= threshold are kept
  std::size_t tp = 0;
  std::size_t fp = 0;
};

// One point per distinct score (tied scores enter together), ordered by
// descending threshold. Thresholds where no TP or FP is kept are skipped.
std::vector<PrPoint> pr_curve(std::span<const MatchResult> results);

// All-point interpolated AP over the precision envelope. Empty when no gt is
// in the subset (undefined AP).
std::optional<double> average_precision(std::span<const PrPoint> curve, std::size_t num_gts);

// Highest recall over thresholds that keep at most `budget` FPs.
std::map<std::size_t, double> recall_at_fp(std::span<const PrPoint> curve,
                                           std::span<const std::size_t> budgets);

struct EvalSettings {
  Subset subset = Subset::kAll;
  BoxProtocol boxes = BoxProtocol::kRect;
  SquareMode square_mode = SquareMode::kLongSide;
  double iou_threshold = 0.5;
  IgnorePolicy policy = IgnorePolicy::kDiscount;
  std::vector<std::size_t> fp_budgets{10, 50, 100};

  void validate() const;
};

struct EvalReport {
  EvalSettings settings;
  std::vector<PrPoint> curve;
  std::optional<double> ap;
  std::map<std::size_t, double> recall_at_fp;
  std::size_t num_images = 0;
  std::size_t num_gts = 0;
  std::size_t num_detections = 0;
  std::size_t num_ignored = 0;
};

// `dets[i]` and `gts[i]` belong to image i. Detections are sorted per image
// here; with the square protocol they are converted with rect_to_square.
EvalReport evaluate(std::span<const std::vector<Detection>> dets,
                    std::span<const std::vector<Annotation>> gts, const EvalSettings& settings);

nlohmann::json to_json(const EvalReport& report);
void write_report(const std::filesystem::path& path, const EvalReport& report);
// Two columns "recall precision" per line, for external plotting.
void write_pr_text(const std::filesystem::path& path, std::span<const PrPoint> curve);

}  // namespace aofd
