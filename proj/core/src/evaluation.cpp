#include "aofd/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "aofd/error.hpp"

namespace aofd {

const char* to_string(Disposition d) {
  switch (d) {
    case Disposition::kTruePositive: return "tp";
    case Disposition::kFalsePositive: return "fp";
    case Disposition::kIgnored: return "ignored";
  }
  return "?";
}

const char* to_string(Subset s) {
  switch (s) {
    case Subset::kAll: return "all";
    case Subset::kMaskedOnly: return "masked_only";
    case Subset::kNonIgnored: return "non_ignored";
  }
  return "?";
}

const char* to_string(BoxProtocol p) { return p == BoxProtocol::kRect ? "rect" : "square"; }

Subset parse_subset(const std::string& text) {
  if (text == "all") return Subset::kAll;
  if (text == "masked_only" || text == "masked") return Subset::kMaskedOnly;
  if (text == "non_ignored") return Subset::kNonIgnored;
  throw InvalidArgument("unknown subset '" + text + "' (all, masked_only, non_ignored)");
}

BoxProtocol parse_box_protocol(const std::string& text) {
  if (text == "rect") return BoxProtocol::kRect;
  if (text == "square") return BoxProtocol::kSquare;
  throw InvalidArgument("unknown box protocol '" + text + "' (rect, square)");
}

bool in_subset(OcclusionState state, Subset subset) {
  switch (subset) {
    case Subset::kAll: return true;
    case Subset::kMaskedOnly: return state == OcclusionState::kMasked;
    case Subset::kNonIgnored: return state != OcclusionState::kIgnored;
  }
  return false;
}

MatchResult match_detections(std::span<const Detection> dets, std::span<const Annotation> gts,
                             double iou_threshold, IgnorePolicy policy, Subset subset) {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) {
    throw InvalidArgument("iou threshold must lie in (0, 1]");
  }
  for (std::size_t i = 1; i < dets.size(); ++i) {
    if (dets[i].score > dets[i - 1].score) {
      throw InvalidArgument("detections must be sorted by descending score");
    }
  }
  MatchResult r;
  r.iou_threshold = iou_threshold;
  r.gt_matched.assign(gts.size(), false);
  std::vector<bool> inside(gts.size());
  for (std::size_t g = 0; g < gts.size(); ++g) {
    inside[g] = in_subset(gts[g].state, subset);
    r.num_gts += inside[g];
  }
  for (const Detection& d : dets) {
    double best_in = -1.0, best_out = -1.0;
    std::size_t best_g = 0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double o = iou(d.box, gts[g].box);
      if (o < iou_threshold) continue;
      if (inside[g]) {
        if (!r.gt_matched[g] && o > best_in) {
          best_in = o;
          best_g = g;
        }
      } else {
        best_out = std::max(best_out, o);
      }
    }
    Disposition disp = Disposition::kFalsePositive;
    if (best_in >= 0.0 && best_in >= best_out) {
      disp = Disposition::kTruePositive;
      r.gt_matched[best_g] = true;
    } else if (best_out >= 0.0 && policy == IgnorePolicy::kDiscount) {
      disp = Disposition::kIgnored;
    }
    r.dispositions.push_back(disp);
    r.scores.push_back(d.score);
  }
  return r;
}

std::vector<PrPoint> pr_curve(std::span<const MatchResult> results) {
  struct Entry {
    double score;
    Disposition disp;
  };
  std::vector<Entry> all;
  std::size_t num_gts = 0;
  for (const MatchResult& r : results) {
    num_gts += r.num_gts;
    for (std::size_t i = 0; i < r.scores.size(); ++i) all.push_back({r.scores[i], r.dispositions[i]});
  }
  std::sort(all.begin(), all.end(), [](const Entry& a, const Entry& b) { return a.score > b.score; });
  std::vector<PrPoint> curve;
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < all.size();) {
    const double s = all[i].score;
    for (; i < all.size() && all[i].score == s; ++i) {
      tp += all[i].disp == Disposition::kTruePositive;
      fp += all[i].disp == Disposition::kFalsePositive;
    }
    if (tp + fp == 0) continue;
    PrPoint p;
    p.threshold = s;
    p.tp = tp;
    p.fp = fp;
    p.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    p.recall = num_gts == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(num_gts);
    curve.push_back(p);
  }
  return curve;
}

std::optional<double> average_precision(std::span<const PrPoint> curve, std::size_t num_gts) {
  if (num_gts == 0) return std::nullopt;
  // Envelope: precision at recall r is the best precision at any recall >= r.
  std::vector<double> envelope(curve.size());
  double best = 0.0;
  for (std::size_t i = curve.size(); i-- > 0;) {
    best = std::max(best, curve[i].precision);
    envelope[i] = best;
  }
  // Integrate in whole TPs over runs of equal envelope value, so curves with
  // the same envelope give bit-identical AP whatever their breakpoints.
  double ap = 0.0;
  std::size_t run_start = 0, prev_tp = 0;
  for (std::size_t i = 0; i < curve.size(); ++i) {
    if (i > 0 && envelope[i] != envelope[i - 1]) {
      ap += static_cast<double>(prev_tp - run_start) * envelope[i - 1];
      run_start = prev_tp;
    }
    prev_tp = curve[i].tp;
  }
  if (!curve.empty()) ap += static_cast<double>(prev_tp - run_start) * envelope.back();
  return std::clamp(ap / static_cast<double>(num_gts), 0.0, 1.0);
}

std::map<std::size_t, double> recall_at_fp(std::span<const PrPoint> curve,
                                           std::span<const std::size_t> budgets) {
  std::map<std::size_t, double> out;
  for (std::size_t budget : budgets) {
    double recall = 0.0;
    for (const PrPoint& p : curve) {
      if (p.fp <= budget) recall = std::max(recall, p.recall);
    }
    out[budget] = recall;
  }
  return out;
}

void EvalSettings::validate() const {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) {
    throw InvalidArgument("iou threshold must lie in (0, 1]");
  }
}

EvalReport evaluate(std::span<const std::vector<Detection>> dets,
                    std::span<const std::vector<Annotation>> gts, const EvalSettings& settings) {
  settings.validate();
  if (dets.size() != gts.size()) {
    throw InvalidArgument("detections and annotations cover different image counts");
  }
  EvalReport report;
  report.settings = settings;
  report.num_images = dets.size();
  std::vector<MatchResult> results;
  results.reserve(dets.size());
  for (std::size_t i = 0; i < dets.size(); ++i) {
    std::vector<Detection> d = dets[i];
    if (settings.boxes == BoxProtocol::kSquare) {
      for (Detection& x : d) x.box = rect_to_square(x.box, settings.square_mode);
    }
    std::stable_sort(d.begin(), d.end(),
                     [](const Detection& a, const Detection& b) { return a.score > b.score; });
    results.push_back(match_detections(d, gts[i], settings.iou_threshold, settings.policy,
                                       settings.subset));
    report.num_gts += results.back().num_gts;
    report.num_detections += d.size();
    report.num_ignored += static_cast<std::size_t>(std::count(
        results.back().dispositions.begin(), results.back().dispositions.end(),
        Disposition::kIgnored));
  }
  report.curve = pr_curve(results);
  report.ap = average_precision(report.curve, report.num_gts);
  report.recall_at_fp = recall_at_fp(report.curve, settings.fp_budgets);
  return report;
}

namespace {

double sig9(double x) {
  if (x == 0.0 || !std::isfinite(x)) return x;
  const double scale = std::pow(10.0, 8 - static_cast<int>(std::floor(std::log10(std::abs(x)))));
  return std::round(x * scale) / scale;
}

}  // namespace

nlohmann::json to_json(const EvalReport& r) {
  using nlohmann::json;
  json points = json::array();
  for (const PrPoint& p : r.curve) {
    points.push_back({{"precision", sig9(p.precision)}, {"recall", sig9(p.recall)},
                      {"threshold", sig9(p.threshold)}, {"tp", p.tp}, {"fp", p.fp}});
  }
  json rfp = json::object();
  for (const auto& [budget, recall] : r.recall_at_fp) rfp[std::to_string(budget)] = sig9(recall);
  return json{
      {"ap", r.ap ? json(sig9(*r.ap)) : json(nullptr)},
      {"ap_defined", r.ap.has_value()},
      {"recall_at_fp", rfp},
      {"num_images", r.num_images},
      {"num_gts", r.num_gts},
      {"num_detections", r.num_detections},
      {"num_ignored_detections", r.num_ignored},
      {"settings",
       {{"subset", to_string(r.settings.subset)},
        {"protocol", to_string(r.settings.boxes)},
        {"square_mode", r.settings.square_mode == SquareMode::kLongSide ? "long_side"
                                                                        : "area_preserving"},
        {"iou_threshold", r.settings.iou_threshold},
        {"ignore_policy",
         r.settings.policy == IgnorePolicy::kDiscount ? "discount" : "count_false_positive"},
        {"fp_budgets", r.settings.fp_budgets}}},
      {"pr_curve", points}};
}

void write_report(const std::filesystem::path& path, const EvalReport& report) {
  std::ofstream out(path, std::ios::trunc);
  out << to_json(report).dump(2) << '\n';
  if (!out) throw DataError("cannot write " + path.string());
}

void write_pr_text(const std::filesystem::path& path, std::span<const PrPoint> curve) {
  std::ofstream out(path, std::ios::trunc);
  out.precision(9);
  out << "# recall precision\n";
  for (const PrPoint& p : curve) out << p.recall << ' ' << p.precision << '\n';
  if (!out) throw DataError("cannot write " + path.string());
}

}  // namespace aofd
