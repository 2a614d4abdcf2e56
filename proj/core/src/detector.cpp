#include "aofd/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "aofd/error.hpp"
#include "aofd/losses.hpp"

namespace aofd {

namespace {

// Candidate order used for top-N selection: score descending, index ascending.
std::vector<std::size_t> order_by_score(std::span<const double> scores,
                                        std::size_t top_n) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  const auto cmp = [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
  };
  if (top_n > 0 && top_n < order.size()) {
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(top_n),
                      order.end(), cmp);
    order.resize(top_n);
  } else {
    std::sort(order.begin(), order.end(), cmp);
  }
  return order;
}

void keep_random_subset(std::vector<std::size_t>& items, std::size_t keep, Rng& rng) {
  if (items.size() <= keep) return;
  std::shuffle(items.begin(), items.end(), rng);
  items.resize(keep);
  std::sort(items.begin(), items.end());
}

}  // namespace

void AnchorConfig::validate() const {
  if (aspect_ratios.empty() || scales.empty()) {
    throw InvalidArgument("anchor config needs at least one ratio and one scale");
  }
  for (double r : aspect_ratios) {
    if (!(r > 0.0)) throw InvalidArgument("anchor aspect ratios must be positive");
  }
  for (std::size_t i = 0; i < scales.size(); ++i) {
    if (!(scales[i] > 0.0)) throw InvalidArgument("anchor scales must be positive");
    if (i > 0 && scales[i] < scales[i - 1]) {
      throw InvalidArgument("anchor scales must be sorted ascending");
    }
  }
  if (stride <= 0) throw InvalidArgument("anchor stride must be positive");
}

std::vector<BoundingBox> generate_anchors(const AnchorConfig& config,
                                          int map_height, int map_width) {
  config.validate();
  std::vector<BoundingBox> shapes;
  for (double ratio : config.aspect_ratios) {
    for (double scale : config.scales) {
      const double w = std::sqrt(scale / ratio);
      const double h = ratio * w;
      shapes.push_back({-0.5 * w, -0.5 * h, 0.5 * w, 0.5 * h});
    }
  }
  std::vector<BoundingBox> anchors;
  anchors.reserve(static_cast<std::size_t>(map_height) * map_width * shapes.size());
  for (int y = 0; y < map_height; ++y) {
    for (int x = 0; x < map_width; ++x) {
      const double cx = (x + 0.5) * config.stride;
      const double cy = (y + 0.5) * config.stride;
      for (const auto& s : shapes) {
        anchors.push_back({cx + s.x1, cy + s.y1, cx + s.x2, cy + s.y2});
      }
    }
  }
  return anchors;
}

Backbone::Backbone(int input_channels, int base_width, int channels)
    : feature_channels(channels) {
  layers[0] = Conv2d("backbone.conv1", input_channels, base_width, 3);
  layers[1] = Conv2d("backbone.conv2", base_width, 2 * base_width, 3);
  layers[2] = Conv2d("backbone.conv3", 2 * base_width, channels, 3);
  layers[3] = Conv2d("backbone.conv4", channels, channels, 3);
}

void Backbone::init(Rng& rng) {
  for (auto& layer : layers) layer.init(rng);
}

Tensor backbone_forward(const Backbone& backbone, const Tensor& image,
                        BackboneCache* cache) {
  constexpr int kStride = Backbone::kStride;
  if (image.height() < kStride || image.width() < kStride) {
    throw InvalidArgument("backbone_forward: image smaller than one stride (" +
                          std::to_string(kStride) + " px)");
  }
  const int ph = (image.height() + kStride - 1) / kStride * kStride;
  const int pw = (image.width() + kStride - 1) / kStride * kStride;
  Tensor x;
  if (ph == image.height() && pw == image.width()) {
    x = image;
  } else {
    x = Tensor(image.channels(), ph, pw);
    for (int c = 0; c < image.channels(); ++c)
      for (int y = 0; y < image.height(); ++y)
        for (int xx = 0; xx < image.width(); ++xx) x.at(c, y, xx) = image.at(c, y, xx);
  }

  BackboneCache local;
  BackboneCache& c = cache ? *cache : local;
  for (int i = 0; i < 4; ++i) {
    x = conv2d_forward(backbone.layers[i], x, cache ? &c.convs[i] : nullptr);
    relu_inplace(x);
    if (cache) c.activations[i] = x;
    if (i < 3) x = maxpool2_forward(x, cache ? &c.pool_argmax[i] : nullptr);
  }
  return x;
}

void backbone_backward(Backbone& backbone, const BackboneCache& cache,
                       const Tensor& grad_features) {
  Tensor g = grad_features;
  for (int i = 3; i >= 0; --i) {
    if (i < 3) {
      const Tensor& act = cache.activations[i];
      g = maxpool2_backward(g, cache.pool_argmax[i], act.channels(), act.height(),
                            act.width());
    }
    relu_backward(cache.activations[i], g);
    g = conv2d_backward(backbone.layers[i], cache.convs[i], g, i > 0);
  }
}

RegionProposalNetwork::RegionProposalNetwork(int feature_channels, int anchors)
    : conv("rpn.conv", feature_channels, feature_channels, 3),
      objectness("rpn.objectness", feature_channels, 2 * anchors, 1),
      regression("rpn.regression", feature_channels, 4 * anchors, 1),
      anchors_per_cell(anchors) {}

void RegionProposalNetwork::init(Rng& rng) {
  conv.init(rng);
  std::normal_distribution<double> small(0.0, 0.01);
  for (double& w : objectness.weight.value) w = small(rng);
  std::normal_distribution<double> tiny(0.0, 0.001);
  for (double& w : regression.weight.value) w = tiny(rng);
}

RpnOutput rpn_forward(const RegionProposalNetwork& rpn, const Tensor& features) {
  RpnOutput out;
  out.hidden = conv2d_forward(rpn.conv, features, &out.conv_cache);
  relu_inplace(out.hidden);
  out.logits = conv2d_forward(rpn.objectness, out.hidden, &out.objectness_cache);
  out.deltas = conv2d_forward(rpn.regression, out.hidden, &out.regression_cache);
  return out;
}

Tensor rpn_backward(RegionProposalNetwork& rpn, const RpnOutput& output,
                    const Tensor& grad_logits, const Tensor& grad_deltas) {
  Tensor g = conv2d_backward(rpn.objectness, output.objectness_cache, grad_logits);
  const Tensor g2 = conv2d_backward(rpn.regression, output.regression_cache, grad_deltas);
  for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] += g2.data()[i];
  relu_backward(output.hidden, g);
  return conv2d_backward(rpn.conv, output.conv_cache, g);
}

namespace {

struct AnchorSlot {
  int slot;
  int y;
  int x;
};

AnchorSlot locate(const RpnOutput& output, std::size_t index) {
  const int a = output.logits.channels() / 2;
  const int w = output.logits.width();
  const int cell = static_cast<int>(index / static_cast<std::size_t>(a));
  return {static_cast<int>(index % static_cast<std::size_t>(a)), cell / w, cell % w};
}

}  // namespace

double anchor_objectness(const RpnOutput& output, std::size_t index) {
  const auto s = locate(output, index);
  return face_probability(output.logits.at(2 * s.slot, s.y, s.x),
                          output.logits.at(2 * s.slot + 1, s.y, s.x));
}

BoxDeltas anchor_deltas(const RpnOutput& output, std::size_t index) {
  const auto s = locate(output, index);
  BoxDeltas d;
  for (int j = 0; j < 4; ++j) d[j] = output.deltas.at(4 * s.slot + j, s.y, s.x);
  return d;
}

RpnTargets assign_anchor_targets(std::span<const BoundingBox> anchors,
                                 std::span<const Annotation> ground_truth,
                                 const RpnTargetConfig& config, Rng& rng) {
  RpnTargets targets;
  targets.labels.assign(anchors.size(), -1);
  targets.deltas.assign(anchors.size(), BoxDeltas{});

  std::vector<std::size_t> usable;
  std::vector<std::size_t> ignored;
  for (std::size_t g = 0; g < ground_truth.size(); ++g) {
    (ground_truth[g].state == OcclusionState::kIgnored ? ignored : usable).push_back(g);
  }

  std::vector<double> best_iou(anchors.size(), 0.0);
  std::vector<int> best_gt(anchors.size(), -1);
  std::vector<double> gt_best(usable.size(), 0.0);
  std::vector<std::vector<double>> overlaps(usable.size(),
                                            std::vector<double>(anchors.size(), 0.0));
  for (std::size_t u = 0; u < usable.size(); ++u) {
    const auto& box = ground_truth[usable[u]].box;
    for (std::size_t a = 0; a < anchors.size(); ++a) {
      const double o = iou(anchors[a], box);
      overlaps[u][a] = o;
      if (o > best_iou[a]) {
        best_iou[a] = o;
        best_gt[a] = static_cast<int>(u);
      }
      gt_best[u] = std::max(gt_best[u], o);
    }
  }

  for (std::size_t a = 0; a < anchors.size(); ++a) {
    if (best_iou[a] < config.negative_iou) targets.labels[a] = 0;
    if (best_iou[a] >= config.positive_iou) targets.labels[a] = 1;
  }
  for (std::size_t u = 0; u < usable.size(); ++u) {
    if (gt_best[u] <= 0.0) continue;
    for (std::size_t a = 0; a < anchors.size(); ++a) {
      if (overlaps[u][a] == gt_best[u]) {
        targets.labels[a] = 1;
        best_gt[a] = static_cast<int>(u);
      }
    }
  }
  for (std::size_t g : ignored) {
    for (std::size_t a = 0; a < anchors.size(); ++a) {
      if (targets.labels[a] == 0 && iou(anchors[a], ground_truth[g].box) > 0.5) {
        targets.labels[a] = -1;
      }
    }
  }

  std::vector<std::size_t> pos;
  std::vector<std::size_t> neg;
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    if (targets.labels[a] == 1) pos.push_back(a);
    if (targets.labels[a] == 0) neg.push_back(a);
  }
  const auto max_pos =
      static_cast<std::size_t>(config.batch_size * config.positive_fraction);
  keep_random_subset(pos, max_pos, rng);
  keep_random_subset(neg, static_cast<std::size_t>(config.batch_size) - pos.size(), rng);

  std::fill(targets.labels.begin(), targets.labels.end(), -1);
  for (std::size_t a : pos) {
    targets.labels[a] = 1;
    targets.deltas[a] = encode_deltas(anchors[a], ground_truth[usable[best_gt[a]]].box);
  }
  for (std::size_t a : neg) targets.labels[a] = 0;
  targets.positives = static_cast<int>(pos.size());
  targets.negatives = static_cast<int>(neg.size());
  return targets;
}

RpnLoss rpn_loss(const RpnOutput& output, const RpnTargets& targets,
                 Tensor* grad_logits, Tensor* grad_deltas) {
  std::vector<std::size_t> sampled;
  for (std::size_t a = 0; a < targets.labels.size(); ++a) {
    if (targets.labels[a] >= 0) sampled.push_back(a);
  }
  const auto n = static_cast<Eigen::Index>(sampled.size());
  RowMatrix logits(n, 2);
  RowMatrix pred(n, 4);
  RowMatrix target(n, 4);
  std::vector<int> labels(sampled.size());
  std::vector<std::uint8_t> fg(sampled.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto s = locate(output, sampled[i]);
    logits(i, 0) = output.logits.at(2 * s.slot, s.y, s.x);
    logits(i, 1) = output.logits.at(2 * s.slot + 1, s.y, s.x);
    labels[i] = targets.labels[sampled[i]];
    fg[i] = labels[i] == 1 ? 1 : 0;
    for (int j = 0; j < 4; ++j) {
      pred(i, j) = output.deltas.at(4 * s.slot + j, s.y, s.x);
      target(i, j) = targets.deltas[sampled[i]][j];
    }
  }
  RowMatrix g_logits;
  RowMatrix g_pred;
  RpnLoss loss;
  loss.classification = classification_loss(logits, labels, &g_logits);
  loss.regression = bbox_regression_loss(pred, target, fg, &g_pred).value;

  if (grad_logits) {
    *grad_logits = Tensor(output.logits.channels(), output.logits.height(),
                          output.logits.width());
  }
  if (grad_deltas) {
    *grad_deltas = Tensor(output.deltas.channels(), output.deltas.height(),
                          output.deltas.width());
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto s = locate(output, sampled[i]);
    if (grad_logits) {
      grad_logits->at(2 * s.slot, s.y, s.x) = g_logits(i, 0);
      grad_logits->at(2 * s.slot + 1, s.y, s.x) = g_logits(i, 1);
    }
    if (grad_deltas) {
      for (int j = 0; j < 4; ++j) grad_deltas->at(4 * s.slot + j, s.y, s.x) = g_pred(i, j);
    }
  }
  return loss;
}

ProposalSet propose(const RpnOutput& output, std::span<const BoundingBox> anchors,
                    int image_width, int image_height, const ProposalConfig& config) {
  std::vector<double> scores(anchors.size());
  for (std::size_t a = 0; a < anchors.size(); ++a) scores[a] = anchor_objectness(output, a);
  const auto order = order_by_score(scores, static_cast<std::size_t>(std::max(0, config.pre_nms_top_n)));

  std::vector<BoundingBox> boxes;
  std::vector<double> kept_scores;
  for (std::size_t a : order) {
    const BoundingBox box = clip_box(apply_deltas(anchors[a], anchor_deltas(output, a)),
                                     image_width, image_height);
    if (!box.valid() || box.width() < config.min_size || box.height() < config.min_size) {
      continue;
    }
    boxes.push_back(box);
    kept_scores.push_back(scores[a]);
  }
  const auto keep = nms(boxes, kept_scores, config.nms_iou,
                        static_cast<std::size_t>(std::max(0, config.post_nms_top_n)));
  ProposalSet set;
  for (std::size_t k : keep) {
    set.boxes.push_back(boxes[k]);
    set.objectness.push_back(kept_scores[k]);
  }
  return set;
}

SampleBatch assign_and_sample(std::span<const BoundingBox> proposals,
                              std::span<const Annotation> ground_truth,
                              const SamplerConfig& config, Rng& rng,
                              const DeltaWeights& weights) {
  std::vector<BoundingBox> candidates(proposals.begin(), proposals.end());
  if (config.append_ground_truth) {
    for (const auto& gt : ground_truth) {
      if (gt.state != OcclusionState::kIgnored) candidates.push_back(gt.box);
    }
  }

  std::vector<std::size_t> fg;
  std::vector<std::size_t> bg;
  std::vector<int> match(candidates.size(), -1);
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    double best = 0.0;
    double best_ignored = 0.0;
    for (std::size_t g = 0; g < ground_truth.size(); ++g) {
      const double o = iou(candidates[i], ground_truth[g].box);
      if (ground_truth[g].state == OcclusionState::kIgnored) {
        best_ignored = std::max(best_ignored, o);
      } else if (o > best) {
        best = o;
        match[i] = static_cast<int>(g);
      }
    }
    if (best > config.foreground_iou) {
      fg.push_back(i);
    } else if (best_ignored <= config.foreground_iou) {
      bg.push_back(i);
    }
  }

  const auto max_fg = static_cast<std::size_t>(config.batch_size * config.foreground_fraction);
  keep_random_subset(fg, max_fg, rng);
  keep_random_subset(bg, static_cast<std::size_t>(config.batch_size) - fg.size(), rng);

  SampleBatch batch;
  for (std::size_t i : fg) {
    RoISample s;
    s.box = candidates[i];
    s.label = kFaceLabel;
    s.matched_gt = static_cast<std::size_t>(match[i]);
    s.regression_target = encode_deltas(candidates[i], ground_truth[match[i]].box, weights);
    batch.samples.push_back(s);
  }
  for (std::size_t i : bg) {
    RoISample s;
    s.box = candidates[i];
    batch.samples.push_back(s);
  }
  batch.foreground = static_cast<int>(fg.size());
  batch.no_foreground = fg.empty();
  return batch;
}

std::array<PoolBin, kRoiCells> roi_bins(const BoundingBox& box,
                                        const MapGeometry& geometry) {
  if (!box.valid()) throw InvalidArgument("roi_bins: invalid box");
  const double s = geometry.stride;
  int x_begin = static_cast<int>(std::floor(box.x1 / s));
  int y_begin = static_cast<int>(std::floor(box.y1 / s));
  int x_end = static_cast<int>(std::ceil(box.x2 / s));
  int y_end = static_cast<int>(std::ceil(box.y2 / s));
  if (x_end <= 0 || y_end <= 0 || x_begin >= geometry.width || y_begin >= geometry.height) {
    throw InvalidArgument("roi_pool: box lies entirely outside the feature map");
  }
  x_begin = std::max(x_begin, 0);
  y_begin = std::max(y_begin, 0);
  x_end = std::clamp(x_end, x_begin + 1, geometry.width);
  y_end = std::clamp(y_end, y_begin + 1, geometry.height);
  const int nx = x_end - x_begin;
  const int ny = y_end - y_begin;

  std::array<PoolBin, kRoiCells> bins;
  for (int r = 0; r < kRoiSize; ++r) {
    const int yb = y_begin + (r * ny) / kRoiSize;
    const int ye = y_begin + ((r + 1) * ny + kRoiSize - 1) / kRoiSize;
    for (int c = 0; c < kRoiSize; ++c) {
      const int xb = x_begin + (c * nx) / kRoiSize;
      const int xe = x_begin + ((c + 1) * nx + kRoiSize - 1) / kRoiSize;
      bins[r * kRoiSize + c] = {yb, ye, xb, xe};
    }
  }
  return bins;
}

Tensor roi_pool(const Tensor& features, const BoundingBox& box, int stride,
                std::vector<int>* argmax) {
  const MapGeometry geometry{features.height(), features.width(), stride};
  const auto bins = roi_bins(box, geometry);
  const int channels = features.channels();
  Tensor out(channels, kRoiSize, kRoiSize);
  if (argmax) argmax->assign(out.size(), 0);
  const int plane = features.plane_size();
  for (int c = 0; c < channels; ++c) {
    const double* src = features.data() + static_cast<std::ptrdiff_t>(c) * plane;
    for (int cell = 0; cell < kRoiCells; ++cell) {
      const auto& bin = bins[cell];
      int best_idx = bin.y_begin * features.width() + bin.x_begin;
      double best = src[best_idx];
      for (int y = bin.y_begin; y < bin.y_end; ++y) {
        for (int x = bin.x_begin; x < bin.x_end; ++x) {
          const int idx = y * features.width() + x;
          if (src[idx] > best) {
            best = src[idx];
            best_idx = idx;
          }
        }
      }
      out.data()[c * kRoiCells + cell] = best;
      if (argmax) (*argmax)[c * kRoiCells + cell] = c * plane + best_idx;
    }
  }
  return out;
}

void roi_pool_backward(const Tensor& grad_roi, const std::vector<int>& argmax,
                       Tensor& grad_features) {
  for (std::size_t i = 0; i < argmax.size(); ++i) {
    grad_features.data()[argmax[i]] += grad_roi.data()[i];
  }
}

DetectionHeads::DetectionHeads(int roi_channels, int hidden_units)
    : hidden("heads.fc", roi_channels * kRoiCells, hidden_units),
      classifier("heads.cls", hidden_units, 2),
      regressor("heads.bbox", hidden_units, 4) {}

void DetectionHeads::init(Rng& rng) {
  hidden.init(rng);
  classifier.init(rng, 0.01);
  regressor.init(rng, 0.001);
}

HeadOutput detect_heads(const DetectionHeads& heads, std::span<const Tensor> rois) {
  HeadOutput out;
  const int features = heads.hidden.in_features;
  out.input.resize(static_cast<Eigen::Index>(rois.size()), features);
  for (std::size_t i = 0; i < rois.size(); ++i) {
    if (static_cast<int>(rois[i].size()) != features) {
      throw InvalidArgument("detect_heads: RoI size does not match the heads");
    }
    std::copy(rois[i].data(), rois[i].data() + features,
              out.input.row(static_cast<Eigen::Index>(i)).data());
  }
  out.hidden = linear_forward(heads.hidden, out.input);
  out.hidden = out.hidden.cwiseMax(0.0);
  out.logits = linear_forward(heads.classifier, out.hidden);
  out.deltas = linear_forward(heads.regressor, out.hidden);
  return out;
}

std::vector<Tensor> detect_heads_backward(DetectionHeads& heads,
                                          const HeadOutput& output,
                                          const RowMatrix& grad_logits,
                                          const RowMatrix& grad_deltas,
                                          int roi_channels, bool input_grad) {
  RowMatrix g_hidden = linear_backward(heads.classifier, output.hidden, grad_logits);
  g_hidden += linear_backward(heads.regressor, output.hidden, grad_deltas);
  for (Eigen::Index i = 0; i < g_hidden.size(); ++i) {
    if (!(output.hidden.data()[i] > 0.0)) g_hidden.data()[i] = 0.0;
  }
  RowMatrix g_input = linear_backward(heads.hidden, output.input, g_hidden, input_grad);
  std::vector<Tensor> grads;
  if (!input_grad) return grads;
  for (Eigen::Index i = 0; i < g_input.rows(); ++i) {
    Tensor t(roi_channels, kRoiSize, kRoiSize);
    std::copy(g_input.row(i).data(), g_input.row(i).data() + g_input.cols(), t.data());
    grads.push_back(std::move(t));
  }
  return grads;
}

double face_probability(double background_logit, double face_logit) {
  return 1.0 / (1.0 + std::exp(background_logit - face_logit));
}

const char* to_string(ParamGroup group) {
  switch (group) {
    case ParamGroup::kBackbone:
      return "backbone";
    case ParamGroup::kRpn:
      return "rpn";
    case ParamGroup::kHeads:
      return "heads";
    case ParamGroup::kGenerator:
      return "generator";
    case ParamGroup::kSegmentation:
      return "segmentation";
  }
  return "unknown";
}

ParamGroup parse_param_group(const std::string& text) {
  for (auto g : kAllParamGroups) {
    if (text == to_string(g)) return g;
  }
  throw InvalidArgument("unknown parameter group '" + text + "'");
}

void ModelConfig::validate() const {
  anchors.validate();
  if (anchors.stride != Backbone::kStride) {
    throw InvalidArgument("anchor stride must equal the backbone stride (8)");
  }
  if (input_channels <= 0 || backbone_width <= 0 || feature_channels <= 0 ||
      head_hidden <= 0 || segmentation_hidden <= 0) {
    throw InvalidArgument("model widths must be positive");
  }
  if (!(gate_factor > 0.0)) throw InvalidArgument("gate factor must be positive");
  if (sampler.batch_size <= 0 || !(sampler.foreground_fraction > 0.0 &&
                                   sampler.foreground_fraction <= 1.0)) {
    throw InvalidArgument("invalid RoI sampler settings");
  }
}

Model Model::create(const ModelConfig& config, std::uint64_t seed, bool with_generator) {
  config.validate();
  Model m;
  m.config = config;
  m.backbone = Backbone(config.input_channels, config.backbone_width, config.feature_channels);
  m.rpn = RegionProposalNetwork(config.feature_channels, config.anchors.anchors_per_cell());
  m.heads = DetectionHeads(config.feature_channels, config.head_hidden);
  m.segmentation = SegmentationHead(config.feature_channels, config.segmentation_hidden);
  // Each group draws from its own stream so that adding or removing the
  // generator leaves the other groups' initial weights unchanged.
  Rng backbone_rng(derive_seed(seed, 1));
  Rng rpn_rng(derive_seed(seed, 2));
  Rng heads_rng(derive_seed(seed, 3));
  Rng seg_rng(derive_seed(seed, 5));
  m.backbone.init(backbone_rng);
  m.rpn.init(rpn_rng);
  m.heads.init(heads_rng);
  m.segmentation.init(seg_rng);
  if (with_generator) {
    Rng gen_rng(derive_seed(seed, 4));
    m.generator.emplace(config.feature_channels);
    m.generator->init(gen_rng);
  }
  return m;
}

void Model::zero_grad() {
  for_each_param([](Param& p) { p.zero_grad(); });
}

bool Model::has_detector_weights() const {
  bool ok = true;
  for (auto g : {ParamGroup::kBackbone, ParamGroup::kRpn, ParamGroup::kHeads}) {
    std::size_t n = 0;
    for_each_param_in(g, [&n](const Param& p) { n += p.size(); });
    ok = ok && n > 0;
  }
  return ok;
}

Inference run_inference(const Model& model, const Tensor& image,
                        const InferenceConfig& config) {
  if (!model.has_detector_weights()) {
    throw InvalidArgument("infer: model has no detector weights loaded");
  }
  Inference result;
  result.features = backbone_forward(model.backbone, image);
  const RpnOutput rpn = rpn_forward(model.rpn, result.features);
  const auto anchors = generate_anchors(model.config.anchors, result.features.height(),
                                        result.features.width());
  const ProposalSet proposals = propose(rpn, anchors, image.width(), image.height(),
                                        model.config.test_proposals);
  result.proposals = proposals.boxes;
  if (proposals.boxes.empty()) return result;

  std::vector<Tensor> rois;
  rois.reserve(proposals.boxes.size());
  for (const auto& box : proposals.boxes) {
    rois.push_back(roi_pool(result.features, box, Backbone::kStride));
  }
  const HeadOutput heads = detect_heads(model.heads, rois);

  std::vector<BoundingBox> boxes;
  std::vector<double> scores;
  for (std::size_t i = 0; i < proposals.boxes.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    const double score = face_probability(heads.logits(row, 0), heads.logits(row, 1));
    if (!(score > config.score_threshold)) continue;
    const BoxDeltas d{heads.deltas(row, 0), heads.deltas(row, 1), heads.deltas(row, 2),
                      heads.deltas(row, 3)};
    const BoundingBox box =
        clip_box(apply_deltas(proposals.boxes[i], d, model.config.head_delta_weights),
                 image.width(), image.height());
    if (!box.valid() || box.width() < 1.0 || box.height() < 1.0) continue;
    boxes.push_back(box);
    scores.push_back(score);
  }
  const auto keep = nms(boxes, scores, config.nms_iou,
                        static_cast<std::size_t>(std::max(0, config.max_detections)));
  for (std::size_t k : keep) result.detections.push_back({boxes[k], scores[k]});
  return result;
}

std::vector<Detection> infer(const Model& model, const Tensor& image,
                             const InferenceConfig& config) {
  return run_inference(model, image, config).detections;
}

}  // namespace aofd
