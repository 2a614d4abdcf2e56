#include "aofd/training.hpp"

#include <algorithm>
#include <cmath>
#include <ctime>
#include <numeric>
#include <sstream>

#include "aofd/checkpoint.hpp"
#include "aofd/error.hpp"
#include "aofd/image.hpp"
#include "aofd/losses.hpp"

namespace aofd {

namespace fs = std::filesystem;

TrainExample make_example(const Sample& sample, bool with_segmentation) {
  TrainExample ex;
  ex.id = sample.record.image_file;
  ex.image = image_to_tensor(sample.image);
  ex.width = sample.image.width;
  ex.height = sample.image.height;
  ex.annotations = sample.record.annotations;
  if (with_segmentation) {
    const int s = Backbone::kStride;
    const MapGeometry g{(ex.height + s - 1) / s, (ex.width + s - 1) / s, s};
    ex.seg_target = downsample_mask(sample.mask.pixels, ex.width, ex.height, g);
  }
  return ex;
}

TrainingData make_training_data(std::span<const Sample> detection,
                                std::span<const Sample> segmentation, int scarce_seg) {
  TrainingData data;
  for (const Sample& s : detection) data.detection.push_back(make_example(s, false));
  const std::size_t keep = scarce_seg > 0
                               ? std::min(segmentation.size(), static_cast<std::size_t>(scarce_seg))
                               : segmentation.size();
  for (std::size_t i = 0; i < keep; ++i) data.segmentation.push_back(make_example(segmentation[i], true));
  return data;
}

std::vector<TrainExample> load_examples(const fs::path& split_dir, bool with_segmentation) {
  std::vector<TrainExample> out;
  for (const DatasetRecord& r : read_dataset(split_dir)) {
    out.push_back(make_example(load_sample(split_dir, r), with_segmentation));
  }
  return out;
}

TrainingData load_training_data(const fs::path& root, int scarce_seg) {
  TrainingData data;
  data.detection = load_examples(root / "train", false);
  data.segmentation = load_examples(root / "seg", true);
  if (scarce_seg > 0 && data.segmentation.size() > static_cast<std::size_t>(scarce_seg)) {
    data.segmentation.resize(static_cast<std::size_t>(scarce_seg));
  }
  return data;
}

namespace {

constexpr int kStride = Backbone::kStride;

void add_into(Tensor& dst, const Tensor& src) { dst.matrix() += src.matrix(); }

BinaryMask make_mask(const MaskType& type, const Model& model, const Tensor& roi,
                     double fraction, Rng& rng) {
  switch (type.tag) {
    case MaskType::Tag::kGenerated:
      return binarize_lowest_k(generate_heatmap(*model.generator, roi), fraction);
    case MaskType::Tag::kHalf:
      return half_mask(type.direction);
    case MaskType::Tag::kRandomDrop:
      return random_drop_mask(rng);
    case MaskType::Tag::kNone:
      break;
  }
  return BinaryMask::all_ones();
}

// Sets grad(c, cell) = 0 wherever the mask zeroed the feature.
void mask_gradient(Tensor& grad, const BinaryMask& mask) {
  for (int c = 0; c < grad.channels(); ++c) {
    for (int i = 0; i < kRoiCells; ++i) {
      if (!mask.cell(i)) grad.data()[c * kRoiCells + i] = 0.0;
    }
  }
}

struct Proposals {
  Tensor features;
  BackboneCache cache;
  RpnOutput rpn;
  std::vector<BoundingBox> anchors;
  ProposalSet proposals;
};

Proposals forward_proposals(const Model& model, const TrainExample& ex, bool keep_cache) {
  Proposals p;
  p.features = backbone_forward(model.backbone, ex.image, keep_cache ? &p.cache : nullptr);
  p.rpn = rpn_forward(model.rpn, p.features);
  p.anchors = generate_anchors(model.config.anchors, p.features.height(), p.features.width());
  p.proposals = propose(p.rpn, p.anchors, ex.width, ex.height, model.config.train_proposals);
  return p;
}

std::vector<BoundingBox> gate_boxes(std::span<const Annotation> annotations) {
  std::vector<BoundingBox> boxes;
  for (const Annotation& a : annotations) {
    if (a.state != OcclusionState::kIgnored) boxes.push_back(a.box);
  }
  return boxes;
}

}  // namespace

StepStats detector_step(Model& model, const TrainExample& ex, const DetectorStepOptions& opt,
                        const LossWeights& w, Rng& rng) {
  const ModelConfig& cfg = model.config;
  StepStats st;
  Proposals p = forward_proposals(model, ex, true);
  const int C = p.features.channels();

  // Region proposal losses.
  const RpnTargets targets = assign_anchor_targets(p.anchors, ex.annotations, cfg.rpn_targets, rng);
  Tensor g_rpn_logits, g_rpn_deltas;
  const RpnLoss rl = rpn_loss(p.rpn, targets, &g_rpn_logits, &g_rpn_deltas);
  g_rpn_logits.matrix() *= w.alpha;
  g_rpn_deltas.matrix() *= w.beta;
  st.rpn_cls = rl.classification;
  st.rpn_bbox = rl.regression;
  Tensor grad_features = rpn_backward(model.rpn, p.rpn, g_rpn_logits, g_rpn_deltas);

  // RoI heads with the masking strategy on foreground RoIs.
  const SampleBatch batch =
      assign_and_sample(p.proposals.boxes, ex.annotations, cfg.sampler, rng, cfg.head_delta_weights);
  const std::size_t n = batch.samples.size();
  st.rois = static_cast<int>(n);
  st.foreground = batch.foreground;
  if (n > 0) {
    std::vector<Tensor> rois(n);
    std::vector<std::vector<int>> argmax(n);
    std::vector<std::optional<BinaryMask>> masks(n);
    std::vector<int> labels(n);
    std::vector<std::uint8_t> fg(n);
    RowMatrix reg_target = RowMatrix::Zero(static_cast<Eigen::Index>(n), 4);
    for (std::size_t i = 0; i < n; ++i) {
      const RoISample& s = batch.samples[i];
      rois[i] = roi_pool(p.features, s.box, kStride, &argmax[i]);
      labels[i] = s.label;
      fg[i] = s.label == kFaceLabel;
      for (int j = 0; j < 4; ++j) reg_target(static_cast<Eigen::Index>(i), j) = s.regression_target[j];
      if (fg[i] && opt.masking) {
        const MaskType type = sample_mask_type(rng, opt.types);
        ++st.mask_counts[to_string(type.tag)];
        if (type.tag == MaskType::Tag::kNone) continue;
        if (type.tag == MaskType::Tag::kGenerated && !model.generator) {
          throw InvalidArgument("generated masks requested but the model has no generator");
        }
        const BinaryMask m = make_mask(type, model, rois[i], opt.fraction, rng);
        rois[i] = apply_mask(rois[i], m);
        masks[i] = m;
      }
    }
    const HeadOutput ho = detect_heads(model.heads, rois);
    RowMatrix g_cls, g_reg;
    st.cls = classification_loss(ho.logits, labels, &g_cls);
    st.bbox = bbox_regression_loss(ho.deltas, reg_target, fg, &g_reg).value;
    g_cls *= w.alpha;
    g_reg *= w.beta;
    std::vector<Tensor> g_rois = detect_heads_backward(model.heads, ho, g_cls, g_reg, C, true);
    for (std::size_t i = 0; i < n; ++i) {
      if (masks[i]) mask_gradient(g_rois[i], *masks[i]);
      roi_pool_backward(g_rois[i], argmax[i], grad_features);
    }
  }

  // Occlusion segmentation; detection-only samples contribute nothing.
  if (opt.mu > 0.0 && ex.seg_target) {
    SegmentationCache sc;
    const Tensor logits = seg_forward(model.segmentation, p.features, &sc);
    const auto boxes = gate_boxes(ex.annotations);
    const BinaryGrid gate =
        build_gate(boxes, cfg.gate_factor, {p.features.height(), p.features.width(), kStride});
    Tensor g_seg;
    const SegmentationLoss sl = segmentation_loss(logits, *ex.seg_target, gate, &g_seg);
    st.seg = sl.value;
    if (!sl.empty_gate) {
      g_seg.matrix() *= opt.mu;
      add_into(grad_features, seg_backward(model.segmentation, sc, g_seg));
      st.seg_active = true;
    }
  }

  backbone_backward(model.backbone, p.cache, grad_features);
  st.total = w.alpha * (st.cls + st.rpn_cls) + w.beta * (st.bbox + st.rpn_bbox) + opt.mu * st.seg;
  return st;
}

StepStats generator_step(Model& model, const TrainExample& ex, double fraction,
                         const LossWeights& w, CompactMode mode, Rng& rng) {
  if (!model.generator) throw InvalidArgument("generator_step: model has no generator");
  const ModelConfig& cfg = model.config;
  StepStats st;
  const Proposals p = forward_proposals(model, ex, false);
  const SampleBatch batch =
      assign_and_sample(p.proposals.boxes, ex.annotations, cfg.sampler, rng, cfg.head_delta_weights);
  st.rois = static_cast<int>(batch.samples.size());
  st.foreground = batch.foreground;
  const auto n = static_cast<std::size_t>(batch.foreground);
  if (n == 0) return st;

  const int C = p.features.channels();
  std::vector<Tensor> rois(n), masked(n);
  std::vector<GeneratorCache> caches(n);
  std::vector<RelaxedMask> soft(n);
  std::vector<BinaryMask> binary(n);
  std::vector<int> labels(n, kFaceLabel);
  double com_sum = 0.0;
  st.com_min = std::numeric_limits<double>::infinity();
  st.com_max = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    rois[i] = roi_pool(p.features, batch.samples[i].box, kStride);
    const MaskHeatMap heat = generate_heatmap(*model.generator, rois[i], &caches[i]);
    binary[i] = binarize_lowest_k(heat, fraction);
    soft[i] = relax_lowest_k(heat, fraction);
    masked[i] = apply_mask(rois[i], binary[i]);
    const double com = compact_loss(binary[i].as_grid(), CompactMode::kRectified);
    com_sum += com;
    st.com_min = std::min(st.com_min, com);
    st.com_max = std::max(st.com_max, com);
  }
  st.mask_counts[to_string(MaskType::Tag::kGenerated)] = static_cast<int>(n);
  st.com_mean = com_sum / static_cast<double>(n);

  const HeadOutput ho = detect_heads(model.heads, masked);
  RowMatrix g_cls;
  st.cls = classification_loss(ho.logits, labels, &g_cls);
  const RowMatrix g_reg = RowMatrix::Zero(static_cast<Eigen::Index>(n), 4);
  const std::vector<Tensor> g_rois = detect_heads_backward(model.heads, ho, g_cls, g_reg, C, true);

  // Straight-through: the forward pass used the binary mask, the backward
  // pass goes through its relaxation. The compact term is taken on the
  // relaxation itself; its gradient at the binary mask oscillates.
  double soft_com = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    MaskGrid g_com{};
    soft_com += compact_loss(soft[i].values, mode, &g_com);
    MaskGrid g_soft{};
    for (int cell = 0; cell < kRoiCells; ++cell) {
      double d_mask = 0.0;
      for (int c = 0; c < C; ++c) {
        d_mask += rois[i].data()[c * kRoiCells + cell] * g_rois[i].data()[c * kRoiCells + cell];
      }
      g_soft[cell] = w.gamma * g_com[cell] / static_cast<double>(n) - w.eta * d_mask;
    }
    generate_heatmap_backward(*model.generator, caches[i], relax_lowest_k_backward(soft[i], g_soft));
  }
  st.gen = generator_loss(st.cls, soft_com / static_cast<double>(n), w);
  st.total = st.gen;
  return st;
}

void Sgd::reset(Model& model) {
  model.for_each_param([](Param& p) { std::fill(p.velocity.begin(), p.velocity.end(), 0.0); });
}

void Sgd::step(Model& model, std::span<const ParamGroup> groups, double lr) const {
  double norm2 = 0.0;
  for (ParamGroup g : groups) {
    model.for_each_param_in(g, [&](const Param& p) {
      for (double v : p.grad) norm2 += v * v;
    });
  }
  const double norm = std::sqrt(norm2);
  const double scale =
      config_.clip_norm > 0.0 && norm > config_.clip_norm ? config_.clip_norm / norm : 1.0;
  for (ParamGroup g : groups) {
    model.for_each_param_in(g, [&](Param& p) {
      if (p.velocity.size() != p.value.size()) p.velocity.assign(p.value.size(), 0.0);
      const bool decay = !p.name.ends_with(".bias");
      for (std::size_t j = 0; j < p.value.size(); ++j) {
        const double grad = scale * p.grad[j] + (decay ? config_.weight_decay * p.value[j] : 0.0);
        p.velocity[j] = config_.momentum * p.velocity[j] - lr * grad;
        p.value[j] += p.velocity[j];
      }
    });
  }
}

TrainLog::TrainLog(const fs::path& path, bool append)
    : out_(path, append ? std::ios::app : std::ios::trunc) {
  if (!out_) throw DataError("cannot write training log " + path.string());
}

void TrainLog::write(Phase phase, int step, double lr, const StepStats& s) {
  nlohmann::json masks = nlohmann::json::object();
  for (auto tag : {MaskType::Tag::kGenerated, MaskType::Tag::kHalf, MaskType::Tag::kRandomDrop,
                   MaskType::Tag::kNone}) {
    const auto it = s.mask_counts.find(to_string(tag));
    masks[to_string(tag)] = it == s.mask_counts.end() ? 0 : it->second;
  }
  const nlohmann::json rec{
      {"phase", to_string(phase)}, {"step", step},        {"lr", lr},
      {"loss_total", s.total},     {"loss_cls", s.cls},   {"loss_bbox", s.bbox},
      {"loss_rpn_cls", s.rpn_cls}, {"loss_rpn_bbox", s.rpn_bbox},
      {"loss_seg", s.seg},         {"loss_gen", s.gen},   {"lcom_mean", s.com_mean},
      {"lcom_min", s.com_min},     {"lcom_max", s.com_max},
      {"num_fg", s.foreground},    {"num_rois", s.rois},  {"seg_active", s.seg_active},
      {"masks", masks},
  };
  out_ << rec.dump() << '\n';
  out_.flush();
}

namespace {

std::size_t phase_index(Phase phase) {
  return static_cast<std::size_t>(std::find(kAllPhases.begin(), kAllPhases.end(), phase) -
                                  kAllPhases.begin());
}

bool finite_stats(const StepStats& s) {
  for (double v : {s.total, s.cls, s.bbox, s.rpn_cls, s.rpn_bbox, s.seg, s.gen}) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

[[noreturn]] void abort_non_finite(Phase phase, int step, const TrainExample& ex,
                                   const StepStats& s, const RunContext& ctx) {
  nlohmann::json dump{{"phase", to_string(phase)}, {"step", step}, {"image", ex.id},
                      {"loss_total", std::to_string(s.total)}, {"loss_cls", std::to_string(s.cls)},
                      {"loss_bbox", std::to_string(s.bbox)},
                      {"loss_rpn_cls", std::to_string(s.rpn_cls)},
                      {"loss_rpn_bbox", std::to_string(s.rpn_bbox)},
                      {"loss_seg", std::to_string(s.seg)}, {"loss_gen", std::to_string(s.gen)},
                      {"num_fg", s.foreground}};
  std::string where = "(no dump directory)";
  if (!ctx.dump_dir.empty()) {
    const fs::path path = ctx.dump_dir / "nonfinite_dump.json";
    std::ofstream(path) << dump.dump(2) << '\n';
    where = path.string();
  }
  throw InvariantViolation(std::string("non-finite loss in phase ") + to_string(phase) +
                           " at step " + std::to_string(step) + "; diagnostics: " + where);
}

}  // namespace

PhaseStats run_phase(Phase phase, Model& model, const TrainConfig& config,
                     const TrainingData& data, const RunContext& ctx) {
  config.validate();
  const PhaseConfig& pc = config.phase(phase);
  const double lr = pc.learning_rate > 0.0 ? pc.learning_rate : config.optimizer.learning_rate;
  PhaseStats stats;
  stats.phase = phase;

  // Dataset of the phase; the combined phase concatenates both sets.
  // With mu = 0 the segmentation set has no role, so joint phases fall back
  // to the detection set.
  const double mu = pc.mu.value_or(config.weights.mu);
  const bool seg_set = mu > 0.0;
  std::vector<const TrainExample*> pool;
  auto add_all = [&pool](const std::vector<TrainExample>& v) {
    for (const auto& e : v) pool.push_back(&e);
  };
  switch (phase) {
    case Phase::kPretrainDetector:
    case Phase::kTrainGenerator:
      add_all(data.detection);
      break;
    case Phase::kJointSegOverfit:
    case Phase::kSegTune:
      add_all(seg_set ? data.segmentation : data.detection);
      break;
    case Phase::kJointCombined:
      add_all(data.detection);
      if (seg_set) {
        add_all(data.segmentation);
        if (data.detection.empty() || data.segmentation.empty()) pool.clear();
      }
      break;
  }
  if (pool.empty()) {
    throw DataError(std::string("phase ") + to_string(phase) + ": training dataset is empty");
  }
  if (!model.has_detector_weights()) {
    throw InvalidArgument(std::string("phase ") + to_string(phase) +
                          ": model has no detector weights");
  }

  LossWeights weights = config.weights;
  std::vector<ParamGroup> groups;
  DetectorStepOptions opt;
  opt.types = config.masking.types;
  opt.fraction = config.masking.joint_fraction;
  if (phase == Phase::kTrainGenerator) {
    if (!config.with_generator || !model.generator) return stats;  // nothing to train
    if (pc.gamma) weights.gamma = *pc.gamma;
    groups = {ParamGroup::kGenerator};
  } else {
    groups = {ParamGroup::kBackbone, ParamGroup::kRpn, ParamGroup::kHeads};
    opt.mu = mu;
    opt.masking = phase != Phase::kPretrainDetector && config.masking.enabled;
    if (opt.masking && opt.types.generated > 0.0 && !model.generator) {
      throw InvalidArgument(std::string("phase ") + to_string(phase) +
                            ": generated masks requested but the model has no generator");
    }
  }

  // Epochs of the segmentation phases count segmentation images even when the
  // detection set stands in, keeping schedules equal across ablations.
  const bool seg_phase = phase == Phase::kJointSegOverfit || phase == Phase::kSegTune;
  const std::size_t epoch_size =
      seg_phase && !data.segmentation.empty() ? data.segmentation.size() : pool.size();
  const int steps = pc.epochs > 0 ? pc.epochs * static_cast<int>(epoch_size) : pc.steps;
  stats.steps = steps;
  Rng rng(derive_seed(config.seed, 0x7a11, phase_index(phase)));
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  const Sgd sgd(config.optimizer);
  Sgd::reset(model);

  const int window = std::max(1, steps / 10);
  double first_sum = 0.0, last_sum = 0.0;
  for (int step = 0; step < steps; ++step) {
    const std::size_t k = static_cast<std::size_t>(step) % pool.size();
    if (k == 0) std::shuffle(order.begin(), order.end(), rng);
    const TrainExample& ex = *pool[order[k]];
    model.zero_grad();
    StepStats s;
    if (phase == Phase::kTrainGenerator) {
      s = generator_step(model, ex, config.masking.generator_fraction, weights,
                         config.masking.compact_mode, rng);
    } else {
      s = detector_step(model, ex, opt, weights, rng);
    }
    if (!finite_stats(s)) abort_non_finite(phase, step, ex, s, ctx);
    if (s.seg_active) {
      std::vector<ParamGroup> with_seg = groups;
      with_seg.push_back(ParamGroup::kSegmentation);
      sgd.step(model, with_seg, lr);
    } else {
      sgd.step(model, groups, lr);
    }
    if (step < window) first_sum += s.total;
    if (step >= steps - window) last_sum += s.total;
    if (ctx.log) ctx.log->write(phase, step, lr, s);
    if (ctx.on_step) ctx.on_step(phase, step, model, ex, s);
  }
  const int used = std::min(window, steps);
  if (used > 0) {
    stats.first_loss = first_sum / used;
    stats.last_loss = last_sum / used;
  }
  model.zero_grad();
  return stats;
}

PhaseStats pretrain_detector(Model& model, const TrainConfig& config, const TrainingData& data,
                             const RunContext& context) {
  return run_phase(Phase::kPretrainDetector, model, config, data, context);
}

PhaseStats train_generator(Model& model, const TrainConfig& config, const TrainingData& data,
                           const RunContext& context) {
  if (!model.has_detector_weights()) {
    throw InvalidArgument("train_generator: detector weights are missing");
  }
  if (!model.generator) throw InvalidArgument("train_generator: model has no generator");
  return run_phase(Phase::kTrainGenerator, model, config, data, context);
}

std::vector<PhaseStats> train_joint(Model& model, const TrainConfig& config,
                                    const TrainingData& data, const RunContext& context) {
  if (data.detection.empty() || data.segmentation.empty()) {
    throw DataError("train_joint: detection and segmentation datasets must both be non-empty");
  }
  std::vector<PhaseStats> out;
  for (Phase p : {Phase::kJointSegOverfit, Phase::kJointCombined, Phase::kSegTune}) {
    out.push_back(run_phase(p, model, config, data, context));
  }
  return out;
}

fs::path checkpoint_path(const fs::path& out_dir, Phase phase) {
  return out_dir / "checkpoints" / (std::string(to_string(phase)) + ".ckpt");
}

PipelineResult run_pipeline(const TrainConfig& config, const TrainingData& data,
                            const PipelineOptions& options) {
  config.validate();
  fs::create_directories(options.out_dir / "checkpoints");
  std::size_t first = 0, last = kAllPhases.size();
  PipelineResult result;
  if (options.only) {
    first = phase_index(*options.only);
    last = first + 1;
  }
  if (first > 0) {
    const Phase prereq = kAllPhases[first - 1];
    const fs::path prev = checkpoint_path(options.out_dir, prereq);
    if (!fs::exists(prev)) {
      throw DataError(std::string("phase ") + to_string(kAllPhases[first]) +
                      " needs the checkpoint of phase " + to_string(prereq) + " (missing " +
                      prev.string() + ")");
    }
    result.model = load_checkpoint(prev).model;
  } else {
    result.model = Model::create(config.model, derive_seed(config.seed, 0x30de1), true);
  }
  if (!config.with_generator) result.model.generator.reset();

  TrainLog log(options.out_dir / "train_log.jsonl", first > 0);
  RunContext ctx;
  ctx.log = &log;
  ctx.dump_dir = options.out_dir;
  for (std::size_t i = first; i < last; ++i) {
    const Phase phase = kAllPhases[i];
    result.phases.push_back(run_phase(phase, result.model, config, data, ctx));
    CheckpointMeta meta;
    meta.phase = to_string(phase);
    meta.seed = config.seed;
    meta.rng_seeds["model_init"] = derive_seed(config.seed, 0x30de1);
    meta.rng_seeds[to_string(phase)] = derive_seed(config.seed, 0x7a11, i);
    meta.config = to_json(config);
    save_checkpoint(checkpoint_path(options.out_dir, phase), result.model, meta);
  }
  return result;
}

std::vector<std::vector<Detection>> detect_all(const Model& model,
                                               std::span<const TrainExample> examples,
                                               const InferenceConfig& config) {
  std::vector<std::vector<Detection>> out;
  out.reserve(examples.size());
  for (const TrainExample& ex : examples) out.push_back(infer(model, ex.image, config));
  return out;
}

EvalReport evaluate_model(const Model& model, std::span<const TrainExample> examples,
                          const EvalSettings& settings, const InferenceConfig& inference) {
  const auto dets = detect_all(model, examples, inference);
  std::vector<std::vector<Annotation>> gts;
  for (const TrainExample& ex : examples) gts.push_back(ex.annotations);
  return evaluate(dets, gts, settings);
}

AdversarialProbe probe_adversarial(const Model& model, std::span<const TrainExample> examples,
                                   double fraction, int min_rois, std::uint64_t seed) {
  if (!model.generator) throw InvalidArgument("probe_adversarial: model has no generator");
  Rng rng(seed);
  const int k = masked_cell_count(fraction);
  std::vector<Tensor> generated, random;
  double compact_sum = 0.0;
  for (const TrainExample& ex : examples) {
    if (static_cast<int>(generated.size()) >= min_rois) break;
    const Proposals p = forward_proposals(model, ex, false);
    const SampleBatch batch = assign_and_sample(p.proposals.boxes, ex.annotations,
                                                model.config.sampler, rng,
                                                model.config.head_delta_weights);
    for (int i = 0; i < batch.foreground; ++i) {
      const Tensor roi = roi_pool(p.features, batch.samples[static_cast<std::size_t>(i)].box, kStride);
      const BinaryMask g = binarize_lowest_k(generate_heatmap(*model.generator, roi), fraction);
      compact_sum += compact_loss(g.as_grid(), CompactMode::kRectified);
      generated.push_back(apply_mask(roi, g));
      random.push_back(apply_mask(roi, random_mask(rng, k)));
    }
  }
  AdversarialProbe out;
  out.rois = static_cast<int>(generated.size());
  if (out.rois == 0) return out;
  const std::vector<int> labels(generated.size(), kFaceLabel);
  out.generated_loss = classification_loss(detect_heads(model.heads, generated).logits, labels);
  out.random_loss = classification_loss(detect_heads(model.heads, random).logits, labels);
  out.generated_compact = compact_sum / out.rois;
  return out;
}

std::vector<std::string> known_variants() {
  return {"full", "no_gen", "no_seg", "baseline", "no_compact",
          "frac_1_6", "frac_1_4", "frac_1_3", "frac_1_2"};
}

VariantSpec variant_spec(const std::string& name, const TrainConfig& base) {
  VariantSpec v;
  v.name = name;
  v.types = base.masking.types;
  v.joint_fraction = base.masking.joint_fraction;
  auto without_generated = [](MaskTypeProbabilities t) {
    const double rest = t.half + t.random_drop + t.none;
    if (rest <= 0.0) return MaskTypeProbabilities{0.0, 0.0, 0.0, 1.0};
    return MaskTypeProbabilities{0.0, t.half / rest, t.random_drop / rest, t.none / rest};
  };
  if (name == "full") {
  } else if (name == "no_gen") {
    v.generator = false;
    v.types = without_generated(v.types);
  } else if (name == "no_seg") {
    v.segmentation = false;
  } else if (name == "baseline") {
    v.generator = false;
    v.masking = false;
    v.segmentation = false;
    v.types = without_generated(v.types);
  } else if (name == "no_compact") {
    v.generator_gamma = 0.0;
  } else if (name == "frac_1_6") {
    v.joint_fraction = 1.0 / 6.0;
  } else if (name == "frac_1_4") {
    v.joint_fraction = 1.0 / 4.0;
  } else if (name == "frac_1_3") {
    v.joint_fraction = 1.0 / 3.0;
  } else if (name == "frac_1_2") {
    v.joint_fraction = 1.0 / 2.0;
  } else {
    std::string all;
    for (const auto& k : known_variants()) all += (all.empty() ? "" : ", ") + k;
    throw InvalidArgument("unknown ablation variant '" + name + "' (" + all + ")");
  }
  return v;
}

namespace {

template <typename F>
double cpu_seconds(F&& f) {
  const std::clock_t start = std::clock();
  f();
  return static_cast<double>(std::clock() - start) / CLOCKS_PER_SEC;
}

std::optional<double> median(std::vector<double> v) {
  if (v.empty()) return std::nullopt;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace

AblationReport run_ablation(const TrainConfig& base, std::span<const std::string> variants,
                            const TrainingData& data, std::span<const TrainExample> test,
                            const AblationOptions& options) {
  std::vector<VariantSpec> specs;
  for (const auto& name : variants) specs.push_back(variant_spec(name, base));
  if (specs.empty()) throw InvalidArgument("no ablation variants requested");
  auto note = [&](const std::string& msg) {
    if (options.progress) options.progress(msg);
  };

  AblationReport report;
  for (std::uint64_t seed : options.seeds) {
    TrainConfig cfg = base;
    cfg.seed = seed;
    const fs::path seed_dir =
        options.out_dir ? *options.out_dir / ("seed_" + std::to_string(seed)) : fs::path();
    if (options.out_dir) fs::create_directories(seed_dir);

    Model pre = Model::create(cfg.model, derive_seed(seed, 0x30de1), true);
    note("seed " + std::to_string(seed) + ": pretrain_detector");
    const double pretrain_cpu = cpu_seconds([&] { pretrain_detector(pre, cfg, data); });

    // Generators are shared between variants with the same compact weight.
    std::map<double, Model> generators;
    std::map<double, double> generator_cpu;
    auto generator_for = [&](std::optional<double> gamma) -> const Model& {
      TrainConfig gcfg = cfg;
      if (gamma) gcfg.generator.gamma = gamma;
      const double key = gcfg.generator.gamma.value_or(gcfg.weights.gamma);
      auto it = generators.find(key);
      if (it == generators.end()) {
        note("seed " + std::to_string(seed) + ": train_generator (gamma " + std::to_string(key) + ")");
        Model m = pre;
        generator_cpu[key] = cpu_seconds([&] { train_generator(m, gcfg, data); });
        if (options.on_generator) options.on_generator(seed, m);
        it = generators.emplace(key, std::move(m)).first;
      }
      return it->second;
    };

    for (const VariantSpec& v : specs) {
      note("seed " + std::to_string(seed) + ": joint training for " + v.name);
      TrainConfig vcfg = cfg;
      vcfg.with_generator = v.generator;
      vcfg.masking.enabled = v.masking;
      vcfg.masking.types = v.types;
      vcfg.masking.joint_fraction = v.joint_fraction;
      if (!v.segmentation) {
        for (Phase p : {Phase::kJointSegOverfit, Phase::kJointCombined, Phase::kSegTune}) {
          vcfg.phase(p).mu = 0.0;
        }
      }
      Model model = v.generator ? generator_for(v.generator_gamma) : pre;
      if (!v.generator) model.generator.reset();
      const double joint_cpu = cpu_seconds([&] { train_joint(model, vcfg, data); });

      AblationRun run;
      run.cpu_seconds = pretrain_cpu + joint_cpu;
      if (v.generator) {
        TrainConfig gcfg = cfg;
        if (v.generator_gamma) gcfg.generator.gamma = v.generator_gamma;
        run.cpu_seconds += generator_cpu.at(gcfg.generator.gamma.value_or(gcfg.weights.gamma));
      }
      run.variant = v.name;
      run.seed = seed;
      EvalSettings masked = options.eval;
      masked.subset = Subset::kMaskedOnly;
      EvalSettings all = options.eval;
      all.subset = Subset::kAll;
      const auto dets = detect_all(model, test, options.inference);
      std::vector<std::vector<Annotation>> gts;
      for (const TrainExample& ex : test) gts.push_back(ex.annotations);
      const EvalReport rm = evaluate(dets, gts, masked);
      const EvalReport ra = evaluate(dets, gts, all);
      run.ap_masked = rm.ap;
      run.ap_all = ra.ap;
      run.recall_at_fp = rm.recall_at_fp;
      run.curve = rm.curve;
      if (options.out_dir) {
        const fs::path ckpt = seed_dir / (v.name + ".ckpt");
        CheckpointMeta meta;
        meta.phase = "seg_tune";
        meta.seed = seed;
        meta.config = to_json(vcfg);
        save_checkpoint(ckpt, model, meta);
        write_pr_text(seed_dir / (v.name + "_pr.txt"), rm.curve);
        run.final_checkpoint = ckpt.string();
      }
      report.runs.push_back(std::move(run));
    }
  }

  for (const VariantSpec& v : specs) {
    AblationRow row;
    row.variant = v.name;
    std::vector<double> apm, apa;
    std::map<std::size_t, std::vector<double>> rfp;
    for (const AblationRun& r : report.runs) {
      if (r.variant != v.name) continue;
      if (r.ap_masked) apm.push_back(*r.ap_masked);
      if (r.ap_all) apa.push_back(*r.ap_all);
      for (const auto& [b, rec] : r.recall_at_fp) rfp[b].push_back(rec);
    }
    row.ap_masked = median(apm);
    row.ap_all = median(apa);
    for (auto& [b, values] : rfp) row.recall_at_fp[b] = *median(values);
    report.rows.push_back(std::move(row));
  }
  return report;
}

nlohmann::json to_json(const AblationReport& report) {
  using nlohmann::json;
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  auto rfp = [](const std::map<std::size_t, double>& m) {
    json j = json::object();
    for (const auto& [b, r] : m) j[std::to_string(b)] = r;
    return j;
  };
  json rows = json::array();
  for (const AblationRow& r : report.rows) {
    rows.push_back({{"variant", r.variant}, {"ap_masked", opt(r.ap_masked)},
                    {"ap_all", opt(r.ap_all)}, {"recall_at_fp", rfp(r.recall_at_fp)}});
  }
  json runs = json::array();
  for (const AblationRun& r : report.runs) {
    runs.push_back({{"variant", r.variant}, {"seed", r.seed}, {"ap_masked", opt(r.ap_masked)},
                    {"ap_all", opt(r.ap_all)}, {"recall_at_fp", rfp(r.recall_at_fp)},
                    {"checkpoint", r.final_checkpoint}});
  }
  return {{"rows", rows}, {"runs", runs}};
}

std::string format_ablation_table(const AblationReport& report) {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(4);
  std::vector<std::size_t> budgets;
  if (!report.rows.empty()) {
    for (const auto& [b, r] : report.rows.front().recall_at_fp) budgets.push_back(b);
  }
  out << "variant       ap_masked  ap_all";
  for (std::size_t b : budgets) out << "  recall@" << b;
  out << '\n';
  for (const AblationRow& r : report.rows) {
    out << r.variant << std::string(r.variant.size() < 14 ? 14 - r.variant.size() : 1, ' ');
    if (r.ap_masked) out << *r.ap_masked; else out << "   n/a";
    out << "     ";
    if (r.ap_all) out << *r.ap_all; else out << "   n/a";
    for (std::size_t b : budgets) {
      const auto it = r.recall_at_fp.find(b);
      out << "     " << (it == r.recall_at_fp.end() ? 0.0 : it->second);
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace aofd
