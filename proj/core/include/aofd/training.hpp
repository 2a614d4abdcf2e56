#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aofd/config.hpp"
#include "aofd/detector.hpp"
#include "aofd/evaluation.hpp"
#include "aofd/synthetic.hpp"

namespace aofd {

// A preprocessed image. `seg_target` is absent for detection-only samples,
// whose derivatives never reach the segmentation branch.
struct TrainExample {
  std::string id;
  Tensor image;
  int width = 0;
  int height = 0;
  std::vector<Annotation> annotations;
  std::optional<BinaryGrid> seg_target;
};

TrainExample make_example(const Sample& sample, bool with_segmentation);

struct TrainingData {
  std::vector<TrainExample> detection;
  std::vector<TrainExample> segmentation;
};

// `scarce_seg` > 0 keeps only the first N segmentation images.
TrainingData make_training_data(std::span<const Sample> detection,
                                std::span<const Sample> segmentation, int scarce_seg);

// Reads <root>/train and <root>/seg.
TrainingData load_training_data(const std::filesystem::path& root, int scarce_seg);

std::vector<TrainExample> load_examples(const std::filesystem::path& split_dir,
                                        bool with_segmentation);

// Per-step loss components; unused components stay 0.
struct StepStats {
  double total = 0.0;
  double cls = 0.0;
  double bbox = 0.0;
  double rpn_cls = 0.0;
  double rpn_bbox = 0.0;
  double seg = 0.0;
  double gen = 0.0;
  double com_mean = 0.0;
  double com_min = 0.0;
  double com_max = 0.0;
  int foreground = 0;
  int rois = 0;
  bool seg_active = false;
  std::map<std::string, int> mask_counts;  // per mask-type tag
};

struct DetectorStepOptions {
  double mu = 0.0;
  bool masking = false;
  double fraction = 1.0 / 3.0;
  MaskTypeProbabilities types;
};

// Forward + backward of the detector objective on one image. Accumulates
// gradients into backbone, rpn and heads (and the segmentation head when
// mu > 0 and the example has a segmentation target). The generator, when
// used for masks, is read only.
StepStats detector_step(Model& model, const TrainExample& example,
                        const DetectorStepOptions& options, const LossWeights& weights,
                        Rng& rng);

// Forward + backward of the generator objective on the foreground RoIs of one
// image. Only generator gradients are meaningful afterwards.
StepStats generator_step(Model& model, const TrainExample& example, double fraction,
                         const LossWeights& weights, CompactMode mode, Rng& rng);

// SGD with momentum, L2 weight decay on non-bias parameters and global
// gradient-norm clipping, applied to the listed groups only.
class Sgd {
 public:
  explicit Sgd(const OptimizerConfig& config) : config_(config) {}
  void step(Model& model, std::span<const ParamGroup> groups, double learning_rate) const;
  static void reset(Model& model);

 private:
  OptimizerConfig config_;
};

// Line-delimited JSON training log.
class TrainLog {
 public:
  TrainLog(const std::filesystem::path& path, bool append);
  void write(Phase phase, int step, double learning_rate, const StepStats& stats);

 private:
  std::ofstream out_;
};

using StepCallback =
    std::function<void(Phase phase, int step, const Model& model, const TrainExample& example,
                       const StepStats& stats)>;

struct RunContext {
  TrainLog* log = nullptr;
  std::filesystem::path dump_dir;  // where a non-finite loss dump goes
  StepCallback on_step;
};

struct PhaseStats {
  Phase phase = Phase::kPretrainDetector;
  int steps = 0;
  double first_loss = 0.0;  // mean total over the first 10% of steps
  double last_loss = 0.0;   // mean total over the last 10% of steps
};

// Runs one phase in place. Throws DataError when the phase's dataset is
// empty, InvalidArgument when a prerequisite is missing (detector weights
// for the generator phase), and InvariantViolation on a non-finite loss.
PhaseStats run_phase(Phase phase, Model& model, const TrainConfig& config,
                     const TrainingData& data, const RunContext& context = {});

PhaseStats pretrain_detector(Model& model, const TrainConfig& config, const TrainingData& data,
                             const RunContext& context = {});
PhaseStats train_generator(Model& model, const TrainConfig& config, const TrainingData& data,
                           const RunContext& context = {});
// The three joint sub-phases: segmentation-only, combined, segmentation tuning.
std::vector<PhaseStats> train_joint(Model& model, const TrainConfig& config,
                                    const TrainingData& data, const RunContext& context = {});

std::filesystem::path checkpoint_path(const std::filesystem::path& out_dir, Phase phase);

struct PipelineOptions {
  std::filesystem::path out_dir;
  std::optional<Phase> only;  // run a single phase resuming from its prerequisite
};

struct PipelineResult {
  Model model;
  std::vector<PhaseStats> phases;
};

// Writes <out>/checkpoints/<phase>.ckpt after each phase and appends to
// <out>/train_log.jsonl. Resuming a phase whose prerequisite checkpoint is
// missing raises DataError naming that phase.
PipelineResult run_pipeline(const TrainConfig& config, const TrainingData& data,
                            const PipelineOptions& options);

// Inference over examples in order.
std::vector<std::vector<Detection>> detect_all(const Model& model,
                                               std::span<const TrainExample> examples,
                                               const InferenceConfig& config);

EvalReport evaluate_model(const Model& model, std::span<const TrainExample> examples,
                          const EvalSettings& settings, const InferenceConfig& inference = {});

// Mean classification loss on foreground RoIs of held-out images under
// generator masks versus random masks with the same cell count.
struct AdversarialProbe {
  double generated_loss = 0.0;
  double random_loss = 0.0;
  double generated_compact = 0.0;  // mean rectified compact loss of generated masks
  int rois = 0;
};

AdversarialProbe probe_adversarial(const Model& model, std::span<const TrainExample> examples,
                                   double fraction, int min_rois, std::uint64_t seed);

// Ablation variants: full, no_gen, no_seg, baseline, no_compact and the
// joint mask-fraction sweep frac_1_6, frac_1_4, frac_1_3, frac_1_2.
struct VariantSpec {
  std::string name;
  bool generator = true;
  bool masking = true;
  bool segmentation = true;
  double joint_fraction = 1.0 / 3.0;
  std::optional<double> generator_gamma;
  MaskTypeProbabilities types;
};

VariantSpec variant_spec(const std::string& name, const TrainConfig& base);
std::vector<std::string> known_variants();

struct AblationRun {
  std::string variant;
  std::uint64_t seed = 0;
  std::optional<double> ap_masked;
  std::optional<double> ap_all;
  std::map<std::size_t, double> recall_at_fp;  // on the masked subset
  std::vector<PrPoint> curve;                  // masked subset
  std::string final_checkpoint;
  // Processor time of pretraining, generator training (when used) and joint
  // training; kept out of the JSON so reports stay reproducible.
  double cpu_seconds = 0.0;
};

struct AblationRow {
  std::string variant;
  std::optional<double> ap_masked;  // median over seeds
  std::optional<double> ap_all;
  std::map<std::size_t, double> recall_at_fp;
};

struct AblationReport {
  std::vector<AblationRow> rows;  // one per requested variant, request order
  std::vector<AblationRun> runs;
};

struct AblationOptions {
  std::vector<std::uint64_t> seeds{1, 2, 3};
  EvalSettings eval;
  InferenceConfig inference;
  std::optional<std::filesystem::path> out_dir;  // checkpoints and PR curves
  std::function<void(const std::string&)> progress;
  // Called once per (seed, compact weight) right after generator training.
  std::function<void(std::uint64_t seed, const Model& model)> on_generator;
};

// Pretraining and generator training are shared by all variants of a seed.
AblationReport run_ablation(const TrainConfig& base, std::span<const std::string> variants,
                            const TrainingData& data, std::span<const TrainExample> test,
                            const AblationOptions& options);

nlohmann::json to_json(const AblationReport& report);
std::string format_ablation_table(const AblationReport& report);

}  // namespace aofd
