#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "aofd/detector.hpp"
#include "aofd/losses.hpp"
#include "aofd/mask_generator.hpp"

namespace aofd {

enum class Phase { kPretrainDetector, kTrainGenerator, kJointSegOverfit, kJointCombined, kSegTune };

inline constexpr std::array<Phase, 5> kAllPhases{
    Phase::kPretrainDetector, Phase::kTrainGenerator, Phase::kJointSegOverfit,
    Phase::kJointCombined, Phase::kSegTune};

const char* to_string(Phase phase);
Phase parse_phase(const std::string& text);

struct PhaseConfig {
  int steps = 0;
  int epochs = 0;             // when > 0, overrides steps: epochs x dataset size
  double learning_rate = 0;   // 0 inherits OptimizerConfig::learning_rate
  std::optional<double> mu;   // segmentation weight override for this phase
  std::optional<double> gamma;  // compact weight override (generator phase)
};

struct OptimizerConfig {
  double learning_rate = 0.001;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  double clip_norm = 10.0;  // global gradient norm clip; 0 disables
};

struct MaskingConfig {
  bool enabled = true;
  double generator_fraction = 0.25;       // TRAIN_GENERATOR
  double joint_fraction = 1.0 / 3.0;      // joint phases
  MaskTypeProbabilities types;
  CompactMode compact_mode = CompactMode::kRectified;
};

struct TrainConfig {
  std::uint64_t seed = 7;
  ModelConfig model;
  LossWeights weights;
  OptimizerConfig optimizer;
  MaskingConfig masking;
  bool with_generator = true;
  int scarce_seg = 300;  // segmentation images used (0 keeps all)
  PhaseConfig pretrain{3000, 0, 0.0, 0.0, std::nullopt};
  PhaseConfig generator{1000, 0, 0.0, std::nullopt, std::nullopt};
  PhaseConfig seg_overfit{1000, 0, 0.0, std::nullopt, std::nullopt};
  PhaseConfig combined{5000, 0, 0.0, 1e-7, std::nullopt};
  PhaseConfig seg_tune{0, 3, 0.0, std::nullopt, std::nullopt};

  PhaseConfig& phase(Phase p);
  const PhaseConfig& phase(Phase p) const;
  void validate() const;
};

// Flat INI file: sections [general], [model], [loss], [optimizer],
// [masking] and one per phase ([pretrain_detector], [train_generator],
// [joint_seg_overfit], [joint_combined], [seg_tune]). Unknown sections or
// keys are rejected with InvalidArgument. Missing keys keep their defaults.
TrainConfig load_train_config(const std::filesystem::path& path);
TrainConfig parse_train_config(const std::string& text);
std::string format_train_config(const TrainConfig& config);

nlohmann::json to_json(const TrainConfig& config);

// Seed precedence: flag > AOFD_SEED > config file.
std::uint64_t resolve_seed(std::optional<std::uint64_t> flag, std::uint64_t config_seed);

}  // namespace aofd
