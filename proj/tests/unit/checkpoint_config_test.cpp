#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <random>

#include "aofd/checkpoint.hpp"
#include "aofd/config.hpp"
#include "aofd/error.hpp"
#include "temp_dir.hpp"

using namespace aofd;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.backbone_width = 4;
  c.feature_channels = 8;
  c.head_hidden = 16;
  c.segmentation_hidden = 4;
  return c;
}

Tensor random_image(std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  Tensor t(3, 48, 56);
  for (double& v : t.values()) v = u(rng);
  return t;
}

class ScopedEnv {
 public:
  ScopedEnv(const char* name, const char* value) : name_(name) {
    if (value) {
      setenv(name, value, 1);
    } else {
      unsetenv(name);
    }
  }
  ~ScopedEnv() { unsetenv(name_); }

 private:
  const char* name_;
};

}  // namespace

TEST(Checkpoint, RoundTripGivesIdenticalInference) {
  TempDir dir;
  const Model model = Model::create(small_config(), 3, true);
  CheckpointMeta meta;
  meta.phase = "pretrain_detector";
  meta.seed = 3;
  meta.rng_seeds["phase"] = 99;
  save_checkpoint(dir.path() / "m.ckpt", model, meta);
  const LoadedCheckpoint loaded = load_checkpoint(dir.path() / "m.ckpt");
  EXPECT_EQ(loaded.meta.phase, "pretrain_detector");
  EXPECT_EQ(loaded.meta.rng_seeds.at("phase"), 99u);
  EXPECT_EQ(loaded.groups.size(), 5u);
  EXPECT_EQ(group_hashes(loaded.model), group_hashes(model));
  InferenceConfig cfg;
  cfg.score_threshold = 0.0;
  EXPECT_EQ(infer(loaded.model, random_image(4), cfg), infer(model, random_image(4), cfg));
}

TEST(Checkpoint, GeneratorIsOptional) {
  TempDir dir;
  const Model model = Model::create(small_config(), 3, false);
  save_checkpoint(dir.path() / "m.ckpt", model, {});
  const LoadedCheckpoint loaded = load_checkpoint(dir.path() / "m.ckpt");
  EXPECT_FALSE(loaded.model.generator.has_value());
  EXPECT_FALSE(loaded.groups.count(ParamGroup::kGenerator));
}

TEST(Checkpoint, CorruptionIsDetected) {
  TempDir dir;
  const auto path = dir.path() / "m.ckpt";
  save_checkpoint(path, Model::create(small_config(), 3, true), {});
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(-3, std::ios::end);
    f.put('\x7f');
  }
  EXPECT_THROW(load_checkpoint(path), DataError);
  {
    std::ofstream f(path, std::ios::binary);
    f << "NOT-A-CKPT\n";
  }
  EXPECT_THROW(load_checkpoint(path), DataError);
  EXPECT_THROW(load_checkpoint(dir.path() / "absent.ckpt"), DataError);
}

TEST(Checkpoint, GroupHashTracksValues) {
  Model m = Model::create(small_config(), 3, true);
  const auto before = group_hashes(m);
  m.heads.classifier.bias.value[0] += 1e-12;
  const auto after = group_hashes(m);
  EXPECT_NE(before.at(ParamGroup::kHeads), after.at(ParamGroup::kHeads));
  EXPECT_EQ(before.at(ParamGroup::kBackbone), after.at(ParamGroup::kBackbone));
}

TEST(Config, DefaultsRoundTripThroughIni) {
  TrainConfig c;
  c.seed = 123;
  c.masking.joint_fraction = 0.5;
  c.combined.mu = 0.25;
  c.generator.gamma = 1e-3;
  const TrainConfig back = parse_train_config(format_train_config(c));
  EXPECT_EQ(to_json(back), to_json(c));
}

TEST(Config, ParsesFractionsAndPhaseOverrides) {
  const TrainConfig c = parse_train_config(
      "[general]\nseed = 5\n"
      "[masking]\njoint_fraction = 1/2\n"
      "[joint_combined]\nsteps = 40\nmu = inherit\n"
      "[model]\nanchor_scales = 256, 1024\n");
  EXPECT_EQ(c.seed, 5u);
  EXPECT_DOUBLE_EQ(c.masking.joint_fraction, 0.5);
  EXPECT_EQ(c.combined.steps, 40);
  EXPECT_FALSE(c.combined.mu.has_value());
  EXPECT_EQ(c.model.anchors.scales, (std::vector<double>{256, 1024}));
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(parse_train_config("[general]\nsed = 5\n"), InvalidArgument);
  EXPECT_THROW(parse_train_config("[gneral]\nseed = 5\n"), InvalidArgument);
  EXPECT_THROW(parse_train_config("[loss]\nmu = -1\n"), InvalidArgument);
  EXPECT_THROW(parse_train_config("[general]\nseed = five\n"), InvalidArgument);
}

TEST(Config, PhaseNamesRoundTrip) {
  for (Phase p : kAllPhases) EXPECT_EQ(parse_phase(to_string(p)), p);
  EXPECT_THROW(parse_phase("finetune"), InvalidArgument);
}

TEST(Config, SeedPrecedence) {
  {
    ScopedEnv env("AOFD_SEED", "42");
    EXPECT_EQ(resolve_seed(std::uint64_t{9}, 7), 9u);
    EXPECT_EQ(resolve_seed(std::nullopt, 7), 42u);
  }
  {
    ScopedEnv env("AOFD_SEED", nullptr);
    EXPECT_EQ(resolve_seed(std::nullopt, 7), 7u);
  }
  {
    ScopedEnv env("AOFD_SEED", "4x");
    EXPECT_THROW(resolve_seed(std::nullopt, 7), InvalidArgument);
  }
}
