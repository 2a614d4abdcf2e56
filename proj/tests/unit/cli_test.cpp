#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "aofd/checkpoint.hpp"
#include "aofd/config.hpp"
#include "aofd/hash.hpp"
#include "aofd/synthetic.hpp"
#include "commands.hpp"
#include "render.hpp"
#include "temp_dir.hpp"

using namespace aofd;
using aofd::tool::run_cli;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code = 0;
  std::string out;
  std::string err;
};

CliResult cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string file_hash(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), {});
  return sha256_hex(bytes);
}

// Relative path -> hash for every regular file below `root`, manifests excluded.
std::map<std::string, std::string> tree_hashes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file() || e.path().filename() == "manifest.json") continue;
    out[fs::relative(e.path(), root).generic_string()] = file_hash(e.path());
  }
  return out;
}

void replace_once(std::string& text, const std::string& from, const std::string& to) {
  const auto pos = text.find(from);
  ASSERT_NE(pos, std::string::npos) << from;
  text.replace(pos, from.size(), to);
}

constexpr const char* kTinyConfig = R"([general]
seed = 4
scarce_seg = 0

[model]
backbone_width = 4
feature_channels = 16
head_hidden = 32
segmentation_hidden = 8

[optimizer]
learning_rate = 0.003

[pretrain_detector]
steps = 6
learning_rate = 0.01

[train_generator]
steps = 3

[joint_seg_overfit]
steps = 3
mu = 1

[joint_combined]
steps = 4
mu = 1

[seg_tune]
epochs = 0
steps = 2
mu = 1
)";

// One small dataset, one training run, shared by the tests below.
class CliFixture : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir;
    config_ = dir_->path() / "tiny.ini";
    std::ofstream(config_) << kTinyConfig;
    data_ = dir_->path() / "data";
    run_ = dir_->path() / "run";
    generate_ = cli({"generate", "--out", data_.string(), "--seed", "5", "--train-size", "6",
                     "--val-size", "2", "--test-size", "4", "--scarce-seg", "3"});
    train_ = cli({"train", "--config", config_.string(), "--data", data_.string(), "--out",
                  run_.string()});
  }
  static void TearDownTestSuite() { delete dir_; }

  static fs::path final_checkpoint() { return run_ / "checkpoints" / "seg_tune.ckpt"; }

  static inline TempDir* dir_ = nullptr;
  static inline fs::path config_, data_, run_;
  static inline CliResult generate_, train_;
};

}  // namespace

TEST(Cli, UsageErrorsExitWithOne) {
  EXPECT_EQ(cli({}).code, 1);
  EXPECT_EQ(cli({"bogus"}).code, 1);
  EXPECT_EQ(cli({"generate"}).code, 1);  // --out missing
  EXPECT_EQ(cli({"eval", "--checkpoint", "x", "--data", "y", "--out", "z", "--iou", "2"}).code, 1);
  EXPECT_EQ(cli({"--help"}).code, 0);
}

TEST(Cli, MissingInputsExitWithTwo) {
  TempDir dir;
  const CliResult r = cli({"train", "--data", (dir.path() / "absent").string(), "--out",
                           (dir.path() / "run").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("absent"), std::string::npos);
  EXPECT_EQ(cli({"eval", "--checkpoint", (dir.path() / "none.ckpt").string(), "--data",
                 dir.path().string(), "--out", (dir.path() / "e").string()})
                .code,
            2);
}

TEST(Cli, DefaultGenerateWritesFullSplits) {
  TempDir dir;
  const fs::path out = dir.path() / "bench";
  ASSERT_EQ(cli({"generate", "--out", out.string(), "--seed", "1"}).code, 0);
  EXPECT_EQ(read_dataset(out / "train").size(), 500u);
  EXPECT_EQ(read_dataset(out / "val").size(), 100u);
  EXPECT_EQ(read_dataset(out / "test").size(), 100u);
  EXPECT_EQ(read_dataset(out / "seg").size(), 300u);
}

TEST_F(CliFixture, GenerateIsDeterministicAndHonoursFlags) {
  ASSERT_EQ(generate_.code, 0) << generate_.err;
  EXPECT_EQ(read_dataset(data_ / "seg").size(), 3u);
  EXPECT_EQ(read_dataset(data_ / "train").size(), 6u);

  const fs::path again = dir_->path() / "again";
  ASSERT_EQ(cli({"generate", "--out", again.string(), "--seed", "5", "--train-size", "6",
                 "--val-size", "2", "--test-size", "4", "--scarce-seg", "3"})
                .code,
            0);
  EXPECT_EQ(tree_hashes(data_), tree_hashes(again));
}

TEST_F(CliFixture, GenerateRefusesNonEmptyDirectoryWithoutForce) {
  const fs::path out = dir_->path() / "twice";
  const std::vector<std::string> args{"generate", "--out", out.string(), "--train-size", "2",
                                      "--val-size", "1", "--test-size", "1", "--scarce-seg", "1"};
  ASSERT_EQ(cli(args).code, 0);
  const CliResult second = cli(args);
  EXPECT_EQ(second.code, 1);
  EXPECT_NE(second.err.find("--force"), std::string::npos);
  auto forced = args;
  forced.push_back("--force");
  EXPECT_EQ(cli(forced).code, 0);
  const auto manifest = tool::read_manifest(out);
  EXPECT_EQ(manifest["runs"].size(), 2u);  // appended, never rewritten
}

TEST_F(CliFixture, SeedPrecedenceIsFlagThenEnvironment) {
  const fs::path a = dir_->path() / "seed_env";
  const fs::path b = dir_->path() / "seed_flag";
  setenv("AOFD_SEED", "99", 1);
  const int ca = cli({"generate", "--out", a.string(), "--train-size", "1", "--val-size", "1",
                      "--test-size", "1", "--scarce-seg", "1"})
                     .code;
  const int cb = cli({"generate", "--out", b.string(), "--seed", "12", "--train-size", "1",
                      "--val-size", "1", "--test-size", "1", "--scarce-seg", "1"})
                     .code;
  unsetenv("AOFD_SEED");
  ASSERT_EQ(ca, 0);
  ASSERT_EQ(cb, 0);
  EXPECT_EQ(tool::read_manifest(a)["runs"][0]["seed"], 99);
  EXPECT_EQ(tool::read_manifest(b)["runs"][0]["seed"], 12);
}

TEST_F(CliFixture, TrainWritesEveryPhaseCheckpointAndLog) {
  ASSERT_EQ(train_.code, 0) << train_.err;
  for (Phase p : kAllPhases) {
    EXPECT_TRUE(fs::exists(run_ / "checkpoints" / (std::string(to_string(p)) + ".ckpt")))
        << to_string(p);
  }
  std::ifstream log_file(run_ / "train_log.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(log_file, line)) {
    const auto j = nlohmann::json::parse(line);
    for (const char* key : {"phase", "step", "loss_total", "loss_cls", "loss_bbox", "loss_seg", "loss_gen"}) {
      EXPECT_TRUE(j.contains(key)) << key;
    }
    ++lines;
  }
  EXPECT_EQ(lines, 6 + 3 + 3 + 4 + 2);
  const auto manifest = tool::read_manifest(run_);
  ASSERT_EQ(manifest["runs"].size(), 1u);
  EXPECT_EQ(manifest["runs"][0]["command"], "train");
  EXPECT_EQ(manifest["runs"][0]["seed"], 4);
}

TEST_F(CliFixture, ResumingWithoutPrerequisiteNamesIt) {
  const CliResult r = cli({"train", "--config", config_.string(), "--data", data_.string(),
                           "--out", (dir_->path() / "fresh").string(), "--phase",
                           "train_generator"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("pretrain_detector"), std::string::npos) << r.err;
}

TEST_F(CliFixture, DivergentTrainingExitsWithThree) {
  std::string text = kTinyConfig;
  replace_once(text, "learning_rate = 0.01", "learning_rate = 1e200");
  replace_once(text, "learning_rate = 0.003", "learning_rate = 0.003\nclip_norm = 0\nmomentum = 0");
  const fs::path cfg = dir_->path() / "diverge.ini";
  std::ofstream(cfg) << text;
  const CliResult r = cli({"train", "--config", cfg.string(), "--data", data_.string(), "--out",
                           (dir_->path() / "diverged").string(), "--phase",
                           "pretrain_detector"});
  EXPECT_EQ(r.code, 3) << r.err;
}

TEST_F(CliFixture, EvalNamesThresholdAndIsDeterministic) {
  ASSERT_EQ(train_.code, 0);
  const fs::path e1 = dir_->path() / "eval1";
  const fs::path e2 = dir_->path() / "eval2";
  for (const auto& [dir, iou] : {std::pair{e1, "0.45"}, std::pair{e2, "0.5"}}) {
    ASSERT_EQ(cli({"eval", "--checkpoint", final_checkpoint().string(), "--data",
                   (data_ / "test").string(), "--out", dir.string(), "--iou", iou})
                  .code,
              0);
  }
  std::ifstream in(e1 / "report_all_rect_iou0.45.json");
  const auto report = nlohmann::json::parse(in);
  EXPECT_DOUBLE_EQ(report["settings"]["iou_threshold"].get<double>(), 0.45);
  EXPECT_TRUE(fs::exists(e1 / "pr_all_rect_iou0.45.ppm"));
  EXPECT_TRUE(fs::exists(e2 / "report_masked_only_rect_iou0.5.json"));

  const fs::path e3 = dir_->path() / "eval3";
  ASSERT_EQ(cli({"eval", "--checkpoint", final_checkpoint().string(), "--data",
                 (data_ / "test").string(), "--out", e3.string(), "--iou", "0.45"})
                .code,
            0);
  EXPECT_EQ(tree_hashes(e1), tree_hashes(e3));
}

TEST_F(CliFixture, SquareProtocolDumpHoldsSquares) {
  ASSERT_EQ(train_.code, 0);
  const fs::path e = dir_->path() / "eval_square";
  ASSERT_EQ(cli({"eval", "--checkpoint", final_checkpoint().string(), "--data",
                 (data_ / "test").string(), "--out", e.string(), "--protocol", "rect,square",
                 "--dump-detections"})
                .code,
            0);
  std::ifstream rect(e / "detections_rect.jsonl");
  std::ifstream square(e / "detections_square.jsonl");
  std::string lr, ls;
  int boxes = 0;
  while (std::getline(rect, lr) && std::getline(square, ls)) {
    const auto jr = nlohmann::json::parse(lr)["detections"];
    const auto js = nlohmann::json::parse(ls)["detections"];
    ASSERT_EQ(jr.size(), js.size());
    for (std::size_t i = 0; i < js.size(); ++i) {
      const auto b = js[i]["box"];
      const auto r = jr[i]["box"];
      const double side = b[2].get<double>() - b[0].get<double>();
      EXPECT_NEAR(side, b[3].get<double>() - b[1].get<double>(), 1e-9);
      EXPECT_NEAR(side,
                  std::max(r[2].get<double>() - r[0].get<double>(),
                           r[3].get<double>() - r[1].get<double>()),
                  1e-9);
      ++boxes;
    }
  }
  EXPECT_GT(boxes, 0);
  EXPECT_TRUE(fs::exists(e / "report_all_square_iou0.5.json"));
}

TEST_F(CliFixture, MaskedOnlyWithoutMaskedFacesIsFlaggedNotFatal) {
  ASSERT_EQ(train_.code, 0);
  SceneSpec scene;
  scene.mix = {0.0, 0.0, 0.0, 1.0};
  const auto samples = render_split(scene, 3, 9, 2, "test", SplitRule::kAny);
  const fs::path split = dir_->path() / "unmasked";
  write_dataset(samples, split);
  const fs::path e = dir_->path() / "eval_unmasked";
  const CliResult r = cli({"eval", "--checkpoint", final_checkpoint().string(), "--data",
                           split.string(), "--out", e.string(), "--subset", "masked_only"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("undefined"), std::string::npos);
  std::ifstream in(e / "report_masked_only_rect_iou0.5.json");
  const auto report = nlohmann::json::parse(in);
  EXPECT_TRUE(report["ap"].is_null());
  EXPECT_FALSE(report["ap_defined"].get<bool>());
}

TEST_F(CliFixture, VisualizeEmitsThreeArtifactsPerImageAndSkipsBadOnes) {
  ASSERT_EQ(train_.code, 0);
  const fs::path bad = dir_->path() / "broken.ppm";
  std::ofstream(bad) << "not an image";
  const auto records = read_dataset(data_ / "test");
  const fs::path good = data_ / "test" / records.front().image_file;
  const fs::path out = dir_->path() / "vis";
  const CliResult r = cli({"visualize", "--checkpoint", final_checkpoint().string(), "--images",
                           good.string(), bad.string(), "--out", out.string()});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("skipped 1"), std::string::npos);
  EXPECT_NE(r.err.find("broken.ppm"), std::string::npos);
  const std::string stem = good.stem().string();
  for (const char* suffix : {"_boxes.ppm", "_occlusion.ppm", "_masks.ppm"}) {
    EXPECT_TRUE(fs::exists(out / (stem + suffix))) << suffix;
  }
  EXPECT_FALSE(fs::exists(out / "broken_boxes.ppm"));
}

TEST_F(CliFixture, VisualizeWithNoDetectionsStillEmitsBoxOverlay) {
  ASSERT_EQ(train_.code, 0);
  LoadedCheckpoint ck = load_checkpoint(final_checkpoint());
  Param& bias = ck.model.heads.classifier.bias;
  bias.value[0] = 1e3;  // background wins everywhere
  bias.value[1] = -1e3;
  const fs::path silent = dir_->path() / "silent.ckpt";
  save_checkpoint(silent, ck.model, ck.meta);
  const auto records = read_dataset(data_ / "test");
  const fs::path good = data_ / "test" / records.front().image_file;
  const fs::path out = dir_->path() / "vis_silent";
  ASSERT_EQ(cli({"visualize", "--checkpoint", silent.string(), "--images", good.string(),
                 "--out", out.string()})
                .code,
            0);
  const RgbImage original = read_ppm(good);
  EXPECT_EQ(read_ppm(out / (good.stem().string() + "_boxes.ppm")), original);
}

TEST(Overlay, MaskOverlayIsExactlyTheReceptiveFieldOfMaskedCells) {
  // Oracle: a RoI spans feature cells floor(x1 / s) .. ceil(x2 / s) - 1; bin
  // i of n cells covers [floor(i n / 7), ceil((i + 1) n / 7)); pixels are the
  // cells times the stride.
  const int s = 8;
  const int W = 96, H = 80;
  const MapGeometry geometry{H / s, W / s, s};
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 40; ++trial) {
    const double x1 = u(rng) * 50, y1 = u(rng) * 40;
    const BoundingBox roi{x1, y1, x1 + 10 + u(rng) * 40, y1 + 10 + u(rng) * 35};
    BinaryMask mask;
    for (int c = 0; c < kRoiCells; ++c) {
      if (u(rng) < 0.3) mask.set(c, 0);
    }
    const RgbImage black(W, H);
    const RgbImage drawn = tool::draw_generated_masks(black, std::vector<BoundingBox>{roi},
                                                      std::vector<BinaryMask>{mask}, geometry,
                                                      1.0, false);
    const int fx0 = static_cast<int>(std::floor(roi.x1 / s));
    const int fy0 = static_cast<int>(std::floor(roi.y1 / s));
    const int nx = std::min(static_cast<int>(std::ceil(roi.x2 / s)), geometry.width) - fx0;
    const int ny = std::min(static_cast<int>(std::ceil(roi.y2 / s)), geometry.height) - fy0;
    std::vector<std::uint8_t> expected(static_cast<std::size_t>(W) * H, 0);
    for (int r = 0; r < kRoiSize; ++r) {
      for (int c = 0; c < kRoiSize; ++c) {
        if (mask(r, c) != 0) continue;
        const int px0 = (fx0 + c * nx / kRoiSize) * s;
        const int px1 = (fx0 + ((c + 1) * nx + kRoiSize - 1) / kRoiSize) * s;
        const int py0 = (fy0 + r * ny / kRoiSize) * s;
        const int py1 = (fy0 + ((r + 1) * ny + kRoiSize - 1) / kRoiSize) * s;
        for (int y = py0; y < std::min(py1, H); ++y) {
          for (int x = px0; x < std::min(px1, W); ++x) expected[y * W + x] = 1;
        }
      }
    }
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        const bool marked = drawn.get(x, y) != Rgb{0, 0, 0};
        ASSERT_EQ(marked, expected[y * W + x] == 1) << "trial " << trial << " at " << x << "," << y;
      }
    }
  }
}

TEST(Overlay, PrPlotHasCanvasSize) {
  const std::vector<PrPoint> curve{{1.0, 0.5, 0.9, 1, 0}, {0.5, 1.0, 0.1, 2, 2}};
  const RgbImage img = tool::plot_pr_curve(curve, 200);
  EXPECT_EQ(img.width, 200);
  EXPECT_EQ(img.height, 200);
}
