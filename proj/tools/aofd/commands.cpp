#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>

#include "CLI11.hpp"

#include "aofd/checkpoint.hpp"
#include "aofd/config.hpp"
#include "aofd/error.hpp"
#include "aofd/image.hpp"
#include "aofd/synthetic.hpp"
#include "aofd/training.hpp"
#include "render.hpp"

#ifndef AOFD_VERSION
#define AOFD_VERSION "unknown"
#endif

namespace aofd::tool {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kStride = Backbone::kStride;

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

class RunRecord {
 public:
  RunRecord(std::string command, const std::vector<std::string>& args)
      : start_(std::chrono::steady_clock::now()) {
    run_["command"] = std::move(command);
    run_["args"] = args;
    run_["code_version"] = AOFD_VERSION;
    run_["started_at"] = utc_now();
    run_["outputs"] = json::array();
  }

  json& operator[](const char* key) { return run_[key]; }
  void output(const fs::path& p) { run_["outputs"].push_back(p.generic_string()); }

  void finish(const fs::path& dir) {
    run_["duration_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    append_manifest(dir, run_);
  }

 private:
  json run_;
  std::chrono::steady_clock::time_point start_;
};

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  out << j.dump(2) << '\n';
  if (!out) throw DataError("cannot write " + path.string());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
  if (!out) throw DataError("cannot write " + path.string());
}

TrainConfig load_config(const std::string& path) {
  return path.empty() ? TrainConfig{} : load_train_config(path);
}

void require_dir(const fs::path& dir, const char* what) {
  if (!fs::is_directory(dir)) throw DataError(std::string(what) + " not found: " + dir.string());
}

Model load_model(const fs::path& path) {
  if (!fs::exists(path)) throw DataError("checkpoint not found: " + path.string());
  return load_checkpoint(path).model;
}

// ---------------------------------------------------------------- generate

struct GenerateArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> scarce_seg;
  int train_size = 500;
  int val_size = 100;
  int test_size = 100;
  bool force = false;
  bool index = false;
};

int cmd_generate(const GenerateArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  RunRecord rec("generate", argv);
  BenchmarkSpec spec;
  if (!a.config.empty()) {
    const TrainConfig cfg = load_config(a.config);
    spec.seed = cfg.seed;
    if (cfg.scarce_seg > 0) spec.segmentation_size = cfg.scarce_seg;
  }
  spec.seed = resolve_seed(a.seed, spec.seed);
  if (a.scarce_seg) spec.segmentation_size = *a.scarce_seg;
  spec.train_size = a.train_size;
  spec.val_size = a.val_size;
  spec.test_size = a.test_size;
  spec.validate();

  const fs::path root(a.out);
  if (fs::exists(root) && !fs::is_empty(root)) {
    if (!a.force) {
      throw InvalidArgument("output directory " + root.string() +
                            " is not empty (use --force to overwrite)");
    }
    for (const char* split : {"train", "val", "test", "seg"}) fs::remove_all(root / split);
  }
  fs::create_directories(root);

  const Benchmark b = make_benchmark(spec);
  const std::pair<const char*, const std::vector<Sample>*> splits[] = {
      {"train", &b.train}, {"val", &b.val}, {"test", &b.test}, {"seg", &b.segmentation}};
  json sizes = json::object();
  for (const auto& [name, samples] : splits) {
    write_dataset(*samples, root / name, a.index);
    sizes[name] = samples->size();
    rec.output(root / name);
    out << name << ": " << samples->size() << " images\n";
  }
  rec["seed"] = spec.seed;
  rec["config"] = {{"train_size", spec.train_size},
                   {"val_size", spec.val_size},
                   {"test_size", spec.test_size},
                   {"segmentation_size", spec.segmentation_size},
                   {"config_file", a.config}};
  rec["sizes"] = sizes;
  rec.finish(root);
  return kExitOk;
}

// ------------------------------------------------------------------- train

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
  std::string phase;
  std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  RunRecord rec("train", argv);
  TrainConfig cfg = load_config(a.config);
  cfg.seed = resolve_seed(a.seed, cfg.seed);
  cfg.validate();
  require_dir(a.data, "dataset directory");
  const TrainingData data = load_training_data(a.data, cfg.scarce_seg);

  PipelineOptions opts;
  opts.out_dir = a.out;
  if (!a.phase.empty()) opts.only = parse_phase(a.phase);
  fs::create_directories(opts.out_dir);
  write_text(opts.out_dir / "config.ini", format_train_config(cfg));

  const PipelineResult result = run_pipeline(cfg, data, opts);
  json phases = json::array();
  for (const PhaseStats& ps : result.phases) {
    out << std::left << std::setw(18) << to_string(ps.phase) << " steps " << ps.steps
        << std::setprecision(9) << "  loss " << ps.first_loss << " -> " << ps.last_loss << '\n';
    phases.push_back({{"phase", to_string(ps.phase)},
                      {"steps", ps.steps},
                      {"first_loss", ps.first_loss},
                      {"last_loss", ps.last_loss}});
    rec.output(checkpoint_path(opts.out_dir, ps.phase));
  }
  rec.output(opts.out_dir / "train_log.jsonl");
  rec["seed"] = cfg.seed;
  rec["config"] = to_json(cfg);
  rec["phases"] = phases;
  rec.finish(opts.out_dir);
  return kExitOk;
}

// -------------------------------------------------------------------- eval

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string out;
  std::vector<std::string> subsets{"all", "masked_only"};
  std::vector<std::string> protocols{"rect"};
  double iou = 0.5;
  std::string square_mode = "long_side";
  std::vector<std::size_t> fp_budgets{10, 50, 100};
  bool dump = false;
};

std::string iou_tag(double iou) {
  std::ostringstream os;
  os << std::setprecision(9) << iou;
  return os.str();
}

int cmd_eval(const EvalArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  RunRecord rec("eval", argv);
  EvalSettings base;
  base.iou_threshold = a.iou;
  base.fp_budgets = a.fp_budgets;
  if (a.square_mode == "long_side") {
    base.square_mode = SquareMode::kLongSide;
  } else if (a.square_mode == "area") {
    base.square_mode = SquareMode::kAreaPreserving;
  } else {
    throw InvalidArgument("unknown square mode '" + a.square_mode + "' (long_side, area)");
  }
  std::vector<std::pair<Subset, BoxProtocol>> runs;
  for (const auto& p : a.protocols) {
    for (const auto& s : a.subsets) runs.emplace_back(parse_subset(s), parse_box_protocol(p));
  }
  base.validate();

  const Model model = load_model(a.checkpoint);
  require_dir(a.data, "dataset split");
  const std::vector<TrainExample> examples = load_examples(a.data, false);
  if (examples.empty()) throw DataError("no images in " + a.data);
  const InferenceConfig inference;
  const std::vector<std::vector<Detection>> dets = detect_all(model, examples, inference);
  std::vector<std::vector<Annotation>> gts;
  for (const TrainExample& e : examples) gts.push_back(e.annotations);

  const fs::path dir(a.out);
  fs::create_directories(dir);
  json summary = json::array();
  for (const auto& [subset, boxes] : runs) {
    EvalSettings s = base;
    s.subset = subset;
    s.boxes = boxes;
    const EvalReport report = evaluate(dets, gts, s);
    const std::string stem = std::string(to_string(subset)) + "_" + to_string(boxes) + "_iou" +
                             iou_tag(a.iou);
    write_report(dir / ("report_" + stem + ".json"), report);
    write_pr_text(dir / ("pr_" + stem + ".txt"), report.curve);
    write_ppm(dir / ("pr_" + stem + ".ppm"), plot_pr_curve(report.curve));
    for (const std::string& name : {"report_" + stem + ".json", "pr_" + stem + ".txt",
                                   "pr_" + stem + ".ppm"}) {
      rec.output(dir / name);
    }
    out << std::left << std::setw(12) << to_string(subset) << std::setw(8) << to_string(boxes)
        << "iou " << iou_tag(a.iou) << "  AP ";
    if (report.ap) {
      out << std::setprecision(9) << *report.ap << '\n';
    } else {
      out << "undefined (no ground truth in subset)\n";
    }
    summary.push_back({{"subset", to_string(subset)},
                       {"protocol", to_string(boxes)},
                       {"ap", report.ap ? json(*report.ap) : json(nullptr)}});
  }

  if (a.dump) {
    for (const std::string& p : a.protocols) {
      const BoxProtocol proto = parse_box_protocol(p);
      const fs::path path = dir / ("detections_" + p + ".jsonl");
      std::ofstream f(path, std::ios::trunc);
      for (std::size_t i = 0; i < dets.size(); ++i) {
        json boxes_json = json::array();
        for (const Detection& d : dets[i]) {
          const BoundingBox b =
              proto == BoxProtocol::kSquare ? rect_to_square(d.box, base.square_mode) : d.box;
          boxes_json.push_back({{"box", {b.x1, b.y1, b.x2, b.y2}}, {"score", d.score}});
        }
        f << json{{"image", examples[i].id}, {"detections", boxes_json}}.dump() << '\n';
      }
      if (!f) throw DataError("cannot write " + path.string());
      rec.output(path);
    }
  }
  rec["config"] = {{"checkpoint", a.checkpoint},
                   {"data", a.data},
                   {"iou_threshold", a.iou},
                   {"square_mode", a.square_mode},
                   {"fp_budgets", a.fp_budgets}};
  rec["results"] = summary;
  rec.finish(dir);
  return kExitOk;
}

// --------------------------------------------------------------- visualize

struct VisualizeArgs {
  std::string checkpoint;
  std::vector<std::string> images;
  std::string out;
  int rois = 8;
  double fraction = 0.25;
};

std::vector<fs::path> collect_images(const std::vector<std::string>& inputs) {
  std::vector<fs::path> files;
  for (const std::string& in : inputs) {
    if (fs::is_directory(in)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(in)) {
        if (e.path().extension() == ".ppm") found.push_back(e.path());
      }
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else {
      files.emplace_back(in);
    }
  }
  return files;
}

int cmd_visualize(const VisualizeArgs& a, const std::vector<std::string>& argv, std::ostream& out,
                  std::ostream& err) {
  RunRecord rec("visualize", argv);
  if (a.rois < 0) throw InvalidArgument("--rois must be >= 0");
  masked_cell_count(a.fraction);  // validates the fraction
  const Model model = load_model(a.checkpoint);
  if (!model.generator) err << "warning: checkpoint has no generator; mask overlays stay empty\n";
  const fs::path dir(a.out);
  fs::create_directories(dir);

  int written = 0;
  int skipped = 0;
  for (const fs::path& file : collect_images(a.images)) {
    RgbImage image;
    try {
      image = read_ppm(file);
    } catch (const DataError& e) {
      err << "warning: skipping " << file.string() << ": " << e.what() << '\n';
      ++skipped;
      continue;
    }
    const Tensor input = image_to_tensor(image);
    const Inference inf = run_inference(model, input, InferenceConfig{});
    const MapGeometry geometry{inf.features.height(), inf.features.width(), kStride};

    std::vector<BoundingBox> boxes;
    for (const Detection& d : inf.detections) boxes.push_back(d.box);
    const BinaryGrid occl = segment_occlusions(model.segmentation, inf.features, boxes,
                                               model.config.gate_factor, kStride);

    std::vector<BoundingBox> rois;
    std::vector<BinaryMask> masks;
    if (model.generator) {
      const std::size_t n = std::min(boxes.size(), static_cast<std::size_t>(a.rois));
      for (std::size_t i = 0; i < n; ++i) {
        const Tensor roi = roi_pool(inf.features, boxes[i], kStride);
        rois.push_back(boxes[i]);
        masks.push_back(binarize_lowest_k(generate_heatmap(*model.generator, roi), a.fraction));
      }
    }

    const std::string stem = file.stem().string();
    const std::pair<std::string, RgbImage> artifacts[] = {
        {stem + "_boxes.ppm", draw_detections(image, inf.detections)},
        {stem + "_occlusion.ppm", draw_occlusion(image, occl, geometry)},
        {stem + "_masks.ppm", draw_generated_masks(image, rois, masks, geometry)}};
    for (const auto& [name, img] : artifacts) {
      write_ppm(dir / name, img);
      rec.output(dir / name);
    }
    ++written;
  }
  out << "visualized " << written << " image(s), skipped " << skipped << '\n';
  rec["config"] = {{"checkpoint", a.checkpoint}, {"rois", a.rois}, {"fraction", a.fraction}};
  rec["images_written"] = written;
  rec["images_skipped"] = skipped;
  rec.finish(dir);
  return kExitOk;
}

// ------------------------------------------------------------------ ablate

struct AblateArgs {
  std::string config;
  std::string data;
  std::string out;
  std::vector<std::string> variants{"full", "no_gen", "no_seg", "baseline"};
  std::vector<std::uint64_t> seeds{1, 2, 3};
};

int cmd_ablate(const AblateArgs& a, const std::vector<std::string>& argv, std::ostream& out,
               std::ostream& err) {
  RunRecord rec("ablate", argv);
  TrainConfig cfg = load_config(a.config);
  cfg.validate();
  for (const std::string& v : a.variants) variant_spec(v, cfg);  // rejects unknown names early
  require_dir(a.data, "dataset directory");
  const TrainingData data = load_training_data(a.data, cfg.scarce_seg);
  const std::vector<TrainExample> test = load_examples(fs::path(a.data) / "test", false);
  if (test.empty()) throw DataError("no test images in " + (fs::path(a.data) / "test").string());

  const fs::path dir(a.out);
  fs::create_directories(dir);
  AblationOptions opts;
  opts.seeds = a.seeds;
  opts.out_dir = dir;
  opts.progress = [&err](const std::string& msg) { err << msg << '\n'; };
  const AblationReport report = run_ablation(cfg, a.variants, data, test, opts);

  const std::string table = format_ablation_table(report);
  write_json(dir / "ablation.json", to_json(report));
  write_text(dir / "ablation.txt", table);
  out << table;
  rec.output(dir / "ablation.json");
  rec.output(dir / "ablation.txt");
  rec["seeds"] = a.seeds;
  rec["config"] = to_json(cfg);
  rec["variants"] = a.variants;
  rec.finish(dir);
  return kExitOk;
}

}  // namespace

json read_manifest(const fs::path& dir) {
  const fs::path path = dir / "manifest.json";
  if (!fs::exists(path)) return json{{"runs", json::array()}};
  std::ifstream in(path);
  try {
    json j = json::parse(in);
    if (!j.contains("runs") || !j["runs"].is_array()) throw DataError("no runs array");
    return j;
  } catch (const json::exception& e) {
    throw DataError("malformed manifest " + path.string() + ": " + e.what());
  }
}

void append_manifest(const fs::path& dir, const json& run) {
  json manifest = read_manifest(dir);
  manifest["runs"].push_back(run);
  write_json(dir / "manifest.json", manifest);
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Adversarial occlusion-aware face detection on synthetic data", "aofd"};
  app.require_subcommand(1);
  app.set_version_flag("--version", AOFD_VERSION);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Render the synthetic benchmark splits");
  g->add_option("--out", gen.out, "Output dataset directory")->required();
  g->add_option("--config", gen.config, "Training config; its seed and scarce_seg apply");
  g->add_option("--seed", gen.seed, "Benchmark seed (overrides AOFD_SEED and the config)");
  g->add_option("--scarce-seg", gen.scarce_seg, "Images in the segmentation split");
  g->add_option("--train-size", gen.train_size)->check(CLI::PositiveNumber);
  g->add_option("--val-size", gen.val_size)->check(CLI::PositiveNumber);
  g->add_option("--test-size", gen.test_size)->check(CLI::PositiveNumber);
  g->add_flag("--force", gen.force, "Overwrite the splits of a non-empty directory");
  g->add_flag("--index", gen.index, "Also write index.json per split");

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Run the training schedule");
  t->add_option("--config", train.config, "INI training config");
  t->add_option("--data", train.data, "Dataset directory from `generate`")->required();
  t->add_option("--out", train.out, "Run directory")->required();
  t->add_option("--phase", train.phase, "Run one phase, resuming from its prerequisite");
  t->add_option("--seed", train.seed, "Seed (overrides AOFD_SEED and the config)");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  e->add_option("--checkpoint", ev.checkpoint)->required();
  e->add_option("--data", ev.data, "Split directory, e.g. <dataset>/test")->required();
  e->add_option("--out", ev.out, "Report directory")->required();
  e->add_option("--subset", ev.subsets, "all, masked_only, non_ignored")->delimiter(',');
  e->add_option("--protocol", ev.protocols, "rect, square")->delimiter(',');
  e->add_option("--iou", ev.iou, "IoU threshold")->check(CLI::Range(0.0, 1.0));
  e->add_option("--square-mode", ev.square_mode, "long_side or area");
  e->add_option("--fp-budgets", ev.fp_budgets, "False-positive budgets")->delimiter(',');
  e->add_flag("--dump-detections", ev.dump, "Write matched boxes per protocol");

  VisualizeArgs vis;
  auto* v = app.add_subcommand("visualize", "Draw detection, occlusion and mask overlays");
  v->add_option("--checkpoint", vis.checkpoint)->required();
  v->add_option("--images", vis.images, "PPM files or directories")->required();
  v->add_option("--out", vis.out)->required();
  v->add_option("--rois", vis.rois, "Detections whose generated masks are drawn");
  v->add_option("--fraction", vis.fraction, "Masked fraction of each RoI");

  AblateArgs abl;
  auto* ab = app.add_subcommand("ablate", "Train and evaluate ablation variants");
  ab->add_option("--config", abl.config, "INI training config");
  ab->add_option("--data", abl.data, "Dataset directory from `generate`")->required();
  ab->add_option("--out", abl.out)->required();
  ab->add_option("--variants", abl.variants)->delimiter(',');
  ab->add_option("--seeds", abl.seeds)->delimiter(',');

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << AOFD_VERSION << '\n';
    return kExitOk;
  } catch (const CLI::ParseError& ex) {
    err << "error: " << ex.what() << '\n' << "run with --help for usage\n";
    return kExitUsage;
  }

  try {
    if (g->parsed()) return cmd_generate(gen, args, out);
    if (t->parsed()) return cmd_train(train, args, out);
    if (e->parsed()) return cmd_eval(ev, args, out);
    if (v->parsed()) return cmd_visualize(vis, args, out, err);
    if (ab->parsed()) return cmd_ablate(abl, args, out, err);
  } catch (const InvalidArgument& ex) {
    err << "error: " << ex.what() << '\n';
    return kExitUsage;
  } catch (const DataError& ex) {
    err << "data error: " << ex.what() << '\n';
    return kExitData;
  } catch (const InvariantViolation& ex) {
    err << "internal error: " << ex.what() << '\n';
    return kExitInternal;
  } catch (const fs::filesystem_error& ex) {
    err << "data error: " << ex.what() << '\n';
    return kExitData;
  } catch (const std::exception& ex) {
    err << "internal error: " << ex.what() << '\n';
    return kExitInternal;
  }
  return kExitUsage;
}

}  // namespace aofd::tool
