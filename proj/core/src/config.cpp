#include "aofd/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <utility>
#include <map>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "aofd/checkpoint.hpp"
#include "aofd/error.hpp"

namespace aofd {

namespace pt = boost::property_tree;

const char* to_string(Phase phase) {
  switch (phase) {
    case Phase::kPretrainDetector: return "pretrain_detector";
    case Phase::kTrainGenerator: return "train_generator";
    case Phase::kJointSegOverfit: return "joint_seg_overfit";
    case Phase::kJointCombined: return "joint_combined";
    case Phase::kSegTune: return "seg_tune";
  }
  return "?";
}

Phase parse_phase(const std::string& text) {
  for (Phase p : kAllPhases) {
    if (text == to_string(p)) return p;
  }
  throw InvalidArgument("unknown phase '" + text +
                        "' (pretrain_detector, train_generator, joint_seg_overfit, "
                        "joint_combined, seg_tune)");
}

PhaseConfig& TrainConfig::phase(Phase p) {
  return const_cast<PhaseConfig&>(std::as_const(*this).phase(p));
}

const PhaseConfig& TrainConfig::phase(Phase p) const {
  switch (p) {
    case Phase::kPretrainDetector: return pretrain;
    case Phase::kTrainGenerator: return generator;
    case Phase::kJointSegOverfit: return seg_overfit;
    case Phase::kJointCombined: return combined;
    case Phase::kSegTune: return seg_tune;
  }
  throw InvalidArgument("bad phase");
}

void TrainConfig::validate() const {
  model.validate();
  weights.validate();
  masking.types.validate();
  auto fraction_ok = [](double f) { return f > 0.0 && f < 1.0; };
  if (!fraction_ok(masking.generator_fraction) || !fraction_ok(masking.joint_fraction)) {
    throw InvalidArgument("mask fractions must lie in (0, 1)");
  }
  if (!(optimizer.learning_rate > 0.0) || optimizer.momentum < 0.0 || optimizer.momentum >= 1.0 ||
      optimizer.weight_decay < 0.0 || optimizer.clip_norm < 0.0) {
    throw InvalidArgument("bad optimizer settings");
  }
  if (scarce_seg < 0) throw InvalidArgument("scarce_seg must be >= 0");
  for (Phase p : kAllPhases) {
    const PhaseConfig& c = phase(p);
    if (c.steps < 0 || c.epochs < 0 || c.learning_rate < 0.0) {
      throw InvalidArgument(std::string("bad schedule for phase ") + to_string(p));
    }
    if ((c.mu && *c.mu < 0.0) || (c.gamma && *c.gamma < 0.0)) {
      throw InvalidArgument(std::string("negative loss weight in phase ") + to_string(p));
    }
  }
  if (!with_generator && masking.types.generated > 0.0 && masking.enabled) {
    throw InvalidArgument("generated masks requested but the generator is disabled");
  }
}

namespace {

std::string fmt(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <typename T>
std::string join(const std::vector<T>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ", ";
    out += fmt(static_cast<double>(values[i]));
  }
  return out;
}

double parse_number(const std::string& key, std::string text) {
  const auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  text = trim(text);
  const auto slash = text.find('/');
  try {
    std::size_t used = 0;
    if (slash != std::string::npos) {
      const double num = std::stod(trim(text.substr(0, slash)));
      const double den = std::stod(trim(text.substr(slash + 1)), &used);
      if (den == 0.0) throw std::invalid_argument("zero denominator");
      return num / den;
    }
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument("trailing text");
    return v;
  } catch (const std::exception&) {
    throw InvalidArgument("config key '" + key + "': expected a number, got '" + text + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw InvalidArgument("config key '" + key + "': expected a boolean, got '" + text + "'");
}

std::vector<double> parse_list(const std::string& key, const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number(key, item));
  return out;
}

int to_int(const std::string& key, double v) {
  if (v != static_cast<double>(static_cast<long long>(v))) {
    throw InvalidArgument("config key '" + key + "': expected an integer");
  }
  return static_cast<int>(v);
}

// Binds config keys to fields for both reading and writing.
class Schema {
 public:
  using Reader = std::function<void(const std::string&)>;
  using Writer = std::function<std::string()>;

  void add(const std::string& section, const std::string& key, Reader r, Writer w) {
    entries_[section][key] = {std::move(r), std::move(w)};
    order_.emplace_back(section, key);
  }

  void read(const pt::ptree& tree) const {
    for (const auto& [section, body] : tree) {
      const auto s = entries_.find(section);
      if (s == entries_.end()) throw InvalidArgument("unknown config section [" + section + "]");
      if (!body.data().empty()) {
        throw InvalidArgument("config key '" + section + "' must be inside a section");
      }
      for (const auto& [key, value] : body) {
        const auto k = s->second.find(key);
        if (k == s->second.end()) {
          throw InvalidArgument("unknown config key '" + key + "' in [" + section + "]");
        }
        k->second.first(value.data());
      }
    }
  }

  std::string write() const {
    std::ostringstream out;
    std::string current;
    for (const auto& [section, key] : order_) {
      if (section != current) {
        out << (current.empty() ? "" : "\n") << '[' << section << "]\n";
        current = section;
      }
      out << key << " = " << entries_.at(section).at(key).second() << '\n';
    }
    return out.str();
  }

 private:
  std::map<std::string, std::map<std::string, std::pair<Reader, Writer>>> entries_;
  std::vector<std::pair<std::string, std::string>> order_;
};

Schema make_schema(TrainConfig& c) {
  Schema s;
  auto num = [&s](const std::string& sec, const std::string& key, double& field) {
    s.add(sec, key, [&field, key](const std::string& t) { field = parse_number(key, t); },
          [&field] { return fmt(field); });
  };
  auto integer = [&s](const std::string& sec, const std::string& key, int& field) {
    s.add(sec, key, [&field, key](const std::string& t) { field = to_int(key, parse_number(key, t)); },
          [&field] { return std::to_string(field); });
  };
  auto boolean = [&s](const std::string& sec, const std::string& key, bool& field) {
    s.add(sec, key, [&field, key](const std::string& t) { field = parse_bool(key, t); },
          [&field] { return std::string(field ? "true" : "false"); });
  };
  auto optional = [&s](const std::string& sec, const std::string& key,
                       std::optional<double>& field) {
    s.add(sec, key,
          [&field, key](const std::string& t) {
            if (t == "inherit" || t.empty()) {
              field.reset();
            } else {
              field = parse_number(key, t);
            }
          },
          [&field] { return field ? fmt(*field) : std::string("inherit"); });
  };

  s.add("general", "seed",
        [&c](const std::string& t) {
          std::uint64_t v = 0;
          const auto r = std::from_chars(t.data(), t.data() + t.size(), v);
          if (r.ec != std::errc() || r.ptr != t.data() + t.size()) {
            throw InvalidArgument("config key 'seed': expected an unsigned integer");
          }
          c.seed = v;
        },
        [&c] { return std::to_string(c.seed); });
  boolean("general", "with_generator", c.with_generator);
  integer("general", "scarce_seg", c.scarce_seg);

  ModelConfig& m = c.model;
  integer("model", "backbone_width", m.backbone_width);
  integer("model", "feature_channels", m.feature_channels);
  integer("model", "head_hidden", m.head_hidden);
  integer("model", "segmentation_hidden", m.segmentation_hidden);
  s.add("model", "anchor_ratios",
        [&m](const std::string& t) { m.anchors.aspect_ratios = parse_list("anchor_ratios", t); },
        [&m] { return join(m.anchors.aspect_ratios); });
  s.add("model", "anchor_scales",
        [&m](const std::string& t) { m.anchors.scales = parse_list("anchor_scales", t); },
        [&m] { return join(m.anchors.scales); });
  num("model", "rpn_positive_iou", m.rpn_targets.positive_iou);
  num("model", "rpn_negative_iou", m.rpn_targets.negative_iou);
  integer("model", "rpn_batch", m.rpn_targets.batch_size);
  integer("model", "train_pre_nms", m.train_proposals.pre_nms_top_n);
  integer("model", "train_post_nms", m.train_proposals.post_nms_top_n);
  integer("model", "test_pre_nms", m.test_proposals.pre_nms_top_n);
  integer("model", "test_post_nms", m.test_proposals.post_nms_top_n);
  s.add("model", "proposal_nms",
        [&m](const std::string& t) {
          m.train_proposals.nms_iou = m.test_proposals.nms_iou = parse_number("proposal_nms", t);
        },
        [&m] { return fmt(m.train_proposals.nms_iou); });
  integer("model", "roi_batch", m.sampler.batch_size);
  num("model", "foreground_fraction", m.sampler.foreground_fraction);
  num("model", "foreground_iou", m.sampler.foreground_iou);
  num("model", "gate_factor", m.gate_factor);

  num("loss", "alpha", c.weights.alpha);
  num("loss", "beta", c.weights.beta);
  num("loss", "mu", c.weights.mu);
  num("loss", "gamma", c.weights.gamma);
  num("loss", "eta", c.weights.eta);
  s.add("loss", "compact_mode",
        [&c](const std::string& t) {
          if (t == "rectified") {
            c.masking.compact_mode = CompactMode::kRectified;
          } else if (t == "literal") {
            c.masking.compact_mode = CompactMode::kLiteral;
          } else {
            throw InvalidArgument("compact_mode must be rectified or literal");
          }
        },
        [&c] {
          return std::string(c.masking.compact_mode == CompactMode::kRectified ? "rectified"
                                                                               : "literal");
        });

  num("optimizer", "learning_rate", c.optimizer.learning_rate);
  num("optimizer", "momentum", c.optimizer.momentum);
  num("optimizer", "weight_decay", c.optimizer.weight_decay);
  num("optimizer", "clip_norm", c.optimizer.clip_norm);

  boolean("masking", "enabled", c.masking.enabled);
  num("masking", "generator_fraction", c.masking.generator_fraction);
  num("masking", "joint_fraction", c.masking.joint_fraction);
  num("masking", "p_generated", c.masking.types.generated);
  num("masking", "p_half", c.masking.types.half);
  num("masking", "p_random_drop", c.masking.types.random_drop);
  num("masking", "p_none", c.masking.types.none);

  for (Phase p : kAllPhases) {
    PhaseConfig& pc = c.phase(p);
    const std::string sec = to_string(p);
    integer(sec, "steps", pc.steps);
    integer(sec, "epochs", pc.epochs);
    num(sec, "learning_rate", pc.learning_rate);
    optional(sec, "mu", pc.mu);
    optional(sec, "gamma", pc.gamma);
  }
  return s;
}

}  // namespace

TrainConfig parse_train_config(const std::string& text) {
  TrainConfig c;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw InvalidArgument(std::string("config: ") + e.what());
  }
  make_schema(c).read(tree);
  c.validate();
  return c;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot read config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  try {
    return parse_train_config(text.str());
  } catch (const InvalidArgument& e) {
    throw InvalidArgument(path.string() + ": " + e.what());
  }
}

std::string format_train_config(const TrainConfig& config) {
  TrainConfig copy = config;
  return make_schema(copy).write();
}

nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json phases = nlohmann::json::object();
  for (Phase p : kAllPhases) {
    const PhaseConfig& pc = c.phase(p);
    phases[to_string(p)] = {{"steps", pc.steps},
                            {"epochs", pc.epochs},
                            {"learning_rate", pc.learning_rate},
                            {"mu", pc.mu ? nlohmann::json(*pc.mu) : nlohmann::json(nullptr)},
                            {"gamma", pc.gamma ? nlohmann::json(*pc.gamma) : nlohmann::json(nullptr)}};
  }
  return {
      {"seed", c.seed},
      {"with_generator", c.with_generator},
      {"scarce_seg", c.scarce_seg},
      {"model", to_json(c.model)},
      {"loss",
       {{"alpha", c.weights.alpha}, {"beta", c.weights.beta}, {"mu", c.weights.mu},
        {"gamma", c.weights.gamma}, {"eta", c.weights.eta},
        {"compact_mode",
         c.masking.compact_mode == CompactMode::kRectified ? "rectified" : "literal"}}},
      {"optimizer",
       {{"learning_rate", c.optimizer.learning_rate}, {"momentum", c.optimizer.momentum},
        {"weight_decay", c.optimizer.weight_decay}, {"clip_norm", c.optimizer.clip_norm}}},
      {"masking",
       {{"enabled", c.masking.enabled},
        {"generator_fraction", c.masking.generator_fraction},
        {"joint_fraction", c.masking.joint_fraction},
        {"p_generated", c.masking.types.generated},
        {"p_half", c.masking.types.half},
        {"p_random_drop", c.masking.types.random_drop},
        {"p_none", c.masking.types.none}}},
      {"phases", phases},
  };
}

std::uint64_t resolve_seed(std::optional<std::uint64_t> flag, std::uint64_t config_seed) {
  if (flag) return *flag;
  if (const char* env = std::getenv("AOFD_SEED"); env && *env) {
    std::uint64_t v = 0;
    const char* end = env + std::char_traits<char>::length(env);
    const auto r = std::from_chars(env, end, v);
    if (r.ec != std::errc() || r.ptr != end) {
      throw InvalidArgument(std::string("AOFD_SEED is not an unsigned integer: ") + env);
    }
    return v;
  }
  return config_seed;
}

}  // namespace aofd
