#include "aofd/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <vector>

#include "aofd/error.hpp"
#include "aofd/hash.hpp"

namespace aofd {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace {

using nlohmann::json;

std::vector<double> group_values(const Model& model, ParamGroup group) {
  std::vector<double> out;
  model.for_each_param_in(group, [&](const Param& p) {
    out.insert(out.end(), p.value.begin(), p.value.end());
  });
  return out;
}

bool group_present(const Model& model, ParamGroup group) {
  std::size_t n = 0;
  model.for_each_param_in(group, [&](const Param& p) { n += p.size(); });
  return n > 0;
}

json proposal_json(const ProposalConfig& c) {
  return {{"pre_nms_top_n", c.pre_nms_top_n}, {"nms_iou", c.nms_iou},
          {"post_nms_top_n", c.post_nms_top_n}, {"min_size", c.min_size}};
}

ProposalConfig proposal_from(const json& j) {
  return {j.at("pre_nms_top_n").get<int>(), j.at("nms_iou").get<double>(),
          j.at("post_nms_top_n").get<int>(), j.at("min_size").get<double>()};
}

}  // namespace

json to_json(const ModelConfig& c) {
  return {
      {"input_channels", c.input_channels},
      {"backbone_width", c.backbone_width},
      {"feature_channels", c.feature_channels},
      {"head_hidden", c.head_hidden},
      {"segmentation_hidden", c.segmentation_hidden},
      {"anchors",
       {{"aspect_ratios", c.anchors.aspect_ratios},
        {"scales", c.anchors.scales},
        {"stride", c.anchors.stride}}},
      {"rpn_targets",
       {{"positive_iou", c.rpn_targets.positive_iou},
        {"negative_iou", c.rpn_targets.negative_iou},
        {"batch_size", c.rpn_targets.batch_size},
        {"positive_fraction", c.rpn_targets.positive_fraction}}},
      {"train_proposals", proposal_json(c.train_proposals)},
      {"test_proposals", proposal_json(c.test_proposals)},
      {"sampler",
       {{"batch_size", c.sampler.batch_size},
        {"foreground_fraction", c.sampler.foreground_fraction},
        {"foreground_iou", c.sampler.foreground_iou},
        {"append_ground_truth", c.sampler.append_ground_truth}}},
      {"head_delta_weights", c.head_delta_weights},
      {"gate_factor", c.gate_factor},
  };
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.input_channels = j.at("input_channels").get<int>();
  c.backbone_width = j.at("backbone_width").get<int>();
  c.feature_channels = j.at("feature_channels").get<int>();
  c.head_hidden = j.at("head_hidden").get<int>();
  c.segmentation_hidden = j.at("segmentation_hidden").get<int>();
  const json& a = j.at("anchors");
  c.anchors.aspect_ratios = a.at("aspect_ratios").get<std::vector<double>>();
  c.anchors.scales = a.at("scales").get<std::vector<double>>();
  c.anchors.stride = a.at("stride").get<int>();
  const json& r = j.at("rpn_targets");
  c.rpn_targets = {r.at("positive_iou").get<double>(), r.at("negative_iou").get<double>(),
                   r.at("batch_size").get<int>(), r.at("positive_fraction").get<double>()};
  c.train_proposals = proposal_from(j.at("train_proposals"));
  c.test_proposals = proposal_from(j.at("test_proposals"));
  const json& s = j.at("sampler");
  c.sampler = {s.at("batch_size").get<int>(), s.at("foreground_fraction").get<double>(),
               s.at("foreground_iou").get<double>(), s.at("append_ground_truth").get<bool>()};
  c.head_delta_weights = j.at("head_delta_weights").get<DeltaWeights>();
  c.gate_factor = j.at("gate_factor").get<double>();
  c.validate();
  return c;
}

std::string group_hash(const Model& model, ParamGroup group) {
  return sha256_hex(group_values(model, group));
}

std::map<ParamGroup, std::string> group_hashes(const Model& model) {
  std::map<ParamGroup, std::string> out;
  for (ParamGroup g : kAllParamGroups) out[g] = group_hash(model, g);
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const CheckpointMeta& meta) {
  json groups = json::object();
  std::vector<double> payload;
  for (ParamGroup g : kAllParamGroups) {
    if (!group_present(model, g)) continue;
    json params = json::array();
    model.for_each_param_in(g, [&](const Param& p) {
      params.push_back({{"name", p.name}, {"size", p.size()}});
    });
    const std::vector<double> values = group_values(model, g);
    groups[to_string(g)] = {{"params", params}, {"sha256", sha256_hex(values)}};
    payload.insert(payload.end(), values.begin(), values.end());
  }
  const json header{
      {"format", kCheckpointMagic},
      {"model", to_json(model.config)},
      {"meta",
       {{"phase", meta.phase},
        {"seed", meta.seed},
        {"rng_seeds", meta.rng_seeds},
        {"config", meta.config}}},
      {"groups", groups},
  };
  const std::string text = header.dump();
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint " + path.string());
    out << kCheckpointMagic << '\n' << text.size() << '\n' << text;
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size() * sizeof(double)));
    if (!out) throw DataError("write failed for checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::string magic;
  std::getline(in, magic);
  if (magic != kCheckpointMagic) {
    throw DataError(path.string() + ": not an " + std::string(kCheckpointMagic) + " checkpoint");
  }
  std::string len_line;
  std::getline(in, len_line);
  std::size_t len = 0;
  try {
    len = std::stoull(len_line);
  } catch (const std::exception&) {
    throw DataError(path.string() + ": bad header length");
  }
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw DataError(path.string() + ": truncated header");

  LoadedCheckpoint out;
  json header;
  try {
    header = json::parse(text);
    const json& m = header.at("meta");
    out.meta.phase = m.at("phase").get<std::string>();
    out.meta.seed = m.at("seed").get<std::uint64_t>();
    out.meta.rng_seeds = m.at("rng_seeds").get<std::map<std::string, std::uint64_t>>();
    out.meta.config = m.at("config");
    const json& groups = header.at("groups");
    for (ParamGroup g : kAllParamGroups) {
      if (groups.contains(to_string(g))) out.groups.insert(g);
    }
    out.model = Model::create(model_config_from_json(header.at("model")), 0,
                              out.groups.count(ParamGroup::kGenerator) > 0);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": malformed header: " + e.what());
  } catch (const InvalidArgument& e) {
    throw DataError(path.string() + ": bad model config: " + e.what());
  }

  const json& groups = header.at("groups");
  for (ParamGroup g : kAllParamGroups) {
    if (!out.groups.count(g)) {
      out.model.for_each_param_in(g, [](Param& p) {
        p.value.clear();
        p.grad.clear();
        p.velocity.clear();
      });
      continue;
    }
    const json& params = groups.at(to_string(g)).at("params");
    std::size_t index = 0;
    out.model.for_each_param_in(g, [&](Param& p) {
      if (index >= params.size() || params[index].at("name").get<std::string>() != p.name ||
          params[index].at("size").get<std::size_t>() != p.size()) {
        throw DataError(path.string() + ": parameter layout mismatch at " + p.name);
      }
      ++index;
      in.read(reinterpret_cast<char*>(p.value.data()),
              static_cast<std::streamsize>(p.size() * sizeof(double)));
      if (!in) throw DataError(path.string() + ": truncated parameter data at " + p.name);
    });
    if (index != params.size()) throw DataError(path.string() + ": unexpected parameters");
    if (group_hash(out.model, g) != groups.at(to_string(g)).at("sha256").get<std::string>()) {
      throw DataError(path.string() + ": checksum mismatch in group " + to_string(g));
    }
  }
  return out;
}

}  // namespace aofd
