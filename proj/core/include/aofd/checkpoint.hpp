#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "aofd/detector.hpp"

namespace aofd {

inline constexpr const char* kCheckpointMagic = "AOFD-CKPT-1";

struct CheckpointMeta {
  std::string phase;
  std::uint64_t seed = 0;
  std::map<std::string, std::uint64_t> rng_seeds;
  nlohmann::json config = nlohmann::json::object();  // training config snapshot
};

// File layout: the magic line, a decimal header length line, a JSON header
// (model config, metadata, per-group parameter names, sizes and SHA-256),
// then every parameter value as raw little-endian doubles in header order.
// Groups without parameters (e.g. no generator) are omitted.
void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const CheckpointMeta& meta);

struct LoadedCheckpoint {
  Model model;
  CheckpointMeta meta;
  std::set<ParamGroup> groups;  // groups present in the file
};

// Groups absent from the file are left empty (zero-size parameters; the
// generator becomes std::nullopt). Throws DataError on a bad magic string,
// truncated data, or a hash mismatch.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

// SHA-256 over the concatenated parameter values of one group.
std::string group_hash(const Model& model, ParamGroup group);
std::map<ParamGroup, std::string> group_hashes(const Model& model);

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace aofd
