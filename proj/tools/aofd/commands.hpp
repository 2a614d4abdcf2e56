#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace aofd::tool {

// Exit codes of the tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitInternal = 3;

// Runs `aofd <args...>`; args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// <dir>/manifest.json holds {"runs": [...]}; each invocation appends one run.
void append_manifest(const std::filesystem::path& dir, const nlohmann::json& run);
nlohmann::json read_manifest(const std::filesystem::path& dir);

}  // namespace aofd::tool
