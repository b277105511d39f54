#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace oen {

inline constexpr const char* kVersion = "0.1.0";

// Reproducibility record written next to every command's outputs. The
// wall_ms field is the only part that varies between identical runs;
// byte-level determinism checks compare everything except the manifest.
struct ManifestInfo {
    std::string command;
    nlohmann::json config_snapshot;
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
    std::uint64_t seed = 0;
    double wall_ms = 0.0;
    nlohmann::json extra;
};

void write_manifest(const std::string& path, const ManifestInfo& info);

}  // namespace oen
