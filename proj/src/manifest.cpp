#include "oen/manifest.hpp"

#include "oen/fileio.hpp"

namespace oen {

void write_manifest(const std::string& path, const ManifestInfo& info) {
    nlohmann::json j{{"command", info.command},
                     {"version", kVersion},
                     {"config", info.config_snapshot},
                     {"inputs", info.inputs},
                     {"outputs", info.outputs},
                     {"seed", info.seed},
                     {"wall_ms", info.wall_ms}};
    if (!info.extra.is_null()) j["extra"] = info.extra;
    atomic_write_file(path, j.dump(2) + "\n");
}

}  // namespace oen
