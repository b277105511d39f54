#pragma once

#include <stdexcept>
#include <string>

#include <json.hpp>

#include "oen/net.hpp"
#include "oen/synth.hpp"
#include "oen/trainer.hpp"

namespace oen {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// One run's full specification: dataset generation, architecture and
// training. Parsed from a JSON file with sections "gen", "arch" and "train"
// ("train.ortho", "train.optimizer", "train.lr_schedule" nested). A
// "gen.profile" of binary_imbalanced or multiclass seeds the section's
// defaults; unknown fields are rejected.
struct RunConfig {
    GenParams gen;
    ArchConfig arch;
    TrainConfig train;
};

RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json run_config_to_json(const RunConfig& cfg);
RunConfig load_run_config(const std::string& path);

}  // namespace oen
