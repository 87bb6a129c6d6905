#pragma once

#include <string>

#include "disam/losses.hpp"
#include "disam/network.hpp"
#include "disam/trainer.hpp"

namespace disam {
namespace config {

// Everything a run needs, merged from defaults < config file < flags.
struct RunConfig {
  net::NetworkConfig network;
  losses::LossWeights weights;
  trainer::TrainSchedule schedule;
};

// Applies one `key=value` assignment; throws InvalidConfig on unknown keys
// or unparsable values.
void apply_key(RunConfig& rc, const std::string& key, const std::string& value);

// Flat key=value file, one per line, '#' comments.
RunConfig load_config_file(const std::string& path, RunConfig base = {});

// The effective configuration in the same key=value syntax the loader
// accepts.
std::string dump(const RunConfig& rc);

}  // namespace config
}  // namespace disam
