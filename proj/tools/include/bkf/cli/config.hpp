#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include "bkf/nets.hpp"
#include "bkf/training.hpp"
#include "bkf/world.hpp"

namespace bkf::cli {

/// Per-stage overrides from keys of the form train.<stage>.<field>.
struct StageOverrides {
  std::optional<double> lr;
  std::optional<std::size_t> epochs;
};

/// Plain-text `key = value` experiment description. Lines starting with '#'
/// are comments. Relative paths are resolved against the config's directory.
struct ExperimentConfig {
  nets::TaskKind task = nets::TaskKind::Tracking;
  nets::ModelKind model = nets::ModelKind::BKF;
  std::string encoder = "desk";  ///< preset: desk, full or tiny
  std::string encoder_layers;    ///< layer grammar replacing the preset trunk
  std::size_t lstm_units = 32;
  bool lstm_peepholes = false;
  std::uint64_t seed = 0;
  std::size_t count = 100;
  world::DiskWorldConfig disk;
  world::EgoWorldConfig ego;
  train::TrainConfig train;
  std::map<train::Stage, StageOverrides> stage_overrides;
  std::optional<std::filesystem::path> data;
  std::optional<std::filesystem::path> init_checkpoint;

  nets::ModelSpec model_spec() const;
  /// Stage settings with per-stage overrides applied.
  train::TrainConfig train_config(train::Stage stage) const;
};

/// Throws ConfigError naming the offending key (or line) on unknown keys,
/// malformed values and duplicates.
ExperimentConfig parse_config(std::string_view text, const std::filesystem::path& base_dir = {});
/// Throws IoError when the file cannot be read.
ExperimentConfig load_config(const std::filesystem::path& path);

}  // namespace bkf::cli
