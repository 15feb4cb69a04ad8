#include "bkf/cli/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

#include "bkf/error.hpp"

namespace bkf::cli {
namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, std::string_view value, const char* expected) {
  throw ConfigError("config key '" + key + "': invalid value '" + std::string(value) + "' (expected " + expected + ")");
}

double to_double(const std::string& key, std::string_view v) {
  double out = 0.0;
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size()) bad_value(key, v, "a number");
  return out;
}

std::uint64_t to_u64(const std::string& key, std::string_view v) {
  std::uint64_t out = 0;
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size()) bad_value(key, v, "a non-negative integer");
  return out;
}

std::size_t to_size(const std::string& key, std::string_view v) { return static_cast<std::size_t>(to_u64(key, v)); }

bool to_bool(const std::string& key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  bad_value(key, v, "true or false");
}

using Setter = std::function<void(ExperimentConfig&, const std::string& key, std::string_view value,
                                  const std::filesystem::path& base)>;

std::filesystem::path resolve(const std::filesystem::path& base, std::string_view v) {
  const std::filesystem::path p{std::string(v)};
  return p.is_absolute() || base.empty() ? p : base / p;
}

// Keys in application order; world.image_size comes first so the radius
// defaults scale with it before explicit radii override them.
const std::vector<std::pair<std::string, Setter>>& setters() {
  static const std::vector<std::pair<std::string, Setter>> table = [] {
    std::vector<std::pair<std::string, Setter>> s;
    auto add = [&s](std::string key, Setter fn) { s.emplace_back(std::move(key), std::move(fn)); };
    using P = const std::filesystem::path&;
    using V = std::string_view;
    using K = const std::string&;
    add("world.image_size", [](ExperimentConfig& c, K k, V v, P) {
      const world::DiskWorldConfig sized = world::DiskWorldConfig::for_size(to_size(k, v));
      c.disk.image_size = sized.image_size;
      c.disk.target_radius = sized.target_radius;
      c.disk.distractor_radius_min = sized.distractor_radius_min;
      c.disk.distractor_radius_max = sized.distractor_radius_max;
    });
    add("task", [](ExperimentConfig& c, K, V v, P) { c.task = nets::parse_task_kind(v); });
    add("model", [](ExperimentConfig& c, K, V v, P) { c.model = nets::parse_model_kind(v); });
    add("encoder", [](ExperimentConfig& c, K k, V v, P) {
      if (v != "desk" && v != "full" && v != "tiny") bad_value(k, v, "desk, full or tiny");
      c.encoder = std::string(v);
    });
    add("encoder.layers", [](ExperimentConfig& c, K, V v, P) {
      nets::parse_layers(v);
      c.encoder_layers = std::string(v);
    });
    add("lstm.units", [](ExperimentConfig& c, K k, V v, P) { c.lstm_units = to_size(k, v); });
    add("lstm.peepholes", [](ExperimentConfig& c, K k, V v, P) { c.lstm_peepholes = to_bool(k, v); });
    add("seed", [](ExperimentConfig& c, K k, V v, P) { c.seed = to_u64(k, v); });
    add("count", [](ExperimentConfig& c, K k, V v, P) { c.count = to_size(k, v); });
    add("data", [](ExperimentConfig& c, K, V v, P base) { c.data = resolve(base, v); });
    add("checkpoint", [](ExperimentConfig& c, K, V v, P base) { c.init_checkpoint = resolve(base, v); });

    add("world.num_distractors", [](ExperimentConfig& c, K k, V v, P) { c.disk.num_distractors = to_size(k, v); });
    add("world.max_distractors", [](ExperimentConfig& c, K k, V v, P) { c.disk.max_distractors = to_size(k, v); });
    add("world.T", [](ExperimentConfig& c, K k, V v, P) { c.disk.T = to_size(k, v); });
    add("world.spring_k", [](ExperimentConfig& c, K k, V v, P) { c.disk.spring_k = to_double(k, v); });
    add("world.drag_c", [](ExperimentConfig& c, K k, V v, P) { c.disk.drag_c = to_double(k, v); });
    add("world.dt", [](ExperimentConfig& c, K k, V v, P) { c.disk.dt = to_double(k, v); });
    add("world.process_noise_std", [](ExperimentConfig& c, K k, V v, P) { c.disk.process_noise_std = to_double(k, v); });
    add("world.target_radius", [](ExperimentConfig& c, K k, V v, P) { c.disk.target_radius = to_double(k, v); });
    add("world.distractor_radius_min",
        [](ExperimentConfig& c, K k, V v, P) { c.disk.distractor_radius_min = to_double(k, v); });
    add("world.distractor_radius_max",
        [](ExperimentConfig& c, K k, V v, P) { c.disk.distractor_radius_max = to_double(k, v); });

    add("ego.image_size", [](ExperimentConfig& c, K k, V v, P) { c.ego.image_size = to_size(k, v); });
    add("ego.T", [](ExperimentConfig& c, K k, V v, P) { c.ego.T = to_size(k, v); });
    add("ego.dt", [](ExperimentConfig& c, K k, V v, P) { c.ego.dt = to_double(k, v); });
    add("ego.view_size", [](ExperimentConfig& c, K k, V v, P) { c.ego.view_size = to_double(k, v); });
    add("ego.speed_mean", [](ExperimentConfig& c, K k, V v, P) { c.ego.speed_mean = to_double(k, v); });
    add("ego.speed_std", [](ExperimentConfig& c, K k, V v, P) { c.ego.speed_std = to_double(k, v); });
    add("ego.turn_std", [](ExperimentConfig& c, K k, V v, P) { c.ego.turn_std = to_double(k, v); });
    add("ego.correlation", [](ExperimentConfig& c, K k, V v, P) { c.ego.correlation = to_double(k, v); });
    add("ego.dot_density", [](ExperimentConfig& c, K k, V v, P) { c.ego.dot_density = to_double(k, v); });
    add("ego.dot_radius", [](ExperimentConfig& c, K k, V v, P) { c.ego.dot_radius = to_double(k, v); });
    add("ego.cell_size", [](ExperimentConfig& c, K k, V v, P) { c.ego.cell_size = to_double(k, v); });
    add("ego.blackout_prob", [](ExperimentConfig& c, K k, V v, P) { c.ego.blackout_prob = to_double(k, v); });

    add("train.epochs", [](ExperimentConfig& c, K k, V v, P) { c.train.epochs = to_size(k, v); });
    add("train.lr", [](ExperimentConfig& c, K k, V v, P) { c.train.lr = to_double(k, v); });
    add("train.batch_size", [](ExperimentConfig& c, K k, V v, P) { c.train.batch_size = to_size(k, v); });
    add("train.clip_norm", [](ExperimentConfig& c, K k, V v, P) { c.train.clip_norm = to_double(k, v); });
    add("train.validation_fraction",
        [](ExperimentConfig& c, K k, V v, P) { c.train.validation_fraction = to_double(k, v); });
    add("train.threads", [](ExperimentConfig& c, K k, V v, P) { c.train.threads = to_size(k, v); });
    for (train::Stage stage : {train::Stage::PretrainFF, train::Stage::FitPiecewiseR, train::Stage::PretrainMlCov,
                               train::Stage::FinetuneE2E, train::Stage::LstmPretrainRecurrent}) {
      const std::string prefix = "train." + std::string(train::to_string(stage));
      add(prefix + ".lr", [stage](ExperimentConfig& c, K k, V v, P) { c.stage_overrides[stage].lr = to_double(k, v); });
      add(prefix + ".epochs",
          [stage](ExperimentConfig& c, K k, V v, P) { c.stage_overrides[stage].epochs = to_size(k, v); });
    }
    return s;
  }();
  return table;
}

}  // namespace

ExperimentConfig parse_config(std::string_view text, const std::filesystem::path& base_dir) {
  std::map<std::string, std::string> values;
  std::istringstream in{std::string(text)};
  std::string raw;
  for (std::size_t line_no = 1; std::getline(in, raw); ++line_no) {
    const std::string_view line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key(trim(line.substr(0, eq)));
    const std::string_view value = trim(line.substr(eq + 1));
    const auto& table = setters();
    if (std::none_of(table.begin(), table.end(), [&](const auto& e) { return e.first == key; })) {
      throw ConfigError("unknown config key '" + key + "' (line " + std::to_string(line_no) + ")");
    }
    if (!values.emplace(key, std::string(value)).second) {
      throw ConfigError("config key '" + key + "' given twice (line " + std::to_string(line_no) + ")");
    }
  }
  ExperimentConfig c;
  for (const auto& [key, fn] : setters()) {
    const auto it = values.find(key);
    if (it == values.end()) continue;
    try {
      fn(c, key, it->second, base_dir);
    } catch (const ConfigError& e) {
      const std::string what = e.what();
      if (what.find("'" + key + "'") != std::string::npos) throw;
      throw ConfigError("config key '" + key + "': " + what);
    } catch (const ShapeError& e) {
      throw ConfigError("config key '" + key + "': " + e.what());
    }
  }
  c.disk.seed = c.seed;
  c.ego.seed = c.seed;
  c.train.seed = c.seed;
  if (c.count == 0) throw ConfigError("config key 'count': must be at least 1");
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path.parent_path());
}

nets::ModelSpec ExperimentConfig::model_spec() const {
  nets::ModelSpec spec;
  spec.kind = model;
  spec.lstm_units = lstm_units;
  spec.lstm_peepholes = lstm_peepholes;
  std::size_t size = 0;
  if (task == nets::TaskKind::Tracking) {
    spec.filter = world::tracking_filter_spec(disk);
    size = disk.image_size;
    if (encoder == "full") spec.encoder = nets::tracking_encoder_full();
    else if (encoder == "tiny") spec.encoder = nets::tracking_encoder_tiny();
    else spec.encoder = nets::tracking_encoder_desk();
  } else {
    if (encoder != "desk") throw ConfigError("config key 'encoder': the ego task only has the desk preset");
    spec.filter = world::ego_filter_spec(ego);
    size = ego.image_size;
    spec.encoder = nets::ego_encoder_desk();
  }
  if (!encoder_layers.empty()) {
    spec.encoder.trunk = nets::parse_layers(encoder_layers);
    spec.encoder.height = spec.encoder.width = size;
  }
  if (spec.encoder.height != size || spec.encoder.width != size) {
    throw ConfigError("encoder '" + encoder + "' expects " + std::to_string(spec.encoder.height) + "x" +
                      std::to_string(spec.encoder.width) + " frames but the world renders " + std::to_string(size) +
                      "x" + std::to_string(size));
  }
  try {
    nets::check_shapes(spec.encoder);
  } catch (const ShapeError& e) {
    throw ConfigError(e.what());
  }
  return spec;
}

train::TrainConfig ExperimentConfig::train_config(train::Stage stage) const {
  train::TrainConfig c = train;
  c.stage = stage;
  const auto it = stage_overrides.find(stage);
  if (it != stage_overrides.end()) {
    if (it->second.lr) c.lr = *it->second.lr;
    if (it->second.epochs) c.epochs = *it->second.epochs;
  }
  return c;
}

}  // namespace bkf::cli
