#include "bkf/cli/commands.hpp"

#include <chrono>
#include <cstdio>
#include <nlohmann/json.hpp>
#include <sstream>

#include "bkf/cli/config.hpp"
#include "bkf/cli/file_lock.hpp"
#include "bkf/cli/gradcheck_suite.hpp"
#include "bkf/cli/metrics_csv.hpp"
#include "bkf/error.hpp"
#include "bkf/graph.hpp"
#include "bkf/pack.hpp"
#include "bkf/parallel.hpp"
#include "bkf/training.hpp"
#include "bkf/world.hpp"

namespace bkf::cli {
namespace {

std::string fmt(const char* format, double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, value);
  return buf;
}

std::filesystem::path with_suffix(const std::filesystem::path& p, const std::string& suffix) {
  return std::filesystem::path(p.string() + suffix);
}

nlohmann::json disk_json(const world::DiskWorldConfig& c) {
  return {{"image_size", c.image_size},
          {"num_distractors", c.num_distractors},
          {"max_distractors", c.max_distractors},
          {"T", c.T},
          {"spring_k", c.spring_k},
          {"drag_c", c.drag_c},
          {"dt", c.dt},
          {"process_noise_std", c.process_noise_std},
          {"target_radius", c.target_radius},
          {"distractor_radius_min", c.distractor_radius_min},
          {"distractor_radius_max", c.distractor_radius_max}};
}

nlohmann::json ego_json(const world::EgoWorldConfig& c) {
  return {{"image_size", c.image_size},   {"T", c.T},
          {"dt", c.dt},                   {"view_size", c.view_size},
          {"speed_mean", c.speed_mean},   {"speed_std", c.speed_std},
          {"turn_std", c.turn_std},       {"correlation", c.correlation},
          {"dot_density", c.dot_density}, {"dot_radius", c.dot_radius},
          {"cell_size", c.cell_size},     {"blackout_prob", c.blackout_prob}};
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  tensorpack::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace

std::vector<std::size_t> parse_levels(const std::string& text) {
  std::vector<std::size_t> levels;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      if (item.empty() || item[0] == '-') throw std::invalid_argument(item);
      v = std::stoull(item, &used);
    } catch (const std::exception&) {
      throw ConfigError("invalid distractor level '" + item + "' in --levels");
    }
    if (used != item.size()) throw ConfigError("invalid distractor level '" + item + "' in --levels");
    levels.push_back(static_cast<std::size_t>(v));
  }
  if (levels.empty()) throw ConfigError("--levels needs at least one distractor level");
  return levels;
}

int cmd_gen_data(const GenDataOptions& opt, std::ostream& out) {
  ExperimentConfig cfg = load_config(opt.config);
  if (opt.seed) {
    cfg.seed = *opt.seed;
    cfg.disk.seed = cfg.ego.seed = *opt.seed;
  }
  const std::size_t count = opt.count.value_or(cfg.count);
  if (count == 0) throw ConfigError("count must be positive");

  OutputLock lock(opt.out);
  nlohmann::json manifest;
  world::SequenceDataset ds;
  if (cfg.task == nets::TaskKind::Tracking) {
    ds = world::generate_tracking_dataset(cfg.disk, count, thread_count());
    manifest["world"] = disk_json(cfg.disk);
  } else {
    ds = world::generate_ego_dataset(cfg.ego, count, thread_count());
    manifest["world"] = ego_json(cfg.ego);
  }
  world::save_dataset(ds, opt.out);

  manifest["task"] = std::string(nets::to_string(cfg.task));
  manifest["seed"] = cfg.seed;
  manifest["count"] = count;
  manifest["difficulty"] = train::difficulty_of(ds);
  manifest["file"] = opt.out.filename().string();
  manifest["format"] = {{"magic", "BKFT"}, {"version", tensorpack::kVersion}};
  write_text(with_suffix(opt.out, ".json"), manifest.dump(2) + "\n");

  out << "wrote " << count << " " << nets::to_string(cfg.task) << " sequences to " << opt.out.string() << "\n";
  return kExitOk;
}

int cmd_train(const TrainOptions& opt, std::ostream& out) {
  ExperimentConfig cfg = load_config(opt.config);
  if (opt.model) cfg.model = nets::parse_model_kind(*opt.model);
  const train::Stage stage = train::parse_stage(opt.stage);

  const auto data_path = opt.data ? opt.data : cfg.data;
  if (!data_path) throw ConfigError("no training data: pass --data or set 'data' in the config");
  const world::SequenceDataset data = world::load_dataset(*data_path);

  const auto init_path = opt.init ? opt.init : cfg.init_checkpoint;
  train::Checkpoint start;
  if (init_path) {
    start = train::load_checkpoint(*init_path);
    if (start.spec.kind != cfg.model) start = train::derive_checkpoint(start, cfg.model, cfg.seed, cfg.lstm_units);
  } else {
    start = train::initial_checkpoint(cfg.model_spec(), cfg.seed);
  }

  train::TrainConfig tc = cfg.train_config(stage);
  if (opt.epochs) tc.epochs = *opt.epochs;
  if (opt.lr) {
    if (!(*opt.lr > 0.0)) throw ConfigError("--lr must be positive");
    tc.lr = *opt.lr;
  }

  OutputLock lock(opt.out);
  train::StageResult result;
  try {
    result = train::run_stage(start, data, tc);
  } catch (const train::DivergenceError& e) {
    const auto saved = with_suffix(opt.out, ".last_good");
    train::save_checkpoint(e.last_good(), saved);
    throw train::DivergenceError(std::string(e.what()) + " (last good weights in " + saved.string() + ")",
                                 e.last_good());
  }
  train::save_checkpoint(result.checkpoint, opt.out);
  write_loss_curve(opt.loss_csv.value_or(with_suffix(opt.out, ".loss.csv")), result.curve);

  out << "stage " << train::to_string(stage) << ": " << result.curve.size() << " epochs, best epoch "
      << result.best_epoch << "\n";
  out << "final loss " << fmt("%.6g", result.final_loss) << "\n";
  return kExitOk;
}

int cmd_eval(const EvalOptions& opt, std::ostream& out) {
  const train::Checkpoint ckpt = train::load_checkpoint(opt.checkpoint);
  const world::SequenceDataset data = world::load_dataset(opt.data);
  const train::EvalReport report = train::evaluate(ckpt, data);
  const std::string name = opt.name.empty() ? opt.checkpoint.stem().string() : opt.name;

  OutputLock lock(opt.out_csv);
  append_metrics(opt.out_csv, metrics_row(name, report, data.seed));
  out << name << " (" << nets::to_string(report.kind) << ", " << report.parameter_count << " params) on "
      << report.sequences << " " << report.difficulty << " sequences\n";
  out << "rms=" << fmt("%.17g", report.rms) << " rms_std=" << fmt("%.17g", report.rms_std) << "\n";
  return kExitOk;
}

int cmd_sweep(const SweepOptions& opt, std::ostream& out) {
  const ExperimentConfig cfg = load_config(opt.config);
  if (cfg.task != nets::TaskKind::Tracking) throw ConfigError("sweep needs task = tracking");
  const std::vector<std::size_t> levels = parse_levels(opt.levels);
  if (opt.models.empty()) throw ConfigError("sweep needs at least one --model NAME=CHECKPOINT");

  std::vector<std::pair<std::string, train::Checkpoint>> models;
  for (const std::string& m : opt.models) {
    const auto eq = m.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == m.size())
      throw ConfigError("--model expects NAME=CHECKPOINT, got '" + m + "'");
    const std::string name = m.substr(0, eq);
    const std::filesystem::path path = m.substr(eq + 1);
    if (!std::filesystem::exists(path))
      throw ConfigError("model '" + name + "': checkpoint '" + path.string() + "' not found");
    models.emplace_back(name, train::load_checkpoint(path));
  }

  const std::size_t count = opt.count.value_or(cfg.count);
  OutputLock lock(opt.out_csv);
  const auto rows = train::clutter_sweep(models, levels, cfg.disk, count);
  std::vector<MetricsRow> csv;
  for (const auto& r : rows) {
    csv.push_back(metrics_row(r.model, r.report, cfg.disk.seed));
    out << r.model << " level " << r.level << ": rms=" << fmt("%.6g", r.report.rms) << "\n";
  }
  write_metrics(opt.out_csv, csv);
  return kExitOk;
}

int cmd_gradcheck(const GradcheckOptions& opt, std::ostream& out, std::ostream& err) {
  const SuiteScale scale = parse_scale(opt.scale);
  struct FaultGuard {
    ~FaultGuard() { debug::clear_adjoint_fault(); }
  } guard;
  if (!opt.inject_fault.empty()) debug::inject_adjoint_fault(opt.inject_fault);

  const auto t0 = std::chrono::steady_clock::now();
  const SuiteReport report = run_gradcheck_suite(scale);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  for (const std::string& g : report.groups()) {
    const CheckOutcome w = report.worst(g);
    out << g << ": worst " << fmt("%.3g", w.error) << " (threshold " << fmt("%.0e", w.threshold) << ") at "
        << w.location << "\n";
  }
  out << report.checks.size() << " checks in " << fmt("%.1f", seconds) << " s\n";
  if (report.passed()) {
    if (!opt.inject_fault.empty())
      throw ConfigError("--inject-fault: no check exercises op '" + opt.inject_fault + "'");
    return kExitOk;
  }
  for (const CheckOutcome& f : report.failures())
    err << "gradcheck failed: " << f.group << " " << f.location << " error " << fmt("%.3g", f.error)
        << " >= " << fmt("%.0e", f.threshold) << "\n";
  return kExitGradcheck;
}

int run_guarded(const std::function<int()>& body, std::ostream& err) {
  try {
    return body();
  } catch (const train::DivergenceError& e) {
    err << "bkf: diverged: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const NumericError& e) {
    err << "bkf: numeric error: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const NotPositiveDefinite& e) {
    err << "bkf: numeric error: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const IoError& e) {
    err << "bkf: io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const FormatError& e) {
    err << "bkf: format error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    err << "bkf: error: " << e.what() << "\n";
    return kExitConfig;
  }
}

}  // namespace bkf::cli
