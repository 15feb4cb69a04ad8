#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace bkf::cli {

enum ExitCode : int { kExitOk = 0, kExitConfig = 1, kExitIo = 2, kExitDivergence = 3, kExitGradcheck = 4 };

struct GenDataOptions {
  std::filesystem::path config;
  std::filesystem::path out;
  std::optional<std::size_t> count;
  std::optional<std::uint64_t> seed;
};

struct TrainOptions {
  std::filesystem::path config;
  std::string stage;
  std::optional<std::string> model;  ///< overrides the config's model kind
  std::optional<std::filesystem::path> data;
  std::optional<std::filesystem::path> init;
  std::filesystem::path out;
  std::optional<std::filesystem::path> loss_csv;  ///< defaults to <out>.loss.csv
  std::optional<std::size_t> epochs;
  std::optional<double> lr;
};

struct EvalOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path data;
  std::filesystem::path out_csv;
  std::string name;  ///< defaults to the checkpoint's file stem
};

struct SweepOptions {
  std::filesystem::path config;
  std::vector<std::string> models;  ///< NAME=CHECKPOINT
  std::string levels = "0,9,99";
  std::filesystem::path out_csv;
  std::optional<std::size_t> count;
};

struct GradcheckOptions {
  std::string scale = "tiny";
  std::string inject_fault;  ///< op whose adjoint is corrupted, for testing the suite itself
};

/// Dataset plus a JSON manifest at <out>.json.
int cmd_gen_data(const GenDataOptions& opt, std::ostream& out);
/// Checkpoint (with JSON sidecar) and loss-curve CSV; prints the final loss.
int cmd_train(const TrainOptions& opt, std::ostream& out);
/// Appends one metrics row and prints the rms.
int cmd_eval(const EvalOptions& opt, std::ostream& out);
/// Rewrites the CSV with one row per (model, level).
int cmd_sweep(const SweepOptions& opt, std::ostream& out);
int cmd_gradcheck(const GradcheckOptions& opt, std::ostream& out, std::ostream& err);

/// Runs `body`, mapping toolkit exceptions to exit codes with the message on `err`.
int run_guarded(const std::function<int()>& body, std::ostream& err);

std::vector<std::size_t> parse_levels(const std::string& text);

}  // namespace bkf::cli
