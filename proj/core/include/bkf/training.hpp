#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bkf/error.hpp"
#include "bkf/graph.hpp"
#include "bkf/nets.hpp"
#include "bkf/params.hpp"
#include "bkf/world.hpp"

namespace bkf::train {

// --- losses ----------------------------------------------------------------

/// (1/2TN) Σ_i Σ_t ‖outputs_i[t] − labels_i[t]‖² over N sequences of T×p.
NodeId mse_sequence_loss(Tape& t, std::span<const NodeId> outputs, std::span<const Tensor> labels);

/// Mean over the T rows of ½·rᵀ(L·Lᵀ)⁻¹r + Σ log diag(L) + (d/2)·log 2π, with
/// r = z_target − z_pred and L = lower_triangular_expdiag(l_hat row).
NodeId gaussian_nll_loss(Tape& t, NodeId z_pred, NodeId l_hat, const Tensor& z_target);

// --- optimizer -------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::size_t step = 0;
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
};

using Gradients = std::map<std::string, Tensor>;

/// Bias-corrected Adam update of every parameter named in `grads`. Throws
/// NumericError naming the parameter if a gradient is not finite; `params`
/// is left untouched in that case.
void adam_step(ParamStore& params, const Gradients& grads, AdamState& state);

double global_norm(const Gradients& grads);
/// Rescales all gradients so their global norm is at most max_norm.
/// Returns the norm before clipping.
double clip_global_norm(Gradients& grads, double max_norm);

// --- checkpoints -----------------------------------------------------------

enum class Stage { PretrainFF, FitPiecewiseR, PretrainMlCov, FinetuneE2E, LstmPretrainRecurrent };

std::string_view to_string(Stage stage);
Stage parse_stage(std::string_view text);

struct Checkpoint {
  nets::ModelSpec spec;
  ParamStore params;
  std::vector<Stage> completed;

  bool has_completed(Stage stage) const;
};

/// Fresh model of `spec` with seeded weights.
Checkpoint initial_checkpoint(const nets::ModelSpec& spec, std::uint64_t seed);
/// Model of another kind sharing the encoder and filter of `from`: newly
/// initialized, then every tensor with matching name and shape is copied.
/// Completed stages carry over.
Checkpoint derive_checkpoint(const Checkpoint& from, nets::ModelKind kind, std::uint64_t seed,
                             std::size_t lstm_units = 32);

/// Weights as a TensorPack at `path`; model spec and completed stages as JSON
/// at `path` + ".json".
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string spec_to_json(const nets::ModelSpec& spec);
nets::ModelSpec spec_from_json(const std::string& text);

// --- training --------------------------------------------------------------

class PrerequisiteError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

struct TrainConfig {
  Stage stage = Stage::PretrainFF;
  double lr = 0.0;  ///< 0 selects the stage default (1e-3, finetuning 1e-4)
  std::size_t epochs = 20;
  std::size_t batch_size = 4;
  std::uint64_t seed = 0;
  double clip_norm = 0.0;             ///< global-norm clip, 0 disables
  double validation_fraction = 0.1;   ///< held out for checkpoint selection
  std::size_t threads = 0;            ///< 0 uses thread_count()
};

double default_learning_rate(Stage stage);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double validation_loss = 0.0;  ///< NaN without a validation split
};

struct StageResult {
  Checkpoint checkpoint;  ///< weights of the best validation epoch
  std::vector<EpochRecord> curve;
  std::size_t best_epoch = 0;
  double final_loss = 0.0;  ///< training loss of the last epoch
};

/// Non-finite loss or gradient. Carries the weights before the failing step.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, Checkpoint last_good)
      : Error(what), last_good_(std::move(last_good)) {}
  const Checkpoint& last_good() const noexcept { return last_good_; }

 private:
  Checkpoint last_good_;
};

/// Names the stage updates; everything else stays bit-identical.
bool stage_trains(Stage stage, const std::string& param_name);

/// Throws PrerequisiteError when `ckpt` cannot run `stage`.
void check_prerequisites(const Checkpoint& ckpt, Stage stage);
/// Throws ShapeError naming the mismatching dimensions.
void check_compatible(const nets::ModelSpec& spec, const world::SequenceDataset& data);

/// Loss of one sequence under the stage objective, evaluated without dropout.
double stage_loss(const Checkpoint& ckpt, Stage stage, const world::Sequence& seq);

StageResult run_stage(const Checkpoint& start, const world::SequenceDataset& data, const TrainConfig& config);

// --- evaluation ------------------------------------------------------------

struct EvalReport {
  double rms = 0.0;      ///< sqrt of the mean of ‖ŷ_t − y_t‖² over all frames
  double rms_std = 0.0;  ///< std of per-sequence RMS across sequences
  std::vector<double> per_sequence;
  std::size_t parameter_count = 0;
  nets::ModelKind kind = nets::ModelKind::BKF;
  std::string difficulty;
  std::size_t sequences = 0;
};

/// Per-frame label predictions (T×p) of the model, no dropout.
Tensor predict(const Checkpoint& ckpt, const world::Sequence& seq);

EvalReport evaluate(const Checkpoint& ckpt, const world::SequenceDataset& data, std::size_t threads = 0);
std::string difficulty_of(const world::SequenceDataset& data);

struct SweepRow {
  std::string model;
  std::size_t level = 0;
  EvalReport report;
};

/// One test set per distractor level (`base` with num_distractors = level),
/// every model evaluated on each.
std::vector<SweepRow> clutter_sweep(const std::vector<std::pair<std::string, Checkpoint>>& models,
                                    const std::vector<std::size_t>& levels, const world::DiskWorldConfig& base,
                                    std::size_t count, std::size_t threads = 0);

}  // namespace bkf::train
