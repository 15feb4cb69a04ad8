#include "bkf/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "bkf/parallel.hpp"

namespace bkf::train {
namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

std::size_t resolve_threads(std::size_t threads) { return threads ? threads : thread_count(); }

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

bool starts_with(const std::string& s, std::string_view prefix) { return s.rfind(prefix, 0) == 0; }

}  // namespace

// --- losses ----------------------------------------------------------------

NodeId mse_sequence_loss(Tape& t, std::span<const NodeId> outputs, std::span<const Tensor> labels) {
  if (outputs.empty() || outputs.size() != labels.size()) {
    throw ShapeError("mse_sequence_loss: need one label tensor per output");
  }
  const Shape first = t.shape(outputs[0]);
  if (first.size() != 2) throw ShapeError("mse_sequence_loss: outputs must be T×p, got " + shape_string(first));
  std::vector<NodeId> terms;
  terms.reserve(outputs.size());
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    if (t.shape(outputs[i]) != first || labels[i].shape() != first) {
      throw ShapeError("mse_sequence_loss: sequence " + std::to_string(i) + " has output " +
                       shape_string(t.shape(outputs[i])) + " and labels " + shape_string(labels[i].shape()) +
                       ", expected " + shape_string(first));
    }
    terms.push_back(sum_squares(t, sub(t, outputs[i], t.constant(labels[i]))));
  }
  const double norm = 2.0 * static_cast<double>(first[0]) * static_cast<double>(outputs.size());
  return scale(t, terms.size() == 1 ? terms[0] : add_n(t, terms), 1.0 / norm);
}

NodeId gaussian_nll_loss(Tape& t, NodeId z_pred, NodeId l_hat, const Tensor& z_target) {
  const Shape& zs = t.shape(z_pred);
  const Shape& ls = t.shape(l_hat);
  if (zs.size() != 2 || z_target.shape() != zs) {
    throw ShapeError("gaussian_nll_loss: prediction " + shape_string(zs) + " vs target " +
                     shape_string(z_target.shape()));
  }
  const std::size_t steps = zs[0], d = zs[1];
  if (ls.size() != 2 || ls[0] != steps || ls[1] != d * (d + 1) / 2) {
    throw ShapeError("gaussian_nll_loss: l_hat has shape " + shape_string(ls) + " for observations " +
                     shape_string(zs));
  }
  const NodeId target = t.constant(z_target);
  std::vector<NodeId> terms;
  terms.reserve(steps * (d + 1));
  for (std::size_t s = 0; s < steps; ++s) {
    const NodeId r = sub(t, select(t, target, s), select(t, z_pred, s));
    const NodeId row = select(t, l_hat, s);
    const NodeId L = lower_triangular_expdiag(t, row);
    const NodeId S = matmul(t, L, transpose(t, L));
    terms.push_back(scale(t, sum(t, mul(t, r, spd_solve(t, S, r))), 0.5));
    // log diag(L) is the raw diagonal entry of l_hat
    for (std::size_t i = 0; i < d; ++i) terms.push_back(select(t, row, i * (i + 1) / 2 + i));
  }
  const NodeId total = add_n(t, terms);
  const double constant = 0.5 * static_cast<double>(d) * kLog2Pi;
  return add(t, scale(t, total, 1.0 / static_cast<double>(steps)), t.constant(Tensor::scalar(constant)));
}

// --- optimizer -------------------------------------------------------------

void adam_step(ParamStore& params, const Gradients& grads, AdamState& state) {
  for (const auto& [name, g] : grads) {
    if (!g.all_finite()) throw NumericError("adam_step: non-finite gradient for parameter '" + name + "'");
    if (params.get(name).shape() != g.shape()) {
      throw ShapeError("adam_step: gradient for '" + name + "' has shape " + shape_string(g.shape()) +
                       ", parameter has " + shape_string(params.get(name).shape()));
    }
  }
  ++state.step;
  const AdamConfig& c = state.config;
  const double bias1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bias2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (const auto& [name, g] : grads) {
    Tensor& p = params.get_mutable(name);
    auto [mit, m_new] = state.m.try_emplace(name, Tensor::zeros(g.shape()));
    auto [vit, v_new] = state.v.try_emplace(name, Tensor::zeros(g.shape()));
    Tensor& m = mit->second;
    Tensor& v = vit->second;
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bias1;
      const double v_hat = v[i] / bias2;
      p[i] -= c.lr * m_hat / (std::sqrt(v_hat) + c.eps);
    }
  }
}

double global_norm(const Gradients& grads) {
  double s = 0.0;
  for (const auto& [_, g] : grads)
    for (double v : g.data()) s += v * v;
  return std::sqrt(s);
}

double clip_global_norm(Gradients& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& [_, g] : grads)
      for (double& v : g.data()) v *= factor;
  }
  return norm;
}

// --- stages ----------------------------------------------------------------

std::string_view to_string(Stage stage) {
  switch (stage) {
    case Stage::PretrainFF: return "pretrain_ff";
    case Stage::FitPiecewiseR: return "fit_piecewise_R";
    case Stage::PretrainMlCov: return "pretrain_ml_cov";
    case Stage::FinetuneE2E: return "finetune_e2e";
    case Stage::LstmPretrainRecurrent: return "lstm_pretrain_recurrent";
  }
  return "?";
}

Stage parse_stage(std::string_view text) {
  for (Stage s : {Stage::PretrainFF, Stage::FitPiecewiseR, Stage::PretrainMlCov, Stage::FinetuneE2E,
                  Stage::LstmPretrainRecurrent}) {
    if (to_string(s) == text) return s;
  }
  throw ConfigError("unknown training stage '" + std::string(text) + "'");
}

bool Checkpoint::has_completed(Stage stage) const {
  return std::find(completed.begin(), completed.end(), stage) != completed.end();
}

Checkpoint initial_checkpoint(const nets::ModelSpec& spec, std::uint64_t seed) {
  return Checkpoint{spec, nets::init_model(spec, seed), {}};
}

Checkpoint derive_checkpoint(const Checkpoint& from, nets::ModelKind kind, std::uint64_t seed,
                             std::size_t lstm_units) {
  nets::ModelSpec spec = from.spec;
  spec.kind = kind;
  spec.lstm_units = lstm_units;
  Checkpoint out = initial_checkpoint(spec, seed);
  nets::transfer_params(from.params, out.params);
  out.completed = from.completed;
  return out;
}

double default_learning_rate(Stage stage) { return stage == Stage::FinetuneE2E ? 1e-4 : 1e-3; }

bool stage_trains(Stage stage, const std::string& name) {
  switch (stage) {
    case Stage::PretrainFF: return starts_with(name, "enc/") && !starts_with(name, "enc/lhat/");
    case Stage::FitPiecewiseR: return name == "filter/R_lhat";
    case Stage::PretrainMlCov: return starts_with(name, "enc/");
    case Stage::FinetuneE2E: return true;
    case Stage::LstmPretrainRecurrent: return starts_with(name, "lstm/");
  }
  return false;
}

void check_prerequisites(const Checkpoint& ckpt, Stage stage) {
  using nets::ModelKind;
  const std::string stage_name(to_string(stage));
  const std::string kind(nets::to_string(ckpt.spec.kind));
  auto need_kind = [&](std::initializer_list<ModelKind> kinds) {
    if (std::find(kinds.begin(), kinds.end(), ckpt.spec.kind) == kinds.end()) {
      throw PrerequisiteError("stage " + stage_name + " cannot train a " + kind + " model");
    }
  };
  auto need_stage = [&](Stage before) {
    if (!ckpt.has_completed(before)) {
      throw PrerequisiteError("stage " + stage_name + " requires a checkpoint that completed " +
                              std::string(to_string(before)));
    }
  };
  switch (stage) {
    case Stage::PretrainFF:
      if (nets::encoder_heads(ckpt.spec) == nets::Heads::None) {
        throw PrerequisiteError("stage pretrain_ff needs an encoder with an observation head; " + kind +
                                " models take theirs from a feedforward checkpoint");
      }
      break;
    case Stage::FitPiecewiseR:
      need_kind({ModelKind::PiecewiseKF});
      need_stage(Stage::PretrainFF);
      break;
    case Stage::PretrainMlCov:
      need_kind({ModelKind::BKF});
      need_stage(Stage::PretrainFF);
      break;
    case Stage::FinetuneE2E:
      need_kind({ModelKind::BKF, ModelKind::Lstm});
      need_stage(Stage::PretrainFF);
      break;
    case Stage::LstmPretrainRecurrent:
      need_kind({ModelKind::Lstm});
      if (ckpt.spec.filter.task != nets::TaskKind::Ego) {
        throw PrerequisiteError("stage lstm_pretrain_recurrent needs the ego-motion task");
      }
      break;
  }
}

void check_compatible(const nets::ModelSpec& spec, const world::SequenceDataset& data) {
  if (data.sequences.empty()) throw ShapeError("dataset has no sequences");
  if (data.task != spec.filter.task) {
    throw ShapeError("dataset task is " + std::string(nets::to_string(data.task)) + " but the model is for " +
                     std::string(nets::to_string(spec.filter.task)));
  }
  const world::Sequence& s = data.sequences.front();
  const auto& e = spec.encoder;
  const Shape& img = s.images.shape();
  if (img.size() != 4 || img[1] != e.height || img[2] != e.width || img[3] != e.channels) {
    throw ShapeError("dataset frames are " + shape_string(Shape(img.begin() + 1, img.end())) +
                     " but the model expects [" + std::to_string(e.height) + "x" + std::to_string(e.width) + "x" +
                     std::to_string(e.channels) + "]");
  }
  const auto& m = spec.filter.matrices;
  if (s.labels.dim(1) != m.C_y.dim(0)) {
    throw ShapeError("dataset labels have dimension " + std::to_string(s.labels.dim(1)) + ", model outputs " +
                     std::to_string(m.C_y.dim(0)));
  }
  if (s.init_state.dim(0) != m.A.dim(0)) {
    throw ShapeError("dataset states have dimension " + std::to_string(s.init_state.dim(0)) + ", model filter has " +
                     std::to_string(m.A.dim(0)));
  }
  if (s.obs_targets.dim(1) != e.z_dim) {
    throw ShapeError("dataset observation targets have dimension " + std::to_string(s.obs_targets.dim(1)) +
                     ", encoder outputs " + std::to_string(e.z_dim));
  }
}

namespace {

struct Objective {
  double loss = 0.0;
  Gradients grads;
};

// Encoder observations of a frozen encoder, reused across epochs.
Tensor encoder_observations(const Checkpoint& ckpt, const world::Sequence& seq) {
  Tape t;
  Binder bind(t, ckpt.params, nullptr);
  const auto enc = nets::build_encoder(t, bind, ckpt.spec.encoder, t.constant(seq.images), nets::Heads::Z);
  return t.value(*enc.z);
}

Objective objective(const Checkpoint& ckpt, Stage stage, const world::Sequence& seq, bool with_grad,
                    const nets::ForwardMode& mode, const Tensor* cached_z) {
  Tape t;
  TrainablePredicate trainable;
  if (with_grad) trainable = [stage](const std::string& name) { return stage_trains(stage, name); };
  Binder bind(t, ckpt.params, trainable);
  const nets::ModelSpec& spec = ckpt.spec;
  NodeId loss;
  switch (stage) {
    case Stage::PretrainFF: {
      const auto enc = nets::build_encoder(t, bind, spec.encoder, t.constant(seq.images), nets::Heads::Z, mode);
      const NodeId out[] = {*enc.z};
      loss = mse_sequence_loss(t, out, std::span(&seq.obs_targets, 1));
      break;
    }
    case Stage::PretrainMlCov: {
      const auto enc =
          nets::build_encoder(t, bind, spec.encoder, t.constant(seq.images), nets::Heads::ZAndCovariance, mode);
      loss = gaussian_nll_loss(t, *enc.z, *enc.l_hat, seq.obs_targets);
      break;
    }
    case Stage::FitPiecewiseR: {
      const NodeId z = cached_z ? t.constant(*cached_z)
                                : *nets::build_encoder(t, bind, spec.encoder, t.constant(seq.images),
                                                       nets::Heads::Z, mode)
                                       .z;
      const NodeId out[] = {nets::piecewise_filter(t, bind, spec, z, seq.init_state).predictions};
      loss = mse_sequence_loss(t, out, std::span(&seq.labels, 1));
      break;
    }
    case Stage::FinetuneE2E: {
      const NodeId out[] = {nets::run_sequence(t, bind, spec, seq.images, seq.init_state, mode).predictions};
      loss = mse_sequence_loss(t, out, std::span(&seq.labels, 1));
      break;
    }
    case Stage::LstmPretrainRecurrent: {
      const NodeId out[] = {nets::lstm_readout(t, bind, spec, t.constant(seq.obs_targets), seq.init_state)};
      loss = mse_sequence_loss(t, out, std::span(&seq.labels, 1));
      break;
    }
  }
  Objective result;
  result.loss = t.value(loss).item();
  if (with_grad) {
    t.backward(loss);
    result.grads = bind.gradients();
  }
  return result;
}

}  // namespace

double stage_loss(const Checkpoint& ckpt, Stage stage, const world::Sequence& seq) {
  return objective(ckpt, stage, seq, false, {}, nullptr).loss;
}

StageResult run_stage(const Checkpoint& start, const world::SequenceDataset& data, const TrainConfig& config) {
  const Stage stage = config.stage;
  const std::string stage_name(to_string(stage));
  check_prerequisites(start, stage);
  check_compatible(start.spec, data);
  if (config.epochs == 0) throw ConfigError("epochs must be at least 1");
  if (config.batch_size == 0) throw ConfigError("batch size must be at least 1");
  if (!(config.lr >= 0.0)) throw ConfigError("learning rate must be positive");
  if (!(config.validation_fraction >= 0.0 && config.validation_fraction < 1.0)) {
    throw ConfigError("validation fraction must lie in [0, 1)");
  }
  const std::size_t threads = resolve_threads(config.threads);
  const std::size_t n = data.sequences.size();

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(mix(config.seed));
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t n_val = static_cast<std::size_t>(std::floor(config.validation_fraction * double(n)));
  if (config.validation_fraction > 0.0 && n >= 2) n_val = std::max<std::size_t>(n_val, 1);
  std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());

  std::vector<Tensor> cached;
  if (stage == Stage::FitPiecewiseR) {
    cached.resize(n);
    parallel_for(n, threads, [&](std::size_t i) { cached[i] = encoder_observations(start, data.sequences[i]); });
  }
  auto cache_of = [&](std::size_t i) { return cached.empty() ? nullptr : &cached[i]; };

  Checkpoint current = start;
  AdamState adam;
  adam.config.lr = config.lr > 0.0 ? config.lr : default_learning_rate(stage);

  auto validation_loss = [&]() {
    if (val.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::vector<double> losses(val.size());
    parallel_for(val.size(), threads, [&](std::size_t k) {
      losses[k] = objective(current, stage, data.sequences[val[k]], false, {}, cache_of(val[k])).loss;
    });
    double total = 0.0;
    for (double l : losses) total += l;
    return total / static_cast<double>(val.size());
  };

  StageResult result;
  result.checkpoint = current;
  double best_val = std::numeric_limits<double>::infinity();
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(train.begin(), train.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t begin = 0; begin < train.size(); begin += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, train.size() - begin);
      std::vector<Objective> parts(count);
      try {
        parallel_for(count, threads, [&](std::size_t k) {
          const std::size_t idx = train[begin + k];
          nets::ForwardMode mode{true, mix(config.seed ^ mix(epoch) ^ (idx << 20))};
          parts[k] = objective(current, stage, data.sequences[idx], true, mode, cache_of(idx));
        });
      } catch (const NumericError& e) {
        throw DivergenceError("stage " + stage_name + " diverged in epoch " + std::to_string(epoch) + ": " + e.what(),
                              current);
      }
      double batch_loss = 0.0;
      Gradients grads;
      for (auto& part : parts) {
        batch_loss += part.loss;
        for (auto& [name, g] : part.grads) {
          auto [it, inserted] = grads.try_emplace(name, g);
          if (!inserted)
            for (std::size_t i = 0; i < g.size(); ++i) it->second[i] += g[i];
        }
      }
      const double inv = 1.0 / static_cast<double>(count);
      for (auto& [_, g] : grads)
        for (double& v : g.data()) v *= inv;
      batch_loss *= inv;
      if (!std::isfinite(batch_loss)) {
        throw DivergenceError("stage " + stage_name + " diverged in epoch " + std::to_string(epoch) +
                                  ": non-finite loss",
                              current);
      }
      if (config.clip_norm > 0.0) clip_global_norm(grads, config.clip_norm);
      Checkpoint before = current;
      try {
        adam_step(current.params, grads, adam);
      } catch (const NumericError& e) {
        throw DivergenceError("stage " + stage_name + " diverged in epoch " + std::to_string(epoch) + ": " + e.what(),
                              std::move(before));
      }
      epoch_loss += batch_loss * static_cast<double>(count);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_loss / static_cast<double>(train.size());
    rec.validation_loss = validation_loss();
    result.curve.push_back(rec);
    result.final_loss = rec.train_loss;
    // Without a validation split the last epoch is kept.
    if (val.empty() || rec.validation_loss < best_val) {
      best_val = rec.validation_loss;
      result.checkpoint = current;
      result.best_epoch = epoch;
    }
  }
  if (!result.checkpoint.has_completed(stage)) result.checkpoint.completed.push_back(stage);
  return result;
}

// --- evaluation ------------------------------------------------------------

Tensor predict(const Checkpoint& ckpt, const world::Sequence& seq) {
  Tape t;
  Binder bind(t, ckpt.params, nullptr);
  const auto out = nets::run_sequence(t, bind, ckpt.spec, seq.images, seq.init_state);
  return t.value(out.predictions);
}

std::string difficulty_of(const world::SequenceDataset& data) {
  if (data.task == nets::TaskKind::Ego) return "ego";
  const auto c = world::DiskWorldConfig::from_vector(data.config);
  if (c.max_distractors > c.num_distractors) {
    return "distractors=" + std::to_string(c.num_distractors) + "-" + std::to_string(c.max_distractors);
  }
  return "distractors=" + std::to_string(c.num_distractors);
}

EvalReport evaluate(const Checkpoint& ckpt, const world::SequenceDataset& data, std::size_t threads) {
  check_compatible(ckpt.spec, data);
  const std::size_t n = data.sequences.size();
  std::vector<double> sq_sum(n, 0.0);
  std::vector<std::size_t> frames(n, 0);
  parallel_for(n, resolve_threads(threads), [&](std::size_t i) {
    const world::Sequence& seq = data.sequences[i];
    const Tensor pred = predict(ckpt, seq);
    double s = 0.0;
    for (std::size_t k = 0; k < pred.size(); ++k) s += (pred[k] - seq.labels[k]) * (pred[k] - seq.labels[k]);
    sq_sum[i] = s;
    frames[i] = seq.length();
  });
  EvalReport r;
  r.kind = ckpt.spec.kind;
  r.parameter_count = ckpt.params.scalar_count();
  r.difficulty = difficulty_of(data);
  r.sequences = n;
  double total = 0.0;
  std::size_t total_frames = 0;
  for (std::size_t i = 0; i < n; ++i) {
    total += sq_sum[i];
    total_frames += frames[i];
    r.per_sequence.push_back(std::sqrt(sq_sum[i] / static_cast<double>(frames[i])));
  }
  r.rms = std::sqrt(total / static_cast<double>(total_frames));
  if (n > 1) {
    const double mean = std::accumulate(r.per_sequence.begin(), r.per_sequence.end(), 0.0) / double(n);
    double var = 0.0;
    for (double e : r.per_sequence) var += (e - mean) * (e - mean);
    r.rms_std = std::sqrt(var / double(n - 1));
  }
  return r;
}

std::vector<SweepRow> clutter_sweep(const std::vector<std::pair<std::string, Checkpoint>>& models,
                                    const std::vector<std::size_t>& levels, const world::DiskWorldConfig& base,
                                    std::size_t count, std::size_t threads) {
  std::vector<SweepRow> rows;
  for (std::size_t level : levels) {
    world::DiskWorldConfig cfg = base;
    cfg.num_distractors = level;
    cfg.max_distractors = 0;
    const auto data = world::generate_tracking_dataset(cfg, count, resolve_threads(threads));
    for (const auto& [name, ckpt] : models) rows.push_back({name, level, evaluate(ckpt, data, threads)});
  }
  return rows;
}

}  // namespace bkf::train
