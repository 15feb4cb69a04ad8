#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "bkf/graph.hpp"
#include "bkf/kalman.hpp"
#include "bkf/params.hpp"

namespace bkf::nets {

enum class LayerKind { Conv, RespNorm, Relu, MaxPool, Fc, Dropout };

struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  std::size_t kernel = 0;  ///< conv kernel side / pool window side
  std::size_t units = 0;   ///< conv output channels / fc units
  Stride2 stride{};
  Padding padding = Padding::Same;
  bool bias = true;        ///< conv and fc only
  double keep_prob = 1.0;  ///< dropout only

  static LayerSpec conv(std::size_t kernel, std::size_t channels, Stride2 stride, Padding padding = Padding::Same,
                        bool bias = true);
  static LayerSpec resp_norm();
  static LayerSpec relu();
  static LayerSpec max_pool(std::size_t window, Stride2 stride);
  static LayerSpec fc(std::size_t units);
  static LayerSpec dropout(double keep_prob);

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Convolutional trunk plus output heads: z (point observation, z_dim) and
/// optionally l_hat (z_dim(z_dim+1)/2 covariance parameters).
struct EncoderSpec {
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 3;
  std::vector<LayerSpec> trunk;
  std::size_t z_dim = 2;

  friend bool operator==(const EncoderSpec&, const EncoderSpec&) = default;
};

/// 32×32×3 tracking encoder with the layer pattern of the reference tracker,
/// SAME padding and biases everywhere.
EncoderSpec tracking_encoder_desk();
/// Full-resolution 128×128×3 tracking encoder (VALID padding, no conv bias).
EncoderSpec tracking_encoder_full();
/// 8×8×3 encoder small enough for exhaustive finite-difference checks.
EncoderSpec tracking_encoder_tiny();
/// 32×32×6 frame-pair encoder for the ego-motion task.
EncoderSpec ego_encoder_desk();

/// Layer grammar, whitespace separated:
///   conv:K:C:SY[xSX][:valid][:nobias]  rn  relu  pool:W:S  fc:U  dropout:P
std::vector<LayerSpec> parse_layers(std::string_view text);
std::string format_layers(const std::vector<LayerSpec>& layers);

struct ShapeTrace {
  std::vector<Shape> outputs;  ///< per trunk layer, single-sample shapes
  std::size_t feature_dim = 0;
};
/// Throws ShapeError naming the first layer whose input does not fit.
ShapeTrace check_shapes(const EncoderSpec& spec);

enum class Heads { None, Z, ZAndCovariance };

/// Fills trunk weights (and the requested heads) under the "enc/" prefix.
void init_encoder(ParamStore& store, const EncoderSpec& spec, Heads heads, std::mt19937_64& rng);

struct ForwardMode {
  bool training = false;
  std::uint64_t dropout_seed = 0;
};

struct EncoderOutput {
  NodeId features;                ///< N×F trunk output
  std::optional<NodeId> z;        ///< N×z_dim
  std::optional<NodeId> l_hat;    ///< N×z_dim(z_dim+1)/2
};

/// `images` is N×H×W×C (or a single H×W×C image, treated as N = 1).
EncoderOutput build_encoder(Tape& t, Binder& bind, const EncoderSpec& spec, NodeId images, Heads heads,
                            const ForwardMode& mode = {});

// --- LSTM ------------------------------------------------------------------

struct LstmWeights {
  NodeId W;                    ///< (in + units) × 4·units, gate blocks [i | f | g | o]
  NodeId b;                    ///< 4·units
  std::optional<NodeId> peep;  ///< 3·units peephole weights for i, f, o
};

struct LstmState {
  NodeId h;
  NodeId c;
};

/// i = σ(·), f = σ(·), g = tanh(·), c = f⊙c₋ + i⊙g, o = σ(·), h = o⊙tanh(c).
LstmState lstm_cell(Tape& t, NodeId x, const LstmState& prev, const LstmWeights& w);

// --- models ----------------------------------------------------------------

enum class ModelKind { Feedforward, PiecewiseKF, BKF, Lstm };
enum class TaskKind { Tracking, Ego };

std::string_view to_string(ModelKind kind);
std::string_view to_string(TaskKind kind);
ModelKind parse_model_kind(std::string_view text);
TaskKind parse_task_kind(std::string_view text);

struct FilterSpec {
  TaskKind task = TaskKind::Tracking;
  KalmanMatrices matrices;
  double dt = 1.0;                   ///< unicycle step for the ego task
  bool learn_process_noise = false;  ///< Q = L·Lᵀ from "filter/Q_lhat"
};

struct ModelSpec {
  ModelKind kind = ModelKind::BKF;
  EncoderSpec encoder;
  FilterSpec filter;
  std::size_t lstm_units = 32;
  bool lstm_peepholes = false;
};

Heads encoder_heads(const ModelSpec& spec);
std::size_t lstm_input_dim(const ModelSpec& spec);

/// Fresh weights for every tensor the model declares.
ParamStore init_model(const ModelSpec& spec, std::uint64_t seed);
std::size_t parameter_count(const ModelSpec& spec);

/// Copies every tensor of `from` whose name and shape exist in `into`.
/// Returns the number of tensors copied.
std::size_t transfer_params(const ParamStore& from, ParamStore& into);

struct SequenceOutput {
  NodeId predictions;           ///< T×p label estimates
  std::optional<NodeId> z;      ///< T×d encoder observations
  std::optional<NodeId> l_hat;  ///< T×d(d+1)/2
  std::vector<FilterState> states;
};

/// Filter parameters on the tape (Q from "filter/Q_lhat" when learned).
KalmanParams filter_params(Tape& t, Binder& bind, const FilterSpec& spec);
DynamicsFn filter_dynamics(const FilterSpec& spec, const KalmanParams& params);

/// Per-frame predictions, no recurrence. For the ego task the velocity
/// outputs are integrated from the initial pose (dead reckoning).
SequenceOutput feedforward_model(Tape& t, Binder& bind, const ModelSpec& spec, NodeId images, const Tensor& init_state,
                                 const ForwardMode& mode = {});
/// Encoder z and l_hat feed the filter step by step on one tape.
SequenceOutput bkf_model(Tape& t, Binder& bind, const ModelSpec& spec, NodeId images, const Tensor& init_state,
                         const ForwardMode& mode = {});
/// Encoder z filtered with the single learned covariance from "filter/R_lhat".
SequenceOutput piecewise_kf_model(Tape& t, Binder& bind, const ModelSpec& spec, NodeId images,
                                  const Tensor& init_state, const ForwardMode& mode = {});
/// Filter part of piecewise_kf_model applied to given T×d observations.
SequenceOutput piecewise_filter(Tape& t, Binder& bind, const ModelSpec& spec, NodeId z, const Tensor& init_state);
/// Trunk features (tracking) or velocity outputs (ego), with the initial state
/// concatenated at the first step, through one LSTM layer and an fc readout.
SequenceOutput lstm_model(Tape& t, Binder& bind, const ModelSpec& spec, NodeId images, const Tensor& init_state,
                          const ForwardMode& mode = {});
/// Recurrent part of lstm_model applied to given T×k inputs.
NodeId lstm_readout(Tape& t, Binder& bind, const ModelSpec& spec, NodeId inputs, const Tensor& init_state);

/// Dispatches on spec.kind. `images` is T×H×W×C, `init_state` the n-vector
/// ground-truth state at the first frame.
SequenceOutput run_sequence(Tape& t, Binder& bind, const ModelSpec& spec, const Tensor& images,
                            const Tensor& init_state, const ForwardMode& mode = {});

}  // namespace bkf::nets
