#include "bkf/nets.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "bkf/error.hpp"

namespace bkf::nets {
namespace {

std::string layer_prefix(std::size_t index, const char* kind) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "enc/%02zu_%s/", index, kind);
  return buf;
}

const char* kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Conv: return "conv";
    case LayerKind::RespNorm: return "rn";
    case LayerKind::Relu: return "relu";
    case LayerKind::MaxPool: return "pool";
    case LayerKind::Fc: return "fc";
    case LayerKind::Dropout: return "dropout";
  }
  return "?";
}

Tensor uniform(Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = dist(rng);
  return t;
}

std::size_t parse_size(std::string_view text, std::string_view token) {
  std::size_t value = 0;
  if (text.empty()) throw ConfigError("layer spec '" + std::string(token) + "': missing number");
  for (char c : text) {
    if (c < '0' || c > '9') throw ConfigError("layer spec '" + std::string(token) + "': bad number");
    value = value * 10 + static_cast<std::size_t>(c - '0');
  }
  if (value == 0) throw ConfigError("layer spec '" + std::string(token) + "': sizes must be positive");
  return value;
}

Stride2 parse_stride(std::string_view text, std::string_view token) {
  const auto x = text.find('x');
  if (x == std::string_view::npos) {
    const std::size_t s = parse_size(text, token);
    return {s, s};
  }
  return {parse_size(text.substr(0, x), token), parse_size(text.substr(x + 1), token)};
}

std::vector<std::string_view> split(std::string_view text, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = text.find(sep, start);
    out.push_back(text.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::size_t tri(std::size_t d) { return d * (d + 1) / 2; }

}  // namespace

LayerSpec LayerSpec::conv(std::size_t kernel, std::size_t channels, Stride2 stride, Padding padding, bool bias) {
  LayerSpec s;
  s.kind = LayerKind::Conv;
  s.kernel = kernel;
  s.units = channels;
  s.stride = stride;
  s.padding = padding;
  s.bias = bias;
  return s;
}

LayerSpec LayerSpec::resp_norm() {
  LayerSpec s;
  s.kind = LayerKind::RespNorm;
  return s;
}

LayerSpec LayerSpec::relu() { return LayerSpec{}; }

LayerSpec LayerSpec::max_pool(std::size_t window, Stride2 stride) {
  LayerSpec s;
  s.kind = LayerKind::MaxPool;
  s.kernel = window;
  s.stride = stride;
  return s;
}

LayerSpec LayerSpec::fc(std::size_t units) {
  LayerSpec s;
  s.kind = LayerKind::Fc;
  s.units = units;
  return s;
}

LayerSpec LayerSpec::dropout(double keep_prob) {
  LayerSpec s;
  s.kind = LayerKind::Dropout;
  s.keep_prob = keep_prob;
  return s;
}

EncoderSpec tracking_encoder_desk() {
  EncoderSpec s;
  s.height = s.width = 32;
  s.channels = 3;
  s.trunk = parse_layers("conv:9:4:2 rn relu pool:2:2 conv:9:8:2 rn relu pool:2:2 fc:16 relu fc:32 relu");
  s.z_dim = 2;
  return s;
}

EncoderSpec tracking_encoder_full() {
  EncoderSpec s;
  s.height = s.width = 128;
  s.channels = 3;
  s.trunk = parse_layers(
      "conv:9:4:2:valid:nobias rn relu pool:2:2 conv:9:8:2:valid:nobias rn relu pool:2:2 fc:16 relu fc:32 relu");
  s.z_dim = 2;
  return s;
}

EncoderSpec tracking_encoder_tiny() {
  EncoderSpec s;
  s.height = s.width = 8;
  s.channels = 3;
  s.trunk = parse_layers("conv:3:2:2 rn relu pool:2:2 fc:8 relu");
  s.z_dim = 2;
  return s;
}

EncoderSpec ego_encoder_desk() {
  EncoderSpec s;
  s.height = s.width = 32;
  s.channels = 6;
  s.trunk = parse_layers("conv:5:8:2 rn relu conv:5:16:2 rn relu pool:2:2 fc:32 relu fc:32 relu");
  s.z_dim = 2;
  return s;
}

std::vector<LayerSpec> parse_layers(std::string_view text) {
  std::vector<LayerSpec> layers;
  std::istringstream in{std::string(text)};
  std::string token;
  while (in >> token) {
    const auto parts = split(token, ':');
    const std::string_view head = parts[0];
    if (head == "conv") {
      if (parts.size() < 4) throw ConfigError("layer spec '" + token + "': expected conv:K:C:S");
      LayerSpec l = LayerSpec::conv(parse_size(parts[1], token), parse_size(parts[2], token),
                                    parse_stride(parts[3], token));
      for (std::size_t i = 4; i < parts.size(); ++i) {
        if (parts[i] == "valid") l.padding = Padding::Valid;
        else if (parts[i] == "same") l.padding = Padding::Same;
        else if (parts[i] == "nobias") l.bias = false;
        else throw ConfigError("layer spec '" + token + "': unknown conv option");
      }
      layers.push_back(l);
    } else if (head == "rn" && parts.size() == 1) {
      layers.push_back(LayerSpec::resp_norm());
    } else if (head == "relu" && parts.size() == 1) {
      layers.push_back(LayerSpec::relu());
    } else if (head == "pool" && parts.size() == 3) {
      layers.push_back(LayerSpec::max_pool(parse_size(parts[1], token), parse_stride(parts[2], token)));
    } else if (head == "fc" && parts.size() == 2) {
      layers.push_back(LayerSpec::fc(parse_size(parts[1], token)));
    } else if (head == "dropout" && parts.size() == 2) {
      const double keep = std::stod(std::string(parts[1]));
      if (!(keep > 0.0 && keep <= 1.0)) throw ConfigError("layer spec '" + token + "': keep probability in (0, 1]");
      layers.push_back(LayerSpec::dropout(keep));
    } else {
      throw ConfigError("unknown layer spec '" + token + "'");
    }
  }
  return layers;
}

std::string format_layers(const std::vector<LayerSpec>& layers) {
  std::ostringstream out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    if (i) out << ' ';
    out << kind_name(l.kind);
    switch (l.kind) {
      case LayerKind::Conv:
        out << ':' << l.kernel << ':' << l.units << ':' << l.stride.y;
        if (l.stride.x != l.stride.y) out << 'x' << l.stride.x;
        if (l.padding == Padding::Valid) out << ":valid";
        if (!l.bias) out << ":nobias";
        break;
      case LayerKind::MaxPool:
        out << ':' << l.kernel << ':' << l.stride.y;
        if (l.stride.x != l.stride.y) out << 'x' << l.stride.x;
        break;
      case LayerKind::Fc: out << ':' << l.units; break;
      case LayerKind::Dropout: out << ':' << l.keep_prob; break;
      default: break;
    }
  }
  return out.str();
}

ShapeTrace check_shapes(const EncoderSpec& spec) {
  ShapeTrace trace;
  Shape cur{spec.height, spec.width, spec.channels};
  for (std::size_t i = 0; i < spec.trunk.size(); ++i) {
    const LayerSpec& l = spec.trunk[i];
    auto fail = [&](const std::string& why) {
      throw ShapeError("encoder layer " + std::to_string(i) + " (" + kind_name(l.kind) + "): " + why + ", input " +
                       shape_string(cur));
    };
    switch (l.kind) {
      case LayerKind::Conv: {
        if (cur.size() != 3) fail("convolution after a flat layer");
        if (l.kernel == 0 || l.units == 0 || l.stride.y == 0 || l.stride.x == 0) fail("zero size");
        if (l.padding == Padding::Same) {
          cur = {(cur[0] + l.stride.y - 1) / l.stride.y, (cur[1] + l.stride.x - 1) / l.stride.x, l.units};
        } else {
          if (l.kernel > cur[0] || l.kernel > cur[1]) fail("kernel larger than input");
          cur = {(cur[0] - l.kernel) / l.stride.y + 1, (cur[1] - l.kernel) / l.stride.x + 1, l.units};
        }
        break;
      }
      case LayerKind::MaxPool:
        if (cur.size() != 3) fail("pooling after a flat layer");
        if (l.kernel == 0 || l.kernel > cur[0] || l.kernel > cur[1] || l.stride.y == 0 || l.stride.x == 0) {
          fail("invalid window");
        }
        cur = {(cur[0] - l.kernel) / l.stride.y + 1, (cur[1] - l.kernel) / l.stride.x + 1, cur[2]};
        break;
      case LayerKind::Fc:
        if (l.units == 0) fail("zero units");
        cur = {l.units};
        break;
      case LayerKind::Dropout:
        if (!(l.keep_prob > 0.0 && l.keep_prob <= 1.0)) fail("keep probability outside (0, 1]");
        break;
      case LayerKind::RespNorm:
      case LayerKind::Relu: break;
    }
    trace.outputs.push_back(cur);
  }
  trace.feature_dim = shape_size(cur);
  return trace;
}

void init_encoder(ParamStore& store, const EncoderSpec& spec, Heads heads, std::mt19937_64& rng) {
  const ShapeTrace trace = check_shapes(spec);
  Shape cur{spec.height, spec.width, spec.channels};
  for (std::size_t i = 0; i < spec.trunk.size(); ++i) {
    const LayerSpec& l = spec.trunk[i];
    const std::string prefix = layer_prefix(i, kind_name(l.kind));
    if (l.kind == LayerKind::Conv) {
      const std::size_t fan_in = l.kernel * l.kernel * cur[2];
      store.set(prefix + "w", uniform({l.kernel, l.kernel, cur[2], l.units}, 1.0 / std::sqrt(double(fan_in)), rng));
      if (l.bias) store.set(prefix + "b", Tensor::zeros({l.units}));
    } else if (l.kind == LayerKind::Fc) {
      const std::size_t fan_in = shape_size(cur);
      store.set(prefix + "w", uniform({fan_in, l.units}, 1.0 / std::sqrt(double(fan_in)), rng));
      if (l.bias) store.set(prefix + "b", Tensor::zeros({l.units}));
    } else if (l.kind == LayerKind::RespNorm) {
      store.set(prefix + "mean", Tensor::scalar(0.0));
      store.set(prefix + "logvar", Tensor::scalar(0.0));
    }
    cur = trace.outputs[i];
  }
  const std::size_t f = trace.feature_dim;
  const double bound = 1.0 / std::sqrt(double(f));
  if (heads != Heads::None) {
    store.set("enc/z/w", uniform({f, spec.z_dim}, bound, rng));
    store.set("enc/z/b", Tensor::zeros({spec.z_dim}));
  }
  if (heads == Heads::ZAndCovariance) {
    store.set("enc/lhat/w", uniform({f, tri(spec.z_dim)}, bound, rng));
    store.set("enc/lhat/b", Tensor::zeros({tri(spec.z_dim)}));
  }
}

EncoderOutput build_encoder(Tape& t, Binder& bind, const EncoderSpec& spec, NodeId images, Heads heads,
                            const ForwardMode& mode) {
  const ShapeTrace trace = check_shapes(spec);
  NodeId x = images;
  Shape in = t.shape(images);
  if (in.size() == 3) {
    x = reshape(t, x, {1, in[0], in[1], in[2]});
    in = t.shape(x);
  }
  if (in.size() != 4 || in[1] != spec.height || in[2] != spec.width || in[3] != spec.channels) {
    throw ShapeError("encoder expects N×" + std::to_string(spec.height) + "×" + std::to_string(spec.width) + "×" +
                     std::to_string(spec.channels) + " images, got " + shape_string(in));
  }
  const std::size_t batch = in[0];

  auto weight = [&](std::size_t layer, const std::string& name, const Shape& expected) {
    NodeId w = bind(name);
    if (t.shape(w) != expected) {
      throw ShapeError("encoder layer " + std::to_string(layer) + ": '" + name + "' has shape " +
                       shape_string(t.shape(w)) + ", expected " + shape_string(expected));
    }
    return w;
  };

  Shape cur{spec.height, spec.width, spec.channels};
  for (std::size_t i = 0; i < spec.trunk.size(); ++i) {
    const LayerSpec& l = spec.trunk[i];
    const std::string prefix = layer_prefix(i, kind_name(l.kind));
    switch (l.kind) {
      case LayerKind::Conv: {
        NodeId k = weight(i, prefix + "w", {l.kernel, l.kernel, cur[2], l.units});
        x = conv2d(t, x, k, l.stride, l.padding);
        if (l.bias) x = add_bias(t, x, weight(i, prefix + "b", {l.units}));
        break;
      }
      case LayerKind::RespNorm: {
        NodeId mean = weight(i, prefix + "mean", {});
        NodeId logvar = weight(i, prefix + "logvar", {});
        if (t.shape(x).size() == 2) {
          const Shape flat = t.shape(x);
          x = reshape(t, response_norm(t, reshape(t, x, {flat[0], 1, 1, flat[1]}), mean, logvar), flat);
        } else {
          x = response_norm(t, x, mean, logvar);
        }
        break;
      }
      case LayerKind::Relu: x = relu(t, x); break;
      case LayerKind::MaxPool: x = max_pool(t, x, {l.kernel, l.kernel}, l.stride); break;
      case LayerKind::Fc: {
        const std::size_t fan_in = shape_size(cur);
        if (t.shape(x).size() != 2) x = reshape(t, x, {batch, fan_in});
        x = matmul(t, x, weight(i, prefix + "w", {fan_in, l.units}));
        if (l.bias) x = add_bias(t, x, weight(i, prefix + "b", {l.units}));
        break;
      }
      case LayerKind::Dropout: {
        if (!mode.training || l.keep_prob >= 1.0) break;
        std::mt19937_64 rng(mode.dropout_seed ^ (0x9e3779b97f4a7c15ULL * (i + 1)));
        std::bernoulli_distribution keep(l.keep_prob);
        Tensor mask(t.shape(x));
        for (double& v : mask.data()) v = keep(rng) ? 1.0 / l.keep_prob : 0.0;
        x = mul(t, x, t.constant(std::move(mask)));
        break;
      }
    }
    cur = trace.outputs[i];
  }

  EncoderOutput out;
  out.features = t.shape(x).size() == 2 ? x : reshape(t, x, {batch, trace.feature_dim});
  const std::size_t f = trace.feature_dim;
  const std::size_t layers = spec.trunk.size();
  if (heads != Heads::None) {
    out.z = add_bias(t, matmul(t, out.features, weight(layers, "enc/z/w", {f, spec.z_dim})),
                     weight(layers, "enc/z/b", {spec.z_dim}));
  }
  if (heads == Heads::ZAndCovariance) {
    out.l_hat = add_bias(t, matmul(t, out.features, weight(layers, "enc/lhat/w", {f, tri(spec.z_dim)})),
                         weight(layers, "enc/lhat/b", {tri(spec.z_dim)}));
  }
  return out;
}

LstmState lstm_cell(Tape& t, NodeId x, const LstmState& prev, const LstmWeights& w) {
  const std::size_t units = t.shape(prev.h).at(0);
  const Shape& ws = t.shape(w.W);
  if (ws.size() != 2 || ws[0] != t.shape(x).at(0) + units || ws[1] != 4 * units || t.shape(prev.c) != Shape{units} ||
      t.shape(w.b) != Shape{4 * units} || (w.peep && t.shape(*w.peep) != Shape{3 * units})) {
    throw ShapeError("lstm_cell: inconsistent dimensions (x " + shape_string(t.shape(x)) + ", h " +
                     shape_string(t.shape(prev.h)) + ", W " + shape_string(ws) + ")");
  }
  NodeId xh_parts[] = {x, prev.h};
  NodeId pre = add(t, matmul(t, concat(t, xh_parts, 0), w.W), w.b);
  auto gate = [&](std::size_t k) { return slice(t, pre, 0, k * units, (k + 1) * units); };
  auto peep = [&](std::size_t k, NodeId c) { return mul(t, slice(t, *w.peep, 0, k * units, (k + 1) * units), c); };

  NodeId i_pre = gate(0);
  NodeId f_pre = gate(1);
  if (w.peep) {
    i_pre = add(t, i_pre, peep(0, prev.c));
    f_pre = add(t, f_pre, peep(1, prev.c));
  }
  NodeId i = sigmoid(t, i_pre);
  NodeId f = sigmoid(t, f_pre);
  NodeId g = tanh(t, gate(2));
  NodeId c = add(t, mul(t, f, prev.c), mul(t, i, g));
  NodeId o_pre = gate(3);
  if (w.peep) o_pre = add(t, o_pre, peep(2, c));
  NodeId o = sigmoid(t, o_pre);
  return {mul(t, o, tanh(t, c)), c};
}

std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::Feedforward: return "feedforward";
    case ModelKind::PiecewiseKF: return "piecewise";
    case ModelKind::BKF: return "bkf";
    case ModelKind::Lstm: return "lstm";
  }
  return "?";
}

std::string_view to_string(TaskKind kind) { return kind == TaskKind::Tracking ? "tracking" : "ego"; }

ModelKind parse_model_kind(std::string_view text) {
  for (ModelKind k : {ModelKind::Feedforward, ModelKind::PiecewiseKF, ModelKind::BKF, ModelKind::Lstm}) {
    if (to_string(k) == text) return k;
  }
  throw ConfigError("unknown model kind '" + std::string(text) + "'");
}

TaskKind parse_task_kind(std::string_view text) {
  if (text == "tracking") return TaskKind::Tracking;
  if (text == "ego") return TaskKind::Ego;
  throw ConfigError("unknown task '" + std::string(text) + "'");
}

Heads encoder_heads(const ModelSpec& spec) {
  switch (spec.kind) {
    case ModelKind::Feedforward:
    case ModelKind::PiecewiseKF: return Heads::Z;
    case ModelKind::BKF: return Heads::ZAndCovariance;
    case ModelKind::Lstm: return spec.filter.task == TaskKind::Ego ? Heads::Z : Heads::None;
  }
  return Heads::Z;
}

std::size_t lstm_input_dim(const ModelSpec& spec) {
  const std::size_t n = spec.filter.matrices.A.dim(0);
  if (spec.filter.task == TaskKind::Ego) return spec.encoder.z_dim + n;
  return check_shapes(spec.encoder).feature_dim + n;
}

namespace {

// l_hat with L·Lᵀ = m for a symmetric PD matrix m.
Tensor covariance_to_lhat(const Tensor& m) {
  const std::size_t n = m.dim(0);
  std::vector<double> l(n * n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    double d = m.at(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l[j * n + k] * l[j * n + k];
    if (!(d > 0.0)) throw ConfigError("process noise covariance must be positive definite to be learned");
    l[j * n + j] = std::sqrt(d);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = m.at(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l[i * n + k] * l[j * n + k];
      l[i * n + j] = s / l[j * n + j];
    }
  }
  Tensor out({tri(n)});
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j, ++k) out[k] = i == j ? std::log(l[i * n + j]) : l[i * n + j];
  return out;
}

}  // namespace

ParamStore init_model(const ModelSpec& spec, std::uint64_t seed) {
  const KalmanMatrices& m = spec.filter.matrices;
  if (m.C_z.rank() != 2 || m.C_y.rank() != 2)
    throw ConfigError("model spec has no filter matrices (C_z and C_y must be matrices)");
  std::mt19937_64 rng(seed);
  ParamStore store;
  init_encoder(store, spec.encoder, encoder_heads(spec), rng);
  const std::size_t d = spec.filter.matrices.C_z.dim(0);
  const std::size_t p = spec.filter.matrices.C_y.dim(0);
  switch (spec.kind) {
    case ModelKind::PiecewiseKF: store.set("filter/R_lhat", Tensor::zeros({tri(d)})); break;
    case ModelKind::Lstm: {
      const std::size_t in = lstm_input_dim(spec);
      const std::size_t u = spec.lstm_units;
      store.set("lstm/W", uniform({in + u, 4 * u}, 1.0 / std::sqrt(double(in + u)), rng));
      Tensor b({4 * u});
      for (std::size_t k = u; k < 2 * u; ++k) b[k] = 1.0;  // forget gate open at init
      store.set("lstm/b", std::move(b));
      if (spec.lstm_peepholes) store.set("lstm/peep", Tensor::zeros({3 * u}));
      store.set("lstm/out/w", uniform({u, p}, 1.0 / std::sqrt(double(u)), rng));
      store.set("lstm/out/b", Tensor::zeros({p}));
      break;
    }
    default: break;
  }
  if (spec.filter.learn_process_noise && (spec.kind == ModelKind::PiecewiseKF || spec.kind == ModelKind::BKF)) {
    store.set("filter/Q_lhat", covariance_to_lhat(spec.filter.matrices.Q));
  }
  return store;
}

std::size_t parameter_count(const ModelSpec& spec) { return init_model(spec, 0).scalar_count(); }

std::size_t transfer_params(const ParamStore& from, ParamStore& into) {
  std::size_t copied = 0;
  for (const auto& [name, value] : from.entries()) {
    if (into.contains(name) && into.get(name).shape() == value.shape()) {
      into.set(name, value);
      ++copied;
    }
  }
  return copied;
}

KalmanParams filter_params(Tape& t, Binder& bind, const FilterSpec& spec) {
  const KalmanMatrices& m = spec.matrices;
  NodeId Q = spec.learn_process_noise ? observation_covariance(t, bind("filter/Q_lhat")) : t.constant(m.Q);
  return make_params(t, t.constant(m.A), t.constant(m.B_w), Q, t.constant(m.C_z), t.constant(m.C_y),
                     t.constant(m.Sigma0));
}

DynamicsFn filter_dynamics(const FilterSpec& spec, const KalmanParams& params) {
  if (spec.task == TaskKind::Ego) return unicycle_dynamics(spec.dt);
  return linear_dynamics(params.A);
}

namespace {

FilterMode filter_mode(const FilterSpec& spec) {
  return spec.task == TaskKind::Ego ? FilterMode::Ekf : FilterMode::Kf;
}

void require_state(const ModelSpec& spec, const Tensor& init_state) {
  const std::size_t n = spec.filter.matrices.A.dim(0);
  if (init_state.shape() != Shape{n}) {
    throw ShapeError("initial state has shape " + shape_string(init_state.shape()) + ", expected [" +
                     std::to_string(n) + "]");
  }
}

SequenceOutput filter_outputs(Tape& t, const KalmanParams& params, std::vector<FilterState> states) {
  std::vector<NodeId> means;
  means.reserve(states.size());
  for (const auto& s : states) means.push_back(output(t, s, params.C_y).mean);
  SequenceOutput out;
  out.predictions = pack(t, means, {states.size(), params.p});
  out.states = std::move(states);
  return out;
}

std::vector<NodeId> rows(Tape& t, NodeId m) {
  std::vector<NodeId> out;
  const std::size_t n = t.shape(m).at(0);
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(select(t, m, i));
  return out;
}

}  // namespace

SequenceOutput feedforward_model(Tape& t, Binder& bind, const ModelSpec& spec, NodeId images, const Tensor& init_state,
                                 const ForwardMode& mode) {
  require_state(spec, init_state);
  EncoderOutput enc = build_encoder(t, bind, spec.encoder, images, Heads::Z, mode);
  SequenceOutput out;
  out.z = enc.z;
  if (spec.filter.task == TaskKind::Tracking) {
    if (spec.encoder.z_dim != spec.filter.matrices.C_y.dim(0)) {
      throw ShapeError("feedforward tracking model needs z_dim equal to the label dimension");
    }
    out.predictions = *enc.z;
    return out;
  }
  // Dead reckoning: pose_t = unicycle(pose_{t-1}, z_t), starting from the true pose.
  const DynamicsFn dyn = unicycle_dynamics(spec.filter.dt);
  NodeId state = t.constant(init_state);
  NodeId pose = slice(t, state, 0, 0, 3);
  std::vector<NodeId> poses{pose};
  const auto velocities = rows(t, *enc.z);
  for (std::size_t step = 1; step < velocities.size(); ++step) {
    NodeId parts[] = {pose, velocities[step]};
    pose = slice(t, dyn.f(t, concat(t, parts, 0)), 0, 0, 3);
    poses.push_back(pose);
  }
  out.predictions = pack(t, poses, {poses.size(), 3});
  return out;
}

SequenceOutput bkf_model(Tape& t, Binder& bind, const ModelSpec& spec, NodeId images, const Tensor& init_state,
                         const ForwardMode& mode) {
  require_state(spec, init_state);
  EncoderOutput enc = build_encoder(t, bind, spec.encoder, images, Heads::ZAndCovariance, mode);
  KalmanParams params = filter_params(t, bind, spec.filter);
  const DynamicsFn dyn = filter_dynamics(spec.filter, params);
  const FilterState init{t.constant(init_state), params.Sigma0};
  auto states = unroll_lhat(t, rows(t, *enc.z), rows(t, *enc.l_hat), init, params, filter_mode(spec.filter), &dyn);
  SequenceOutput out = filter_outputs(t, params, std::move(states));
  out.z = enc.z;
  out.l_hat = enc.l_hat;
  return out;
}

SequenceOutput piecewise_filter(Tape& t, Binder& bind, const ModelSpec& spec, NodeId z, const Tensor& init_state) {
  require_state(spec, init_state);
  KalmanParams params = filter_params(t, bind, spec.filter);
  const DynamicsFn dyn = filter_dynamics(spec.filter, params);
  const FilterState init{t.constant(init_state), params.Sigma0};
  const auto rows_z = rows(t, z);
  const NodeId R = observation_covariance(t, bind("filter/R_lhat"));
  const std::vector<NodeId> covs(rows_z.size(), R);
  SequenceOutput out =
      filter_outputs(t, params, unroll(t, rows_z, covs, init, params, filter_mode(spec.filter), &dyn));
  out.z = z;
  return out;
}

SequenceOutput piecewise_kf_model(Tape& t, Binder& bind, const ModelSpec& spec, NodeId images,
                                  const Tensor& init_state, const ForwardMode& mode) {
  require_state(spec, init_state);
  EncoderOutput enc = build_encoder(t, bind, spec.encoder, images, Heads::Z, mode);
  return piecewise_filter(t, bind, spec, *enc.z, init_state);
}

NodeId lstm_readout(Tape& t, Binder& bind, const ModelSpec& spec, NodeId inputs, const Tensor& init_state) {
  require_state(spec, init_state);
  const std::size_t u = spec.lstm_units;
  LstmWeights w{bind("lstm/W"), bind("lstm/b"), std::nullopt};
  if (spec.lstm_peepholes) w.peep = bind("lstm/peep");
  const NodeId out_w = bind("lstm/out/w");
  const NodeId out_b = bind("lstm/out/b");
  LstmState state{t.constant(Tensor::zeros({u})), t.constant(Tensor::zeros({u}))};
  const NodeId first_extra = t.constant(init_state);
  const NodeId later_extra = t.constant(Tensor::zeros(init_state.shape()));
  std::vector<NodeId> outputs;
  const auto steps = rows(t, inputs);
  for (std::size_t step = 0; step < steps.size(); ++step) {
    NodeId parts[] = {steps[step], step == 0 ? first_extra : later_extra};
    state = lstm_cell(t, concat(t, parts, 0), state, w);
    outputs.push_back(add(t, matmul(t, state.h, out_w), out_b));
  }
  return pack(t, outputs, {outputs.size(), t.shape(out_b)[0]});
}

SequenceOutput lstm_model(Tape& t, Binder& bind, const ModelSpec& spec, NodeId images, const Tensor& init_state,
                          const ForwardMode& mode) {
  const Heads heads = encoder_heads(spec);
  EncoderOutput enc = build_encoder(t, bind, spec.encoder, images, heads, mode);
  SequenceOutput out;
  out.z = enc.z;
  out.predictions = lstm_readout(t, bind, spec, heads == Heads::None ? enc.features : *enc.z, init_state);
  return out;
}

SequenceOutput run_sequence(Tape& t, Binder& bind, const ModelSpec& spec, const Tensor& images,
                            const Tensor& init_state, const ForwardMode& mode) {
  const NodeId x = t.constant(images);
  switch (spec.kind) {
    case ModelKind::Feedforward: return feedforward_model(t, bind, spec, x, init_state, mode);
    case ModelKind::PiecewiseKF: return piecewise_kf_model(t, bind, spec, x, init_state, mode);
    case ModelKind::BKF: return bkf_model(t, bind, spec, x, init_state, mode);
    case ModelKind::Lstm: return lstm_model(t, bind, spec, x, init_state, mode);
  }
  throw Error("unknown model kind");
}

}  // namespace bkf::nets
