#include <nlohmann/json.hpp>

#include "bkf/pack.hpp"
#include "bkf/training.hpp"

namespace bkf::train {
namespace {

using nlohmann::json;

constexpr int kCheckpointFormat = 1;

json tensor_json(const Tensor& t) {
  return json{{"shape", t.shape()}, {"data", std::vector<double>(t.data().begin(), t.data().end())}};
}

Tensor tensor_from(const json& j, const char* what) {
  try {
    Shape shape = j.at("shape").get<Shape>();
    std::vector<double> data = j.at("data").get<std::vector<double>>();
    return Tensor(std::move(shape), std::move(data));
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: malformed matrix '") + what + "': " + e.what());
  }
}

json spec_json(const nets::ModelSpec& spec) {
  const auto& m = spec.filter.matrices;
  return json{
      {"kind", std::string(nets::to_string(spec.kind))},
      {"task", std::string(nets::to_string(spec.filter.task))},
      {"encoder",
       {{"height", spec.encoder.height},
        {"width", spec.encoder.width},
        {"channels", spec.encoder.channels},
        {"layers", nets::format_layers(spec.encoder.trunk)},
        {"z_dim", spec.encoder.z_dim}}},
      {"filter",
       {{"dt", spec.filter.dt},
        {"learn_process_noise", spec.filter.learn_process_noise},
        {"A", tensor_json(m.A)},
        {"B_w", tensor_json(m.B_w)},
        {"Q", tensor_json(m.Q)},
        {"C_z", tensor_json(m.C_z)},
        {"C_y", tensor_json(m.C_y)},
        {"Sigma0", tensor_json(m.Sigma0)}}},
      {"lstm_units", spec.lstm_units},
      {"lstm_peepholes", spec.lstm_peepholes},
  };
}

nets::ModelSpec spec_from(const json& j) {
  try {
    nets::ModelSpec spec;
    spec.kind = nets::parse_model_kind(j.at("kind").get<std::string>());
    spec.filter.task = nets::parse_task_kind(j.at("task").get<std::string>());
    const json& e = j.at("encoder");
    spec.encoder.height = e.at("height").get<std::size_t>();
    spec.encoder.width = e.at("width").get<std::size_t>();
    spec.encoder.channels = e.at("channels").get<std::size_t>();
    spec.encoder.trunk = nets::parse_layers(e.at("layers").get<std::string>());
    spec.encoder.z_dim = e.at("z_dim").get<std::size_t>();
    const json& f = j.at("filter");
    spec.filter.dt = f.at("dt").get<double>();
    spec.filter.learn_process_noise = f.at("learn_process_noise").get<bool>();
    auto& m = spec.filter.matrices;
    m.A = tensor_from(f.at("A"), "A");
    m.B_w = tensor_from(f.at("B_w"), "B_w");
    m.Q = tensor_from(f.at("Q"), "Q");
    m.C_z = tensor_from(f.at("C_z"), "C_z");
    m.C_y = tensor_from(f.at("C_y"), "C_y");
    m.Sigma0 = tensor_from(f.at("Sigma0"), "Sigma0");
    spec.lstm_units = j.at("lstm_units").get<std::size_t>();
    spec.lstm_peepholes = j.at("lstm_peepholes").get<bool>();
    return spec;
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: malformed model spec: ") + e.what());
  }
}

}  // namespace

std::string spec_to_json(const nets::ModelSpec& spec) { return spec_json(spec).dump(2); }

nets::ModelSpec spec_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: invalid JSON: ") + e.what());
  }
  return spec_from(j);
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  tensorpack::TensorPack pack;
  for (const auto& [name, value] : ckpt.params.entries()) pack.add(name, value);
  tensorpack::save(pack, path);

  json meta{{"format", kCheckpointFormat}, {"model", spec_json(ckpt.spec)}, {"completed", json::array()}};
  for (Stage s : ckpt.completed) meta["completed"].push_back(std::string(to_string(s)));
  const std::string text = meta.dump(2) + "\n";
  std::filesystem::path sidecar = path;
  sidecar += ".json";
  tensorpack::write_file(sidecar, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::filesystem::path sidecar = path;
  sidecar += ".json";
  const auto bytes = tensorpack::read_file(sidecar);
  json meta;
  try {
    meta = json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    throw FormatError("checkpoint: invalid JSON in '" + sidecar.string() + "': " + e.what());
  }
  if (meta.value("format", 0) != kCheckpointFormat) {
    throw FormatError("checkpoint: unsupported format in '" + sidecar.string() + "'");
  }
  Checkpoint ckpt;
  ckpt.spec = spec_from(meta.at("model"));
  try {
    for (const auto& s : meta.at("completed")) ckpt.completed.push_back(parse_stage(s.get<std::string>()));
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint: malformed stage list: ") + e.what());
  }
  const tensorpack::TensorPack pack = tensorpack::load(path);
  for (const auto& e : pack.entries()) ckpt.params.set(e.name, e.value);

  const ParamStore expected = nets::init_model(ckpt.spec, 0);
  for (const auto& [name, value] : expected.entries()) {
    if (!ckpt.params.contains(name)) throw FormatError("checkpoint: missing tensor '" + name + "'");
    if (ckpt.params.get(name).shape() != value.shape()) {
      throw FormatError("checkpoint: tensor '" + name + "' has shape " + shape_string(ckpt.params.get(name).shape()) +
                        ", model expects " + shape_string(value.shape()));
    }
  }
  if (ckpt.params.entries().size() != expected.entries().size()) {
    throw FormatError("checkpoint: unexpected extra tensors for this model");
  }
  return ckpt;
}

}  // namespace bkf::train
