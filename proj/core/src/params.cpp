#include "bkf/params.hpp"

#include "bkf/error.hpp"

namespace bkf {

void ParamStore::set(const std::string& name, Tensor value) { entries_[name] = std::move(value); }

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw Error("missing parameter '" + name + "'");
  return it->second;
}

Tensor& ParamStore::get_mutable(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw Error("missing parameter '" + name + "'");
  return it->second;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, _] : entries_) out.push_back(name);
  return out;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : entries_) n += t.size();
  return n;
}

Binder::Binder(Tape& tape, const ParamStore& store, TrainablePredicate trainable)
    : tape_(tape), store_(store), trainable_(std::move(trainable)) {}

NodeId Binder::operator()(const std::string& name) {
  if (auto it = bound_.find(name); it != bound_.end()) return it->second;
  const Tensor& value = store_.get(name);
  NodeId id;
  if (trainable_ && trainable_(name)) {
    id = tape_.parameter(value, name);
    trainable_nodes_.emplace(name, id);
  } else {
    id = tape_.constant(value);
  }
  bound_.emplace(name, id);
  return id;
}

void Binder::provide(const std::string& name, NodeId id) {
  if (!bound_.emplace(name, id).second) throw Error("parameter '" + name + "' is already bound");
  if (tape_.requires_grad(id)) trainable_nodes_.emplace(name, id);
}

std::map<std::string, Tensor> Binder::gradients() const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, id] : trainable_nodes_) out.emplace(name, tape_.grad(id));
  return out;
}

}  // namespace bkf
