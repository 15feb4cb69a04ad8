#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "bkf/graph.hpp"

namespace bkf {

/// Named weight tensors that outlive any single tape. Iteration order is the
/// lexicographic order of names, which keeps serialization deterministic.
class ParamStore {
 public:
  void set(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  Tensor& get_mutable(const std::string& name);
  void erase(const std::string& name) { entries_.erase(name); }

  std::vector<std::string> names() const;
  /// Total number of scalars over all tensors.
  std::size_t scalar_count() const;

  const std::map<std::string, Tensor>& entries() const noexcept { return entries_; }

  friend bool operator==(const ParamStore&, const ParamStore&) = default;

 private:
  std::map<std::string, Tensor> entries_;
};

using TrainablePredicate = std::function<bool(const std::string& name)>;

/// Places ParamStore entries on a tape on first use: names accepted by the
/// predicate become trainable parameters, everything else a constant.
class Binder {
 public:
  Binder(Tape& tape, const ParamStore& store, TrainablePredicate trainable);

  NodeId operator()(const std::string& name);
  /// Binds `name` to an existing node instead of the stored tensor.
  void provide(const std::string& name, NodeId id);

  Tape& tape() noexcept { return tape_; }
  /// Gradients of every bound trainable tensor after tape.backward().
  std::map<std::string, Tensor> gradients() const;

 private:
  Tape& tape_;
  const ParamStore& store_;
  TrainablePredicate trainable_;
  std::map<std::string, NodeId> bound_;
  std::map<std::string, NodeId> trainable_nodes_;
};

}  // namespace bkf
