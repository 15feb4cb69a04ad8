#include "bkf/graph.hpp"

#include <atomic>
#include <cmath>
#include <string>
#include <utility>

#include "bkf/error.hpp"

namespace bkf {
namespace {

std::atomic<std::uint32_t> next_tape_serial{1};

struct AdjointFault {
  std::string op;
  double factor = 1.0;
};

AdjointFault& adjoint_fault() {
  static AdjointFault fault;
  return fault;
}

}  // namespace

namespace debug {
void inject_adjoint_fault(std::string_view op, double factor) {
  adjoint_fault().op = std::string(op);
  adjoint_fault().factor = factor;
}
void clear_adjoint_fault() { adjoint_fault() = {}; }
}  // namespace debug

Tape::Tape() : serial_(next_tape_serial.fetch_add(1)) {}

const Tape::Node& Tape::node(NodeId id) const {
  if (id.tape != serial_ || id.index >= nodes_.size()) {
    throw Error("node handle does not belong to this tape");
  }
  return nodes_[id.index];
}

Tape::Node& Tape::node(NodeId id) {
  return const_cast<Node&>(static_cast<const Tape&>(*this).node(id));
}

NodeId Tape::record(const char* op, Tensor value, std::vector<NodeId> inputs, BackwardFn backward) {
  if (!value.all_finite()) {
    throw NumericError(std::string(op) + " produced a non-finite value");
  }
  Node n;
  n.op = op;
  n.value = std::move(value);
  for (NodeId in : inputs) n.requires_grad = n.requires_grad || node(in).requires_grad;
  n.inputs = std::move(inputs);
  if (n.requires_grad) n.backward = std::move(backward);
  NodeId id{static_cast<std::uint32_t>(nodes_.size()), serial_};
  nodes_.push_back(std::move(n));
  return id;
}

NodeId Tape::constant(Tensor value) {
  if (!value.all_finite()) throw NumericError("constant holds a non-finite value");
  return record("constant", std::move(value), {}, nullptr);
}

NodeId Tape::parameter(Tensor init, std::string name) {
  if (!init.all_finite()) {
    throw NumericError("parameter '" + name + "' initialized with a non-finite value");
  }
  NodeId id = record("parameter", std::move(init), {}, nullptr);
  Node& n = nodes_[id.index];
  n.requires_grad = true;
  n.trainable = true;
  n.name = std::move(name);
  parameters_.push_back(id);
  return id;
}

const Tensor& Tape::value(NodeId id) const { return node(id).value; }

std::string_view Tape::op_name(NodeId id) const { return node(id).op; }

const std::string& Tape::param_name(NodeId id) const { return node(id).name; }

bool Tape::requires_grad(NodeId id) const { return node(id).requires_grad; }

Tensor Tape::grad(NodeId id) const {
  const Node& n = node(id);
  if (n.has_grad) return n.grad;
  return Tensor::zeros(n.value.shape());
}

Tensor& Tape::grad_accumulator(NodeId id) {
  Node& n = node(id);
  if (!n.has_grad) {
    n.grad = Tensor::zeros(n.value.shape());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::note_branch(std::uint64_t bits) noexcept {
  kink_hash_ ^= bits + 0x9e3779b97f4a7c15ULL + (kink_hash_ << 6) + (kink_hash_ >> 2);
}

void Tape::backward(NodeId loss) {
  const Node& root = node(loss);
  if (root.value.size() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " + shape_string(root.value.shape()));
  }
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  grad_accumulator(loss)[0] = 1.0;

  const AdjointFault fault = adjoint_fault();
  for (std::size_t i = loss.index + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.backward) continue;
    if (!n.grad.all_finite()) {
      throw NumericError(std::string("non-finite gradient flowing into ") + n.op);
    }
    if (!fault.op.empty() && fault.op == n.op) {
      Tensor corrupted = n.grad;
      for (double& v : corrupted.data()) v *= fault.factor;
      n.backward(*this, corrupted);
    } else {
      n.backward(*this, n.grad);
    }
  }
  for (NodeId p : parameters_) {
    const Node& n = nodes_[p.index];
    if (n.has_grad && !n.grad.all_finite()) {
      throw NumericError("non-finite gradient for parameter '" + n.name + "'");
    }
  }
}

}  // namespace bkf
