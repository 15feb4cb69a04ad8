#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bkf/tensor.hpp"

namespace bkf {

/// Handle to a node recorded on a Tape. Only meaningful for the Tape that
/// issued it; using it elsewhere raises an Error.
struct NodeId {
  std::uint32_t index = 0;
  std::uint32_t tape = 0;
  friend bool operator==(NodeId, NodeId) = default;
};

class Tape;

/// Propagates the gradient of a node's output into its inputs.
using BackwardFn = std::function<void(Tape& tape, const Tensor& out_grad)>;

/// Append-only record of operations. Values are computed eagerly when a node
/// is recorded (define-by-run); backward() sweeps the records in reverse.
///
/// A Tape is not thread-safe. Independent tapes may be used concurrently.
class Tape {
 public:
  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) noexcept = default;
  Tape& operator=(Tape&&) noexcept = default;

  NodeId constant(Tensor value);
  NodeId parameter(Tensor init, std::string name = {});

  const Tensor& value(NodeId id) const;
  const Shape& shape(NodeId id) const { return value(id).shape(); }
  std::string_view op_name(NodeId id) const;
  const std::string& param_name(NodeId id) const;

  /// Gradient of the last backward() loss w.r.t. `id`. Nodes that the loss
  /// does not depend on (or that require no gradient) report zeros.
  Tensor grad(NodeId id) const;

  /// Reverse sweep from a scalar loss. Resets gradients of any earlier sweep.
  void backward(NodeId loss);

  std::span<const NodeId> parameters() const noexcept { return parameters_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Hash of every branch decision (ReLU sign pattern, max-pool argmax)
  /// taken while recording. Two evaluations with equal signatures lie on the
  /// same smooth piece of a piecewise-smooth function.
  std::uint64_t kink_signature() const noexcept { return kink_hash_; }

  // --- interface for op implementations ---------------------------------

  /// Appends a node. `op` must point to a string literal. Throws NumericError
  /// when the value is not finite.
  NodeId record(const char* op, Tensor value, std::vector<NodeId> inputs, BackwardFn backward);
  bool requires_grad(NodeId id) const;
  /// Gradient accumulator of `id`, zero-initialized on first access.
  Tensor& grad_accumulator(NodeId id);
  void note_branch(std::uint64_t bits) noexcept;

 private:
  struct Node {
    const char* op = "";
    Tensor value;
    std::vector<NodeId> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    bool trainable = false;
    std::string name;
    Tensor grad;
    bool has_grad = false;
  };

  const Node& node(NodeId id) const;
  Node& node(NodeId id);

  std::uint32_t serial_;
  std::vector<Node> nodes_;
  std::vector<NodeId> parameters_;
  std::uint64_t kink_hash_ = 0xcbf29ce484222325ULL;
};

namespace debug {
/// Test hook: multiplies the incoming adjoint of every node produced by `op`
/// by `factor` during backward(). An empty name disables injection.
void inject_adjoint_fault(std::string_view op, double factor = 1.5);
void clear_adjoint_fault();
}  // namespace debug

// --- elementwise and structural ops ----------------------------------------

NodeId add(Tape& t, NodeId a, NodeId b);
NodeId sub(Tape& t, NodeId a, NodeId b);
NodeId mul(Tape& t, NodeId a, NodeId b);
NodeId scale(Tape& t, NodeId x, double factor);
/// Adds `bias` (rank 1, length = last extent of x) to every row of x.
NodeId add_bias(Tape& t, NodeId x, NodeId bias);
/// Sum of any number of same-shape nodes.
NodeId add_n(Tape& t, std::span<const NodeId> terms);
NodeId transpose(Tape& t, NodeId x);
NodeId reshape(Tape& t, NodeId x, Shape shape);
NodeId concat(Tape& t, std::span<const NodeId> parts, std::size_t axis);
/// Half-open range [begin, end) along `axis`.
NodeId slice(Tape& t, NodeId x, std::size_t axis, std::size_t begin, std::size_t end);
/// Index `i` along axis 0, dropping that axis.
NodeId select(Tape& t, NodeId x, std::size_t i);
/// Flattens every part and lays them out consecutively in `shape`.
NodeId pack(Tape& t, std::span<const NodeId> parts, Shape shape);
/// (X + Xᵀ) / 2 for a square matrix.
NodeId symmetrize(Tape& t, NodeId x);

/// Matrix product. Supports (m×k)(k×n), (m×k)(k) and (k)(k×n).
NodeId matmul(Tape& t, NodeId a, NodeId b);

NodeId sum(Tape& t, NodeId x);
NodeId sum_squares(Tape& t, NodeId x);

NodeId relu(Tape& t, NodeId x);
NodeId exp(Tape& t, NodeId x);
NodeId log(Tape& t, NodeId x);
NodeId sigmoid(Tape& t, NodeId x);
NodeId tanh(Tape& t, NodeId x);
NodeId sin(Tape& t, NodeId x);
NodeId cos(Tape& t, NodeId x);

// --- image ops ---------------------------------------------------------------
// Images are H×W×C (one sample) or N×H×W×C (batch of N samples).

struct Stride2 {
  std::size_t y = 1;
  std::size_t x = 1;
  friend bool operator==(const Stride2&, const Stride2&) = default;
};

enum class Padding { Same, Valid };

/// Cross-correlation with kernel kh×kw×Cin×Cout. SAME padding yields
/// ⌈H/sy⌉×⌈W/sx⌉ outputs; VALID yields ⌊(H−kh)/sy⌋+1 × ⌊(W−kw)/sx⌋+1.
NodeId conv2d(Tape& t, NodeId input, NodeId kernel, Stride2 stride, Padding padding = Padding::Same);

/// Unpadded max pooling. Ties route the gradient to the lowest flat index.
NodeId max_pool(Tape& t, NodeId input, Stride2 window, Stride2 stride);

/// Lower bound on the activation variance inside response_norm.
inline constexpr double kResponseNormEps = 1e-6;

/// y = (x − mean(x)) / sqrt(max(var(x), ε)) · exp(log_var / 2) + target_mean.
/// Statistics are taken over all elements of each sample (per leading index
/// for rank-4 input, over the whole tensor otherwise). `target_mean` and
/// `log_var` are scalars.
NodeId response_norm(Tape& t, NodeId x, NodeId target_mean, NodeId log_var);

// --- linear algebra ----------------------------------------------------------

/// Solves A·X = B for symmetric positive definite A via Cholesky.
/// Throws NotPositiveDefinite naming the failing leading minor.
NodeId spd_solve(Tape& t, NodeId a, NodeId b);

/// Maps a vector of length n(n+1)/2 to an n×n lower-triangular matrix, filled
/// row by row (L11, L21, L22, L31, ...), with the diagonal exponentiated.
NodeId lower_triangular_expdiag(Tape& t, NodeId l_hat);

/// n such that n(n+1)/2 == len, or 0 when len is not triangular.
std::size_t triangular_root(std::size_t len);

}  // namespace bkf
