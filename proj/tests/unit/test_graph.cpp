#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <limits>

#include "bkf/error.hpp"
#include "bkf/gradcheck.hpp"
#include "bkf/graph.hpp"
#include "test_util.hpp"

namespace bkf {
namespace {

using testutil::random_away_from_zero;
using testutil::random_tensor;

// Contracts `x` with a fixed random weight so every output coordinate carries
// a distinct adjoint.
NodeId weighted_sum(Tape& t, NodeId x, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  NodeId w = t.constant(random_tensor(rng, t.shape(x)));
  return sum(t, mul(t, x, w));
}

void expect_gradients_match(const GraphBuilder& build, const std::vector<Tensor>& params, double tol = 1e-6) {
  const GradCheckResult r = grad_check(build, params);
  EXPECT_LT(r.max_rel_error, tol) << "param " << r.param << " coord " << r.coord;
  EXPECT_GT(r.checked, 0u);
}

TEST(Constant, HoldsValue) {
  Tape t;
  NodeId zero = t.constant(Tensor::scalar(0.0));
  EXPECT_EQ(t.value(zero).item(), 0.0);
  NodeId eye = t.constant(Tensor::identity(2));
  EXPECT_EQ(t.value(eye), Tensor::identity(2));
}

TEST(Constant, RejectsNaN) {
  Tape t;
  Tensor bad = Tensor::vector({1.0, std::numeric_limits<double>::quiet_NaN()});
  EXPECT_THROW(t.constant(bad), NumericError);
}

TEST(Constant, ContributesNoGradient) {
  Tape t;
  NodeId c = t.constant(Tensor::vector({1.0, 2.0}));
  NodeId p = t.parameter(Tensor::vector({3.0, 4.0}));
  t.backward(sum(t, mul(t, c, p)));
  EXPECT_EQ(t.grad(c), Tensor::zeros({2}));
  EXPECT_EQ(t.grad(p), Tensor::vector({1.0, 2.0}));
}

TEST(Parameter, ZerosGetGradientOnBackward) {
  Tape t;
  NodeId p = t.parameter(Tensor::zeros({3}), "p");
  t.backward(sum(t, p));
  EXPECT_EQ(t.grad(p), Tensor::filled({3}, 1.0));
  ASSERT_EQ(t.parameters().size(), 1u);
  EXPECT_EQ(t.param_name(p), "p");
}

TEST(Parameter, IdentityInit) {
  Tape t;
  NodeId A = t.parameter(Tensor::identity(4), "A");
  EXPECT_EQ(t.value(A), Tensor::identity(4));
  EXPECT_TRUE(t.requires_grad(A));
}

TEST(Parameter, ScalarShape) {
  Tape t;
  NodeId p = t.parameter(Tensor::scalar(0.1));
  EXPECT_EQ(t.value(p).rank(), 0u);
  EXPECT_DOUBLE_EQ(t.value(p).item(), 0.1);
}

TEST(Parameter, RejectsInf) {
  Tape t;
  EXPECT_THROW(t.parameter(Tensor::scalar(std::numeric_limits<double>::infinity())), NumericError);
}

TEST(Tape, ForeignHandleRejected) {
  Tape a, b;
  NodeId x = a.constant(Tensor::scalar(1.0));
  EXPECT_THROW(b.value(x), Error);
}

TEST(Matmul, IdentityLeavesMatrix) {
  std::mt19937_64 rng(1);
  Tape t;
  const Tensor M = random_tensor(rng, {3, 4});
  NodeId out = matmul(t, t.constant(Tensor::identity(3)), t.constant(M));
  EXPECT_EQ(t.value(out), M);
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(2);
  for (int rep = 0; rep < 20; ++rep) {
    auto build = [](Tape& t, std::span<const NodeId> p) { return weighted_sum(t, matmul(t, p[0], p[1])); };
    expect_gradients_match(build, {random_tensor(rng, {2, 3}), random_tensor(rng, {3, 1})});
  }
}

TEST(Matmul, MatrixVectorForms) {
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 20; ++rep) {
    auto mv = [](Tape& t, std::span<const NodeId> p) { return weighted_sum(t, matmul(t, p[0], p[1])); };
    expect_gradients_match(mv, {random_tensor(rng, {3, 2}), random_tensor(rng, {2})});
    expect_gradients_match(mv, {random_tensor(rng, {2}), random_tensor(rng, {2, 4})});
  }
}

TEST(Matmul, InnerDimensionMismatch) {
  Tape t;
  NodeId a = t.constant(Tensor::zeros({2, 3}));
  EXPECT_THROW(matmul(t, a, a), ShapeError);
}

TEST(Elementwise, AddZeroIsIdentity) {
  std::mt19937_64 rng(4);
  Tape t;
  const Tensor x = random_tensor(rng, {2, 3});
  EXPECT_EQ(t.value(add(t, t.constant(x), t.constant(Tensor::zeros({2, 3})))), x);
}

TEST(Elementwise, TransposeIsInvolution) {
  std::mt19937_64 rng(5);
  Tape t;
  const Tensor M = random_tensor(rng, {3, 5});
  NodeId m = t.constant(M);
  EXPECT_EQ(t.value(transpose(t, transpose(t, m))), M);
}

TEST(Elementwise, SliceOutOfRange) {
  Tape t;
  NodeId x = t.constant(Tensor::zeros({4, 2}));
  EXPECT_THROW(slice(t, x, 0, 2, 5), ShapeError);
  EXPECT_THROW(slice(t, x, 2, 0, 1), ShapeError);
  EXPECT_THROW(select(t, x, 4), ShapeError);
}

TEST(Elementwise, ShapeMismatch) {
  Tape t;
  NodeId a = t.constant(Tensor::zeros({2, 3}));
  NodeId b = t.constant(Tensor::zeros({3, 2}));
  EXPECT_THROW(add(t, a, b), ShapeError);
  EXPECT_THROW(sub(t, a, b), ShapeError);
  EXPECT_THROW(mul(t, a, b), ShapeError);
  EXPECT_THROW(reshape(t, a, {4}), ShapeError);
}

struct UnaryCase {
  const char* name;
  std::function<NodeId(Tape&, NodeId)> op;
  bool positive_input = false;
};

TEST(Elementwise, UnaryGradients) {
  const std::vector<UnaryCase> cases = {
      {"scale", [](Tape& t, NodeId x) { return scale(t, x, -2.5); }},
      {"transpose", [](Tape& t, NodeId x) { return transpose(t, x); }},
      {"reshape", [](Tape& t, NodeId x) { return reshape(t, x, {6}); }},
      {"slice", [](Tape& t, NodeId x) { return slice(t, x, 1, 1, 3); }},
      {"select", [](Tape& t, NodeId x) { return select(t, x, 1); }},
      {"sum_squares", [](Tape& t, NodeId x) { return sum_squares(t, x); }},
      {"exp", [](Tape& t, NodeId x) { return exp(t, x); }},
      {"log", [](Tape& t, NodeId x) { return log(t, x); }, true},
      {"sigmoid", [](Tape& t, NodeId x) { return sigmoid(t, x); }},
      {"tanh", [](Tape& t, NodeId x) { return tanh(t, x); }},
      {"sin", [](Tape& t, NodeId x) { return sin(t, x); }},
      {"cos", [](Tape& t, NodeId x) { return cos(t, x); }},
      {"relu", [](Tape& t, NodeId x) { return relu(t, x); }},
  };
  std::mt19937_64 rng(6);
  for (const auto& c : cases) {
    for (int rep = 0; rep < 20; ++rep) {
      Tensor x = random_away_from_zero(rng, {2, 3});
      if (c.positive_input)
        for (double& v : x.data()) v = std::abs(v) + 0.1;
      auto build = [&](Tape& t, std::span<const NodeId> p) { return weighted_sum(t, c.op(t, p[0])); };
      const GradCheckResult r = grad_check(build, std::vector<Tensor>{x});
      EXPECT_LT(r.max_rel_error, 1e-6) << c.name;
    }
  }
}

TEST(Elementwise, BinaryGradients) {
  std::mt19937_64 rng(7);
  const std::vector<std::function<NodeId(Tape&, NodeId, NodeId)>> ops = {
      [](Tape& t, NodeId a, NodeId b) { return add(t, a, b); },
      [](Tape& t, NodeId a, NodeId b) { return sub(t, a, b); },
      [](Tape& t, NodeId a, NodeId b) { return mul(t, a, b); },
  };
  for (const auto& op : ops) {
    for (int rep = 0; rep < 20; ++rep) {
      auto build = [&](Tape& t, std::span<const NodeId> p) { return weighted_sum(t, op(t, p[0], p[1])); };
      expect_gradients_match(build, {random_tensor(rng, {3, 2}), random_tensor(rng, {3, 2})});
    }
  }
}

TEST(Elementwise, StructuralGradients) {
  std::mt19937_64 rng(8);
  for (int rep = 0; rep < 20; ++rep) {
    auto cat0 = [](Tape& t, std::span<const NodeId> p) { return weighted_sum(t, concat(t, p, 0)); };
    expect_gradients_match(cat0, {random_tensor(rng, {1, 3}), random_tensor(rng, {2, 3})});
    auto cat1 = [](Tape& t, std::span<const NodeId> p) { return weighted_sum(t, concat(t, p, 1)); };
    expect_gradients_match(cat1, {random_tensor(rng, {2, 1}), random_tensor(rng, {2, 2})});
    auto packed = [](Tape& t, std::span<const NodeId> p) { return weighted_sum(t, pack(t, p, {2, 3})); };
    expect_gradients_match(packed, {random_tensor(rng, {2}), random_tensor(rng, {4})});
    auto biased = [](Tape& t, std::span<const NodeId> p) { return weighted_sum(t, add_bias(t, p[0], p[1])); };
    expect_gradients_match(biased, {random_tensor(rng, {3, 2}), random_tensor(rng, {2})});
    auto summed = [](Tape& t, std::span<const NodeId> p) { return weighted_sum(t, add_n(t, p)); };
    expect_gradients_match(summed, {random_tensor(rng, {2, 2}), random_tensor(rng, {2, 2}), random_tensor(rng, {2, 2})});
    auto sym = [](Tape& t, std::span<const NodeId> p) { return weighted_sum(t, symmetrize(t, p[0])); };
    expect_gradients_match(sym, {random_tensor(rng, {3, 3})});
  }
}

TEST(Elementwise, AddBiasRejectsWrongLength) {
  Tape t;
  EXPECT_THROW(add_bias(t, t.constant(Tensor::zeros({2, 3})), t.constant(Tensor::zeros({2}))), ShapeError);
}

TEST(Relu, SignCases) {
  Tape t;
  NodeId y = relu(t, t.constant(Tensor::vector({-1.0, 0.0, 2.0})));
  EXPECT_EQ(t.value(y), Tensor::vector({0.0, 0.0, 2.0}));
}

TEST(Relu, AllNegativeGivesZeroGradient) {
  Tape t;
  NodeId x = t.parameter(Tensor::vector({-1.0, -0.5, -3.0}));
  NodeId y = relu(t, x);
  EXPECT_EQ(t.value(y), Tensor::zeros({3}));
  t.backward(sum(t, y));
  EXPECT_EQ(t.grad(x), Tensor::zeros({3}));
}

TEST(Relu, SubgradientAtZeroIsZero) {
  Tape t;
  NodeId x = t.parameter(Tensor::vector({0.0}));
  t.backward(sum(t, relu(t, x)));
  EXPECT_EQ(t.grad(x)[0], 0.0);
}

TEST(Exp, KnownValues) {
  Tape t;
  NodeId y = exp(t, t.constant(Tensor::vector({0.0, 1.0})));
  EXPECT_EQ(t.value(y)[0], 1.0);
  EXPECT_NEAR(t.value(y)[1], 2.718281828, 1e-9);
}

TEST(Exp, OverflowIsReported) {
  Tape t;
  EXPECT_THROW(exp(t, t.constant(Tensor::scalar(1000.0))), NumericError);
}

TEST(Backward, SquareDerivative) {
  Tape t;
  NodeId x = t.parameter(Tensor::scalar(3.0));
  t.backward(mul(t, x, x));
  EXPECT_EQ(t.grad(x).item(), 6.0);
}

TEST(Backward, DisconnectedParameterHasZeroGradient) {
  Tape t;
  NodeId x = t.parameter(Tensor::scalar(3.0));
  NodeId p = t.parameter(Tensor::vector({1.0, 2.0}));
  t.backward(mul(t, x, x));
  EXPECT_EQ(t.grad(p), Tensor::zeros({2}));
}

TEST(Backward, RequiresScalarLoss) {
  Tape t;
  NodeId x = t.parameter(Tensor::vector({1.0, 2.0}));
  EXPECT_THROW(t.backward(x), ShapeError);
}

TEST(Backward, GradientShapeMatchesValue) {
  std::mt19937_64 rng(9);
  Tape t;
  NodeId a = t.parameter(random_tensor(rng, {2, 3}));
  NodeId b = t.parameter(random_tensor(rng, {3, 4}));
  NodeId c = matmul(t, a, b);
  t.backward(sum_squares(t, c));
  EXPECT_EQ(t.grad(a).shape(), t.shape(a));
  EXPECT_EQ(t.grad(b).shape(), t.shape(b));
  EXPECT_EQ(t.grad(c).shape(), t.shape(c));
}

TEST(Backward, ReplayIsBitIdentical) {
  std::mt19937_64 rng(10);
  const Tensor a0 = random_tensor(rng, {3, 3});
  const Tensor b0 = random_tensor(rng, {3, 2});
  auto run = [&](Tensor& value, Tensor& ga, Tensor& gb) {
    Tape t;
    NodeId a = t.parameter(a0);
    NodeId b = t.parameter(b0);
    NodeId y = tanh(t, matmul(t, a, b));
    NodeId loss = sum_squares(t, y);
    t.backward(loss);
    value = t.value(y);
    ga = t.grad(a);
    gb = t.grad(b);
  };
  Tensor v1, ga1, gb1, v2, ga2, gb2;
  run(v1, ga1, gb1);
  run(v2, ga2, gb2);
  EXPECT_EQ(v1, v2);
  EXPECT_EQ(ga1, ga2);
  EXPECT_EQ(gb1, gb2);
}

TEST(Backward, AccumulationIsLinear) {
  std::mt19937_64 rng(11);
  const Tensor x0 = random_tensor(rng, {4});
  const double a = 0.7, b = -1.3;
  auto grads = [&](double wa, double wb) {
    Tape t;
    NodeId x = t.parameter(x0);
    NodeId l1 = sum_squares(t, sin(t, x));
    NodeId l2 = sum(t, exp(t, x));
    std::vector<NodeId> terms{scale(t, l1, wa), scale(t, l2, wb)};
    t.backward(add_n(t, terms));
    return t.grad(x);
  };
  const Tensor combined = grads(a, b);
  const Tensor g1 = grads(1.0, 0.0);
  const Tensor g2 = grads(0.0, 1.0);
  for (std::size_t i = 0; i < combined.size(); ++i) EXPECT_NEAR(combined[i], a * g1[i] + b * g2[i], 1e-12);
}

TEST(Backward, SharedInputAccumulates) {
  Tape t;
  NodeId x = t.parameter(Tensor::scalar(2.0));
  NodeId y = add(t, mul(t, x, x), scale(t, x, 3.0));
  t.backward(y);
  EXPECT_EQ(t.grad(x).item(), 7.0);
}

TEST(GradCheck, LinearFunctionIsExact) {
  std::mt19937_64 rng(12);
  auto build = [](Tape& t, std::span<const NodeId> p) { return weighted_sum(t, scale(t, p[0], 3.0)); };
  const GradCheckResult r = grad_check(build, std::vector<Tensor>{random_tensor(rng, {5})});
  EXPECT_LT(r.max_rel_error, 1e-10);
}

TEST(GradCheck, QuadraticFunctionIsExact) {
  std::mt19937_64 rng(13);
  auto build = [](Tape& t, std::span<const NodeId> p) { return sum_squares(t, p[0]); };
  const GradCheckResult r = grad_check(build, std::vector<Tensor>{random_tensor(rng, {5})});
  EXPECT_LT(r.max_rel_error, 1e-9);
}

TEST(GradCheck, CorruptedAdjointIsDetected) {
  std::mt19937_64 rng(14);
  auto build = [](Tape& t, std::span<const NodeId> p) { return weighted_sum(t, matmul(t, p[0], p[1])); };
  const std::vector<Tensor> params{random_tensor(rng, {2, 3}), random_tensor(rng, {3, 2})};
  debug::inject_adjoint_fault("matmul", 1.5);
  const GradCheckResult bad = grad_check(build, params);
  debug::clear_adjoint_fault();
  EXPECT_GT(bad.max_rel_error, 1e-3);
  EXPECT_LT(grad_check(build, params).max_rel_error, 1e-6);
}

TEST(GradCheck, NamesWorstParameter) {
  auto build = [](Tape& t, std::span<const NodeId> p) { return add(t, sum_squares(t, p[0]), sum(t, exp(t, p[1]))); };
  const std::vector<Tensor> params{Tensor::vector({1.0}), Tensor::vector({0.5})};
  const std::vector<std::string> names{"a", "b"};
  debug::inject_adjoint_fault("exp", 2.0);
  const GradCheckResult r = grad_check(build, params, 1e-5, names);
  debug::clear_adjoint_fault();
  EXPECT_EQ(r.param_name, "b");
}

TEST(GradCheck, RejectsNonPositiveEps) {
  auto build = [](Tape& t, std::span<const NodeId> p) { return sum(t, p[0]); };
  EXPECT_THROW(grad_check(build, std::vector<Tensor>{Tensor::vector({1.0})}, 0.0), Error);
}

}  // namespace
}  // namespace bkf
