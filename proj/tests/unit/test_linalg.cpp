#include <gtest/gtest.h>

#include <cmath>

#include "bkf/error.hpp"
#include "bkf/gradcheck.hpp"
#include "bkf/graph.hpp"
#include "gaussian_oracle.hpp"
#include "test_util.hpp"

namespace bkf {
namespace {

using testutil::random_spd;
using testutil::random_tensor;

NodeId weighted_sum(Tape& t, NodeId x, std::uint64_t seed = 21) {
  std::mt19937_64 rng(seed);
  return sum(t, mul(t, x, t.constant(random_tensor(rng, t.shape(x)))));
}

TEST(SpdSolve, IdentityReturnsRhs) {
  std::mt19937_64 rng(1);
  Tape t;
  const Tensor B = random_tensor(rng, {3, 2});
  EXPECT_EQ(t.value(spd_solve(t, t.constant(Tensor::identity(3)), t.constant(B))), B);
}

TEST(SpdSolve, ScaledIdentity) {
  Tape t;
  Tensor A = Tensor::identity(2);
  for (double& v : A.data()) v *= 2.0;
  const Tensor X = t.value(spd_solve(t, t.constant(A), t.constant(Tensor::identity(2))));
  EXPECT_LT(testutil::max_abs_diff(X, Tensor::matrix(2, 2, {0.5, 0.0, 0.0, 0.5})), 1e-15);
}

TEST(SpdSolve, ResidualAgainstOracle) {
  std::mt19937_64 rng(2);
  for (int rep = 0; rep < 20; ++rep) {
    const Tensor A = random_spd(rng, 4);
    const Tensor B = random_tensor(rng, {4, 3});
    Tape t;
    const Tensor X = t.value(spd_solve(t, t.constant(A), t.constant(B)));
    const Eigen::MatrixXd expected = oracle::to_eigen(A).llt().solve(oracle::to_eigen(B));
    EXPECT_LT((oracle::to_eigen(X) - expected).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(SpdSolve, VectorRhs) {
  std::mt19937_64 rng(3);
  const Tensor A = random_spd(rng, 3);
  const Tensor b = random_tensor(rng, {3});
  Tape t;
  const Tensor x = t.value(spd_solve(t, t.constant(A), t.constant(b)));
  ASSERT_EQ(x.shape(), (Shape{3}));
  const Eigen::VectorXd expected = oracle::to_eigen(A).llt().solve(oracle::to_eigen_vector(b));
  EXPECT_LT((oracle::to_eigen_vector(x) - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SpdSolve, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  for (int rep = 0; rep < 20; ++rep) {
    auto build = [](Tape& t, std::span<const NodeId> p) { return weighted_sum(t, spd_solve(t, p[0], p[1])); };
    const GradCheckResult r = grad_check(build, std::vector<Tensor>{random_spd(rng, 4), random_tensor(rng, {4, 2})});
    EXPECT_LT(r.max_rel_error, 1e-5);
  }
}

TEST(SpdSolve, NotPositiveDefiniteNamesMinor) {
  Tape t;
  const Tensor A = Tensor::matrix(3, 3, {1, 0, 0, 0, 2, 0, 0, 0, -1});
  try {
    spd_solve(t, t.constant(A), t.constant(Tensor::identity(3)));
    FAIL() << "expected NotPositiveDefinite";
  } catch (const NotPositiveDefinite& e) {
    EXPECT_EQ(e.minor(), 3u);
  }
}

TEST(SpdSolve, ShapeMismatch) {
  Tape t;
  EXPECT_THROW(spd_solve(t, t.constant(Tensor::identity(3)), t.constant(Tensor::zeros({2, 2}))), ShapeError);
}

TEST(LowerTriangular, ZeroGivesIdentity) {
  Tape t;
  EXPECT_EQ(t.value(lower_triangular_expdiag(t, t.constant(Tensor::zeros({3})))), Tensor::identity(2));
}

TEST(LowerTriangular, PlacementRule) {
  Tape t;
  NodeId L = lower_triangular_expdiag(t, t.constant(Tensor::vector({std::log(2.0), 3.0, std::log(5.0)})));
  const Tensor& v = t.value(L);
  EXPECT_NEAR(v.at(0, 0), 2.0, 1e-15);
  EXPECT_EQ(v.at(0, 1), 0.0);
  EXPECT_EQ(v.at(1, 0), 3.0);
  EXPECT_NEAR(v.at(1, 1), 5.0, 1e-14);
}

TEST(LowerTriangular, RowMajorOrderForThree) {
  Tape t;
  NodeId L = lower_triangular_expdiag(t, t.constant(Tensor::vector({0, 10, 0, 20, 30, 0})));
  EXPECT_EQ(t.value(L), Tensor::matrix(3, 3, {1, 0, 0, 10, 1, 0, 20, 30, 1}));
}

TEST(LowerTriangular, RejectsNonTriangularLength) {
  Tape t;
  EXPECT_THROW(lower_triangular_expdiag(t, t.constant(Tensor::zeros({4}))), ShapeError);
  EXPECT_EQ(triangular_root(4), 0u);
  EXPECT_EQ(triangular_root(6), 3u);
}

TEST(LowerTriangular, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 20; ++rep) {
    auto build = [](Tape& t, std::span<const NodeId> p) { return weighted_sum(t, lower_triangular_expdiag(t, p[0])); };
    const GradCheckResult r = grad_check(build, std::vector<Tensor>{random_tensor(rng, {6})});
    EXPECT_LT(r.max_rel_error, 1e-6);
  }
}

}  // namespace
}  // namespace bkf
