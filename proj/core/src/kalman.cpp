#include "bkf/kalman.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "bkf/error.hpp"

namespace bkf {
namespace {

void require_matrix(const Tape& t, NodeId id, std::size_t rows, std::size_t cols, const char* what) {
  const Shape& s = t.shape(id);
  if (s.size() != 2 || s[0] != rows || s[1] != cols) {
    throw ShapeError(std::string("kalman: ") + what + " has shape " + shape_string(s) + ", expected [" +
                     std::to_string(rows) + "x" + std::to_string(cols) + "]");
  }
}

bool symmetric(const Tensor& m) {
  double scale = 1.0;
  for (double v : m.data()) scale = std::max(scale, std::abs(v));
  for (std::size_t i = 0; i < m.dim(0); ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (std::abs(m.at(i, j) - m.at(j, i)) > 1e-9 * scale) return false;
  return true;
}

// Cholesky of m + jitter·I; false if a pivot is not positive.
bool cholesky_succeeds(const Tensor& m, double jitter) {
  const std::size_t n = m.dim(0);
  std::vector<double> l(n * n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    double d = m.at(j, j) + jitter;
    for (std::size_t k = 0; k < j; ++k) d -= l[j * n + k] * l[j * n + k];
    if (!(d > 0.0)) return false;
    l[j * n + j] = std::sqrt(d);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = m.at(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l[i * n + k] * l[j * n + k];
      l[i * n + j] = s / l[j * n + j];
    }
  }
  return true;
}

NodeId quadratic_form(Tape& t, NodeId M, NodeId S) {
  return matmul(t, matmul(t, M, S), transpose(t, M));
}

}  // namespace

KalmanParams make_params(Tape& t, NodeId A, NodeId B_w, NodeId Q, NodeId C_z, NodeId C_y, NodeId Sigma0) {
  KalmanParams p{A, B_w, Q, C_z, C_y, Sigma0, {}, 0, 0, 0, 0};
  const Shape& bs = t.shape(B_w);
  if (bs.size() != 2) throw ShapeError("kalman: B_w must be a matrix, got " + shape_string(bs));
  p.n = bs[0];
  p.q = bs[1];
  require_matrix(t, A, p.n, p.n, "A");
  require_matrix(t, Q, p.q, p.q, "Q");
  require_matrix(t, Sigma0, p.n, p.n, "Sigma0");
  const Shape& cz = t.shape(C_z);
  const Shape& cy = t.shape(C_y);
  if (cz.size() != 2 || cz[1] != p.n) throw ShapeError("kalman: C_z has shape " + shape_string(cz));
  if (cy.size() != 2 || cy[1] != p.n) throw ShapeError("kalman: C_y has shape " + shape_string(cy));
  p.d = cz[0];
  p.p = cy[0];

  const Tensor& qv = t.value(Q);
  double qscale = 0.0;
  for (double v : qv.data()) qscale = std::max(qscale, std::abs(v));
  if (!symmetric(qv) || !cholesky_succeeds(qv, 1e-12 * (1.0 + qscale))) {
    throw Error("kalman: Q must be symmetric positive semidefinite");
  }
  const Tensor& sv = t.value(Sigma0);
  if (!symmetric(sv) || !cholesky_succeeds(sv, 0.0)) {
    throw Error("kalman: Sigma0 must be symmetric positive definite");
  }
  p.process_cov = symmetrize(t, quadratic_form(t, B_w, Q));
  return p;
}

KalmanParams instantiate(Tape& t, const KalmanMatrices& m, const Learnable& learnable) {
  auto node = [&t](const Tensor& v, bool trainable, const char* name) {
    return trainable ? t.parameter(v, name) : t.constant(v);
  };
  return make_params(t, node(m.A, learnable.A, "A"), node(m.B_w, learnable.B_w, "B_w"), node(m.Q, learnable.Q, "Q"),
                     node(m.C_z, learnable.C_z, "C_z"), node(m.C_y, learnable.C_y, "C_y"),
                     node(m.Sigma0, learnable.Sigma0, "Sigma0"));
}

DynamicsFn linear_dynamics(NodeId A) {
  return DynamicsFn{[A](Tape& t, NodeId x) { return matmul(t, A, x); }, [A](Tape&, NodeId) { return A; }};
}

DynamicsFn unicycle_dynamics(double dt) {
  auto components = [](Tape& t, NodeId x) {
    if (t.shape(x) != Shape{5}) throw ShapeError("unicycle: state must be a 5-vector, got " + shape_string(t.shape(x)));
    std::array<NodeId, 5> c;
    for (std::size_t i = 0; i < 5; ++i) c[i] = select(t, x, i);
    return c;
  };
  DynamicsFn dyn;
  dyn.f = [dt, components](Tape& t, NodeId x) {
    const auto [px, py, heading, v, w] = components(t, x);
    NodeId step = scale(t, v, dt);
    NodeId parts[] = {add(t, px, mul(t, step, cos(t, heading))), add(t, py, mul(t, step, sin(t, heading))),
                      add(t, heading, scale(t, w, dt)), v, w};
    return pack(t, parts, {5});
  };
  dyn.jacobian = [dt, components](Tape& t, NodeId x) {
    const auto state = components(t, x);
    const NodeId heading = state[2];
    const NodeId v = state[3];
    NodeId zero = t.constant(Tensor::scalar(0.0));
    NodeId one = t.constant(Tensor::scalar(1.0));
    NodeId dtn = t.constant(Tensor::scalar(dt));
    NodeId c = cos(t, heading);
    NodeId s = sin(t, heading);
    NodeId dx_dtheta = scale(t, mul(t, v, s), -dt);
    NodeId dy_dtheta = scale(t, mul(t, v, c), dt);
    NodeId entries[] = {one,  zero, dx_dtheta, scale(t, c, dt), zero,  //
                        zero, one,  dy_dtheta, scale(t, s, dt), zero,  //
                        zero, zero, one,       zero,            dtn,   //
                        zero, zero, zero,      one,             zero,  //
                        zero, zero, zero,      zero,            one};
    return pack(t, entries, {5, 5});
  };
  return dyn;
}

FilterState predict(Tape& t, const FilterState& state, const KalmanParams& params) {
  NodeId mean = matmul(t, params.A, state.mean);
  NodeId cov = symmetrize(t, add(t, quadratic_form(t, params.A, state.cov), params.process_cov));
  return {mean, cov};
}

FilterState predict(Tape& t, const FilterState& state, const KalmanParams& params, const DynamicsFn& dyn) {
  NodeId jac = ekf_linearize(t, state, dyn);
  NodeId mean = dyn.f(t, state.mean);
  NodeId cov = symmetrize(t, add(t, quadratic_form(t, jac, state.cov), params.process_cov));
  return {mean, cov};
}

NodeId ekf_linearize(Tape& t, const FilterState& state, const DynamicsFn& dyn) {
  return dyn.jacobian(t, state.mean);
}

FilterState update(Tape& t, const FilterState& prior, NodeId z, NodeId R, const KalmanParams& params) {
  const NodeId C = params.C_z;
  // S = C Σ' Cᵀ + R;  Kᵀ = S⁻¹ C Σ'  (S and Σ' symmetric)
  NodeId C_sigma = matmul(t, C, prior.cov);
  NodeId innovation_cov = add(t, matmul(t, C_sigma, transpose(t, C)), R);
  NodeId gain = transpose(t, spd_solve(t, innovation_cov, C_sigma));
  NodeId residual = sub(t, z, matmul(t, C, prior.mean));
  NodeId mean = add(t, prior.mean, matmul(t, gain, residual));
  NodeId identity = t.constant(Tensor::identity(params.n));
  NodeId cov = symmetrize(t, matmul(t, sub(t, identity, matmul(t, gain, C)), prior.cov));
  return {mean, cov};
}

NodeId observation_covariance(Tape& t, NodeId l_hat) {
  NodeId L = lower_triangular_expdiag(t, l_hat);
  return matmul(t, L, transpose(t, L));
}

CellResult kf_cell(Tape& t, const FilterState& prior, NodeId z, NodeId l_hat, const KalmanParams& params,
                   const DynamicsFn* dyn) {
  FilterState posterior = update(t, prior, z, observation_covariance(t, l_hat), params);
  FilterState next = dyn ? predict(t, posterior, params, *dyn) : predict(t, posterior, params);
  return {posterior, next};
}

GaussianOutput output(Tape& t, const FilterState& state, NodeId C_y) {
  return {matmul(t, C_y, state.mean), symmetrize(t, quadratic_form(t, C_y, state.cov))};
}

std::vector<FilterState> unroll(Tape& t, std::span<const NodeId> z, std::span<const NodeId> R, const FilterState& init,
                                const KalmanParams& params, FilterMode mode, const DynamicsFn* dyn) {
  if (z.empty()) throw Error("unroll: need at least one observation");
  if (R.size() != z.size()) throw ShapeError("unroll: observation and covariance counts differ");
  if (mode == FilterMode::Ekf && dyn == nullptr) throw Error("unroll: EKF mode requires dynamics");
  std::vector<FilterState> posteriors;
  posteriors.reserve(z.size());
  FilterState prior = init;
  for (std::size_t step = 0; step < z.size(); ++step) {
    posteriors.push_back(update(t, prior, z[step], R[step], params));
    if (step + 1 == z.size()) break;
    prior = mode == FilterMode::Ekf ? predict(t, posteriors.back(), params, *dyn) : predict(t, posteriors.back(), params);
  }
  return posteriors;
}

std::vector<FilterState> unroll_lhat(Tape& t, std::span<const NodeId> z, std::span<const NodeId> l_hat,
                                     const FilterState& init, const KalmanParams& params, FilterMode mode,
                                     const DynamicsFn* dyn) {
  std::vector<NodeId> R;
  R.reserve(l_hat.size());
  for (NodeId l : l_hat) R.push_back(observation_covariance(t, l));
  return unroll(t, z, R, init, params, mode, dyn);
}

}  // namespace bkf
