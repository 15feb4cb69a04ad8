#pragma once

#include <functional>
#include <span>
#include <vector>

#include "bkf/graph.hpp"

namespace bkf {

/// Gaussian belief (mean, covariance) as nodes on a tape.
struct FilterState {
  NodeId mean;  ///< n-vector
  NodeId cov;   ///< n×n, symmetric
};

/// Numeric system description; instantiate() places it on a tape.
struct KalmanMatrices {
  Tensor A;       ///< n×n dynamics (ignored by the EKF path)
  Tensor B_w;     ///< n×q noise input
  Tensor Q;       ///< q×q process-noise covariance
  Tensor C_z;     ///< d×n observation matrix
  Tensor C_y;     ///< p×n label matrix
  Tensor Sigma0;  ///< n×n initial covariance
};

struct Learnable {
  bool A = false;
  bool B_w = false;
  bool Q = false;
  bool C_z = false;
  bool C_y = false;
  bool Sigma0 = false;
};

/// System matrices as tape nodes, with B_w·Q·B_wᵀ precomputed once.
struct KalmanParams {
  NodeId A, B_w, Q, C_z, C_y, Sigma0;
  NodeId process_cov;
  std::size_t n = 0, q = 0, d = 0, p = 0;
};

/// Validates dimensions, Q symmetric PSD and Sigma0 symmetric PD.
KalmanParams make_params(Tape& t, NodeId A, NodeId B_w, NodeId Q, NodeId C_z, NodeId C_y, NodeId Sigma0);
KalmanParams instantiate(Tape& t, const KalmanMatrices& m, const Learnable& learnable = {});

/// Differentiable state transition and its Jacobian, both built from graph
/// ops so gradients flow through the linearization point.
struct DynamicsFn {
  std::function<NodeId(Tape&, NodeId)> f;
  std::function<NodeId(Tape&, NodeId)> jacobian;
};

/// f(x) = A·x with Jacobian A; makes the EKF path reproduce the KF exactly.
DynamicsFn linear_dynamics(NodeId A);

/// Unicycle motion over state (x, y, θ, v, ω):
/// x' = x + v·cosθ·dt, y' = y + v·sinθ·dt, θ' = θ + ω·dt, v' = v, ω' = ω.
DynamicsFn unicycle_dynamics(double dt);

enum class FilterMode { Kf, Ekf };

/// μ' = A·μ, Σ' = A·Σ·Aᵀ + B_w·Q·B_wᵀ (symmetrized).
FilterState predict(Tape& t, const FilterState& state, const KalmanParams& params);
/// EKF variant: μ' = f(μ), with A the Jacobian of f at μ.
FilterState predict(Tape& t, const FilterState& state, const KalmanParams& params, const DynamicsFn& dyn);

/// Observation update with point observation z (d-vector) and covariance R.
/// Throws NotPositiveDefinite if the innovation covariance is not PD.
FilterState update(Tape& t, const FilterState& prior, NodeId z, NodeId R, const KalmanParams& params);

/// R = L·Lᵀ with L = lower_triangular_expdiag(l_hat).
NodeId observation_covariance(Tape& t, NodeId l_hat);

struct CellResult {
  FilterState posterior;
  FilterState next_prior;
};

/// One recurrence step: update with (z, R(l_hat)), then predict the next prior.
CellResult kf_cell(Tape& t, const FilterState& prior, NodeId z, NodeId l_hat, const KalmanParams& params,
                   const DynamicsFn* dyn = nullptr);

NodeId ekf_linearize(Tape& t, const FilterState& state, const DynamicsFn& dyn);

struct GaussianOutput {
  NodeId mean;  ///< C_y·μ
  NodeId cov;   ///< C_y·Σ·C_yᵀ
};
GaussianOutput output(Tape& t, const FilterState& state, NodeId C_y);

/// Unrolls the filter over T observations starting from the prior `init`
/// (no predict precedes the first update). Returns the T posteriors.
std::vector<FilterState> unroll(Tape& t, std::span<const NodeId> z, std::span<const NodeId> R, const FilterState& init,
                                const KalmanParams& params, FilterMode mode = FilterMode::Kf,
                                const DynamicsFn* dyn = nullptr);

/// As unroll(), with R_t built from covariance parameters l_hat_t.
std::vector<FilterState> unroll_lhat(Tape& t, std::span<const NodeId> z, std::span<const NodeId> l_hat,
                                     const FilterState& init, const KalmanParams& params,
                                     FilterMode mode = FilterMode::Kf, const DynamicsFn* dyn = nullptr);

}  // namespace bkf
