#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace bkf::cli {

enum class SuiteScale { Tiny, Small };

/// "tiny" or "small"; anything else throws ConfigError.
SuiteScale parse_scale(std::string_view text);

inline constexpr double kOpThreshold = 1e-6;
inline constexpr double kUnrollThreshold = 1e-10;
inline constexpr double kModelThreshold = 1e-4;

struct CheckOutcome {
  std::string group;     ///< ops, filter_unroll, filter_gradient, tiny_bkf
  std::string location;  ///< op name, system/step or parameter coordinate
  double error = 0.0;    ///< relative error (absolute for filter_unroll)
  double threshold = 0.0;

  bool ok() const { return error < threshold; }
};

struct SuiteReport {
  std::vector<CheckOutcome> checks;

  bool passed() const;
  std::vector<CheckOutcome> failures() const;
  /// Largest error within `group`, relative to its threshold.
  CheckOutcome worst(std::string_view group) const;
  std::vector<std::string> groups() const;
};

/// Finite-difference checks of every graph op, the filter unroll against
/// dense joint-Gaussian conditioning, its gradient, and a tiny BKF end to end.
SuiteReport run_gradcheck_suite(SuiteScale scale, std::uint64_t seed = 0);

/// Filtered means and covariances of one random linear-Gaussian system,
/// obtained by conditioning the dense joint of all states and observations.
struct DenseSystem {
  std::size_t n = 0, d = 0, q = 0, T = 0;
  std::vector<double> A, B_w, Q, C, Sigma0, mu0;  ///< row-major
  std::vector<std::vector<double>> R, z;
};

DenseSystem random_dense_system(std::uint64_t seed, std::size_t n, std::size_t d, std::size_t q, std::size_t T);

/// Largest absolute deviation between the recursive filter and the dense
/// oracle over every posterior mean and covariance entry of `sys`.
double filter_oracle_deviation(const DenseSystem& sys, std::string* where = nullptr);

}  // namespace bkf::cli
