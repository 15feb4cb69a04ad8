#include "bkf/cli/gradcheck_suite.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "bkf/error.hpp"
#include "bkf/gradcheck.hpp"
#include "bkf/kalman.hpp"
#include "bkf/nets.hpp"
#include "bkf/world.hpp"

namespace bkf::cli {
namespace {

// --- dense reference math (row-major, no shared code with the filter) -------

struct Mat {
  std::size_t r = 0, c = 0;
  std::vector<double> v;

  Mat() = default;
  Mat(std::size_t rows, std::size_t cols) : r(rows), c(cols), v(rows * cols, 0.0) {}
  Mat(std::size_t rows, std::size_t cols, std::vector<double> values) : r(rows), c(cols), v(std::move(values)) {}
  double& operator()(std::size_t i, std::size_t j) { return v[i * c + j]; }
  double operator()(std::size_t i, std::size_t j) const { return v[i * c + j]; }
};

Mat operator*(const Mat& a, const Mat& b) {
  Mat out(a.r, b.c);
  for (std::size_t i = 0; i < a.r; ++i)
    for (std::size_t k = 0; k < a.c; ++k)
      for (std::size_t j = 0; j < b.c; ++j) out(i, j) += a(i, k) * b(k, j);
  return out;
}

Mat operator+(Mat a, const Mat& b) {
  for (std::size_t i = 0; i < a.v.size(); ++i) a.v[i] += b.v[i];
  return a;
}

Mat operator-(Mat a, const Mat& b) {
  for (std::size_t i = 0; i < a.v.size(); ++i) a.v[i] -= b.v[i];
  return a;
}

Mat tr(const Mat& a) {
  Mat out(a.c, a.r);
  for (std::size_t i = 0; i < a.r; ++i)
    for (std::size_t j = 0; j < a.c; ++j) out(j, i) = a(i, j);
  return out;
}

// Solves S·X = B for SPD S by Cholesky.
Mat chol_solve(const Mat& S, const Mat& B) {
  const std::size_t n = S.r;
  Mat L(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double d = S(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= L(j, k) * L(j, k);
    if (!(d > 0.0)) throw Error("dense oracle: joint observation covariance is not positive definite");
    L(j, j) = std::sqrt(d);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = S(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= L(i, k) * L(j, k);
      L(i, j) = s / L(j, j);
    }
  }
  Mat X = B;
  for (std::size_t col = 0; col < B.c; ++col) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = X(i, col);
      for (std::size_t k = 0; k < i; ++k) s -= L(i, k) * X(k, col);
      X(i, col) = s / L(i, i);
    }
    for (std::size_t i = n; i-- > 0;) {
      double s = X(i, col);
      for (std::size_t k = i + 1; k < n; ++k) s -= L(k, i) * X(k, col);
      X(i, col) = s / L(i, i);
    }
  }
  return X;
}

Mat block(const Mat& m, const std::vector<std::size_t>& rows, const std::vector<std::size_t>& cols) {
  Mat out(rows.size(), cols.size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j) out(i, j) = m(rows[i], cols[j]);
  return out;
}

struct Marginal {
  Mat mean, cov;
};

// p(x_t | z_1..z_t) for each t from the joint of (x_1..x_T, z_1..z_T).
std::vector<Marginal> dense_filter(const DenseSystem& s) {
  const std::size_t n = s.n, d = s.d, T = s.T, N = T * (n + d);
  const Mat A(n, n, s.A), Bw(n, s.q, s.B_w), Q(s.q, s.q, s.Q), C(d, n, s.C);
  const Mat noise = Bw * Q * tr(Bw);

  std::vector<Mat> mean_x{Mat(n, 1, s.mu0)}, var_x{Mat(n, n, s.Sigma0)};
  for (std::size_t t = 1; t < T; ++t) {
    mean_x.push_back(A * mean_x.back());
    var_x.push_back(A * var_x.back() * tr(A) + noise);
  }
  // cross[t][u] = Cov(x_t, x_u) for t >= u, which is A^(t-u) Var(x_u).
  std::vector<std::vector<Mat>> cross(T, std::vector<Mat>(T));
  for (std::size_t u = 0; u < T; ++u) {
    cross[u][u] = var_x[u];
    for (std::size_t t = u + 1; t < T; ++t) cross[t][u] = A * cross[t - 1][u];
  }
  auto cov_x = [&](std::size_t t, std::size_t u) { return t >= u ? cross[t][u] : tr(cross[u][t]); };

  Mat mu(N, 1), S(N, N);
  auto xi = [&](std::size_t t, std::size_t k) { return t * n + k; };
  auto zi = [&](std::size_t t, std::size_t k) { return T * n + t * d + k; };
  for (std::size_t t = 0; t < T; ++t) {
    const Mat mz = C * mean_x[t];
    for (std::size_t k = 0; k < n; ++k) mu(xi(t, k), 0) = mean_x[t](k, 0);
    for (std::size_t k = 0; k < d; ++k) mu(zi(t, k), 0) = mz(k, 0);
  }
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t u = 0; u < T; ++u) {
      const Mat xx = cov_x(t, u);
      const Mat xz = xx * tr(C);
      Mat zz = C * xx * tr(C);
      if (t == u) zz = zz + Mat(d, d, s.R[t]);
      for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t b = 0; b < n; ++b) S(xi(t, a), xi(u, b)) = xx(a, b);
        for (std::size_t b = 0; b < d; ++b) {
          S(xi(t, a), zi(u, b)) = xz(a, b);
          S(zi(u, b), xi(t, a)) = xz(a, b);
        }
      }
      for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = 0; b < d; ++b) S(zi(t, a), zi(u, b)) = zz(a, b);
    }
  }

  std::vector<Marginal> out;
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<std::size_t> keep, given;
    for (std::size_t k = 0; k < n; ++k) keep.push_back(xi(t, k));
    Mat observed(0, 1);
    for (std::size_t u = 0; u <= t; ++u)
      for (std::size_t k = 0; k < d; ++k) {
        given.push_back(zi(u, k));
        observed.v.push_back(s.z[u][k] - mu(zi(u, k), 0));
      }
    observed.r = given.size();
    const Mat Sab = block(S, keep, given);
    const Mat Sbb = block(S, given, given);
    const Mat mean = block(mu, keep, {0}) + Sab * chol_solve(Sbb, observed);
    const Mat cov = block(S, keep, keep) - Sab * chol_solve(Sbb, tr(Sab));
    out.push_back({mean, cov});
  }
  return out;
}

// --- random inputs ----------------------------------------------------------

Tensor gaussian(std::mt19937_64& rng, Shape shape, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = g(rng);
  return t;
}

// Bounded away from zero so ReLU and max-pool inputs sit off their kinks.
Tensor off_kink(std::mt19937_64& rng, Shape shape) {
  std::uniform_real_distribution<double> u(0.1, 1.0);
  std::bernoulli_distribution sign(0.5);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = sign(rng) ? u(rng) : -u(rng);
  return t;
}

Tensor positive(std::mt19937_64& rng, Shape shape) {
  std::uniform_real_distribution<double> u(0.5, 2.0);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = u(rng);
  return t;
}

std::vector<double> spd(std::mt19937_64& rng, std::size_t n, double ridge) {
  const Tensor M = gaussian(rng, {n, n});
  std::vector<double> S(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < n; ++k) acc += M.at(i, k) * M.at(j, k);
      S[i * n + j] = acc / double(n) + (i == j ? ridge : 0.0);
    }
  return S;
}

// Random-weighted sum, so every output coordinate gets a distinct adjoint.
NodeId weighted(Tape& t, NodeId x, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum(t, mul(t, x, t.constant(gaussian(rng, t.shape(x)))));
}

struct OpCase {
  std::string name;
  std::function<std::vector<Tensor>(std::mt19937_64&, std::size_t)> inputs;  // size factor
  std::function<NodeId(Tape&, std::span<const NodeId>)> body;
};

std::vector<OpCase> op_cases() {
  using P = std::span<const NodeId>;
  using R = std::mt19937_64;
  std::vector<OpCase> c;
  c.push_back({"add", [](R& r, std::size_t k) { return std::vector{gaussian(r, {k, 3}), gaussian(r, {k, 3})}; },
               [](Tape& t, P p) { return add(t, p[0], p[1]); }});
  c.push_back({"sub", [](R& r, std::size_t k) { return std::vector{gaussian(r, {k, 3}), gaussian(r, {k, 3})}; },
               [](Tape& t, P p) { return sub(t, p[0], p[1]); }});
  c.push_back({"mul", [](R& r, std::size_t k) { return std::vector{gaussian(r, {k, 3}), gaussian(r, {k, 3})}; },
               [](Tape& t, P p) { return mul(t, p[0], p[1]); }});
  c.push_back({"scale", [](R& r, std::size_t k) { return std::vector{gaussian(r, {k, 2})}; },
               [](Tape& t, P p) { return scale(t, p[0], -1.7); }});
  c.push_back({"add_bias", [](R& r, std::size_t k) { return std::vector{gaussian(r, {k, 4}), gaussian(r, {4})}; },
               [](Tape& t, P p) { return add_bias(t, p[0], p[1]); }});
  c.push_back({"add_n",
               [](R& r, std::size_t k) { return std::vector{gaussian(r, {k}), gaussian(r, {k}), gaussian(r, {k})}; },
               [](Tape& t, P p) { return add_n(t, p); }});
  c.push_back({"transpose", [](R& r, std::size_t k) { return std::vector{gaussian(r, {k, 3})}; },
               [](Tape& t, P p) { return transpose(t, p[0]); }});
  c.push_back({"reshape", [](R& r, std::size_t k) { return std::vector{gaussian(r, {k, 6})}; },
               [](Tape& t, P p) { return reshape(t, p[0], {3, 2 * t.shape(p[0])[0]}); }});
  c.push_back({"concat", [](R& r, std::size_t k) { return std::vector{gaussian(r, {2, k}), gaussian(r, {2, 3})}; },
               [](Tape& t, P p) { return concat(t, p, 1); }});
  c.push_back({"slice", [](R& r, std::size_t k) { return std::vector{gaussian(r, {k + 3, 2})}; },
               [](Tape& t, P p) { return slice(t, p[0], 0, 1, 3); }});
  c.push_back({"select", [](R& r, std::size_t k) { return std::vector{gaussian(r, {k + 1, 3})}; },
               [](Tape& t, P p) { return select(t, p[0], 1); }});
  c.push_back({"pack", [](R& r, std::size_t k) { return std::vector{gaussian(r, {k}), gaussian(r, {2, 2})}; },
               [](Tape& t, P p) { return pack(t, p, {t.shape(p[0])[0] + 4}); }});
  c.push_back({"symmetrize", [](R& r, std::size_t k) { return std::vector{gaussian(r, {k, k})}; },
               [](Tape& t, P p) { return symmetrize(t, p[0]); }});
  c.push_back({"matmul", [](R& r, std::size_t k) { return std::vector{gaussian(r, {k, 3}), gaussian(r, {3, 2})}; },
               [](Tape& t, P p) { return matmul(t, p[0], p[1]); }});
  c.push_back({"matmul_vector", [](R& r, std::size_t k) { return std::vector{gaussian(r, {k, 3}), gaussian(r, {3})}; },
               [](Tape& t, P p) { return matmul(t, p[0], p[1]); }});
  c.push_back({"sum", [](R& r, std::size_t k) { return std::vector{gaussian(r, {k, 2})}; },
               [](Tape& t, P p) { return sum(t, p[0]); }});
  c.push_back({"sum_squares", [](R& r, std::size_t k) { return std::vector{gaussian(r, {k, 2})}; },
               [](Tape& t, P p) { return sum_squares(t, p[0]); }});
  c.push_back({"relu", [](R& r, std::size_t k) { return std::vector{off_kink(r, {k, 3})}; },
               [](Tape& t, P p) { return relu(t, p[0]); }});
  c.push_back({"exp", [](R& r, std::size_t k) { return std::vector{gaussian(r, {k, 2})}; },
               [](Tape& t, P p) { return exp(t, p[0]); }});
  c.push_back({"log", [](R& r, std::size_t k) { return std::vector{positive(r, {k, 2})}; },
               [](Tape& t, P p) { return log(t, p[0]); }});
  c.push_back({"sigmoid", [](R& r, std::size_t k) { return std::vector{gaussian(r, {k, 2})}; },
               [](Tape& t, P p) { return sigmoid(t, p[0]); }});
  c.push_back({"tanh", [](R& r, std::size_t k) { return std::vector{gaussian(r, {k, 2})}; },
               [](Tape& t, P p) { return tanh(t, p[0]); }});
  c.push_back({"sin", [](R& r, std::size_t k) { return std::vector{gaussian(r, {k, 2})}; },
               [](Tape& t, P p) { return sin(t, p[0]); }});
  c.push_back({"cos", [](R& r, std::size_t k) { return std::vector{gaussian(r, {k, 2})}; },
               [](Tape& t, P p) { return cos(t, p[0]); }});
  c.push_back({"conv2d",
               [](R& r, std::size_t k) { return std::vector{gaussian(r, {k + 4, k + 3, 2}), gaussian(r, {3, 3, 2, 3})}; },
               [](Tape& t, P p) { return conv2d(t, p[0], p[1], {2, 1}, Padding::Same); }});
  c.push_back({"conv2d_valid",
               [](R& r, std::size_t k) { return std::vector{gaussian(r, {2, k + 4, k + 4, 2}), gaussian(r, {3, 2, 2, 2})}; },
               [](Tape& t, P p) { return conv2d(t, p[0], p[1], {1, 2}, Padding::Valid); }});
  c.push_back({"max_pool", [](R& r, std::size_t k) { return std::vector{off_kink(r, {k + 3, k + 3, 2})}; },
               [](Tape& t, P p) { return max_pool(t, p[0], {2, 2}, {2, 2}); }});
  c.push_back({"response_norm",
               [](R& r, std::size_t k) {
                 return std::vector{gaussian(r, {k + 2, 3, 2}), gaussian(r, {}), gaussian(r, {}, 0.5)};
               },
               [](Tape& t, P p) { return response_norm(t, p[0], p[1], p[2]); }});
  // A = M·Mᵀ + I keeps the solve well conditioned for every perturbation.
  c.push_back({"spd_solve", [](R& r, std::size_t k) { return std::vector{gaussian(r, {k, k}), gaussian(r, {k, 2})}; },
               [](Tape& t, P p) {
                 const std::size_t n = t.shape(p[0])[0];
                 const NodeId a = add(t, matmul(t, p[0], transpose(t, p[0])), t.constant(Tensor::identity(n)));
                 return spd_solve(t, a, p[1]);
               }});
  c.push_back({"lower_triangular_expdiag", [](R& r, std::size_t k) { return std::vector{gaussian(r, {k * (k + 1) / 2})}; },
               [](Tape& t, P p) { return lower_triangular_expdiag(t, p[0]); }});
  return c;
}

std::string coordinate(const GradCheckResult& r) {
  return r.param_name + "[" + std::to_string(r.coord) + "]";
}

}  // namespace

SuiteScale parse_scale(std::string_view text) {
  if (text == "tiny") return SuiteScale::Tiny;
  if (text == "small") return SuiteScale::Small;
  throw ConfigError("unknown gradcheck scale '" + std::string(text) + "' (expected tiny or small)");
}

bool SuiteReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckOutcome& c) { return c.ok(); });
}

std::vector<CheckOutcome> SuiteReport::failures() const {
  std::vector<CheckOutcome> out;
  for (const auto& c : checks)
    if (!c.ok()) out.push_back(c);
  return out;
}

CheckOutcome SuiteReport::worst(std::string_view group) const {
  CheckOutcome best{std::string(group), "", 0.0, 1.0};
  for (const auto& c : checks) {
    if (c.group != group) continue;
    if (best.location.empty() || c.error / c.threshold > best.error / best.threshold) best = c;
  }
  return best;
}

std::vector<std::string> SuiteReport::groups() const {
  std::vector<std::string> out;
  for (const auto& c : checks)
    if (std::find(out.begin(), out.end(), c.group) == out.end()) out.push_back(c.group);
  return out;
}

DenseSystem random_dense_system(std::uint64_t seed, std::size_t n, std::size_t d, std::size_t q, std::size_t T) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  auto random = [&](std::size_t count, double s) {
    std::vector<double> v(count);
    for (double& x : v) x = s * g(rng);
    return v;
  };
  DenseSystem s;
  s.n = n;
  s.d = d;
  s.q = q;
  s.T = T;
  s.A = random(n * n, 0.3);
  for (std::size_t i = 0; i < n; ++i) s.A[i * n + i] += 0.8;
  s.B_w = random(n * q, 1.0);
  s.Q = spd(rng, q, 0.2);
  s.C = random(d * n, 1.0);
  s.Sigma0 = spd(rng, n, 0.5);
  s.mu0 = random(n, 1.0);
  for (std::size_t t = 0; t < T; ++t) {
    s.R.push_back(spd(rng, d, 0.3));
    s.z.push_back(random(d, 2.0));
  }
  return s;
}

double filter_oracle_deviation(const DenseSystem& s, std::string* where) {
  const std::vector<Marginal> expected = dense_filter(s);

  Tape t;
  KalmanMatrices m;
  m.A = Tensor({s.n, s.n}, s.A);
  m.B_w = Tensor({s.n, s.q}, s.B_w);
  m.Q = Tensor({s.q, s.q}, s.Q);
  m.C_z = Tensor({s.d, s.n}, s.C);
  m.C_y = Tensor::identity(s.n);
  m.Sigma0 = Tensor({s.n, s.n}, s.Sigma0);
  const KalmanParams params = instantiate(t, m);
  std::vector<NodeId> z, R;
  for (std::size_t k = 0; k < s.T; ++k) {
    z.push_back(t.constant(Tensor({s.d}, s.z[k])));
    R.push_back(t.constant(Tensor({s.d, s.d}, s.R[k])));
  }
  const FilterState init{t.constant(Tensor({s.n}, s.mu0)), params.Sigma0};
  const std::vector<FilterState> post = unroll(t, z, R, init, params);

  double worst = 0.0;
  for (std::size_t k = 0; k < s.T; ++k) {
    const Tensor& mean = t.value(post[k].mean);
    const Tensor& cov = t.value(post[k].cov);
    for (std::size_t i = 0; i < s.n; ++i) {
      const double dm = std::abs(mean[i] - expected[k].mean(i, 0));
      if (dm > worst) {
        worst = dm;
        if (where) *where = "step " + std::to_string(k + 1) + " mean[" + std::to_string(i) + "]";
      }
      for (std::size_t j = 0; j < s.n; ++j) {
        const double dc = std::abs(cov.at(i, j) - expected[k].cov(i, j));
        if (dc > worst) {
          worst = dc;
          if (where) *where = "step " + std::to_string(k + 1) + " cov[" + std::to_string(i) + "," + std::to_string(j) + "]";
        }
      }
    }
  }
  return worst;
}

SuiteReport run_gradcheck_suite(SuiteScale scale, std::uint64_t seed) {
  const bool small = scale == SuiteScale::Small;
  SuiteReport report;
  std::mt19937_64 rng(seed ^ 0x6772616463686b00ULL);

  // Every graph op, each wrapped in a random-weighted sum.
  const std::size_t reps = small ? 10 : 3;
  for (const OpCase& op : op_cases()) {
    double worst = 0.0;
    std::string where = op.name;
    for (std::size_t r = 0; r < reps; ++r) {
      const std::size_t size = 2 + (small ? r % 4 : r % 2);
      const std::vector<Tensor> inputs = op.inputs(rng, size);
      const std::uint64_t wseed = rng();
      auto build = [&](Tape& t, std::span<const NodeId> p) { return weighted(t, op.body(t, p), wseed); };
      const GradCheckResult res = grad_check(build, inputs);
      if (res.max_rel_error > worst) worst = res.max_rel_error;
    }
    report.checks.push_back({"ops", where, worst, kOpThreshold});
  }

  // Filter unroll against dense conditioning.
  const std::size_t systems = small ? 100 : 20;
  std::uniform_int_distribution<std::size_t> dim_n(1, 4), dim_d(1, 2), dim_q(1, 2), dim_T(1, 5);
  for (std::size_t k = 0; k < systems; ++k) {
    const DenseSystem sys = random_dense_system(rng(), dim_n(rng), dim_d(rng), dim_q(rng), dim_T(rng));
    std::string where;
    const double dev = filter_oracle_deviation(sys, &where);
    report.checks.push_back({"filter_unroll", "system " + std::to_string(k) + " " + where, dev, kUnrollThreshold});
  }

  // Gradient of the unrolled filter w.r.t. dynamics, observations and covariance parameters.
  const std::size_t grad_systems = small ? 10 : 3;
  for (std::size_t k = 0; k < grad_systems; ++k) {
    const DenseSystem sys = random_dense_system(rng(), 3, 2, 2, small ? 5 : 3);
    const std::uint64_t wseed = rng();
    auto build = [&](Tape& t, std::span<const NodeId> p) {
      const KalmanParams params =
          make_params(t, p[0], t.constant(Tensor({3, 2}, sys.B_w)), t.constant(Tensor({2, 2}, sys.Q)),
                      t.constant(Tensor({2, 3}, sys.C)), t.constant(Tensor::identity(3)),
                      t.constant(Tensor({3, 3}, sys.Sigma0)));
      std::vector<NodeId> z, l;
      for (std::size_t s = 0; s < sys.T; ++s) {
        z.push_back(select(t, p[1], s));
        l.push_back(select(t, p[2], s));
      }
      const FilterState init{t.constant(Tensor({3}, sys.mu0)), params.Sigma0};
      const auto post = unroll_lhat(t, z, l, init, params);
      std::vector<NodeId> terms;
      for (std::size_t s = 0; s < post.size(); ++s) {
        terms.push_back(weighted(t, post[s].mean, wseed + s));
        terms.push_back(weighted(t, post[s].cov, wseed + 100 + s));
      }
      return add_n(t, terms);
    };
    const std::vector<Tensor> inputs{Tensor({3, 3}, sys.A), gaussian(rng, {sys.T, 2}), gaussian(rng, {sys.T, 3}, 0.5)};
    const std::vector<std::string> names{"A", "z", "l_hat"};
    const GradCheckResult res = grad_check(build, inputs, 1e-5, names);
    report.checks.push_back(
        {"filter_gradient", "system " + std::to_string(k) + " " + coordinate(res), res.max_rel_error, kOpThreshold});
  }

  // Tiny BKF end to end, every parameter.
  nets::ModelSpec spec;
  spec.kind = nets::ModelKind::BKF;
  spec.encoder = nets::tracking_encoder_tiny();
  spec.filter = world::tracking_filter_spec(world::DiskWorldConfig::for_size(8));
  const std::size_t models = small ? 3 : 1;
  for (std::size_t k = 0; k < models; ++k) {
    const ParamStore store = nets::init_model(spec, rng());
    std::uniform_real_distribution<double> pixel(0.0, 1.0);
    Tensor images({3, 8, 8, 3});
    for (double& v : images.data()) v = pixel(rng);
    const Tensor init = gaussian(rng, {4}, 0.3);
    const Tensor labels = gaussian(rng, {3, 2}, 0.3);
    auto build = [&](Tape& t, Binder& bind) {
      const nets::SequenceOutput out = nets::run_sequence(t, bind, spec, images, init);
      return sum_squares(t, sub(t, out.predictions, t.constant(labels)));
    };
    const GradCheckResult res = grad_check_params(build, store);
    report.checks.push_back({"tiny_bkf", coordinate(res), res.max_rel_error, kModelThreshold});
  }
  return report;
}

}  // namespace bkf::cli
