#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "bkf/error.hpp"
#include "bkf/graph.hpp"

namespace bkf {
namespace {

// Lower Cholesky factor of an n×n row-major matrix, in place.
void cholesky(std::vector<double>& a, std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) {
    double d = a[j * n + j];
    for (std::size_t k = 0; k < j; ++k) d -= a[j * n + k] * a[j * n + k];
    if (!(d > 0.0)) {
      throw NotPositiveDefinite("spd_solve: matrix is not positive definite (leading minor " +
                                    std::to_string(j + 1) + " of " + std::to_string(n) + ")",
                                j + 1);
    }
    const double l = std::sqrt(d);
    a[j * n + j] = l;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a[i * n + j];
      for (std::size_t k = 0; k < j; ++k) s -= a[i * n + k] * a[j * n + k];
      a[i * n + j] = s / l;
    }
    for (std::size_t i = 0; i < j; ++i) a[i * n + j] = 0.0;
  }
}

// Solves L·Lᵀ·X = B in place for B of shape n×m.
void cholesky_solve(const std::vector<double>& l, std::size_t n, double* b, std::size_t m) {
  for (std::size_t c = 0; c < m; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = b[i * m + c];
      for (std::size_t k = 0; k < i; ++k) s -= l[i * n + k] * b[k * m + c];
      b[i * m + c] = s / l[i * n + i];
    }
    for (std::size_t i = n; i-- > 0;) {
      double s = b[i * m + c];
      for (std::size_t k = i + 1; k < n; ++k) s -= l[k * n + i] * b[k * m + c];
      b[i * m + c] = s / l[i * n + i];
    }
  }
}

}  // namespace

NodeId spd_solve(Tape& t, NodeId a, NodeId b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (av.rank() != 2 || av.dim(0) != av.dim(1) || bv.rank() < 1 || bv.rank() > 2 || bv.dim(0) != av.dim(0)) {
    throw ShapeError("spd_solve: cannot solve " + shape_string(av.shape()) + " against " +
                     shape_string(bv.shape()));
  }
  const std::size_t n = av.dim(0);
  const std::size_t m = bv.rank() == 2 ? bv.dim(1) : 1;
  // Factor the symmetric part so the map A -> X is defined for any square A
  // and its adjoint is the symmetrized one.
  auto factor = std::make_shared<std::vector<double>>(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) (*factor)[i * n + j] = 0.5 * (av.at(i, j) + av.at(j, i));
  cholesky(*factor, n);
  Tensor out(bv);
  cholesky_solve(*factor, n, out.ptr(), m);
  auto solution = std::make_shared<Tensor>(out);
  return t.record("spd_solve", std::move(out), {a, b}, [a, b, factor, solution, n, m](Tape& tape, const Tensor& g) {
    const bool want_a = tape.requires_grad(a);
    const bool want_b = tape.requires_grad(b);
    if (!want_a && !want_b) return;
    Tensor gb(g);
    cholesky_solve(*factor, n, gb.ptr(), m);
    if (want_b) {
      Tensor& acc = tape.grad_accumulator(b);
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += gb[i];
    }
    if (want_a) {
      Tensor& acc = tape.grad_accumulator(a);
      const Tensor& x = *solution;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          double s = 0.0;
          for (std::size_t c = 0; c < m; ++c) {
            s += gb[i * m + c] * x[j * m + c] + gb[j * m + c] * x[i * m + c];
          }
          acc.at(i, j) -= 0.5 * s;
        }
    }
  });
}

std::size_t triangular_root(std::size_t len) {
  std::size_t n = 0;
  while (n * (n + 1) / 2 < len) ++n;
  return n * (n + 1) / 2 == len && len > 0 ? n : 0;
}

NodeId lower_triangular_expdiag(Tape& t, NodeId l_hat) {
  const Tensor& lv = t.value(l_hat);
  const std::size_t n = lv.rank() == 1 ? triangular_root(lv.size()) : 0;
  if (n == 0) {
    throw ShapeError("lower_triangular_expdiag: length " + std::to_string(lv.size()) +
                     " is not a triangular number (shape " + shape_string(lv.shape()) + ")");
  }
  Tensor out({n, n});
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j, ++k) out.at(i, j) = i == j ? std::exp(lv[k]) : lv[k];
  return t.record("lower_triangular_expdiag", std::move(out), {l_hat}, [l_hat, n](Tape& tape, const Tensor& g) {
    if (!tape.requires_grad(l_hat)) return;
    const Tensor& lv = tape.value(l_hat);
    Tensor& gl = tape.grad_accumulator(l_hat);
    std::size_t k = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j <= i; ++j, ++k) gl[k] += i == j ? g.at(i, j) * std::exp(lv[k]) : g.at(i, j);
  });
}

}  // namespace bkf
