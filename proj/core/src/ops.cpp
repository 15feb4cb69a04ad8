#include <cmath>
#include <numeric>
#include <string>
#include <utility>

#include "bkf/error.hpp"
#include "bkf/graph.hpp"

namespace bkf {
namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

void accumulate(Tape& t, NodeId id, const Tensor& g, double factor = 1.0) {
  if (!t.requires_grad(id)) return;
  Tensor& acc = t.grad_accumulator(id);
  const double* src = g.ptr();
  double* dst = acc.ptr();
  for (std::size_t i = 0; i < acc.size(); ++i) dst[i] += factor * src[i];
}

template <class Fwd, class Deriv>
NodeId unary(Tape& t, const char* op, NodeId x, Fwd fwd, Deriv deriv) {
  const Tensor& xv = t.value(x);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  return t.record(op, std::move(out), {x}, [x, deriv](Tape& tape, const Tensor& g) {
    if (!tape.requires_grad(x)) return;
    const Tensor& xv = tape.value(x);
    Tensor& gx = tape.grad_accumulator(x);
    for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += g[i] * deriv(xv[i]);
  });
}

// Splits a shape around `axis` into (outer, extent, inner) block counts.
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

NodeId add(Tape& t, NodeId a, NodeId b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  require_same_shape("add", av, bv);
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  return t.record("add", std::move(out), {a, b}, [a, b](Tape& tape, const Tensor& g) {
    accumulate(tape, a, g);
    accumulate(tape, b, g);
  });
}

NodeId sub(Tape& t, NodeId a, NodeId b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  require_same_shape("sub", av, bv);
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
  return t.record("sub", std::move(out), {a, b}, [a, b](Tape& tape, const Tensor& g) {
    accumulate(tape, a, g);
    accumulate(tape, b, g, -1.0);
  });
}

NodeId mul(Tape& t, NodeId a, NodeId b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  require_same_shape("mul", av, bv);
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  return t.record("mul", std::move(out), {a, b}, [a, b](Tape& tape, const Tensor& g) {
    const Tensor& av = tape.value(a);
    const Tensor& bv = tape.value(b);
    if (tape.requires_grad(a)) {
      Tensor& ga = tape.grad_accumulator(a);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (tape.requires_grad(b)) {
      Tensor& gb = tape.grad_accumulator(b);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

NodeId scale(Tape& t, NodeId x, double factor) {
  const Tensor& xv = t.value(x);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = factor * xv[i];
  return t.record("scale", std::move(out), {x},
                  [x, factor](Tape& tape, const Tensor& g) { accumulate(tape, x, g, factor); });
}

NodeId add_bias(Tape& t, NodeId x, NodeId bias) {
  const Tensor& xv = t.value(x);
  const Tensor& bv = t.value(bias);
  if (bv.rank() != 1 || xv.rank() == 0 || xv.shape().back() != bv.size()) {
    throw ShapeError("add_bias: bias " + shape_string(bv.shape()) + " does not match last axis of " +
                     shape_string(xv.shape()));
  }
  const std::size_t n = bv.size();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] + bv[i % n];
  return t.record("add_bias", std::move(out), {x, bias}, [x, bias, n](Tape& tape, const Tensor& g) {
    accumulate(tape, x, g);
    if (tape.requires_grad(bias)) {
      Tensor& gb = tape.grad_accumulator(bias);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
    }
  });
}

NodeId add_n(Tape& t, std::span<const NodeId> terms) {
  if (terms.empty()) throw ShapeError("add_n: no terms");
  const Tensor& first = t.value(terms.front());
  Tensor out(first.shape());
  for (NodeId id : terms) {
    const Tensor& v = t.value(id);
    require_same_shape("add_n", first, v);
    for (std::size_t i = 0; i < v.size(); ++i) out[i] += v[i];
  }
  std::vector<NodeId> inputs(terms.begin(), terms.end());
  return t.record("add_n", std::move(out), inputs, [inputs](Tape& tape, const Tensor& g) {
    for (NodeId id : inputs) accumulate(tape, id, g);
  });
}

NodeId transpose(Tape& t, NodeId x) {
  const Tensor& xv = t.value(x);
  if (xv.rank() != 2) throw ShapeError("transpose: expected a matrix, got " + shape_string(xv.shape()));
  const std::size_t r = xv.dim(0);
  const std::size_t c = xv.dim(1);
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(j, i) = xv.at(i, j);
  return t.record("transpose", std::move(out), {x}, [x, r, c](Tape& tape, const Tensor& g) {
    if (!tape.requires_grad(x)) return;
    Tensor& gx = tape.grad_accumulator(x);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gx.at(i, j) += g.at(j, i);
  });
}

NodeId reshape(Tape& t, NodeId x, Shape shape) {
  Tensor out = t.value(x).reshaped(std::move(shape));
  return t.record("reshape", std::move(out), {x},
                  [x](Tape& tape, const Tensor& g) { accumulate(tape, x, g); });
}

NodeId concat(Tape& t, std::span<const NodeId> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no parts");
  const Shape& ref = t.value(parts.front()).shape();
  if (axis >= ref.size()) throw ShapeError("concat: axis out of range for " + shape_string(ref));
  Shape out_shape = ref;
  out_shape[axis] = 0;
  for (NodeId id : parts) {
    const Shape& s = t.value(id).shape();
    bool ok = s.size() == ref.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == ref[i];
    if (!ok) throw ShapeError("concat: incompatible part " + shape_string(s) + " vs " + shape_string(ref));
    out_shape[axis] += s[axis];
  }
  Tensor out(out_shape);
  const AxisSplit os = split_axis(out_shape, axis);
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (NodeId id : parts) {
    const Tensor& v = t.value(id);
    const std::size_t ext = v.dim(axis);
    for (std::size_t o = 0; o < os.outer; ++o) {
      const double* src = v.ptr() + o * ext * os.inner;
      double* dst = out.ptr() + (o * os.extent + offset) * os.inner;
      std::copy(src, src + ext * os.inner, dst);
    }
    offsets.push_back(offset);
    offset += ext;
  }
  std::vector<NodeId> inputs(parts.begin(), parts.end());
  return t.record("concat", std::move(out), inputs,
                  [inputs, offsets, os, axis](Tape& tape, const Tensor& g) {
                    for (std::size_t p = 0; p < inputs.size(); ++p) {
                      if (!tape.requires_grad(inputs[p])) continue;
                      Tensor& gp = tape.grad_accumulator(inputs[p]);
                      const std::size_t ext = gp.dim(axis);
                      for (std::size_t o = 0; o < os.outer; ++o) {
                        const double* src = g.ptr() + (o * os.extent + offsets[p]) * os.inner;
                        double* dst = gp.ptr() + o * ext * os.inner;
                        for (std::size_t i = 0; i < ext * os.inner; ++i) dst[i] += src[i];
                      }
                    }
                  });
}

NodeId slice(Tape& t, NodeId x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Tensor& xv = t.value(x);
  if (axis >= xv.rank() || begin >= end || end > xv.dim(axis)) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") on axis " +
                     std::to_string(axis) + " out of bounds for " + shape_string(xv.shape()));
  }
  Shape out_shape = xv.shape();
  out_shape[axis] = end - begin;
  const AxisSplit is = split_axis(xv.shape(), axis);
  const std::size_t ext = end - begin;
  Tensor out(out_shape);
  for (std::size_t o = 0; o < is.outer; ++o) {
    const double* src = xv.ptr() + (o * is.extent + begin) * is.inner;
    std::copy(src, src + ext * is.inner, out.ptr() + o * ext * is.inner);
  }
  return t.record("slice", std::move(out), {x}, [x, is, begin, ext](Tape& tape, const Tensor& g) {
    if (!tape.requires_grad(x)) return;
    Tensor& gx = tape.grad_accumulator(x);
    for (std::size_t o = 0; o < is.outer; ++o) {
      double* dst = gx.ptr() + (o * is.extent + begin) * is.inner;
      const double* src = g.ptr() + o * ext * is.inner;
      for (std::size_t i = 0; i < ext * is.inner; ++i) dst[i] += src[i];
    }
  });
}

NodeId select(Tape& t, NodeId x, std::size_t i) {
  const Tensor& xv = t.value(x);
  if (xv.rank() == 0 || i >= xv.dim(0)) {
    throw ShapeError("select: index " + std::to_string(i) + " out of bounds for " + shape_string(xv.shape()));
  }
  Shape out_shape(xv.shape().begin() + 1, xv.shape().end());
  const std::size_t block = shape_size(out_shape);
  Tensor out(out_shape, std::vector<double>(xv.ptr() + i * block, xv.ptr() + (i + 1) * block));
  return t.record("select", std::move(out), {x}, [x, i, block](Tape& tape, const Tensor& g) {
    if (!tape.requires_grad(x)) return;
    double* dst = tape.grad_accumulator(x).ptr() + i * block;
    for (std::size_t k = 0; k < block; ++k) dst[k] += g[k];
  });
}

NodeId pack(Tape& t, std::span<const NodeId> parts, Shape shape) {
  std::vector<double> data;
  data.reserve(shape_size(shape));
  for (NodeId id : parts) {
    auto v = t.value(id).data();
    data.insert(data.end(), v.begin(), v.end());
  }
  if (data.size() != shape_size(shape)) {
    throw ShapeError("pack: " + std::to_string(data.size()) + " elements do not fill " + shape_string(shape));
  }
  std::vector<NodeId> inputs(parts.begin(), parts.end());
  return t.record("pack", Tensor(std::move(shape), std::move(data)), inputs,
                  [inputs](Tape& tape, const Tensor& g) {
                    std::size_t offset = 0;
                    for (NodeId id : inputs) {
                      const std::size_t n = tape.value(id).size();
                      if (tape.requires_grad(id)) {
                        Tensor& gi = tape.grad_accumulator(id);
                        for (std::size_t k = 0; k < n; ++k) gi[k] += g[offset + k];
                      }
                      offset += n;
                    }
                  });
}

NodeId symmetrize(Tape& t, NodeId x) {
  const Tensor& xv = t.value(x);
  if (xv.rank() != 2 || xv.dim(0) != xv.dim(1)) {
    throw ShapeError("symmetrize: expected a square matrix, got " + shape_string(xv.shape()));
  }
  const std::size_t n = xv.dim(0);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) = 0.5 * (xv.at(i, j) + xv.at(j, i));
  return t.record("symmetrize", std::move(out), {x}, [x, n](Tape& tape, const Tensor& g) {
    if (!tape.requires_grad(x)) return;
    Tensor& gx = tape.grad_accumulator(x);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) gx.at(i, j) += 0.5 * (g.at(i, j) + g.at(j, i));
  });
}

NodeId matmul(Tape& t, NodeId a, NodeId b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  std::size_t m = 0, k = 0, kb = 0, n = 0;
  Shape out_shape;
  if (av.rank() == 2 && bv.rank() == 2) {
    m = av.dim(0), k = av.dim(1), kb = bv.dim(0), n = bv.dim(1);
    out_shape = {m, n};
  } else if (av.rank() == 2 && bv.rank() == 1) {
    m = av.dim(0), k = av.dim(1), kb = bv.dim(0), n = 1;
    out_shape = {m};
  } else if (av.rank() == 1 && bv.rank() == 2) {
    m = 1, k = av.dim(0), kb = bv.dim(0), n = bv.dim(1);
    out_shape = {n};
  } else {
    kb = k + 1;
  }
  if (k != kb) {
    throw ShapeError("matmul: cannot multiply " + shape_string(av.shape()) + " by " + shape_string(bv.shape()));
  }
  Tensor out(out_shape);
  const double* A = av.ptr();
  const double* B = bv.ptr();
  double* C = out.ptr();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      const double* brow = B + p * n;
      double* crow = C + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  return t.record("matmul", std::move(out), {a, b}, [a, b, m, k, n](Tape& tape, const Tensor& g) {
    const double* G = g.ptr();
    if (tape.requires_grad(a)) {
      const double* B = tape.value(b).ptr();
      double* GA = tape.grad_accumulator(a).ptr();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += G[i * n + j] * B[p * n + j];
          GA[i * k + p] += s;
        }
    }
    if (tape.requires_grad(b)) {
      const double* A = tape.value(a).ptr();
      double* GB = tape.grad_accumulator(b).ptr();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = A[i * k + p];
          for (std::size_t j = 0; j < n; ++j) GB[p * n + j] += aip * G[i * n + j];
        }
    }
  });
}

NodeId sum(Tape& t, NodeId x) {
  const Tensor& xv = t.value(x);
  const double s = std::accumulate(xv.data().begin(), xv.data().end(), 0.0);
  return t.record("sum", Tensor::scalar(s), {x}, [x](Tape& tape, const Tensor& g) {
    if (!tape.requires_grad(x)) return;
    for (double& v : tape.grad_accumulator(x).data()) v += g[0];
  });
}

NodeId sum_squares(Tape& t, NodeId x) {
  const Tensor& xv = t.value(x);
  double s = 0.0;
  for (double v : xv.data()) s += v * v;
  return t.record("sum_squares", Tensor::scalar(s), {x}, [x](Tape& tape, const Tensor& g) {
    if (!tape.requires_grad(x)) return;
    const Tensor& xv = tape.value(x);
    Tensor& gx = tape.grad_accumulator(x);
    for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += 2.0 * g[0] * xv[i];
  });
}

NodeId relu(Tape& t, NodeId x) {
  const Tensor& xv = t.value(x);
  Tensor out(xv.shape());
  std::uint64_t word = 0;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const bool on = xv[i] > 0.0;
    out[i] = on ? xv[i] : 0.0;
    word = (word << 1) | static_cast<std::uint64_t>(on);
    if (i % 64 == 63) {
      t.note_branch(word);
      word = 0;
    }
  }
  t.note_branch(word);
  return t.record("relu", std::move(out), {x}, [x](Tape& tape, const Tensor& g) {
    if (!tape.requires_grad(x)) return;
    const Tensor& xv = tape.value(x);
    Tensor& gx = tape.grad_accumulator(x);
    for (std::size_t i = 0; i < xv.size(); ++i)
      if (xv[i] > 0.0) gx[i] += g[i];
  });
}

NodeId exp(Tape& t, NodeId x) {
  return unary(
      t, "exp", x, [](double v) { return std::exp(v); }, [](double v) { return std::exp(v); });
}

NodeId log(Tape& t, NodeId x) {
  return unary(
      t, "log", x, [](double v) { return std::log(v); }, [](double v) { return 1.0 / v; });
}

namespace {
double stable_sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}
}  // namespace

NodeId sigmoid(Tape& t, NodeId x) {
  return unary(t, "sigmoid", x, stable_sigmoid, [](double v) {
    const double s = stable_sigmoid(v);
    return s * (1.0 - s);
  });
}

NodeId tanh(Tape& t, NodeId x) {
  return unary(
      t, "tanh", x, [](double v) { return std::tanh(v); },
      [](double v) {
        const double y = std::tanh(v);
        return 1.0 - y * y;
      });
}

NodeId sin(Tape& t, NodeId x) {
  return unary(
      t, "sin", x, [](double v) { return std::sin(v); }, [](double v) { return std::cos(v); });
}

NodeId cos(Tape& t, NodeId x) {
  return unary(
      t, "cos", x, [](double v) { return std::cos(v); }, [](double v) { return -std::sin(v); });
}

}  // namespace bkf
