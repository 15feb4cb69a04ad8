#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <utility>

#include "bkf/error.hpp"
#include "bkf/graph.hpp"

namespace bkf {
namespace {

struct ImageDims {
  std::size_t n = 1, h = 0, w = 0, c = 0;
  bool batched = false;
};

ImageDims image_dims(const char* op, const Shape& s) {
  if (s.size() == 3) return {1, s[0], s[1], s[2], false};
  if (s.size() == 4) return {s[0], s[1], s[2], s[3], true};
  throw ShapeError(std::string(op) + ": expected H×W×C or N×H×W×C input, got " + shape_string(s));
}

Shape image_shape(const ImageDims& d) {
  if (d.batched) return {d.n, d.h, d.w, d.c};
  return {d.h, d.w, d.c};
}

struct ConvGeometry {
  ImageDims in, out;
  std::size_t kh = 0, kw = 0;
  std::size_t sy = 1, sx = 1;
  std::size_t pad_top = 0, pad_left = 0;
};

}  // namespace

NodeId conv2d(Tape& t, NodeId input, NodeId kernel, Stride2 stride, Padding padding) {
  const Tensor& xv = t.value(input);
  const Tensor& kv = t.value(kernel);
  ConvGeometry geo;
  geo.in = image_dims("conv2d", xv.shape());
  if (kv.rank() != 4 || kv.dim(2) != geo.in.c) {
    throw ShapeError("conv2d: kernel " + shape_string(kv.shape()) + " incompatible with input " +
                     shape_string(xv.shape()));
  }
  if (stride.y == 0 || stride.x == 0) throw ShapeError("conv2d: stride must be positive");
  geo.kh = kv.dim(0);
  geo.kw = kv.dim(1);
  geo.sy = stride.y;
  geo.sx = stride.x;
  geo.out = geo.in;
  geo.out.c = kv.dim(3);
  if (padding == Padding::Same) {
    geo.out.h = (geo.in.h + geo.sy - 1) / geo.sy;
    geo.out.w = (geo.in.w + geo.sx - 1) / geo.sx;
    const std::size_t need_h = (geo.out.h - 1) * geo.sy + geo.kh;
    const std::size_t need_w = (geo.out.w - 1) * geo.sx + geo.kw;
    geo.pad_top = need_h > geo.in.h ? (need_h - geo.in.h) / 2 : 0;
    geo.pad_left = need_w > geo.in.w ? (need_w - geo.in.w) / 2 : 0;
  } else {
    if (geo.kh > geo.in.h || geo.kw > geo.in.w) {
      throw ShapeError("conv2d: kernel " + shape_string(kv.shape()) + " larger than input " +
                       shape_string(xv.shape()) + " with VALID padding");
    }
    geo.out.h = (geo.in.h - geo.kh) / geo.sy + 1;
    geo.out.w = (geo.in.w - geo.kw) / geo.sx + 1;
  }

  Tensor out(image_shape(geo.out));
  const std::size_t cin = geo.in.c;
  const std::size_t cout = geo.out.c;
  const double* X = xv.ptr();
  const double* K = kv.ptr();
  double* Y = out.ptr();
  for (std::size_t n = 0; n < geo.in.n; ++n) {
    for (std::size_t oy = 0; oy < geo.out.h; ++oy) {
      for (std::size_t ox = 0; ox < geo.out.w; ++ox) {
        double* y = Y + ((n * geo.out.h + oy) * geo.out.w + ox) * cout;
        for (std::size_t ky = 0; ky < geo.kh; ++ky) {
          const long iy = static_cast<long>(oy * geo.sy + ky) - static_cast<long>(geo.pad_top);
          if (iy < 0 || iy >= static_cast<long>(geo.in.h)) continue;
          for (std::size_t kx = 0; kx < geo.kw; ++kx) {
            const long ix = static_cast<long>(ox * geo.sx + kx) - static_cast<long>(geo.pad_left);
            if (ix < 0 || ix >= static_cast<long>(geo.in.w)) continue;
            const double* x = X + ((n * geo.in.h + iy) * geo.in.w + ix) * cin;
            const double* k = K + (ky * geo.kw + kx) * cin * cout;
            for (std::size_t ci = 0; ci < cin; ++ci) {
              const double xval = x[ci];
              const double* krow = k + ci * cout;
              for (std::size_t co = 0; co < cout; ++co) y[co] += xval * krow[co];
            }
          }
        }
      }
    }
  }

  return t.record("conv2d", std::move(out), {input, kernel}, [input, kernel, geo](Tape& tape, const Tensor& g) {
    const bool want_x = tape.requires_grad(input);
    const bool want_k = tape.requires_grad(kernel);
    const std::size_t cin = geo.in.c;
    const std::size_t cout = geo.out.c;
    const double* X = tape.value(input).ptr();
    const double* K = tape.value(kernel).ptr();
    double* GX = want_x ? tape.grad_accumulator(input).ptr() : nullptr;
    double* GK = want_k ? tape.grad_accumulator(kernel).ptr() : nullptr;
    const double* G = g.ptr();
    for (std::size_t n = 0; n < geo.in.n; ++n) {
      for (std::size_t oy = 0; oy < geo.out.h; ++oy) {
        for (std::size_t ox = 0; ox < geo.out.w; ++ox) {
          const double* gy = G + ((n * geo.out.h + oy) * geo.out.w + ox) * cout;
          for (std::size_t ky = 0; ky < geo.kh; ++ky) {
            const long iy = static_cast<long>(oy * geo.sy + ky) - static_cast<long>(geo.pad_top);
            if (iy < 0 || iy >= static_cast<long>(geo.in.h)) continue;
            for (std::size_t kx = 0; kx < geo.kw; ++kx) {
              const long ix = static_cast<long>(ox * geo.sx + kx) - static_cast<long>(geo.pad_left);
              if (ix < 0 || ix >= static_cast<long>(geo.in.w)) continue;
              const std::size_t xoff = ((n * geo.in.h + iy) * geo.in.w + ix) * cin;
              const std::size_t koff = (ky * geo.kw + kx) * cin * cout;
              for (std::size_t ci = 0; ci < cin; ++ci) {
                if (GK) {
                  const double xval = X[xoff + ci];
                  double* gk = GK + koff + ci * cout;
                  for (std::size_t co = 0; co < cout; ++co) gk[co] += xval * gy[co];
                }
                if (GX) {
                  const double* krow = K + koff + ci * cout;
                  double s = 0.0;
                  for (std::size_t co = 0; co < cout; ++co) s += krow[co] * gy[co];
                  GX[xoff + ci] += s;
                }
              }
            }
          }
        }
      }
    }
  });
}

NodeId max_pool(Tape& t, NodeId input, Stride2 window, Stride2 stride) {
  const Tensor& xv = t.value(input);
  const ImageDims in = image_dims("max_pool", xv.shape());
  if (window.y == 0 || window.x == 0 || window.y > in.h || window.x > in.w) {
    throw ShapeError("max_pool: window " + std::to_string(window.y) + "x" + std::to_string(window.x) +
                     " invalid for input " + shape_string(xv.shape()));
  }
  if (stride.y == 0 || stride.x == 0) throw ShapeError("max_pool: stride must be positive");
  ImageDims out_d = in;
  out_d.h = (in.h - window.y) / stride.y + 1;
  out_d.w = (in.w - window.x) / stride.x + 1;
  Tensor out(image_shape(out_d));
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  const double* X = xv.ptr();
  std::size_t o = 0;
  for (std::size_t n = 0; n < in.n; ++n)
    for (std::size_t oy = 0; oy < out_d.h; ++oy)
      for (std::size_t ox = 0; ox < out_d.w; ++ox)
        for (std::size_t c = 0; c < in.c; ++c, ++o) {
          std::size_t best = ((n * in.h + oy * stride.y) * in.w + ox * stride.x) * in.c + c;
          for (std::size_t ky = 0; ky < window.y; ++ky)
            for (std::size_t kx = 0; kx < window.x; ++kx) {
              const std::size_t idx = ((n * in.h + oy * stride.y + ky) * in.w + ox * stride.x + kx) * in.c + c;
              if (X[idx] > X[best]) best = idx;
            }
          out[o] = X[best];
          (*argmax)[o] = best;
          t.note_branch(best);
        }
  return t.record("max_pool", std::move(out), {input}, [input, argmax](Tape& tape, const Tensor& g) {
    if (!tape.requires_grad(input)) return;
    Tensor& gx = tape.grad_accumulator(input);
    for (std::size_t i = 0; i < argmax->size(); ++i) gx[(*argmax)[i]] += g[i];
  });
}

NodeId response_norm(Tape& t, NodeId x, NodeId target_mean, NodeId log_var) {
  const Tensor& xv = t.value(x);
  if (t.value(target_mean).size() != 1 || t.value(log_var).size() != 1) {
    throw ShapeError("response_norm: target mean and log-variance must be scalars");
  }
  const std::size_t samples = xv.rank() == 4 ? xv.dim(0) : 1;
  const std::size_t m = xv.size() / samples;
  const double mu = t.value(target_mean).item();
  const double gain = std::exp(0.5 * t.value(log_var).item());

  struct Saved {
    std::vector<double> xhat;
    std::vector<double> inv_std;
    std::vector<bool> floored;
  };
  auto saved = std::make_shared<Saved>();
  saved->xhat.resize(xv.size());
  saved->inv_std.resize(samples);
  saved->floored.resize(samples);
  Tensor out(xv.shape());
  for (std::size_t s = 0; s < samples; ++s) {
    const double* xs = xv.ptr() + s * m;
    double mean = 0.0;
    for (std::size_t i = 0; i < m; ++i) mean += xs[i];
    mean /= static_cast<double>(m);
    double var = 0.0;
    for (std::size_t i = 0; i < m; ++i) var += (xs[i] - mean) * (xs[i] - mean);
    var /= static_cast<double>(m);
    // The floor is applied as max(var, eps) so that non-degenerate inputs map
    // to exactly the target variance.
    const bool floored = var < kResponseNormEps;
    const double inv_std = 1.0 / std::sqrt(floored ? kResponseNormEps : var);
    saved->inv_std[s] = inv_std;
    saved->floored[s] = floored;
    for (std::size_t i = 0; i < m; ++i) {
      const double xh = (xs[i] - mean) * inv_std;
      saved->xhat[s * m + i] = xh;
      out[s * m + i] = xh * gain + mu;
    }
  }
  for (std::size_t s = 0; s < samples; ++s) t.note_branch(saved->floored[s] ? 1 : 2);
  return t.record("response_norm", std::move(out), {x, target_mean, log_var},
                  [x, target_mean, log_var, saved, samples, m, gain](Tape& tape, const Tensor& g) {
                    double g_mean = 0.0;
                    double g_logvar = 0.0;
                    Tensor* gx = tape.requires_grad(x) ? &tape.grad_accumulator(x) : nullptr;
                    for (std::size_t s = 0; s < samples; ++s) {
                      const double* gs = g.ptr() + s * m;
                      const double* xh = saved->xhat.data() + s * m;
                      double sum_g = 0.0;
                      double sum_gx = 0.0;
                      for (std::size_t i = 0; i < m; ++i) {
                        sum_g += gs[i];
                        sum_gx += gs[i] * xh[i];
                      }
                      g_mean += sum_g;
                      g_logvar += 0.5 * gain * sum_gx;
                      if (!gx) continue;
                      const double mean_g = gain * sum_g / static_cast<double>(m);
                      const double mean_gx = saved->floored[s] ? 0.0 : gain * sum_gx / static_cast<double>(m);
                      double* out = gx->ptr() + s * m;
                      for (std::size_t i = 0; i < m; ++i) {
                        out[i] += saved->inv_std[s] * (gain * gs[i] - mean_g - xh[i] * mean_gx);
                      }
                    }
                    if (tape.requires_grad(target_mean)) tape.grad_accumulator(target_mean)[0] += g_mean;
                    if (tape.requires_grad(log_var)) tape.grad_accumulator(log_var)[0] += g_logvar;
                  });
}

}  // namespace bkf
