#include "t2i/ops.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <string>

#include "gemm.hpp"
#include "t2i/errors.hpp"
#include "t2i/log.hpp"

namespace t2i {

using detail::gemm;
using detail::record_op;

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
  }
}

std::size_t normalize_axis(std::ptrdiff_t axis, std::size_t ndim, const char* op) {
  const auto n = static_cast<std::ptrdiff_t>(ndim);
  if (axis < -n || axis >= n) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(ndim));
  }
  return static_cast<std::size_t>(axis < 0 ? axis + n : axis);
}

// Unary elementwise op with derivative expressed through (x, y).
template <class F, class D>
Tensor unary(const char* name, const Tensor& x, F f, D dfdx) {
  std::vector<double> y(x.size());
  auto xd = x.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(xd[i]);
  Tensor out(x.shape(), std::move(y));
  record_op(name, {x}, out, [x, out, dfdx]() mutable {
    if (!x.requires_grad()) return;
    auto gx = x.mutable_grad();
    auto go = out.grad();
    auto xd = x.data();
    auto yd = out.data();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go[i] * dfdx(xd[i], yd[i]);
  });
  return out;
}

// Patch gather/scatter shared by convolution and its transpose.
struct Geom {
  std::size_t n, h, w, c;      // image
  std::size_t gh, gw;          // grid of kernel placements
  std::size_t kh, kw, stride;  // kernel
  std::size_t pad_t, pad_l;
  std::size_t rows() const { return n * gh * gw; }
  std::size_t cols() const { return kh * kw * c; }
};

void im2col(const double* img, const Geom& g, double* cols) {
  const std::size_t ncols = g.cols();
  for (std::size_t b = 0; b < g.n; ++b) {
    for (std::size_t oy = 0; oy < g.gh; ++oy) {
      for (std::size_t ox = 0; ox < g.gw; ++ox) {
        double* row = cols + ((b * g.gh + oy) * g.gw + ox) * ncols;
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad_t);
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad_l);
            double* dst = row + (ky * g.kw + kx) * g.c;
            if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(g.h) ||
                ix >= static_cast<std::ptrdiff_t>(g.w)) {
              std::fill(dst, dst + g.c, 0.0);
            } else {
              const double* src = img + ((b * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)) * g.c;
              std::copy(src, src + g.c, dst);
            }
          }
        }
      }
    }
  }
}

void col2im(const double* cols, const Geom& g, double* img) {
  const std::size_t ncols = g.cols();
  for (std::size_t b = 0; b < g.n; ++b) {
    for (std::size_t oy = 0; oy < g.gh; ++oy) {
      for (std::size_t ox = 0; ox < g.gw; ++ox) {
        const double* row = cols + ((b * g.gh + oy) * g.gw + ox) * ncols;
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad_t);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          for (std::size_t kx = 0; kx < g.kw; ++kx) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad_l);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
            const double* src = row + (ky * g.kw + kx) * g.c;
            double* dst = img + ((b * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)) * g.c;
            for (std::size_t ch = 0; ch < g.c; ++ch) dst[ch] += src[ch];
          }
        }
      }
    }
  }
}

void add_bias_rows(double* out, std::size_t rows, const Tensor& bias) {
  auto bd = bias.data();
  const std::size_t c = bd.size();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < c; ++j) out[r * c + j] += bd[j];
  }
}

void bias_grad_rows(const double* gout, std::size_t rows, Tensor& bias) {
  auto gb = bias.mutable_grad();
  const std::size_t c = gb.size();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < c; ++j) gb[j] += gout[r * c + j];
  }
}

void require_nhwc(const char* op, const Tensor& x) {
  if (x.ndim() != 4) throw DimensionError(std::string(op) + ": expected NHWC input, got " + shape_str(x.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> y(a.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] + b.data()[i];
  Tensor out(a.shape(), std::move(y));
  record_op("add", {a, b}, out, [a, b, out]() mutable {
    if (a.requires_grad()) a.accumulate_grad(out.grad());
    if (b.requires_grad()) b.accumulate_grad(out.grad());
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<double> y(a.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] - b.data()[i];
  Tensor out(a.shape(), std::move(y));
  record_op("sub", {a, b}, out, [a, b, out]() mutable {
    if (a.requires_grad()) a.accumulate_grad(out.grad());
    if (b.requires_grad()) {
      auto gb = b.mutable_grad();
      auto go = out.grad();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= go[i];
    }
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<double> y(a.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] * b.data()[i];
  Tensor out(a.shape(), std::move(y));
  record_op("mul", {a, b}, out, [a, b, out]() mutable {
    auto go = out.grad();
    if (a.requires_grad()) {
      auto ga = a.mutable_grad();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go[i] * b.data()[i];
    }
    if (b.requires_grad()) {
      auto gb = b.mutable_grad();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += go[i] * a.data()[i];
    }
  });
  return out;
}

Tensor scale(const Tensor& x, double factor) {
  return unary("scale", x, [factor](double v) { return v * factor; },
               [factor](double, double) { return factor; });
}

Tensor add_trailing(const Tensor& x, const Tensor& b) {
  const auto& xs = x.shape();
  const auto& bs = b.shape();
  bool ok = bs.size() <= xs.size();
  for (std::size_t i = 0; ok && i < bs.size(); ++i) ok = bs[bs.size() - 1 - i] == xs[xs.size() - 1 - i];
  if (!ok) {
    throw DimensionError("add_trailing: " + shape_str(bs) + " is not a suffix of " + shape_str(xs));
  }
  const std::size_t inner = b.size();
  const std::size_t outer = x.size() / inner;
  std::vector<double> y(x.data().begin(), x.data().end());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) y[o * inner + i] += b.data()[i];
  }
  Tensor out(xs, std::move(y));
  record_op("add_trailing", {x, b}, out, [x, b, out, inner, outer]() mutable {
    auto go = out.grad();
    if (x.requires_grad()) x.accumulate_grad(go);
    if (b.requires_grad()) {
      auto gb = b.mutable_grad();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) gb[i] += go[o * inner + i];
      }
    }
  });
  return out;
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor out = Tensor::scalar(s);
  record_op("sum", {x}, out, [x, out]() mutable {
    if (!x.requires_grad()) return;
    const double g = out.grad()[0];
    for (auto& v : x.mutable_grad()) v += g;
  });
  return out;
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.size()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  Tensor out(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()));
  record_op("reshape", {x}, out, [x, out]() mutable {
    if (x.requires_grad()) x.accumulate_grad(out.grad());
  });
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> y(m * n);
  gemm(false, false, m, n, k, a.data().data(), b.data().data(), y.data(), false);
  Tensor out({m, n}, std::move(y));
  record_op("matmul", {a, b}, out, [a, b, out, m, n, k]() mutable {
    const double* go = out.grad().data();
    if (a.requires_grad()) gemm(false, true, m, k, n, go, b.data().data(), a.mutable_grad().data(), true);
    if (b.requires_grad()) gemm(true, false, k, n, m, a.data().data(), go, b.mutable_grad().data(), true);
  });
  return out;
}

Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b) {
  const bool ok_rank = a.ndim() == 3 && b.ndim() == 3 && a.dim(0) == b.dim(0);
  const std::size_t bk = ok_rank ? (transpose_b ? b.dim(2) : b.dim(1)) : 0;
  if (!ok_rank || a.dim(2) != bk) {
    throw DimensionError("bmm: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2);
  const std::size_t n = transpose_b ? b.dim(1) : b.dim(2);
  std::vector<double> y(batch * m * n);
  for (std::size_t i = 0; i < batch; ++i) {
    gemm(false, transpose_b, m, n, k, a.data().data() + i * m * k, b.data().data() + i * k * n,
         y.data() + i * m * n, false);
  }
  Tensor out({batch, m, n}, std::move(y));
  record_op("bmm", {a, b}, out, [a, b, out, batch, m, n, k, transpose_b]() mutable {
    const double* go = out.grad().data();
    for (std::size_t i = 0; i < batch; ++i) {
      const double* goi = go + i * m * n;
      const double* ai = a.data().data() + i * m * k;
      const double* bi = b.data().data() + i * k * n;
      if (a.requires_grad()) {
        // dA = dC * op(B)^T
        gemm(false, !transpose_b, m, k, n, goi, bi, a.mutable_grad().data() + i * m * k, true);
      }
      if (b.requires_grad()) {
        double* gbi = b.mutable_grad().data() + i * k * n;
        if (transpose_b) {
          gemm(true, false, n, k, m, goi, ai, gbi, true);  // dB[n,k] = dC^T A
        } else {
          gemm(true, false, k, n, m, ai, goi, gbi, true);  // dB[k,n] = A^T dC
        }
      }
    }
  });
  return out;
}

Tensor softmax(const Tensor& x, std::ptrdiff_t axis) {
  const std::size_t ax = normalize_axis(axis, x.ndim(), "softmax");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= x.dim(i);
  for (std::size_t i = ax + 1; i < x.ndim(); ++i) inner *= x.dim(i);
  const std::size_t n = x.dim(ax);
  std::vector<double> y(x.size());
  auto xd = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double mx = xd[base];
      for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xd[base + j * inner]);
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double e = std::exp(xd[base + j * inner] - mx);
        y[base + j * inner] = e;
        s += e;
      }
      for (std::size_t j = 0; j < n; ++j) y[base + j * inner] /= s;
    }
  }
  Tensor out(x.shape(), std::move(y));
  record_op("softmax", {x}, out, [x, out, outer, inner, n]() mutable {
    if (!x.requires_grad()) return;
    auto gx = x.mutable_grad();
    auto go = out.grad();
    auto yd = out.data();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * n * inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += go[base + j * inner] * yd[base + j * inner];
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t idx = base + j * inner;
          gx[idx] += yd[idx] * (go[idx] - dot);
        }
      }
    }
  });
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t d = x.dim(x.ndim() - 1);
  if (gamma.size() != d || beta.size() != d) {
    throw DimensionError("layer_norm: gamma/beta " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
                         " do not match last axis of " + shape_str(x.shape()));
  }
  const std::size_t rows = x.size() / d;
  std::vector<double> xhat(x.size()), inv_std(rows), y(x.size());
  auto xd = x.data();
  auto gd = gamma.data();
  auto bd = beta.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xd.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xr[j] - mu) * inv_std[r];
      xhat[r * d + j] = h;
      y[r * d + j] = gd[j] * h + bd[j];
    }
  }
  Tensor out(x.shape(), std::move(y));
  record_op("layer_norm", {x, gamma, beta}, out,
            [x, gamma, beta, out, xhat = std::move(xhat), inv_std = std::move(inv_std), rows, d]() mutable {
              auto go = out.grad();
              auto gd = gamma.data();
              if (gamma.requires_grad() || beta.requires_grad()) {
                auto gg = gamma.mutable_grad();
                auto gb = beta.mutable_grad();
                for (std::size_t r = 0; r < rows; ++r) {
                  for (std::size_t j = 0; j < d; ++j) {
                    gg[j] += go[r * d + j] * xhat[r * d + j];
                    gb[j] += go[r * d + j];
                  }
                }
              }
              if (!x.requires_grad()) return;
              auto gx = x.mutable_grad();
              for (std::size_t r = 0; r < rows; ++r) {
                double m1 = 0.0, m2 = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                  const double dh = go[r * d + j] * gd[j];
                  m1 += dh;
                  m2 += dh * xhat[r * d + j];
                }
                m1 /= static_cast<double>(d);
                m2 /= static_cast<double>(d);
                for (std::size_t j = 0; j < d; ++j) {
                  const double dh = go[r * d + j] * gd[j];
                  gx[r * d + j] += inv_std[r] * (dh - m1 - xhat[r * d + j] * m2);
                }
              }
            });
  return out;
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state, Mode mode,
                  double eps, double momentum) {
  const std::size_t c = x.dim(x.ndim() - 1);
  if (gamma.size() != c || beta.size() != c || state.running_mean.size() != c || state.running_var.size() != c) {
    throw DimensionError("batch_norm: parameters do not match channel axis of " + shape_str(x.shape()));
  }
  const std::size_t m = x.size() / c;
  auto xd = x.data();
  std::vector<double> mu(c, 0.0), var(c, 0.0);
  if (mode == Mode::train) {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < c; ++j) mu[j] += xd[i * c + j];
    }
    for (auto& v : mu) v /= static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < c; ++j) {
        const double t = xd[i * c + j] - mu[j];
        var[j] += t * t;
      }
    }
    for (auto& v : var) v /= static_cast<double>(m);
    auto rm = state.running_mean.mutable_data();
    auto rv = state.running_var.mutable_data();
    for (std::size_t j = 0; j < c; ++j) {
      rm[j] = momentum * rm[j] + (1.0 - momentum) * mu[j];
      rv[j] = momentum * rv[j] + (1.0 - momentum) * var[j];
    }
    state.tracked.mutable_data()[0] += 1.0;
  } else {
    static std::atomic<bool> warned{false};
    if (state.tracked.at(0) == 0.0 && !warned.exchange(true)) {
      log_warning("batch_norm: eval mode before any train step, using initial running statistics");
    }
    std::copy(state.running_mean.data().begin(), state.running_mean.data().end(), mu.begin());
    std::copy(state.running_var.data().begin(), state.running_var.data().end(), var.begin());
  }
  std::vector<double> inv_std(c), xhat(x.size()), y(x.size());
  for (std::size_t j = 0; j < c; ++j) inv_std[j] = 1.0 / std::sqrt(var[j] + eps);
  auto gd = gamma.data();
  auto bd = beta.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (xd[i * c + j] - mu[j]) * inv_std[j];
      xhat[i * c + j] = h;
      y[i * c + j] = gd[j] * h + bd[j];
    }
  }
  Tensor out(x.shape(), std::move(y));
  const bool batch_stats = mode == Mode::train;
  record_op("batch_norm", {x, gamma, beta}, out,
            [x, gamma, beta, out, xhat = std::move(xhat), inv_std = std::move(inv_std), m, c, batch_stats]() mutable {
              auto go = out.grad();
              auto gd = gamma.data();
              std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
              for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < c; ++j) {
                  sum_dy[j] += go[i * c + j];
                  sum_dy_xhat[j] += go[i * c + j] * xhat[i * c + j];
                }
              }
              if (gamma.requires_grad()) {
                auto gg = gamma.mutable_grad();
                for (std::size_t j = 0; j < c; ++j) gg[j] += sum_dy_xhat[j];
              }
              if (beta.requires_grad()) {
                auto gb = beta.mutable_grad();
                for (std::size_t j = 0; j < c; ++j) gb[j] += sum_dy[j];
              }
              if (!x.requires_grad()) return;
              auto gx = x.mutable_grad();
              const double inv_m = 1.0 / static_cast<double>(m);
              for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < c; ++j) {
                  const std::size_t idx = i * c + j;
                  if (batch_stats) {
                    gx[idx] += gd[j] * inv_std[j] *
                               (go[idx] - inv_m * sum_dy[j] - xhat[idx] * inv_m * sum_dy_xhat[j]);
                  } else {
                    gx[idx] += gd[j] * inv_std[j] * go[idx];
                  }
                }
              }
            });
  return out;
}

ConvGeometry conv_geometry(std::size_t in, std::size_t kernel, std::size_t stride, Padding padding) {
  if (stride == 0 || kernel == 0) throw ConfigError("convolution stride and kernel must be positive");
  if (padding == Padding::valid) {
    if (kernel > in) {
      throw DimensionError("kernel " + std::to_string(kernel) + " larger than input " + std::to_string(in));
    }
    return {(in - kernel) / stride + 1, 0};
  }
  const std::size_t out = (in + stride - 1) / stride;
  const std::size_t need = (out - 1) * stride + kernel;
  const std::size_t total = need > in ? need - in : 0;
  return {out, total / 2};
}

Tensor conv2d(const Tensor& x, const Tensor& w, const std::optional<Tensor>& b, std::size_t stride,
              Padding padding) {
  require_nhwc("conv2d", x);
  if (w.ndim() != 4 || w.dim(2) != x.dim(3)) {
    throw DimensionError("conv2d: kernel " + shape_str(w.shape()) + " does not match input " + shape_str(x.shape()));
  }
  const std::size_t cout = w.dim(3);
  if (b && b->size() != cout) throw DimensionError("conv2d: bias size does not match output channels");
  const auto gy = conv_geometry(x.dim(1), w.dim(0), stride, padding);
  const auto gx = conv_geometry(x.dim(2), w.dim(1), stride, padding);
  const Geom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), gy.out, gx.out, w.dim(0), w.dim(1), stride, gy.pad_before,
               gx.pad_before};
  std::vector<double> cols(g.rows() * g.cols());
  im2col(x.data().data(), g, cols.data());
  std::vector<double> y(g.rows() * cout);
  gemm(false, false, g.rows(), cout, g.cols(), cols.data(), w.data().data(), y.data(), false);
  if (b) add_bias_rows(y.data(), g.rows(), *b);
  Tensor out({g.n, g.gh, g.gw, cout}, std::move(y));
  std::vector<Tensor> inputs{x, w};
  if (b) inputs.push_back(*b);
  Tensor bias = b ? *b : Tensor();
  record_op("conv2d", inputs, out, [x, w, bias, out, g, cout]() mutable {
    const double* go = out.grad().data();
    if (w.requires_grad()) {
      std::vector<double> cols(g.rows() * g.cols());
      im2col(x.data().data(), g, cols.data());
      gemm(true, false, g.cols(), cout, g.rows(), cols.data(), go, w.mutable_grad().data(), true);
    }
    if (bias.defined() && bias.requires_grad()) bias_grad_rows(go, g.rows(), bias);
    if (x.requires_grad()) {
      std::vector<double> dcols(g.rows() * g.cols());
      gemm(false, true, g.rows(), g.cols(), cout, go, w.data().data(), dcols.data(), false);
      col2im(dcols.data(), g, x.mutable_grad().data());
    }
  });
  return out;
}

Tensor conv2d_transpose(const Tensor& x, const Tensor& w, const std::optional<Tensor>& b, std::size_t stride,
                        Padding padding) {
  require_nhwc("conv2d_transpose", x);
  if (w.ndim() != 4 || w.dim(3) != x.dim(3)) {
    throw DimensionError("conv2d_transpose: kernel " + shape_str(w.shape()) + " does not match input " +
                         shape_str(x.shape()));
  }
  if (stride == 0) throw ConfigError("conv2d_transpose: stride must be positive");
  const std::size_t kh = w.dim(0), kw = w.dim(1), cout = w.dim(2), cin = w.dim(3);
  if (b && b->size() != cout) throw DimensionError("conv2d_transpose: bias size does not match output channels");
  std::size_t oh, ow, pad_t, pad_l;
  if (padding == Padding::same) {
    oh = x.dim(1) * stride;
    ow = x.dim(2) * stride;
    pad_t = conv_geometry(oh, kh, stride, Padding::same).pad_before;
    pad_l = conv_geometry(ow, kw, stride, Padding::same).pad_before;
  } else {
    oh = (x.dim(1) - 1) * stride + kh;
    ow = (x.dim(2) - 1) * stride + kw;
    pad_t = pad_l = 0;
  }
  // The "image" here is the output; the grid is the input.
  const Geom g{x.dim(0), oh, ow, cout, x.dim(1), x.dim(2), kh, kw, stride, pad_t, pad_l};
  std::vector<double> cols(g.rows() * g.cols());
  gemm(false, true, g.rows(), g.cols(), cin, x.data().data(), w.data().data(), cols.data(), false);
  std::vector<double> y(g.n * oh * ow * cout, 0.0);
  col2im(cols.data(), g, y.data());
  if (b) add_bias_rows(y.data(), g.n * oh * ow, *b);
  Tensor out({g.n, oh, ow, cout}, std::move(y));
  std::vector<Tensor> inputs{x, w};
  if (b) inputs.push_back(*b);
  Tensor bias = b ? *b : Tensor();
  record_op("conv2d_transpose", inputs, out, [x, w, bias, out, g, cin]() mutable {
    const double* go = out.grad().data();
    if (bias.defined() && bias.requires_grad()) bias_grad_rows(go, g.n * g.h * g.w, bias);
    if (!x.requires_grad() && !w.requires_grad()) return;
    std::vector<double> dcols(g.rows() * g.cols());
    im2col(go, g, dcols.data());
    if (x.requires_grad()) {
      gemm(false, false, g.rows(), cin, g.cols(), dcols.data(), w.data().data(), x.mutable_grad().data(), true);
    }
    if (w.requires_grad()) {
      gemm(true, false, g.cols(), cin, g.rows(), dcols.data(), x.data().data(), w.mutable_grad().data(), true);
    }
  });
  return out;
}

namespace {
struct Tap {
  std::size_t i0, i1;
  double frac;
};

std::vector<Tap> bilinear_taps(std::size_t in, std::size_t out) {
  std::vector<Tap> taps(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto i0 = static_cast<std::size_t>(std::floor(src));
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    taps[o] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}
}  // namespace

Tensor bilinear_upsample(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  require_nhwc("bilinear_upsample", x);
  if (out_h == 0 || out_w == 0) throw DimensionError("bilinear_upsample: zero target size");
  if (out_h < x.dim(1) || out_w < x.dim(2)) {
    throw DimensionError("bilinear_upsample: target " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                         " smaller than source " + shape_str(x.shape()));
  }
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  auto ty = bilinear_taps(h, out_h);
  auto tx = bilinear_taps(w, out_w);
  std::vector<double> y(n * out_h * out_w * c);
  auto xd = x.data();
  auto px = [&](std::size_t b, std::size_t i, std::size_t j) { return xd.data() + ((b * h + i) * w + j) * c; };
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const auto& a = ty[oy];
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const auto& t = tx[ox];
        const double* p00 = px(b, a.i0, t.i0);
        const double* p01 = px(b, a.i0, t.i1);
        const double* p10 = px(b, a.i1, t.i0);
        const double* p11 = px(b, a.i1, t.i1);
        double* dst = y.data() + ((b * out_h + oy) * out_w + ox) * c;
        for (std::size_t ch = 0; ch < c; ++ch) {
          const double top = p00[ch] + (p01[ch] - p00[ch]) * t.frac;
          const double bot = p10[ch] + (p11[ch] - p10[ch]) * t.frac;
          dst[ch] = top + (bot - top) * a.frac;
        }
      }
    }
  }
  Tensor out({n, out_h, out_w, c}, std::move(y));
  record_op("bilinear_upsample", {x}, out,
            [x, out, ty = std::move(ty), tx = std::move(tx), n, h, w, c, out_h, out_w]() mutable {
              if (!x.requires_grad()) return;
              auto gx = x.mutable_grad();
              auto go = out.grad();
              auto at = [&](std::size_t b, std::size_t i, std::size_t j) {
                return gx.data() + ((b * h + i) * w + j) * c;
              };
              for (std::size_t b = 0; b < n; ++b) {
                for (std::size_t oy = 0; oy < out_h; ++oy) {
                  const auto& a = ty[oy];
                  for (std::size_t ox = 0; ox < out_w; ++ox) {
                    const auto& t = tx[ox];
                    const double* g = go.data() + ((b * out_h + oy) * out_w + ox) * c;
                    const double w00 = (1 - a.frac) * (1 - t.frac), w01 = (1 - a.frac) * t.frac;
                    const double w10 = a.frac * (1 - t.frac), w11 = a.frac * t.frac;
                    double* g00 = at(b, a.i0, t.i0);
                    double* g01 = at(b, a.i0, t.i1);
                    double* g10 = at(b, a.i1, t.i0);
                    double* g11 = at(b, a.i1, t.i1);
                    for (std::size_t ch = 0; ch < c; ++ch) {
                      g00[ch] += w00 * g[ch];
                      g01[ch] += w01 * g[ch];
                      g10[ch] += w10 * g[ch];
                      g11[ch] += w11 * g[ch];
                    }
                  }
                }
              }
            });
  return out;
}

Tensor relu(const Tensor& x) {
  return unary("relu", x, [](double v) { return v < 0.0 ? 0.0 : v; },  // NaN passes through
               [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  return unary("leaky_relu", x, [slope](double v) { return v > 0.0 ? v : slope * v; },
               [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

Tensor tanh(const Tensor& x) {
  return unary("tanh", x, [](double v) { return std::tanh(v); },
               [](double, double y) { return 1.0 - y * y; });
}

Tensor concat(const std::vector<Tensor>& xs, std::ptrdiff_t axis) {
  if (xs.empty()) throw DimensionError("concat: no inputs");
  const auto& first = xs.front().shape();
  const std::size_t ax = normalize_axis(axis, first.size(), "concat");
  std::size_t total = 0;
  for (const auto& t : xs) {
    bool ok = t.ndim() == first.size();
    for (std::size_t i = 0; ok && i < first.size(); ++i) ok = i == ax || t.dim(i) == first[i];
    if (!ok) {
      throw DimensionError("concat: " + shape_str(t.shape()) + " incompatible with " + shape_str(first) +
                           " on axis " + std::to_string(ax));
    }
    total += t.dim(ax);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= first[i];
  for (std::size_t i = ax + 1; i < first.size(); ++i) inner *= first[i];
  Shape shape = first;
  shape[ax] = total;
  std::vector<double> y(shape_numel(shape));
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  for (const auto& t : xs) {
    offsets.push_back(offset);
    const std::size_t len = t.dim(ax) * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(t.data().data() + o * len, len, y.data() + o * total * inner + offset * inner);
    }
    offset += t.dim(ax);
  }
  Tensor out(std::move(shape), std::move(y));
  record_op("concat", xs, out, [xs, out, offsets, outer, inner, total, ax]() mutable {
    auto go = out.grad();
    for (std::size_t k = 0; k < xs.size(); ++k) {
      auto& t = xs[k];
      if (!t.requires_grad()) continue;
      auto gt = t.mutable_grad();
      const std::size_t len = t.dim(ax) * inner;
      for (std::size_t o = 0; o < outer; ++o) {
        const double* src = go.data() + o * total * inner + offsets[k] * inner;
        for (std::size_t i = 0; i < len; ++i) gt[o * len + i] += src[i];
      }
    }
  });
  return out;
}

}  // namespace t2i
