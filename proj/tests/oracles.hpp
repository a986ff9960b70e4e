#pragma once

// Naive reference implementations used only by tests. Written directly from
// the defining formulas with plain loops; they share no code with src/.

#include <cmath>
#include <cstddef>
#include <vector>

namespace t2i::oracle {

// NHWC cross-correlation, kernel [kh,kw,cin,cout], explicit zero padding.
inline std::vector<double> conv2d(const std::vector<double>& x, std::size_t n, std::size_t h, std::size_t w,
                                  std::size_t cin, const std::vector<double>& k, std::size_t kh, std::size_t kw,
                                  std::size_t cout, const std::vector<double>& bias, std::size_t stride,
                                  std::size_t pad_t, std::size_t pad_l, std::size_t oh, std::size_t ow) {
  std::vector<double> y(n * oh * ow * cout, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox)
        for (std::size_t co = 0; co < cout; ++co) {
          double acc = bias.empty() ? 0.0 : bias[co];
          for (std::size_t ky = 0; ky < kh; ++ky)
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad_t);
              const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad_l);
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
              for (std::size_t ci = 0; ci < cin; ++ci)
                acc += x[((b * h + iy) * w + ix) * cin + ci] * k[((ky * kw + kx) * cin + ci) * cout + co];
            }
          y[((b * oh + oy) * ow + ox) * cout + co] = acc;
        }
  return y;
}

// Scatter-accumulate transposed convolution, kernel [kh,kw,cout,cin].
inline std::vector<double> conv2d_transpose(const std::vector<double>& x, std::size_t n, std::size_t h,
                                            std::size_t w, std::size_t cin, const std::vector<double>& k,
                                            std::size_t kh, std::size_t kw, std::size_t cout,
                                            const std::vector<double>& bias, std::size_t stride, std::size_t pad_t,
                                            std::size_t pad_l, std::size_t oh, std::size_t ow) {
  std::vector<double> y(n * oh * ow * cout, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t iy = 0; iy < h; ++iy)
      for (std::size_t ix = 0; ix < w; ++ix)
        for (std::size_t ky = 0; ky < kh; ++ky)
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const long oy = static_cast<long>(iy * stride + ky) - static_cast<long>(pad_t);
            const long ox = static_cast<long>(ix * stride + kx) - static_cast<long>(pad_l);
            if (oy < 0 || ox < 0 || oy >= static_cast<long>(oh) || ox >= static_cast<long>(ow)) continue;
            for (std::size_t co = 0; co < cout; ++co)
              for (std::size_t ci = 0; ci < cin; ++ci)
                y[((b * oh + oy) * ow + ox) * cout + co] +=
                    x[((b * h + iy) * w + ix) * cin + ci] * k[((ky * kw + kx) * cout + co) * cin + ci];
          }
  if (!bias.empty())
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += bias[i % cout];
  return y;
}

inline std::vector<double> softmax(const std::vector<double>& x) {
  long double s = 0.0L;
  for (double v : x) s += std::exp(static_cast<long double>(v));
  std::vector<double> y;
  for (double v : x) y.push_back(static_cast<double>(std::exp(static_cast<long double>(v)) / s));
  return y;
}

// Reference Adam on a scalar parameter with gradient function grad(p).
template <class Grad>
std::vector<double> adam_trace(double p, Grad grad, int steps, double lr, double b1, double b2, double eps) {
  double m = 0.0, v = 0.0;
  std::vector<double> trace;
  for (int t = 1; t <= steps; ++t) {
    const double g = grad(p);
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mhat = m / (1 - std::pow(b1, t));
    const double vhat = v / (1 - std::pow(b2, t));
    p -= lr * mhat / (std::sqrt(vhat) + eps);
    trace.push_back(p);
  }
  return trace;
}

}  // namespace t2i::oracle
