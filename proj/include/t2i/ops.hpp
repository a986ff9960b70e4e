#pragma once

// Differentiable kernels. Images are NHWC, convolution kernels are
// [kh, kw, in, out] and transpose-convolution kernels are [kh, kw, out, in].
//
// "same" padding: output = ceil(in / stride); the total padding
// max((out - 1) * stride + k - in, 0) is split with the extra pixel on the
// bottom/right. Transpose convolution is the adjoint of that convolution,
// so its "same" output is exactly in * stride.

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "t2i/tensor.hpp"

namespace t2i {

inline constexpr double kLayerNormEps = 1e-6;
inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.99;
inline constexpr double kLeakySlope = 0.2;

enum class Padding { same, valid };

// Elementwise, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
// b's shape must equal a trailing suffix of x's shape; b is broadcast.
Tensor add_trailing(const Tensor& x, const Tensor& b);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

Tensor matmul(const Tensor& a, const Tensor& b);
// Batched [B,m,k] x [B,k,n]; with transpose_b the second operand is [B,n,k].
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b = false);

Tensor softmax(const Tensor& x, std::ptrdiff_t axis = -1);

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = kLayerNormEps);

// Per-channel (last axis) statistics. running_mean / running_var / tracked
// are non-trainable tensors updated in place in train mode.
struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  Tensor tracked;  // single value: number of train-mode updates
};

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BatchNormState& state, Mode mode, double eps = kBatchNormEps,
                  double momentum = kBatchNormMomentum);

struct ConvGeometry {
  std::size_t out;
  std::size_t pad_before;
};
ConvGeometry conv_geometry(std::size_t in, std::size_t kernel, std::size_t stride, Padding padding);

Tensor conv2d(const Tensor& x, const Tensor& w, const std::optional<Tensor>& b,
              std::size_t stride = 1, Padding padding = Padding::same);
Tensor conv2d_transpose(const Tensor& x, const Tensor& w, const std::optional<Tensor>& b,
                        std::size_t stride = 2, Padding padding = Padding::same);

// Half-pixel (align_corners = false) bilinear resampling of NHWC input.
Tensor bilinear_upsample(const Tensor& x, std::size_t out_h, std::size_t out_w);

Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope = kLeakySlope);
Tensor tanh(const Tensor& x);

Tensor concat(const std::vector<Tensor>& xs, std::ptrdiff_t axis = -1);

}  // namespace t2i
