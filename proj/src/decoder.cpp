#include "t2i/decoder.hpp"

#include <cmath>
#include <string>

#include "t2i/errors.hpp"
#include "t2i/ops.hpp"

namespace t2i {

std::vector<StageSpec> default_decoder_schedule() { return {{512, 512}, {256, 256}, {64, 64}, {32, 32}}; }

namespace {
Tensor conv_kernel(ParamBuilder& b, std::string_view name, std::size_t k, std::size_t in, std::size_t out) {
  return b.glorot(name, {k, k, in, out}, k * k * in, k * k * out);
}
}  // namespace

// Convolutions followed by batch norm carry no bias: the normalization
// removes it and its gradient is identically zero.
ResidualBlockParams make_residual_block(ParamBuilder b, std::size_t in, std::size_t filters) {
  ResidualBlockParams p;
  p.conv1 = conv_kernel(b, "conv1", kResidualKernel, in, filters);
  p.bn1 = b.batch_norm("bn1", filters);
  p.conv2 = conv_kernel(b, "conv2", kResidualKernel, filters, filters);
  p.bn2 = b.batch_norm("bn2", filters);
  if (in != filters) {
    p.projection_w = conv_kernel(b, "projection", 1, in, filters);
    p.projection_b = b.constant("projection_bias", {filters}, 0.0);
  }
  return p;
}

UpsampleStageParams make_upsample_stage(ParamBuilder b, std::size_t in, const StageSpec& spec, bool with_residual) {
  UpsampleStageParams p;
  const std::size_t k = kTransposeKernel, out = spec.transpose_channels;
  p.transpose_kernel = b.glorot("transpose", {k, k, out, in}, k * k * in, k * k * out);
  p.bn = b.batch_norm("bn", out);
  if (with_residual) p.residual = make_residual_block(b.scoped("residual"), out, spec.residual_channels);
  return p;
}

SkipConvParams make_skip_conv(ParamBuilder b, std::size_t in, std::size_t out) {
  return {conv_kernel(b, "w", 1, in, out), b.constant("b", {out}, 0.0)};
}

OutputHeadParams make_output_head(ParamBuilder b, std::size_t in, std::size_t out, FinalActivation activation) {
  return {conv_kernel(b, "w", kHeadKernel, in, out), b.constant("b", {out}, 0.0), activation};
}

Tensor tokens_to_grid(const Tensor& tokens) {
  if (tokens.ndim() != 3) throw DimensionError("tokens_to_grid: expected [N,P,E], got " + shape_str(tokens.shape()));
  const std::size_t p = tokens.dim(1);
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(p))));
  if (side * side != p) throw ConfigError("tokens_to_grid: token count " + std::to_string(p) + " is not a square");
  return reshape(tokens, {tokens.dim(0), side, side, tokens.dim(2)});
}

Tensor grid_to_tokens(const Tensor& grid) {
  if (grid.ndim() != 4) throw DimensionError("grid_to_tokens: expected NHWC, got " + shape_str(grid.shape()));
  return reshape(grid, {grid.dim(0), grid.dim(1) * grid.dim(2), grid.dim(3)});
}

Tensor residual_block(const Tensor& x, const ResidualBlockParams& p, Mode mode) {
  Tensor h = relu(apply_batch_norm(conv2d(x, p.conv1, std::nullopt), p.bn1, mode));
  h = apply_batch_norm(conv2d(h, p.conv2, std::nullopt), p.bn2, mode);
  Tensor shortcut = p.projection_w ? conv2d(x, *p.projection_w, p.projection_b) : x;
  return relu(add(h, shortcut));
}

Tensor upsample_stage(const Tensor& x, const UpsampleStageParams& p, Mode mode) {
  Tensor y = conv2d_transpose(x, p.transpose_kernel, std::nullopt, 2, Padding::same);
  y = leaky_relu(apply_batch_norm(y, p.bn, mode));
  return p.residual ? residual_block(y, *p.residual, mode) : y;
}

Tensor upsample_concat(const Tensor& encoded_grid, const Tensor& prev, const SkipConvParams* skip) {
  if (encoded_grid.ndim() != 4 || prev.ndim() != 4 || encoded_grid.dim(0) != prev.dim(0)) {
    throw DimensionError("upsample_concat: incompatible " + shape_str(encoded_grid.shape()) + " and " +
                         shape_str(prev.shape()));
  }
  const std::size_t h = prev.dim(1), w = prev.dim(2);
  if (h < encoded_grid.dim(1) || w < encoded_grid.dim(2)) {
    throw DimensionError("upsample_concat: target " + shape_str(prev.shape()) + " smaller than source " +
                         shape_str(encoded_grid.shape()));
  }
  Tensor up = (h == encoded_grid.dim(1) && w == encoded_grid.dim(2)) ? encoded_grid
                                                                     : bilinear_upsample(encoded_grid, h, w);
  if (skip != nullptr) up = conv2d(up, skip->w, skip->b);
  return concat({prev, up}, -1);
}

Tensor output_head(const Tensor& x, const OutputHeadParams& p) {
  Tensor y = conv2d(x, p.w, p.b, 1, Padding::same);
  return p.activation == FinalActivation::tanh ? t2i::tanh(y) : y;
}

}  // namespace t2i
