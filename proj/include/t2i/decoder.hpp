#pragma once

// Token grid -> image: transpose-convolution upsampling stages with
// residual blocks, an optional bilinear skip layer, and a conv output head.

#include <cstddef>
#include <optional>
#include <vector>

#include "t2i/params.hpp"
#include "t2i/tensor.hpp"

namespace t2i {

inline constexpr std::size_t kTransposeKernel = 4;
inline constexpr std::size_t kResidualKernel = 3;
inline constexpr std::size_t kHeadKernel = 3;

struct StageSpec {
  std::size_t transpose_channels;
  std::size_t residual_channels;
  bool operator==(const StageSpec&) const = default;
};

// CT512-RL512, CT256-RL256, CT64-RL64, CT32-RL32
std::vector<StageSpec> default_decoder_schedule();

enum class FinalActivation { tanh, none };

struct ResidualBlockParams {
  Tensor conv1;  // [3,3,in,filters]
  BatchNormParams bn1;
  Tensor conv2;  // [3,3,filters,filters]
  BatchNormParams bn2;
  std::optional<Tensor> projection_w;  // [1,1,in,filters] when in != filters
  std::optional<Tensor> projection_b;
};

struct UpsampleStageParams {
  Tensor transpose_kernel;  // [4,4,out,in]
  BatchNormParams bn;
  std::optional<ResidualBlockParams> residual;
};

// Optional 1x1 convolution applied to the upsampled patch grid.
struct SkipConvParams {
  Tensor w;  // [1,1,embed,k]
  Tensor b;
};

struct OutputHeadParams {
  Tensor w;  // [3,3,in,out_channels]
  Tensor b;
  FinalActivation activation = FinalActivation::tanh;
};

ResidualBlockParams make_residual_block(ParamBuilder builder, std::size_t in_channels, std::size_t filters);
UpsampleStageParams make_upsample_stage(ParamBuilder builder, std::size_t in_channels, const StageSpec& spec,
                                        bool with_residual);
SkipConvParams make_skip_conv(ParamBuilder builder, std::size_t in_channels, std::size_t out_channels);
OutputHeadParams make_output_head(ParamBuilder builder, std::size_t in_channels, std::size_t out_channels,
                                  FinalActivation activation);

// [N,P,E] -> [N,side,side,E], inverse of the raster patch order.
Tensor tokens_to_grid(const Tensor& tokens);
Tensor grid_to_tokens(const Tensor& grid);

// relu(BN(conv(relu(BN(conv(x))))) + shortcut(x))
Tensor residual_block(const Tensor& x, const ResidualBlockParams& params, Mode mode);

// conv2d_transpose(stride 2) -> BN -> LeakyReLU -> residual block (if any).
Tensor upsample_stage(const Tensor& x, const UpsampleStageParams& params, Mode mode);

// Bilinearly resizes the encoded patch grid to prev's spatial size,
// optionally 1x1-convolves it, and concatenates it after prev's channels.
Tensor upsample_concat(const Tensor& encoded_grid, const Tensor& prev, const SkipConvParams* skip = nullptr);

// 3x3 same conv, stride 1, then tanh or raw logits.
Tensor output_head(const Tensor& x, const OutputHeadParams& params);

}  // namespace t2i
