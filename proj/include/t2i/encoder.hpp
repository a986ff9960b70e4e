#pragma once

// Vision-transformer encoder: image -> patches -> embedded tokens ->
// post-norm transformer layers.

#include <cstddef>
#include <vector>

#include "t2i/params.hpp"
#include "t2i/tensor.hpp"

namespace t2i {

struct PatchConfig {
  std::size_t image_size = 64;
  std::size_t patch_size = 16;
  std::size_t channels = 3;
  std::size_t embed_dim = 64;

  std::size_t grid_side() const { return image_size / patch_size; }
  std::size_t num_patches() const { return grid_side() * grid_side(); }
  std::size_t patch_len() const { return patch_size * patch_size * channels; }
  void validate() const;  // throws ConfigError
};

struct PatchEncoderParams {
  Tensor projection;           // [patch_len, embed_dim]
  Tensor projection_bias;      // [embed_dim]
  Tensor position_embeddings;  // [num_patches, embed_dim]
};

struct TransformerLayerParams {
  std::vector<Tensor> w_q, w_k, w_v;  // one [embed_dim, d_k] per head
  Tensor w_o;                         // [heads * d_k, embed_dim]
  Tensor ffn_w1, ffn_b1;              // [embed_dim, ffn_width], [ffn_width]
  Tensor ffn_w2, ffn_b2;              // [ffn_width, embed_dim], [embed_dim]
  Tensor ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;

  std::size_t num_heads() const { return w_q.size(); }
};

PatchEncoderParams make_patch_encoder(ParamBuilder builder, const PatchConfig& config);
TransformerLayerParams make_transformer_layer(ParamBuilder builder, std::size_t embed_dim, std::size_t num_heads,
                                              std::size_t ffn_width);

// [N,H,W,C] -> [N, (H/p)^2, p*p*C]. Patches run left to right, top to
// bottom; each is flattened row-major over (h, w, c).
Tensor extract_patches(const Tensor& images, std::size_t patch_size);

// out[n,i] = patches[n,i] * projection + bias + position_embeddings[i]
Tensor encode_patches(const Tensor& patches, const PatchEncoderParams& params);

// Softmax(Q K^T / sqrt(d_k)) over the key axis. Accepts [T,d] or [N,T,d].
Tensor attention_weights(const Tensor& q, const Tensor& k);
Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v);

// Concat(head_1..head_H) W_O with head_i = attention(x W_Q_i, x W_K_i, x W_V_i).
// Accepts [T,E] or [N,T,E].
Tensor multi_head_attention(const Tensor& x, const TransformerLayerParams& params);

// Linear -> ReLU -> Linear applied per token.
Tensor feed_forward(const Tensor& x, const TransformerLayerParams& params);

// y = LN1(x + MHA(x)); out = LN2(y + FFN(y)).  x: [N,T,E].
Tensor transformer_layer(const Tensor& x, const TransformerLayerParams& params);

}  // namespace t2i
