#include "t2i/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "t2i/errors.hpp"
#include "t2i/ops.hpp"

namespace t2i {

void PatchConfig::validate() const {
  if (patch_size == 0 || image_size == 0 || channels == 0 || embed_dim == 0) {
    throw ConfigError("patch config: sizes must be positive");
  }
  if (image_size % patch_size != 0) {
    throw ConfigError("image size " + std::to_string(image_size) + " is not divisible by patch size " +
                      std::to_string(patch_size));
  }
}

PatchEncoderParams make_patch_encoder(ParamBuilder b, const PatchConfig& c) {
  c.validate();
  PatchEncoderParams p;
  p.projection = b.glorot("projection", {c.patch_len(), c.embed_dim}, c.patch_len(), c.embed_dim);
  p.projection_bias = b.constant("projection_bias", {c.embed_dim}, 0.0);
  p.position_embeddings = b.normal("position_embeddings", {c.num_patches(), c.embed_dim}, 0.02);
  return p;
}

TransformerLayerParams make_transformer_layer(ParamBuilder b, std::size_t embed_dim, std::size_t num_heads,
                                              std::size_t ffn_width) {
  if (num_heads == 0 || embed_dim % num_heads != 0) {
    throw ConfigError("embed_dim " + std::to_string(embed_dim) + " is not divisible by " +
                      std::to_string(num_heads) + " heads");
  }
  const std::size_t dk = embed_dim / num_heads;
  TransformerLayerParams p;
  for (std::size_t h = 0; h < num_heads; ++h) {
    auto hb = b.scoped("head" + std::to_string(h));
    p.w_q.push_back(hb.glorot("w_q", {embed_dim, dk}, embed_dim, dk));
    p.w_k.push_back(hb.glorot("w_k", {embed_dim, dk}, embed_dim, dk));
    p.w_v.push_back(hb.glorot("w_v", {embed_dim, dk}, embed_dim, dk));
  }
  p.w_o = b.glorot("w_o", {num_heads * dk, embed_dim}, num_heads * dk, embed_dim);
  p.ln1_gamma = b.constant("ln1/gamma", {embed_dim}, 1.0);
  p.ln1_beta = b.constant("ln1/beta", {embed_dim}, 0.0);
  p.ffn_w1 = b.glorot("ffn/w1", {embed_dim, ffn_width}, embed_dim, ffn_width);
  p.ffn_b1 = b.constant("ffn/b1", {ffn_width}, 0.0);
  p.ffn_w2 = b.glorot("ffn/w2", {ffn_width, embed_dim}, ffn_width, embed_dim);
  p.ffn_b2 = b.constant("ffn/b2", {embed_dim}, 0.0);
  p.ln2_gamma = b.constant("ln2/gamma", {embed_dim}, 1.0);
  p.ln2_beta = b.constant("ln2/beta", {embed_dim}, 0.0);
  return p;
}

Tensor extract_patches(const Tensor& images, std::size_t patch_size) {
  if (images.ndim() != 4) throw DimensionError("extract_patches: expected NHWC, got " + shape_str(images.shape()));
  const std::size_t n = images.dim(0), h = images.dim(1), w = images.dim(2), c = images.dim(3);
  if (h != w) throw ConfigError("extract_patches: image must be square, got " + shape_str(images.shape()));
  if (patch_size == 0 || h % patch_size != 0) {
    throw ConfigError("extract_patches: image size " + std::to_string(h) + " not divisible by patch size " +
                      std::to_string(patch_size));
  }
  const std::size_t side = h / patch_size, np = side * side, len = patch_size * patch_size * c;
  // index[k] = source offset of output element k (within one image)
  std::vector<std::size_t> index(np * len);
  for (std::size_t py = 0; py < side; ++py)
    for (std::size_t px = 0; px < side; ++px)
      for (std::size_t y = 0; y < patch_size; ++y)
        for (std::size_t x = 0; x < patch_size; ++x)
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t dst = (py * side + px) * len + (y * patch_size + x) * c + ch;
            index[dst] = ((py * patch_size + y) * w + px * patch_size + x) * c + ch;
          }
  const std::size_t per = h * w * c;
  std::vector<double> out_data(n * per);
  auto src = images.data();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t k = 0; k < per; ++k) out_data[b * per + k] = src[b * per + index[k]];
  Tensor out({n, np, len}, std::move(out_data));
  detail::record_op("extract_patches", {images}, out, [images, out, index = std::move(index), n, per]() {
    if (!images.requires_grad()) return;
    auto gi = images.mutable_grad();
    auto go = out.grad();
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t k = 0; k < per; ++k) gi[b * per + index[k]] += go[b * per + k];
  });
  return out;
}

Tensor encode_patches(const Tensor& patches, const PatchEncoderParams& p) {
  if (patches.ndim() != 3 || patches.dim(2) != p.projection.dim(0) ||
      patches.dim(1) != p.position_embeddings.dim(0)) {
    throw DimensionError("encode_patches: patches " + shape_str(patches.shape()) + " do not match projection " +
                         shape_str(p.projection.shape()) + " / positions " +
                         shape_str(p.position_embeddings.shape()));
  }
  const std::size_t n = patches.dim(0), t = patches.dim(1), e = p.projection.dim(1);
  Tensor flat = reshape(patches, {n * t, patches.dim(2)});
  Tensor projected = add_trailing(matmul(flat, p.projection), p.projection_bias);
  return add_trailing(reshape(projected, {n, t, e}), p.position_embeddings);
}

namespace {
Tensor as_batched(const Tensor& x) { return x.ndim() == 3 ? x : reshape(x, {1, x.dim(0), x.dim(1)}); }

Tensor restore_rank(const Tensor& y, std::size_t rank) {
  return rank == 3 ? y : reshape(y, {y.dim(1), y.dim(2)});
}

// [N,T,E] x [E,F] -> [N,T,F]
Tensor token_linear(const Tensor& x, const Tensor& w) {
  const std::size_t n = x.dim(0), t = x.dim(1);
  return reshape(matmul(reshape(x, {n * t, x.dim(2)}), w), {n, t, w.dim(1)});
}
}  // namespace

Tensor attention_weights(const Tensor& q, const Tensor& k) {
  if (q.ndim() != k.ndim() || q.shape().back() != k.shape().back()) {
    throw DimensionError("attention: Q " + shape_str(q.shape()) + " and K " + shape_str(k.shape()) + " differ");
  }
  const double dk = static_cast<double>(q.shape().back());
  Tensor scores = scale(bmm(as_batched(q), as_batched(k), true), 1.0 / std::sqrt(dk));
  return restore_rank(softmax(scores, -1), q.ndim());
}

Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  // V may have its own feature width; every other axis must match K.
  if (k.ndim() != v.ndim() || !std::equal(k.shape().begin(), k.shape().end() - 1, v.shape().begin())) {
    throw DimensionError("attention: K " + shape_str(k.shape()) + " and V " + shape_str(v.shape()) + " differ");
  }
  Tensor w = as_batched(attention_weights(q, k));
  return restore_rank(bmm(w, as_batched(v)), q.ndim());
}

Tensor multi_head_attention(const Tensor& x, const TransformerLayerParams& p) {
  const std::size_t rank = x.ndim();
  Tensor xb = as_batched(x);
  const std::size_t e = xb.dim(2);
  const std::size_t heads = p.num_heads();
  if (heads == 0 || e % heads != 0 || p.w_o.dim(0) != heads * (e / heads)) {
    throw ConfigError("multi_head_attention: embed dim " + std::to_string(e) + " incompatible with " +
                      std::to_string(heads) + " heads");
  }
  std::vector<Tensor> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    outs.push_back(scaled_dot_product_attention(token_linear(xb, p.w_q[h]), token_linear(xb, p.w_k[h]),
                                                token_linear(xb, p.w_v[h])));
  }
  Tensor merged = heads == 1 ? outs.front() : concat(outs, -1);
  return restore_rank(token_linear(merged, p.w_o), rank);
}

Tensor feed_forward(const Tensor& x, const TransformerLayerParams& p) {
  Tensor hidden = relu(add_trailing(token_linear(x, p.ffn_w1), p.ffn_b1));
  return add_trailing(token_linear(hidden, p.ffn_w2), p.ffn_b2);
}

Tensor transformer_layer(const Tensor& x, const TransformerLayerParams& p) {
  if (x.ndim() != 3) throw DimensionError("transformer_layer: expected [N,T,E], got " + shape_str(x.shape()));
  Tensor y = layer_norm(add(x, multi_head_attention(x, p)), p.ln1_gamma, p.ln1_beta);
  return layer_norm(add(y, feed_forward(y, p)), p.ln2_gamma, p.ln2_beta);
}

}  // namespace t2i
