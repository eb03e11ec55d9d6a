// ViT-style frame encoder: patch embedding with learned positions, pre-norm
// transformer blocks, and the token/grid rearrangement that hands spatial
// feature maps to the gating and decoding stages.

#pragma once

#include <string>

#include "gatedap/nn.hpp"
#include "gatedap/param.hpp"
#include "gatedap/tensor.hpp"

namespace gatedap {

struct EncoderConfig {
  std::size_t image_size = 64;
  std::size_t patch_size = 8;  // full scale: 16
  std::size_t in_channels = 4;
  std::size_t embed_dim = 32;
  std::size_t depth = 2;  // full scale: 12
  std::size_t num_heads = 2;  // full scale: 12
  real mlp_ratio = 4.0;

  std::size_t grid() const { return image_size / patch_size; }
  std::size_t tokens() const { return grid() * grid(); }
  std::size_t head_dim() const { return embed_dim / num_heads; }
  std::size_t mlp_hidden() const { return static_cast<std::size_t>(embed_dim * mlp_ratio); }

  void validate() const {
    if (patch_size == 0 || image_size % patch_size != 0)
      throw ShapeError("image_size must be divisible by patch_size");
    if (num_heads == 0 || embed_dim % num_heads != 0)
      throw ShapeError("embed_dim must be divisible by num_heads");
    // decoder doubles the grid log2(patch_size) times, so the patch size must
    // be a power of two
    std::size_t p = patch_size;
    while (p % 2 == 0) p /= 2;
    if (p != 1) throw ShapeError("patch_size must be a power of two");
  }
};

inline void init_encoder_params(ParamStore& store, const EncoderConfig& cfg,
                                const std::string& prefix = "encoder") {
  cfg.validate();
  const std::size_t pd = cfg.in_channels * cfg.patch_size * cfg.patch_size;
  store.create(prefix + ".patch.w", {pd, cfg.embed_dim}, Init::trunc_normal_002);
  store.create(prefix + ".patch.b", {cfg.embed_dim}, Init::zeros);
  store.create(prefix + ".pos", {cfg.tokens(), cfg.embed_dim}, Init::trunc_normal_002);
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    const std::string bp = prefix + ".block" + std::to_string(i);
    store.create(bp + ".ln1.g", {cfg.embed_dim}, Init::ones);
    store.create(bp + ".ln1.b", {cfg.embed_dim}, Init::zeros);
    for (const char* w : {"wq", "wk", "wv", "wo"})
      store.create(bp + ".attn." + std::string(w), {cfg.embed_dim, cfg.embed_dim},
                   Init::trunc_normal_002);
    for (const char* b : {"bq", "bk", "bv", "bo"})
      store.create(bp + ".attn." + std::string(b), {cfg.embed_dim}, Init::zeros);
    store.create(bp + ".ln2.g", {cfg.embed_dim}, Init::ones);
    store.create(bp + ".ln2.b", {cfg.embed_dim}, Init::zeros);
    store.create(bp + ".mlp.w1", {cfg.embed_dim, cfg.mlp_hidden()}, Init::trunc_normal_002);
    store.create(bp + ".mlp.b1", {cfg.mlp_hidden()}, Init::zeros);
    store.create(bp + ".mlp.w2", {cfg.mlp_hidden(), cfg.embed_dim}, Init::trunc_normal_002);
    store.create(bp + ".mlp.b2", {cfg.embed_dim}, Init::zeros);
  }
}

// CxHxW -> N_tok x embed_dim. Non-overlapping patches, linear projection,
// learned positional embedding. No class token: every token is spatial.
inline Tensor patch_embed(const Tensor& frame, ParamStore& store, const EncoderConfig& cfg,
                          const std::string& prefix = "encoder") {
  Tensor patches = extract_patches(frame, cfg.patch_size);
  Tensor tok = linear(patches, store.at(prefix + ".patch.w"), store.at(prefix + ".patch.b"));
  return add(tok, store.at(prefix + ".pos"));
}

// Pre-norm residual block: x + MHSA(LN(x)), then + MLP(LN(.)).
inline Tensor vit_block(const Tensor& x, ParamStore& store, const EncoderConfig& cfg,
                        const std::string& block_prefix) {
  const std::size_t n = x.shape()[0];
  const std::size_t dh = cfg.head_dim();
  const real att_scale = 1.0 / std::sqrt(static_cast<real>(dh));

  Tensor t = layernorm(x, store.at(block_prefix + ".ln1.g"), store.at(block_prefix + ".ln1.b"));
  Tensor q = linear(t, store.at(block_prefix + ".attn.wq"), store.at(block_prefix + ".attn.bq"));
  Tensor k = linear(t, store.at(block_prefix + ".attn.wk"), store.at(block_prefix + ".attn.bk"));
  Tensor v = linear(t, store.at(block_prefix + ".attn.wv"), store.at(block_prefix + ".attn.bv"));

  std::vector<Tensor> heads;
  heads.reserve(cfg.num_heads);
  for (std::size_t hd = 0; hd < cfg.num_heads; ++hd) {
    Tensor qh = slice(q, 1, hd * dh, dh);
    Tensor kh = slice(k, 1, hd * dh, dh);
    Tensor vh = slice(v, 1, hd * dh, dh);
    Tensor att = softmax(scale(matmul(qh, transpose2d(kh)), att_scale), 1);  // NxN
    heads.push_back(matmul(att, vh));
  }
  Tensor attn_out = linear(concat(heads, 1), store.at(block_prefix + ".attn.wo"),
                           store.at(block_prefix + ".attn.bo"));
  Tensor y = add(x, attn_out);

  Tensor t2 = layernorm(y, store.at(block_prefix + ".ln2.g"), store.at(block_prefix + ".ln2.b"));
  Tensor hidden = relu(linear(t2, store.at(block_prefix + ".mlp.w1"), store.at(block_prefix + ".mlp.b1")));
  Tensor mlp_out = linear(hidden, store.at(block_prefix + ".mlp.w2"), store.at(block_prefix + ".mlp.b2"));
  (void)n;
  return add(y, mlp_out);
}

// Full encode: the same parameters serve all information streams.
inline Tensor encode_frame(const Tensor& frame, ParamStore& store, const EncoderConfig& cfg,
                           const std::string& prefix = "encoder") {
  Tensor tok = patch_embed(frame, store, cfg, prefix);
  for (std::size_t i = 0; i < cfg.depth; ++i)
    tok = vit_block(tok, store, cfg, prefix + ".block" + std::to_string(i));
  return tok;
}

}  // namespace gatedap
