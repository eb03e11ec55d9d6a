// Convolutional upsampling decoder: log2(patch_size) blocks of
// [conv3x3 -> batchnorm -> ReLU -> nearest 2x], then conv3x3 to one channel
// and a sigmoid, so the output always matches the input frame size.

#pragma once

#include <string>

#include "gatedap/nn.hpp"
#include "gatedap/param.hpp"
#include "gatedap/tensor.hpp"

namespace gatedap {

struct DecoderConfig {
  std::size_t width = 32;  // full scale: 128
  std::size_t patch_size = 8;
  real bn_momentum = 0.1;
  real bn_eps = 1e-5;

  std::size_t num_blocks() const {
    std::size_t p = patch_size, n = 0;
    while (p > 1) {
      p /= 2;
      ++n;
    }
    return n;
  }
};

inline void init_decoder_params(ParamStore& store, std::size_t in_channels, const DecoderConfig& cfg,
                                const std::string& prefix = "decoder") {
  std::size_t c = in_channels;
  for (std::size_t i = 0; i < cfg.num_blocks(); ++i) {
    const std::string bp = prefix + ".block" + std::to_string(i);
    store.create(bp + ".conv.w", {cfg.width, c, 3, 3}, Init::kaiming_uniform);
    store.create(bp + ".conv.b", {cfg.width}, Init::zeros);
    store.create(bp + ".bn.g", {cfg.width}, Init::ones);
    store.create(bp + ".bn.b", {cfg.width}, Init::zeros);
    store.create(bp + ".bn.rm", {cfg.width}, Init::zeros, /*trainable=*/false);
    store.create(bp + ".bn.rv", {cfg.width}, Init::ones, /*trainable=*/false);
    c = cfg.width;
  }
  store.create(prefix + ".final.w", {1, c, 3, 3}, Init::kaiming_uniform);
  store.create(prefix + ".final.b", {1}, Init::zeros);
}

// x: C x h x w (the token grid). Returns an HxW attention map in (0,1) with
// H = W = h * patch_size.
inline Tensor decode_attention_map(const Tensor& x, ParamStore& store, const DecoderConfig& cfg,
                                   bool train, const std::string& prefix = "decoder") {
  Tensor y = x;
  for (std::size_t i = 0; i < cfg.num_blocks(); ++i) {
    const std::string bp = prefix + ".block" + std::to_string(i);
    y = conv2d(y, store.at(bp + ".conv.w"), store.at(bp + ".conv.b"), 1);
    y = batchnorm2d(y, store.at(bp + ".bn.g"), store.at(bp + ".bn.b"),
                    store.at(bp + ".bn.rm").value(), store.at(bp + ".bn.rv").value(), train,
                    cfg.bn_momentum, cfg.bn_eps);
    y = relu(y);
    y = upsample_nearest_2x(y);
  }
  y = sigmoid(conv2d(y, store.at(prefix + ".final.w"), store.at(prefix + ".final.b"), 1));
  return reshape(y, {y.shape()[1], y.shape()[2]});
}

}  // namespace gatedap
