// Network-layer operations on top of the tensor core: convolution, pooling,
// upsampling, normalization, linear layers, and patch/grid rearrangements.

#pragma once

#include <cmath>

#include "gatedap/tensor.hpp"

namespace gatedap {

// ---------------------------------------------------------------------------
// conv2d: cross-correlation, stride 1, odd kernels
// ---------------------------------------------------------------------------

inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t padding) {
  if (x.rank() != 3) throw ShapeError("conv2d input must be CxHxW, got " + shape_str(x.shape()));
  if (w.rank() != 4) throw ShapeError("conv2d kernel must be OxIxKhxKw, got " + shape_str(w.shape()));
  const std::size_t ci = x.shape()[0], h = x.shape()[1], wd = x.shape()[2];
  const std::size_t co = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
  if (w.shape()[1] != ci)
    throw ShapeError("conv2d channel mismatch: " + shape_str(x.shape()) + " vs " + shape_str(w.shape()));
  if (kh % 2 == 0 || kw % 2 == 0) throw ShapeError("conv2d kernel dims must be odd");
  if (b.size() != co) throw ShapeError("conv2d bias size mismatch");
  const std::ptrdiff_t oh = static_cast<std::ptrdiff_t>(h) + 2 * static_cast<std::ptrdiff_t>(padding) -
                            static_cast<std::ptrdiff_t>(kh) + 1;
  const std::ptrdiff_t ow = static_cast<std::ptrdiff_t>(wd) + 2 * static_cast<std::ptrdiff_t>(padding) -
                            static_cast<std::ptrdiff_t>(kw) + 1;
  if (oh <= 0 || ow <= 0) throw ShapeError("conv2d output dimension <= 0");
  const std::size_t H2 = static_cast<std::size_t>(oh), W2 = static_cast<std::size_t>(ow);

  Node* xn = x.node().get();
  Node* wn = w.node().get();
  Node* bn = b.node().get();

  std::vector<real> out(co * H2 * W2);
  for (std::size_t c = 0; c < co; ++c) {
    const real bias = bn->value[c];
    for (std::size_t i = 0; i < H2 * W2; ++i) out[c * H2 * W2 + i] = bias;
  }
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(padding);
  for (std::size_t c = 0; c < co; ++c)
    for (std::size_t ic = 0; ic < ci; ++ic)
      for (std::size_t ky = 0; ky < kh; ++ky)
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const real wv = wn->value[((c * ci + ic) * kh + ky) * kw + kx];
          if (wv == 0.0) continue;
          // input row iy = oy + ky - pad must be in [0, h)
          const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
          const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
          const std::size_t oy0 = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, -dy));
          const std::size_t oy1 = static_cast<std::size_t>(std::max<std::ptrdiff_t>(
              0, std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(H2),
                                          static_cast<std::ptrdiff_t>(h) - dy)));
          const std::size_t ox0 = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, -dx));
          const std::size_t ox1 = static_cast<std::size_t>(std::max<std::ptrdiff_t>(
              0, std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(W2),
                                          static_cast<std::ptrdiff_t>(wd) - dx)));
          for (std::size_t oy = oy0; oy < oy1; ++oy) {
            const real* irow = xn->value.data() + (ic * h + (oy + dy)) * wd + dx;
            real* orow = out.data() + (c * H2 + oy) * W2;
            for (std::size_t ox = ox0; ox < ox1; ++ox) orow[ox] += wv * irow[ox];
          }
        }

  return detail::make_op({co, H2, W2}, std::move(out), {x, w, b}, [=](Node* nd) {
    return [=]() {
      const real* G = nd->grad.data();
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t c = 0; c < co; ++c) {
          real acc = 0.0;
          for (std::size_t i = 0; i < H2 * W2; ++i) acc += G[c * H2 * W2 + i];
          bn->grad[c] += acc;
        }
      }
      const bool gx = xn->requires_grad, gw = wn->requires_grad;
      if (gx) xn->ensure_grad();
      if (gw) wn->ensure_grad();
      if (!gx && !gw) return;
      for (std::size_t c = 0; c < co; ++c)
        for (std::size_t ic = 0; ic < ci; ++ic)
          for (std::size_t ky = 0; ky < kh; ++ky)
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad;
              const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - pad;
              const std::size_t oy0 = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, -dy));
              const std::size_t oy1 = static_cast<std::size_t>(std::max<std::ptrdiff_t>(
                  0, std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(H2),
                                              static_cast<std::ptrdiff_t>(h) - dy)));
              const std::size_t ox0 = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, -dx));
              const std::size_t ox1 = static_cast<std::size_t>(std::max<std::ptrdiff_t>(
                  0, std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(W2),
                                              static_cast<std::ptrdiff_t>(wd) - dx)));
              const std::size_t widx = ((c * ci + ic) * kh + ky) * kw + kx;
              const real wv = wn->value[widx];
              real wacc = 0.0;
              for (std::size_t oy = oy0; oy < oy1; ++oy) {
                const real* grow = G + (c * H2 + oy) * W2;
                const std::size_t ibase = (ic * h + (oy + dy)) * wd + dx;
                if (gx && wv != 0.0) {
                  real* irow = xn->grad.data() + ibase;
                  for (std::size_t ox = ox0; ox < ox1; ++ox) irow[ox] += wv * grow[ox];
                }
                if (gw) {
                  const real* irow = xn->value.data() + ibase;
                  for (std::size_t ox = ox0; ox < ox1; ++ox) wacc += grow[ox] * irow[ox];
                }
              }
              if (gw) wn->grad[widx] += wacc;
            }
    };
  });
}

// ---------------------------------------------------------------------------
// channel pooling (CxHxW -> 1xHxW)
// ---------------------------------------------------------------------------

enum class PoolKind { avg, max };

inline Tensor pool_channel(PoolKind kind, const Tensor& x) {
  if (x.rank() != 3) throw ShapeError("pool_channel input must be CxHxW");
  const std::size_t c = x.shape()[0], hw = x.shape()[1] * x.shape()[2];
  if (kind == PoolKind::avg) {
    Tensor m = mean(x, 0);  // HxW
    return reshape(m, {1, x.shape()[1], x.shape()[2]});
  }
  Tensor m = max(x, 0);
  (void)c;
  (void)hw;
  return reshape(m, {1, x.shape()[1], x.shape()[2]});
}

// ---------------------------------------------------------------------------
// nearest-neighbor 2x upsampling
// ---------------------------------------------------------------------------

inline Tensor upsample_nearest_2x(const Tensor& x) {
  if (x.rank() != 3) throw ShapeError("upsample input must be CxHxW");
  const std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  Node* xn = x.node().get();
  std::vector<real> out(c * 4 * h * w);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx) {
        const real v = xn->value[(ch * h + y) * w + xx];
        const std::size_t base = (ch * 2 * h + 2 * y) * 2 * w + 2 * xx;
        out[base] = v;
        out[base + 1] = v;
        out[base + 2 * w] = v;
        out[base + 2 * w + 1] = v;
      }
  return detail::make_op({c, 2 * h, 2 * w}, std::move(out), {x}, [=](Node* nd) {
    return [=]() {
      xn->ensure_grad();
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t xx = 0; xx < w; ++xx) {
            const std::size_t base = (ch * 2 * h + 2 * y) * 2 * w + 2 * xx;
            xn->grad[(ch * h + y) * w + xx] +=
                nd->grad[base] + nd->grad[base + 1] + nd->grad[base + 2 * w] + nd->grad[base + 2 * w + 1];
          }
    };
  });
}

// ---------------------------------------------------------------------------
// batch normalization (batch size 1: per-sample spatial statistics)
// ---------------------------------------------------------------------------

struct BatchNormMode {
  bool train = true;
};

// gamma/beta are (C) tensors; running_mean/running_var are plain buffers the
// caller owns (updated in train mode, consumed in eval mode).
inline Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                          std::vector<real>& running_mean, std::vector<real>& running_var,
                          bool train, real momentum = 0.1, real eps = 1e-5) {
  if (x.rank() != 3) throw ShapeError("batchnorm2d input must be CxHxW");
  const std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  if (gamma.size() != c || beta.size() != c) throw ShapeError("batchnorm2d gamma/beta size");
  if (running_mean.size() != c || running_var.size() != c)
    throw ShapeError("batchnorm2d running stats size");

  Tensor g2 = reshape(gamma, {c, 1});
  Tensor b2 = reshape(beta, {c, 1});
  Tensor xr = reshape(x, {c, h * w});
  Tensor y;
  if (train) {
    Tensor mu = reshape(mean(xr, 1), {c, 1});
    Tensor xc = sub(xr, mu);
    Tensor var = reshape(mean(square(xc), 1), {c, 1});
    y = div(xc, sqrt_t(add_scalar(var, eps)));
    for (std::size_t i = 0; i < c; ++i) {
      running_mean[i] = (1.0 - momentum) * running_mean[i] + momentum * mu.value()[i];
      running_var[i] = (1.0 - momentum) * running_var[i] + momentum * var.value()[i];
    }
  } else {
    std::vector<real> mu = running_mean, sd(c);
    for (std::size_t i = 0; i < c; ++i) sd[i] = std::sqrt(running_var[i] + eps);
    y = div(sub(xr, Tensor::from_values({c, 1}, std::move(mu))),
            Tensor::from_values({c, 1}, std::move(sd)));
  }
  y = add(hadamard(y, g2), b2);
  return reshape(y, {c, h, w});
}

// ---------------------------------------------------------------------------
// layer norm over the last axis of an NxD matrix
// ---------------------------------------------------------------------------

inline Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, real eps = 1e-5) {
  if (x.rank() != 2) throw ShapeError("layernorm input must be NxD");
  const std::size_t n = x.shape()[0], d = x.shape()[1];
  if (gamma.size() != d || beta.size() != d) throw ShapeError("layernorm gamma/beta size");
  Tensor mu = reshape(mean(x, 1), {n, 1});
  Tensor xc = sub(x, mu);
  Tensor var = reshape(mean(square(xc), 1), {n, 1});
  Tensor y = div(xc, sqrt_t(add_scalar(var, eps)));
  return add(hadamard(y, gamma), beta);  // gamma/beta broadcast over rows
}

// ---------------------------------------------------------------------------
// linear / matvec helpers
// ---------------------------------------------------------------------------

// x: NxD, w: DxO, b: (O). Bias broadcasts over rows.
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add(matmul(x, w), b);
}

// w: OxI applied to a rank-1 vector of length I -> rank-1 of length O.
inline Tensor matvec(const Tensor& w, const Tensor& v, const Tensor& b) {
  const std::size_t o = w.shape()[0], i = w.shape()[1];
  if (v.size() != i) throw ShapeError("matvec: " + shape_str(w.shape()) + " x " + shape_str(v.shape()));
  Tensor y = matmul(w, reshape(v, {i, 1}));
  return add(reshape(y, {o}), b);
}

// ---------------------------------------------------------------------------
// patch extraction and token/grid rearrangement
// ---------------------------------------------------------------------------

// CxHxW -> N_tok x (C*p*p), patches ordered row-major over the patch grid.
inline Tensor extract_patches(const Tensor& x, std::size_t p) {
  if (x.rank() != 3) throw ShapeError("extract_patches input must be CxHxW");
  const std::size_t c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  if (h % p != 0 || w % p != 0)
    throw ShapeError("image size " + shape_str(x.shape()) + " not divisible by patch " + std::to_string(p));
  const std::size_t gh = h / p, gw = w / p, ntok = gh * gw, dim = c * p * p;
  Node* xn = x.node().get();
  std::vector<real> out(ntok * dim);
  for (std::size_t gy = 0; gy < gh; ++gy)
    for (std::size_t gx = 0; gx < gw; ++gx) {
      const std::size_t t = gy * gw + gx;
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t py = 0; py < p; ++py)
          for (std::size_t px = 0; px < p; ++px)
            out[t * dim + (ch * p + py) * p + px] =
                xn->value[(ch * h + gy * p + py) * w + gx * p + px];
    }
  return detail::make_op({ntok, dim}, std::move(out), {x}, [=](Node* nd) {
    return [=]() {
      xn->ensure_grad();
      for (std::size_t gy = 0; gy < gh; ++gy)
        for (std::size_t gx = 0; gx < gw; ++gx) {
          const std::size_t t = gy * gw + gx;
          for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t py = 0; py < p; ++py)
              for (std::size_t px = 0; px < p; ++px)
                xn->grad[(ch * h + gy * p + py) * w + gx * p + px] +=
                    nd->grad[t * dim + (ch * p + py) * p + px];
        }
    };
  });
}

// N_tok x D -> D x h x w with token i at (i div w, i mod w).
inline Tensor tokens_to_grid(const Tensor& tokens, std::size_t h, std::size_t w) {
  if (tokens.rank() != 2) throw ShapeError("tokens_to_grid input must be NxD");
  const std::size_t n = tokens.shape()[0], d = tokens.shape()[1];
  if (n != h * w) throw ShapeError("tokens_to_grid: " + std::to_string(n) + " tokens vs " +
                                   std::to_string(h) + "x" + std::to_string(w) + " grid");
  Node* tn = tokens.node().get();
  std::vector<real> out(d * h * w);
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t k = 0; k < d; ++k) out[k * n + t] = tn->value[t * d + k];
  return detail::make_op({d, h, w}, std::move(out), {tokens}, [=](Node* nd) {
    return [=]() {
      tn->ensure_grad();
      for (std::size_t t = 0; t < n; ++t)
        for (std::size_t k = 0; k < d; ++k) tn->grad[t * d + k] += nd->grad[k * n + t];
    };
  });
}

// Inverse of tokens_to_grid.
inline Tensor grid_to_tokens(const Tensor& grid) {
  if (grid.rank() != 3) throw ShapeError("grid_to_tokens input must be DxHxW");
  const std::size_t d = grid.shape()[0], n = grid.shape()[1] * grid.shape()[2];
  Node* gn = grid.node().get();
  std::vector<real> out(n * d);
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t k = 0; k < d; ++k) out[t * d + k] = gn->value[k * n + t];
  return detail::make_op({n, d}, std::move(out), {grid}, [=](Node* nd) {
    return [=]() {
      gn->ensure_grad();
      for (std::size_t t = 0; t < n; ++t)
        for (std::size_t k = 0; k < d; ++k) gn->grad[k * n + t] += nd->grad[t * d + k];
    };
  });
}

// Flatten to rank 1.
inline Tensor flatten(const Tensor& x) { return reshape(x, {x.size()}); }

}  // namespace gatedap
