// The three gating families: SpaG (spatial), MO-InfoG / MU-InfoG (information
// type), and MemoG (temporal, GRU-based with an uncertainty window). Closed
// gates replace their multiplicative mask with a neutral constant, so closing
// is retrain-free and reversible.

#pragma once

#include <optional>
#include <set>
#include <vector>

#include "gatedap/nn.hpp"
#include "gatedap/tensor.hpp"

namespace gatedap {

struct GateConfig {
  bool spag_open = true;
  bool memog_open = true;  // covers MO-InfoG on the hidden state and the TU masks
  bool mu_infog_open = true;
  bool temporal_uncertainty = true;
};

// ---------------------------------------------------------------------------
// SpaG
// ---------------------------------------------------------------------------

// S: CxHxW. conv_w: 1x2xKxK over the [avg;max] channel-pooled pair, padding
// (K-1)/2. Returns sigmoid(conv([F_avg;F_max])) broadcast-multiplied onto S.
// When closed the mask is identically 1 and the input is returned unchanged.
inline Tensor spag_forward(const Tensor& s, const Tensor& conv_w, const Tensor& conv_b, bool open,
                           Tensor* mask_out = nullptr) {
  const std::size_t h = s.shape()[1], w = s.shape()[2];
  if (!open) {
    if (mask_out) *mask_out = Tensor::full({h, w}, 1.0);
    return s;
  }
  Tensor favg = pool_channel(PoolKind::avg, s);
  Tensor fmax = pool_channel(PoolKind::max, s);
  Tensor pooled = concat({favg, fmax}, 0);  // 2xHxW
  const std::size_t k = conv_w.shape()[2];
  Tensor a = sigmoid(conv2d(pooled, conv_w, conv_b, (k - 1) / 2));  // 1xHxW
  Tensor mask = reshape(a, {h, w});
  if (mask_out) *mask_out = mask;
  return hadamard(s, mask);  // mask broadcasts over the channel axis
}

// ---------------------------------------------------------------------------
// MO-InfoG
// ---------------------------------------------------------------------------

// M' = ELU(W_f . M) (.) sigmoid(W_g . M); both filters are 1x1 convolutions
// with C output channels.
inline Tensor mo_infog_forward(const Tensor& m, const Tensor& wf, const Tensor& bf,
                               const Tensor& wg, const Tensor& bg, bool open) {
  if (!open) return m;
  Tensor feat = elu(conv2d(m, wf, bf, 0));
  Tensor gate = sigmoid(conv2d(m, wg, bg, 0));
  return hadamard(feat, gate);
}

// MO-InfoG on a rank-1 hidden vector: the 1x1 conv degenerates to a learned
// linear gate.
inline Tensor mo_infog_vec(const Tensor& h, const Tensor& wf, const Tensor& bf, const Tensor& wg,
                           const Tensor& bg, bool open) {
  if (!open) return h;
  Tensor feat = elu(matvec(wf, h, bf));
  Tensor gate = sigmoid(matvec(wg, h, bg));
  return hadamard(feat, gate);
}

// ---------------------------------------------------------------------------
// MU-InfoG
// ---------------------------------------------------------------------------

struct MuInfogResult {
  std::vector<Tensor> outputs;  // per input, same CxHxW shape
  std::vector<Tensor> masks;    // per input, HxW; sum to 1 across inputs when open
};

// Per-input 1x1 reduction to 1xHxW, softmax over the input axis, each mask
// broadcast-multiplied onto its input. `closed_mask_value` is the neutral
// constant used when the gate is closed (1/n across information types, 1 for
// the temporal-uncertainty window). Inputs listed in `forced_zero` get a hard
// zero mask and are excluded from the softmax, which makes the outputs
// independent of their content.
inline MuInfogResult mu_infog_forward(const std::vector<Tensor>& ms,
                                      const std::vector<Tensor>& red_w,
                                      const std::vector<Tensor>& red_b, bool open,
                                      real closed_mask_value,
                                      const std::set<std::size_t>& forced_zero = {}) {
  if (ms.empty()) throw UsageError("mu_infog_forward: empty input list");
  const std::size_t n = ms.size();
  const std::size_t h = ms[0].shape()[1], w = ms[0].shape()[2];
  for (const auto& m : ms)
    if (m.shape() != ms[0].shape()) throw ShapeError("mu_infog_forward: input shape mismatch");

  MuInfogResult res;
  res.masks.resize(n);

  if (!open) {
    for (std::size_t i = 0; i < n; ++i)
      res.masks[i] = Tensor::full({h, w}, forced_zero.count(i) ? 0.0 : closed_mask_value);
  } else {
    std::vector<Tensor> reduced;  // only the active inputs
    std::vector<std::size_t> active;
    for (std::size_t i = 0; i < n; ++i) {
      if (forced_zero.count(i)) continue;
      reduced.push_back(conv2d(ms[i], red_w[i], red_b[i], 0));  // 1xHxW
      active.push_back(i);
    }
    if (reduced.empty()) throw UsageError("mu_infog_forward: all inputs forced to zero");
    Tensor mu = softmax(concat(reduced, 0), 0);  // n_active x H x W
    for (std::size_t i = 0; i < n; ++i) res.masks[i] = Tensor::zeros({h, w});
    for (std::size_t a = 0; a < active.size(); ++a)
      res.masks[active[a]] = reshape(slice(mu, 0, a, 1), {h, w});
  }

  res.outputs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) res.outputs.push_back(hadamard(ms[i], res.masks[i]));
  return res;
}

// ---------------------------------------------------------------------------
// GRU cell
// ---------------------------------------------------------------------------

struct GruParams {
  Tensor wz, bz;  // d_h x (d_h + d_x)
  Tensor wr, br;
  Tensor wh, bh;
};

// z = sig(Wz[h;x]+bz), r = sig(Wr[h;x]+br), hc = tanh(Wh[r(.)h;x]+bh),
// H = (1-z)(.)h + z(.)hc. z gates the candidate.
inline Tensor gru_cell(const Tensor& h_prev, const Tensor& x, const GruParams& p) {
  const std::size_t dh = h_prev.size();
  if (p.wz.shape()[1] != dh + x.size())
    throw ShapeError("gru_cell: weight " + shape_str(p.wz.shape()) + " vs inputs " +
                     std::to_string(dh) + "+" + std::to_string(x.size()));
  Tensor hx = concat({h_prev, x}, 0);
  Tensor z = sigmoid(matvec(p.wz, hx, p.bz));
  Tensor r = sigmoid(matvec(p.wr, hx, p.br));
  Tensor rh = concat({hadamard(r, h_prev), x}, 0);
  Tensor hc = tanh_t(matvec(p.wh, rh, p.bh));
  Tensor one_minus_z = add_scalar(negate(z), 1.0);
  return add(hadamard(one_minus_z, h_prev), hadamard(z, hc));
}

// ---------------------------------------------------------------------------
// MemoG
// ---------------------------------------------------------------------------

struct MemogParams {
  // long-term gate on the hidden state
  Tensor mo_wf, mo_bf, mo_wg, mo_bg;  // d_h x d_h
  // shared 1x1 reduction for the temporal-uncertainty window
  Tensor tu_red_w, tu_red_b;  // 1 x C x 1 x 1
  // flatten projection into the GRU input
  Tensor proj_w, proj_b;  // d_x x (C*h*w)
  GruParams gru;
};

// One recurrent step. H'_{t-1} = MO-InfoG(H_{t-1}); with temporal uncertainty
// the window frames are weighted by MU-InfoG (frames as "types", shared
// reduction, neutral constant 1) and the gated current frame feeds the GRU.
inline Tensor memog_forward(const Tensor& h_prev, const std::vector<Tensor>& x_window,
                            const MemogParams& p, bool memog_open, bool temporal_uncertainty) {
  if (x_window.empty()) throw UsageError("memog_forward: empty window");
  Tensor h_gated = mo_infog_vec(h_prev, p.mo_wf, p.mo_bf, p.mo_wg, p.mo_bg, memog_open);

  Tensor x_cur;
  if (temporal_uncertainty) {
    std::vector<Tensor> red_w(x_window.size(), p.tu_red_w);
    std::vector<Tensor> red_b(x_window.size(), p.tu_red_b);
    MuInfogResult tu = mu_infog_forward(x_window, red_w, red_b, memog_open,
                                        /*closed_mask_value=*/1.0);
    x_cur = tu.outputs.back();
  } else {
    x_cur = x_window.back();
  }
  Tensor x = matvec(p.proj_w, flatten(x_cur), p.proj_b);
  return gru_cell(h_gated, x, p.gru);
}

}  // namespace gatedap
