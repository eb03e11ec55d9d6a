// The full Gate-DAP forward pass over a clip, the joint KLD/CC/NSS loss, and
// the training and evaluation loops.

#pragma once

#include <atomic>
#include <chrono>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "gatedap/data.hpp"
#include "gatedap/decoder.hpp"
#include "gatedap/encoder.hpp"
#include "gatedap/gating.hpp"
#include "gatedap/io.hpp"
#include "gatedap/metrics.hpp"
#include "gatedap/param.hpp"
#include "gatedap/tensor.hpp"

namespace gatedap {

struct ModelConfig {
  EncoderConfig encoder;
  GateConfig gate;
  std::size_t clip_len = 4;  // k
  std::vector<StreamKind> streams = {StreamKind::rgb, StreamKind::semantic, StreamKind::flow,
                                     StreamKind::drivable};
  std::size_t gru_hidden = 64;  // full scale: 256; must be divisible by grid^2
  std::size_t gru_input = 64;
  std::size_t decoder_width = 32;
  std::size_t spag_kernel = 7;
  bool share_memog = false;  // one MemoG parameter set for all streams
  real max_speed = 3.0;

  std::size_t hidden_channels() const { return gru_hidden / (encoder.grid() * encoder.grid()); }

  void validate() const {
    encoder.validate();
    if (clip_len < 1) throw UsageError("clip_len must be >= 1");
    if (streams.empty()) throw UsageError("streams must be nonempty");
    std::set<StreamKind> seen(streams.begin(), streams.end());
    if (seen.size() != streams.size()) throw UsageError("duplicate stream in config");
    const std::size_t g2 = encoder.grid() * encoder.grid();
    if (gru_hidden == 0 || gru_hidden % g2 != 0)
      throw UsageError("gru_hidden must be a positive multiple of the token-grid size " +
                       std::to_string(g2));
  }
};

// The CC/NSS balance factors are a free choice; these defaults keep the
// unbounded NSS reward from swamping the divergence and correlation terms at
// desk scale.
struct LossConfig {
  real alpha = 1.0;   // CC weight
  real beta = 0.02;   // NSS weight
  real epsilon = 1e-7;
};

struct ForwardOptions {
  bool train = false;
  // Streams whose MU-InfoG mask is pinned to zero (and excluded from the
  // softmax), making the prediction independent of their content.
  std::set<std::size_t> force_zero_streams;
};

struct ForwardResult {
  Tensor prediction;             // HxW in (0,1)
  std::vector<Tensor> mu_masks;  // per stream, grid-sized
};

class Model {
 public:
  Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), store_(seed) {
    cfg_.validate();
    init_params();
  }

  ModelConfig& config() { return cfg_; }
  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  DecoderConfig decoder_config() const {
    DecoderConfig d;
    d.width = cfg_.decoder_width;
    d.patch_size = cfg_.encoder.patch_size;
    return d;
  }

  ForwardResult forward_clip(const ClipSample& sample, const ForwardOptions& opts = {}) {
    const std::size_t k = cfg_.clip_len;
    if (sample.frames.size() < k)
      throw InputError("clip " + sample.clip_id + " has " + std::to_string(sample.frames.size()) +
                       " frames, need " + std::to_string(k));
    if (sample.height != cfg_.encoder.image_size || sample.width != cfg_.encoder.image_size)
      throw InputError("clip " + sample.clip_id + " frame size mismatch");
    const std::size_t g = cfg_.encoder.grid();
    const GateConfig& gate = cfg_.gate;
    // the last k frames; the final one is the frame whose attention we predict
    const std::size_t t0 = sample.frames.size() - k;

    std::vector<Tensor> hidden_grids;
    hidden_grids.reserve(cfg_.streams.size());
    for (const StreamKind stream : cfg_.streams) {
      const std::string sname = stream_name(stream);
      std::vector<Tensor> window;
      window.reserve(k);
      for (std::size_t t = 0; t < k; ++t) {
        Tensor raw = normalize_stream(sample.frames[t0 + t], stream, sample.height, sample.width,
                                      cfg_.max_speed);
        Tensor x = conv2d(raw, store_.at("stream." + sname + ".proj.w"),
                          store_.at("stream." + sname + ".proj.b"), 0);
        Tensor tok = encode_frame(x, store_, cfg_.encoder);
        Tensor grid = tokens_to_grid(tok, g, g);
        window.push_back(spag_forward(grid, store_.at("spag." + sname + ".w"),
                                      store_.at("spag." + sname + ".b"), gate.spag_open));
      }
      MemogParams mp = memog_params(sname);
      Tensor h = Tensor::zeros({cfg_.gru_hidden});
      for (std::size_t t = 0; t < k; ++t) {
        std::vector<Tensor> prefix(window.begin(), window.begin() + t + 1);
        h = memog_forward(h, prefix, mp, gate.memog_open, gate.temporal_uncertainty);
      }
      hidden_grids.push_back(reshape(h, {cfg_.hidden_channels(), g, g}));
    }

    std::vector<Tensor> red_w, red_b;
    for (const StreamKind stream : cfg_.streams) {
      const std::string sname = stream_name(stream);
      red_w.push_back(store_.at("mu." + sname + ".red.w"));
      red_b.push_back(store_.at("mu." + sname + ".red.b"));
    }
    MuInfogResult mu = mu_infog_forward(hidden_grids, red_w, red_b, gate.mu_infog_open,
                                        1.0 / static_cast<real>(cfg_.streams.size()),
                                        opts.force_zero_streams);
    Tensor stacked = concat(mu.outputs, 0);  // (n * c_h) x g x g

    ForwardResult res;
    res.prediction = decode_attention_map(stacked, store_, decoder_config(), opts.train);
    res.mu_masks = std::move(mu.masks);
    return res;
  }

 private:
  void init_params() {
    for (const StreamKind stream : cfg_.streams) {
      const std::string sname = stream_name(stream);
      store_.create("stream." + sname + ".proj.w",
                    {cfg_.encoder.in_channels, stream_channels(stream), 1, 1},
                    Init::kaiming_uniform);
      store_.create("stream." + sname + ".proj.b", {cfg_.encoder.in_channels}, Init::zeros);
    }
    init_encoder_params(store_, cfg_.encoder);
    for (const StreamKind stream : cfg_.streams) {
      const std::string sname = stream_name(stream);
      store_.create("spag." + sname + ".w", {1, 2, cfg_.spag_kernel, cfg_.spag_kernel},
                    Init::kaiming_uniform);
      store_.create("spag." + sname + ".b", {1}, Init::zeros);
    }
    const std::size_t dh = cfg_.gru_hidden, dx = cfg_.gru_input;
    const std::size_t feat = cfg_.encoder.embed_dim * cfg_.encoder.tokens();
    auto create_memog = [&](const std::string& mname) {
      store_.create(mname + ".mo.wf", {dh, dh}, Init::trunc_normal_002);
      store_.create(mname + ".mo.bf", {dh}, Init::zeros);
      store_.create(mname + ".mo.wg", {dh, dh}, Init::trunc_normal_002);
      store_.create(mname + ".mo.bg", {dh}, Init::zeros);
      store_.create(mname + ".tu.red.w", {1, cfg_.encoder.embed_dim, 1, 1}, Init::kaiming_uniform);
      store_.create(mname + ".tu.red.b", {1}, Init::zeros);
      store_.create(mname + ".proj.w", {dx, feat}, Init::trunc_normal_002);
      store_.create(mname + ".proj.b", {dx}, Init::zeros);
      for (const char* gname : {"wz", "wr", "wh"})
        store_.create(mname + ".gru." + std::string(gname), {dh, dh + dx}, Init::trunc_normal_002);
      for (const char* gname : {"bz", "br", "bh"})
        store_.create(mname + ".gru." + std::string(gname), {dh}, Init::zeros);
    };
    if (cfg_.share_memog) {
      create_memog("memog.shared");
    } else {
      for (const StreamKind stream : cfg_.streams)
        create_memog("memog." + std::string(stream_name(stream)));
    }
    for (const StreamKind stream : cfg_.streams) {
      const std::string sname = stream_name(stream);
      store_.create("mu." + sname + ".red.w", {1, cfg_.hidden_channels(), 1, 1},
                    Init::kaiming_uniform);
      store_.create("mu." + sname + ".red.b", {1}, Init::zeros);
    }
    init_decoder_params(store_, cfg_.streams.size() * cfg_.hidden_channels(), decoder_config());
  }

  MemogParams memog_params(const std::string& sname) {
    const std::string m = cfg_.share_memog ? "memog.shared" : "memog." + sname;
    MemogParams p;
    p.mo_wf = store_.at(m + ".mo.wf");
    p.mo_bf = store_.at(m + ".mo.bf");
    p.mo_wg = store_.at(m + ".mo.wg");
    p.mo_bg = store_.at(m + ".mo.bg");
    p.tu_red_w = store_.at(m + ".tu.red.w");
    p.tu_red_b = store_.at(m + ".tu.red.b");
    p.proj_w = store_.at(m + ".proj.w");
    p.proj_b = store_.at(m + ".proj.b");
    p.gru.wz = store_.at(m + ".gru.wz");
    p.gru.bz = store_.at(m + ".gru.bz");
    p.gru.wr = store_.at(m + ".gru.wr");
    p.gru.br = store_.at(m + ".gru.br");
    p.gru.wh = store_.at(m + ".gru.wh");
    p.gru.bh = store_.at(m + ".gru.bh");
    return p;
  }

  ModelConfig cfg_;
  ParamStore store_;
};

// ---------------------------------------------------------------------------
// joint loss
// ---------------------------------------------------------------------------

struct LossBreakdown {
  Tensor total;
  real kld_term = 0, cc_term = 0, nss_term = 0;
};

// L = KLD(Y, Yhat) - alpha*CC(Y, Yhat) - beta*NSS(Yhat, P). The prediction is
// normalized to sum 1 inside the divergence term; CC and NSS are scale
// invariant and consume it raw. Degenerate cases (constant prediction, no
// fixations) drop the affected term.
inline LossBreakdown joint_loss(const Tensor& prediction, const std::vector<real>& y_gt,
                                const std::vector<std::uint8_t>& fixations, const LossConfig& cfg) {
  const std::size_t n = prediction.size();
  if (y_gt.size() != n || fixations.size() != n) throw ShapeError("joint_loss: size mismatch");
  Tensor yhat = flatten(prediction);
  Tensor y = Tensor::from_values({n}, y_gt);

  // KLD term on the normalized prediction
  Tensor yhat_n = div(yhat, sum(yhat));
  Tensor ratio = div(add_scalar(y, cfg.epsilon), add_scalar(yhat_n, cfg.epsilon));
  Tensor kld_t = sum(hadamard(y, log_t(ratio)));

  LossBreakdown out;
  out.kld_term = kld_t.item();
  Tensor total = kld_t;

  const real mu_val = [&] {
    real s = 0;
    for (real v : yhat.value()) s += v;
    return s / static_cast<real>(n);
  }();
  real var_val = 0, muy = 0, vary = 0;
  for (real v : yhat.value()) var_val += (v - mu_val) * (v - mu_val);
  var_val /= static_cast<real>(n);
  for (real v : y_gt) muy += v;
  muy /= static_cast<real>(n);
  for (real v : y_gt) vary += (v - muy) * (v - muy);
  vary /= static_cast<real>(n);

  std::size_t fix_count = 0;
  for (auto f : fixations) fix_count += f ? 1 : 0;

  const bool pred_const = var_val < 1e-24;
  const bool gt_const = vary < 1e-24;
  if (pred_const || gt_const) {
    detail::metric_warn("joint_loss: constant map, dropping CC" +
                        std::string(pred_const ? "/NSS" : "") + " term");
  }

  if (!pred_const && !gt_const) {
    Tensor mu_p = mean(yhat);
    Tensor centered = sub(yhat, mu_p);
    Tensor sd_p = sqrt_t(mean(square(centered)));
    Tensor yc = Tensor::from_values({n}, [&] {
      std::vector<real> v(n);
      for (std::size_t i = 0; i < n; ++i) v[i] = y_gt[i] - muy;
      return v;
    }());
    Tensor cov = mean(hadamard(centered, yc));
    Tensor cc_t = div(cov, scale(sd_p, std::sqrt(vary)));
    out.cc_term = -cfg.alpha * cc_t.item();
    total = sub(total, scale(cc_t, cfg.alpha));

    if (fix_count > 0) {
      Tensor standardized = div(centered, sd_p);
      std::vector<real> pmask(n);
      for (std::size_t i = 0; i < n; ++i) pmask[i] = fixations[i] ? 1.0 : 0.0;
      Tensor nss_t = scale(sum(hadamard(standardized, Tensor::from_values({n}, std::move(pmask)))),
                           1.0 / static_cast<real>(fix_count));
      out.nss_term = -cfg.beta * nss_t.item();
      total = sub(total, scale(nss_t, cfg.beta));
    }
  }

  out.total = total;
  return out;
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

struct TrainOptions {
  std::size_t steps = 2000;   // steps to run in this invocation
  std::size_t step_offset = 0;  // global step of the first iteration (resume)
  std::size_t eval_every = 50;  // early-stop check cadence (0 disables)
  std::optional<real> stop_cc;  // stop once train CC exceeds this ...
  std::optional<real> stop_kld;  // ... and train KLD drops below this
  fs::path log_path;            // train.csv (empty: no log)
  fs::path checkpoint_dir;      // final checkpoint (empty: none)
};

struct TrainResult {
  std::size_t steps_run = 0;
  real final_loss = 0;
  std::vector<real> loss_curve;
};

inline real dataset_mean_cc(std::vector<ClipSample> const& dataset, Model& model, real* kld_out);

inline TrainResult train(const std::vector<ClipSample>& dataset, Model& model,
                         const LossConfig& loss_cfg, AdamState& adam, const TrainOptions& opts) {
  if (dataset.empty()) throw InputError("train: empty dataset");
  std::ofstream log;
  if (!opts.log_path.empty()) {
    const bool resume = opts.step_offset > 0 && fs::exists(opts.log_path);
    log.open(opts.log_path, resume ? std::ios::app : std::ios::out);
    if (!resume) log << "step,loss,kld_term,cc_term,nss_term,wall_ms\n";
  }
  TrainResult res;
  for (std::size_t s = 0; s < opts.steps; ++s) {
    const std::size_t step = opts.step_offset + s;
    const auto t0 = std::chrono::steady_clock::now();
    const ClipSample& clip = dataset[step % dataset.size()];
    ForwardOptions fopts;
    fopts.train = true;
    LossBreakdown loss;
    try {
      ForwardResult fwd = model.forward_clip(clip, fopts);
      loss = joint_loss(fwd.prediction, clip.saliency, clip.fixations, loss_cfg);
    } catch (const DomainError& e) {
      // a domain violation mid-training (e.g. a fully saturated prediction)
      // is a numerical abort, not a usage problem
      throw NumericalError(std::string("numerical failure at step ") + std::to_string(step) +
                           ": " + e.what());
    }
    const real loss_val = loss.total.item();
    if (!std::isfinite(loss_val)) {
      real pnorm = 0;
      for (const auto& [name, t] : model.params())
        for (real v : t.value()) pnorm += v * v;
      throw NumericalError("NaN/Inf loss at step " + std::to_string(step) +
                           " (parameter norm " + std::to_string(std::sqrt(pnorm)) + ")");
    }
    backward(loss.total);
    if (!model.params().grads_finite())
      throw NumericalError("non-finite gradient at step " + std::to_string(step));
    adam.step(model.params());
    const auto t1 = std::chrono::steady_clock::now();
    const double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    if (log)
      log << step << "," << loss_val << "," << loss.kld_term << "," << loss.cc_term << ","
          << loss.nss_term << "," << ms << "\n";
    res.loss_curve.push_back(loss_val);
    res.final_loss = loss_val;
    res.steps_run = s + 1;

    if (opts.eval_every && (s + 1) % opts.eval_every == 0 && opts.stop_cc) {
      real kld_mean = 0;
      const real cc_mean = dataset_mean_cc(dataset, model, &kld_mean);
      if (cc_mean > *opts.stop_cc && (!opts.stop_kld || kld_mean < *opts.stop_kld)) break;
    }
  }
  if (!opts.checkpoint_dir.empty()) save_checkpoint(model.params(), opts.checkpoint_dir);
  return res;
}

// Mean train-set CC (and KLD) of the current model, eval mode.
inline real dataset_mean_cc(std::vector<ClipSample> const& dataset, Model& model, real* kld_out) {
  real cc_acc = 0, kld_acc = 0;
  for (const auto& clip : dataset) {
    ForwardResult fwd = model.forward_clip(clip);
    cc_acc += cc(fwd.prediction.value(), clip.saliency);
    kld_acc += kld(fwd.prediction.value(), clip.saliency);
  }
  if (kld_out) *kld_out = kld_acc / static_cast<real>(dataset.size());
  return cc_acc / static_cast<real>(dataset.size());
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

struct EvalRow {
  std::string clip_id;
  std::size_t frame_id = 0;
  MetricsReport metrics;
  std::vector<real> prediction;
};

struct EvalResult {
  std::vector<EvalRow> rows;  // sorted by clip id
  MetricsReport aggregate;
};

// Evaluates the final frame of every clip; the AUC-S shuffle pool for a clip
// is the fixation maps of all other clips. Deterministic given the metrics
// seed; clip-parallel when threads > 1.
inline EvalResult evaluate(const std::vector<ClipSample>& dataset, Model& model,
                           const MetricsConfig& mcfg = {}, std::size_t threads = 1,
                           const ForwardOptions& fopts = {}) {
  EvalResult res;
  res.rows.resize(dataset.size());

  auto eval_one = [&](std::size_t i, Model& m) {
    const ClipSample& clip = dataset[i];
    ForwardResult fwd = m.forward_clip(clip, fopts);
    std::vector<std::vector<std::uint8_t>> pool;
    for (std::size_t j = 0; j < dataset.size(); ++j)
      if (j != i) pool.push_back(dataset[j].fixations);
    MetricsConfig cfg = mcfg;
    cfg.auc_s_seed = mcfg.auc_s_seed + i;
    EvalRow row;
    row.clip_id = clip.clip_id;
    row.frame_id = clip.frames.size() - 1;
    row.prediction = fwd.prediction.value();
    row.metrics = metrics_report(row.prediction, clip.saliency, clip.fixations, pool, cfg);
    res.rows[i] = std::move(row);
  };

  if (threads <= 1) {
    for (std::size_t i = 0; i < dataset.size(); ++i) eval_one(i, model);
  } else {
    std::vector<std::thread> workers;
    std::atomic<std::size_t> next{0};
    for (std::size_t w = 0; w < threads; ++w)
      workers.emplace_back([&] {
        for (std::size_t i = next.fetch_add(1); i < dataset.size(); i = next.fetch_add(1))
          eval_one(i, model);
      });
    for (auto& w : workers) w.join();
  }

  auto agg = [&](auto get) {
    real acc = 0;
    std::size_t cnt = 0;
    for (const auto& r : res.rows) {
      const real v = get(r.metrics);
      if (std::isfinite(v)) {
        acc += v;
        ++cnt;
      }
    }
    return cnt ? acc / static_cast<real>(cnt) : metric_nan();
  };
  res.aggregate.kld = agg([](const MetricsReport& m) { return m.kld; });
  res.aggregate.cc = agg([](const MetricsReport& m) { return m.cc; });
  res.aggregate.sim = agg([](const MetricsReport& m) { return m.sim; });
  res.aggregate.nss = agg([](const MetricsReport& m) { return m.nss; });
  res.aggregate.auc_j = agg([](const MetricsReport& m) { return m.auc_j; });
  res.aggregate.auc_s = agg([](const MetricsReport& m) { return m.auc_s; });
  return res;
}

}  // namespace gatedap
