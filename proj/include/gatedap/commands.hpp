// Implementations behind the CLI subcommands. Each function returns a process
// exit code (0 success, 1 check failure); usage/input problems and numerical
// aborts surface as the library's typed exceptions, which the CLI entry point
// maps to exit codes 2 and 3.

#pragma once

#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gatedap/config.hpp"
#include "gatedap/data.hpp"
#include "gatedap/grad_check.hpp"
#include "gatedap/io.hpp"
#include "gatedap/pipeline.hpp"

namespace gatedap {

namespace detail {

inline std::string csv_real(real v) {
  std::ostringstream ss;
  ss << std::setprecision(17) << v;
  return ss.str();
}

inline void write_metric_cells(std::ostream& out, const MetricsReport& m) {
  out << csv_real(m.kld) << "," << csv_real(m.cc) << "," << csv_real(m.sim) << ","
      << csv_real(m.nss) << "," << csv_real(m.auc_j) << "," << csv_real(m.auc_s);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

inline int cmd_gen_data(const RunConfig& cfg, std::size_t clips) {
  if (clips < 1) throw UsageError("clips must be >= 1");
  if (cfg.out_dir.empty()) throw UsageError("gen-data requires --out");
  SceneSpec spec = cfg.gen;
  spec.seed = cfg.seed;
  fs::create_directories(cfg.out_dir);
  for (std::size_t i = 0; i < clips; ++i) {
    ClipSample clip = generate_synthetic_clip(spec, i);
    save_clip(clip, cfg.out_dir);
    std::cout << clip.clip_id << ": " << clip.frames.size() << " frames, " << clip.height << "x"
              << clip.width << ", " << [&] {
                   std::size_t n = 0;
                   for (auto f : clip.fixations) n += f ? 1 : 0;
                   return n;
                 }() << " fixations\n";
  }
  write_config_echo(cfg, cfg.out_dir, clips);
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

inline int cmd_train(const RunConfig& cfg) {
  if (cfg.data_dir.empty() || cfg.out_dir.empty()) throw UsageError("train requires --data and --out");
  std::vector<ClipSample> dataset = load_dataset(cfg.data_dir);
  Model model(cfg.model, cfg.seed);
  AdamState adam(cfg.optimizer);

  std::size_t step_offset = 0;
  if (!cfg.checkpoint.empty()) {
    load_checkpoint(model.params(), cfg.checkpoint);
    const fs::path trainer = fs::path(cfg.checkpoint) / "trainer.json";
    if (fs::exists(trainer)) {
      std::ifstream in(trainer);
      json j;
      in >> j;
      step_offset = j.value("step", 0);
      adam.set_step_count(static_cast<long>(step_offset));
    }
  }

  fs::create_directories(cfg.out_dir);
  write_config_echo(cfg, cfg.out_dir);

  TrainOptions opts;
  opts.steps = cfg.train.steps;
  opts.step_offset = step_offset;
  opts.eval_every = cfg.train.eval_every;
  opts.stop_cc = cfg.train.stop_cc;
  opts.stop_kld = cfg.train.stop_kld;
  opts.log_path = fs::path(cfg.out_dir) / "train.csv";
  opts.checkpoint_dir = fs::path(cfg.out_dir) / "checkpoint";
  TrainResult res = train(dataset, model, cfg.loss, adam, opts);

  {
    std::ofstream out(opts.checkpoint_dir / "trainer.json");
    out << json{{"step", step_offset + res.steps_run}}.dump(2) << "\n";
  }
  std::cout << "trained " << res.steps_run << " steps (global step "
            << step_offset + res.steps_run << "), final loss " << res.final_loss << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

inline void write_metrics_csv(const fs::path& path, const EvalResult& res) {
  std::ofstream out(path);
  out << "clip_id,frame_id,kld,cc,sim,nss,auc_j,auc_s\n";
  for (const auto& row : res.rows) {
    out << row.clip_id << "," << row.frame_id << ",";
    detail::write_metric_cells(out, row.metrics);
    out << "\n";
  }
  out << "aggregate,,";
  detail::write_metric_cells(out, res.aggregate);
  out << "\n";
}

inline int cmd_eval(const RunConfig& cfg) {
  if (cfg.data_dir.empty() || cfg.out_dir.empty() || cfg.checkpoint.empty())
    throw UsageError("eval requires --data, --checkpoint and --out");
  std::vector<ClipSample> dataset = load_dataset(cfg.data_dir);
  Model model(cfg.model, cfg.seed);
  load_checkpoint(model.params(), cfg.checkpoint);

  MetricsConfig mcfg;
  mcfg.epsilon = cfg.loss.epsilon;
  mcfg.auc_s_seed = cfg.seed;
  EvalResult res = evaluate(dataset, model, mcfg, cfg.threads);

  fs::create_directories(fs::path(cfg.out_dir) / "maps");
  write_config_echo(cfg, cfg.out_dir);
  write_metrics_csv(fs::path(cfg.out_dir) / "metrics.csv", res);
  for (const auto& row : res.rows) {
    const std::size_t hw = row.prediction.size();
    const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(hw))));
    write_pgm_map(fs::path(cfg.out_dir) / "maps" / (row.clip_id + ".pgm"), side, side,
                  row.prediction);
  }
  std::cout << "evaluated " << res.rows.size() << " clips; aggregate CC " << res.aggregate.cc
            << ", KLD " << res.aggregate.kld << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

// Evaluates all 2^3 open/closed combinations of {SpaG, MemoG, MU-InfoG} on the
// same checkpoint, without retraining. The temporal-uncertainty setting is
// taken from the config unchanged.
inline int cmd_ablate(const RunConfig& cfg) {
  if (cfg.data_dir.empty() || cfg.out_dir.empty() || cfg.checkpoint.empty())
    throw UsageError("ablate requires --data, --checkpoint and --out");
  std::vector<ClipSample> dataset = load_dataset(cfg.data_dir);
  Model model(cfg.model, cfg.seed);
  load_checkpoint(model.params(), cfg.checkpoint);

  MetricsConfig mcfg;
  mcfg.epsilon = cfg.loss.epsilon;
  mcfg.auc_s_seed = cfg.seed;

  fs::create_directories(cfg.out_dir);
  write_config_echo(cfg, cfg.out_dir);
  std::ofstream out(fs::path(cfg.out_dir) / "ablation.csv");
  out << "spag,memog,mu_infog,kld,cc,sim,nss,auc_j,auc_s\n";
  for (std::size_t mask = 0; mask < 8; ++mask) {
    GateConfig gate = cfg.model.gate;
    gate.spag_open = !(mask & 1);
    gate.memog_open = !(mask & 2);
    gate.mu_infog_open = !(mask & 4);
    model.config().gate = gate;
    EvalResult res = evaluate(dataset, model, mcfg, cfg.threads);
    out << (gate.spag_open ? "open" : "closed") << "," << (gate.memog_open ? "open" : "closed")
        << "," << (gate.mu_infog_open ? "open" : "closed") << ",";
    detail::write_metric_cells(out, res.aggregate);
    out << "\n";
  }
  model.config().gate = cfg.model.gate;
  return 0;
}

// ---------------------------------------------------------------------------
// counterfact
// ---------------------------------------------------------------------------

// The ten-variant counterfactual sweep: each variant perturbs one input stream
// of the *data*, the trained parameters are read-only throughout, and the CSV
// reports per-variant metrics plus deltas against the unperturbed baseline.
// `force_zero_streams` (by position in the model's stream list) pins those
// MU-InfoG masks to zero, for probing which streams the model actually uses.
inline int cmd_counterfact(const RunConfig& cfg, const std::set<std::size_t>& force_zero_streams = {}) {
  if (cfg.data_dir.empty() || cfg.out_dir.empty() || cfg.checkpoint.empty())
    throw UsageError("counterfact requires --data, --checkpoint and --out");
  std::vector<ClipSample> dataset = load_dataset(cfg.data_dir);
  Model model(cfg.model, cfg.seed);
  load_checkpoint(model.params(), cfg.checkpoint);

  MetricsConfig mcfg;
  mcfg.epsilon = cfg.loss.epsilon;
  mcfg.auc_s_seed = cfg.seed;
  ForwardOptions fopts;
  fopts.force_zero_streams = force_zero_streams;

  EvalResult baseline = evaluate(dataset, model, mcfg, cfg.threads, fopts);

  fs::create_directories(cfg.out_dir);
  write_config_echo(cfg, cfg.out_dir);
  std::ofstream out(fs::path(cfg.out_dir) / "counterfact.csv");
  out << "variant,kld,cc,sim,nss,auc_j,auc_s,delta_kld,delta_cc,delta_sim,delta_nss,delta_auc_j,"
         "delta_auc_s\n";
  auto write_row = [&](const std::string& name, const MetricsReport& m) {
    out << name << ",";
    detail::write_metric_cells(out, m);
    out << "," << detail::csv_real(m.kld - baseline.aggregate.kld) << ","
        << detail::csv_real(m.cc - baseline.aggregate.cc) << ","
        << detail::csv_real(m.sim - baseline.aggregate.sim) << ","
        << detail::csv_real(m.nss - baseline.aggregate.nss) << ","
        << detail::csv_real(m.auc_j - baseline.aggregate.auc_j) << ","
        << detail::csv_real(m.auc_s - baseline.aggregate.auc_s) << "\n";
  };
  write_row("baseline", baseline.aggregate);
  for (const CounterfactVariant& v : counterfact_variants()) {
    std::vector<ClipSample> perturbed;
    perturbed.reserve(dataset.size());
    for (const auto& clip : dataset) perturbed.push_back(apply_counterfact(clip, v));
    EvalResult res = evaluate(perturbed, model, mcfg, cfg.threads, fopts);
    write_row(v.name, res.aggregate);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

struct GradCheckCase {
  std::string name;
  real tol;
  std::function<GradCheckReport(real tol)> run;
};

namespace detail {

inline Tensor randt(Shape s, std::mt19937_64& rng, real lo = -1.0, real hi = 1.0) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  std::vector<real> v(n);
  std::uniform_real_distribution<real> dist(lo, hi);
  for (auto& x : v) x = dist(rng);
  return Tensor::from_values(std::move(s), std::move(v));
}

}  // namespace detail

// Every differentiable op and module, each checked against central finite
// differences on small random inputs. Smooth elementwise ops get the tighter
// tolerance; ops with kinks (relu, max pooling) or compositions get 1e-4.
inline std::vector<GradCheckCase> gradcheck_registry(std::uint64_t seed = 42) {
  std::vector<GradCheckCase> cases;
  auto reg = [&](const std::string& name, real tol,
                 std::function<Tensor(const Tensor&)> f, Tensor x0, real h = 1e-5) {
    cases.push_back({name, tol, [f = std::move(f), x0 = std::move(x0), h](real t) {
                       return grad_check(f, x0, h, t);
                     }});
  };
  std::mt19937_64 rng(seed);
  using detail::randt;

  // elementwise, smooth: tighter tolerance
  const real smooth = 1e-6;
  reg("sigmoid", smooth, [](const Tensor& x) { return sum(sigmoid(x)); }, randt({3, 4}, rng, -2, 2), 1e-4);
  reg("elu", smooth, [](const Tensor& x) { return sum(elu(x)); }, randt({3, 4}, rng, -2, 2), 1e-4);
  reg("tanh", smooth, [](const Tensor& x) { return sum(tanh_t(x)); }, randt({3, 4}, rng, -2, 2), 1e-4);
  reg("exp", smooth, [](const Tensor& x) { return sum(exp_t(x)); }, randt({3, 4}, rng, -1, 1), 1e-4);
  reg("log", smooth, [](const Tensor& x) { return sum(log_t(x)); }, randt({3, 4}, rng, 0.5, 2.0), 1e-4);
  reg("sqrt", smooth, [](const Tensor& x) { return sum(sqrt_t(x)); }, randt({3, 4}, rng, 0.5, 2.0), 1e-4);
  reg("square", smooth, [](const Tensor& x) { return sum(square(x)); }, randt({3, 4}, rng), 1e-4);
  // relu has a kink at 0; keep inputs away from it
  reg("relu", 1e-4, [](const Tensor& x) { return sum(relu(x)); }, randt({3, 4}, rng, 0.1, 2.0));

  // binary ops with broadcasting
  {
    Tensor b = randt({4}, rng, 0.5, 1.5);
    reg("add", 1e-4, [b](const Tensor& x) { return sum(add(x, b)); }, randt({3, 4}, rng));
    reg("sub", 1e-4, [b](const Tensor& x) { return sum(sub(x, b)); }, randt({3, 4}, rng));
    reg("hadamard", 1e-4, [b](const Tensor& x) { return sum(hadamard(x, b)); }, randt({3, 4}, rng));
    reg("div", 1e-4, [b](const Tensor& x) { return sum(div(x, b)); }, randt({3, 4}, rng));
    reg("div_denominator", 1e-4, [b](const Tensor& x) { return sum(div(b, x)); },
        randt({3, 4}, rng, 0.5, 2.0));
  }
  {
    Tensor w = randt({4, 5}, rng);
    reg("matmul", 1e-4, [w](const Tensor& x) { return sum(matmul(x, w)); }, randt({3, 4}, rng));
    reg("matmul_rhs", 1e-4, [w2 = randt({3, 4}, rng)](const Tensor& x) { return sum(matmul(w2, x)); },
        randt({4, 5}, rng));
  }

  // reductions / rearrangement
  reg("sum_axis", 1e-4, [](const Tensor& x) { return sum(hadamard(sum(x, 0), sum(x, 0))); },
      randt({3, 4}, rng));
  reg("mean", 1e-4, [](const Tensor& x) { return sum(square(mean(x, 1))); }, randt({3, 4}, rng));
  reg("max_axis", 1e-4, [](const Tensor& x) { return sum(max(x, 0)); }, randt({3, 4}, rng));
  reg("softmax", 1e-4, [](const Tensor& x) { return sum(square(softmax(x, 1))); }, randt({3, 4}, rng));
  reg("concat_slice", 1e-4,
      [](const Tensor& x) { return sum(square(concat({slice(x, 1, 0, 2), slice(x, 1, 2, 2)}, 1))); },
      randt({3, 4}, rng));
  reg("reshape_transpose", 1e-4,
      [](const Tensor& x) { return sum(square(transpose2d(reshape(x, {2, 6})))); },
      randt({3, 4}, rng));

  // nn building blocks
  {
    Tensor w = randt({2, 3, 3, 3}, rng), b = randt({2}, rng);
    reg("conv2d", 1e-4, [w, b](const Tensor& x) { return sum(square(conv2d(x, w, b, 1))); },
        randt({3, 5, 5}, rng));
    reg("conv2d_weight", 1e-4,
        [x = randt({3, 5, 5}, rng), b](const Tensor& w2) { return sum(square(conv2d(x, w2, b, 1))); },
        w);
  }
  reg("pool_avg", 1e-4, [](const Tensor& x) { return sum(square(pool_channel(PoolKind::avg, x))); },
      randt({3, 4, 4}, rng));
  reg("pool_max", 1e-4, [](const Tensor& x) { return sum(square(pool_channel(PoolKind::max, x))); },
      randt({3, 4, 4}, rng));
  reg("upsample", 1e-4, [](const Tensor& x) { return sum(square(upsample_nearest_2x(x))); },
      randt({2, 3, 3}, rng));
  {
    Tensor g = randt({2}, rng, 0.5, 1.5), b = randt({2}, rng);
    reg("batchnorm", 1e-4,
        [g, b](const Tensor& x) {
          std::vector<real> rm(2, 0.0), rv(2, 1.0);
          return sum(square(batchnorm2d(x, g, b, rm, rv, /*train=*/true)));
        },
        randt({2, 4, 4}, rng));
  }
  {
    Tensor g = randt({4}, rng, 0.5, 1.5), b = randt({4}, rng);
    reg("layernorm", 1e-4, [g, b](const Tensor& x) { return sum(square(layernorm(x, g, b))); },
        randt({3, 4}, rng));
  }
  {
    Tensor w = randt({4, 3}, rng), b = randt({3}, rng);
    reg("linear", 1e-4, [w, b](const Tensor& x) { return sum(square(linear(x, w, b))); },
        randt({2, 4}, rng));
  }
  reg("patches", 1e-4,
      [](const Tensor& x) { return sum(square(extract_patches(x, 2))); }, randt({2, 4, 4}, rng));

  // gating modules
  {
    Tensor w = randt({1, 2, 3, 3}, rng), b = randt({1}, rng);
    reg("spag", 1e-4, [w, b](const Tensor& x) { return sum(square(spag_forward(x, w, b, true))); },
        randt({3, 4, 4}, rng));
  }
  {
    Tensor wf = randt({2, 2, 1, 1}, rng), bf = randt({2}, rng);
    Tensor wg = randt({2, 2, 1, 1}, rng), bg = randt({2}, rng);
    reg("mo_infog", 1e-4,
        [wf, bf, wg, bg](const Tensor& x) {
          return sum(square(mo_infog_forward(x, wf, bf, wg, bg, true)));
        },
        randt({2, 3, 3}, rng));
  }
  {
    std::vector<Tensor> rw = {randt({1, 2, 1, 1}, rng), randt({1, 2, 1, 1}, rng),
                              randt({1, 2, 1, 1}, rng)};
    std::vector<Tensor> rb = {randt({1}, rng), randt({1}, rng), randt({1}, rng)};
    Tensor m1 = randt({2, 3, 3}, rng), m2 = randt({2, 3, 3}, rng);
    reg("mu_infog", 1e-4,
        [rw, rb, m1, m2](const Tensor& x) {
          MuInfogResult r = mu_infog_forward({x, m1, m2}, rw, rb, true, 1.0 / 3.0);
          return sum(square(concat(r.outputs, 0)));
        },
        randt({2, 3, 3}, rng));
  }
  {
    GruParams p;
    p.wz = randt({4, 7}, rng);
    p.bz = randt({4}, rng);
    p.wr = randt({4, 7}, rng);
    p.br = randt({4}, rng);
    p.wh = randt({4, 7}, rng);
    p.bh = randt({4}, rng);
    Tensor x = randt({3}, rng);
    reg("gru", 1e-4, [p, x](const Tensor& h) { return sum(square(gru_cell(h, x, p))); },
        randt({4}, rng));
  }
  {
    MemogParams p;
    p.mo_wf = randt({4, 4}, rng);
    p.mo_bf = randt({4}, rng);
    p.mo_wg = randt({4, 4}, rng);
    p.mo_bg = randt({4}, rng);
    p.tu_red_w = randt({1, 2, 1, 1}, rng);
    p.tu_red_b = randt({1}, rng);
    p.proj_w = randt({3, 8}, rng);  // d_x=3, frames are 2x2x2
    p.proj_b = randt({3}, rng);
    p.gru.wz = randt({4, 7}, rng);
    p.gru.bz = randt({4}, rng);
    p.gru.wr = randt({4, 7}, rng);
    p.gru.br = randt({4}, rng);
    p.gru.wh = randt({4, 7}, rng);
    p.gru.bh = randt({4}, rng);
    Tensor h = randt({4}, rng);
    Tensor past = randt({2, 2, 2}, rng);
    reg("memog", 1e-4,
        [p, h, past](const Tensor& x) {
          return sum(square(memog_forward(h, {past, x}, p, true, true)));
        },
        randt({2, 2, 2}, rng));
  }
  {
    // one encoder block at a tiny scale, parameters drawn once
    EncoderConfig ec;
    ec.image_size = 8;
    ec.patch_size = 4;
    ec.in_channels = 2;
    ec.embed_dim = 4;
    ec.depth = 1;
    ec.num_heads = 2;
    auto store = std::make_shared<ParamStore>(seed);
    init_encoder_params(*store, ec);
    reg("encoder_block", 1e-4,
        [store, ec](const Tensor& x) {
          return sum(square(vit_block(x, *store, ec, "encoder.block0")));
        },
        randt({4, 4}, rng));
    reg("encoder", 1e-4,
        [store, ec](const Tensor& frame) { return sum(square(encode_frame(frame, *store, ec))); },
        randt({2, 8, 8}, rng));
  }
  {
    DecoderConfig dc;
    dc.width = 3;
    dc.patch_size = 2;
    auto store = std::make_shared<ParamStore>(seed + 1);
    init_decoder_params(*store, /*in_channels=*/2, dc);
    reg("decoder", 1e-4,
        [store, dc](const Tensor& x) {
          return sum(square(decode_attention_map(x, *store, dc, /*train=*/true)));
        },
        randt({2, 3, 3}, rng));
  }
  {
    std::vector<real> y(16, 0.0);
    std::vector<std::uint8_t> fix(16, 0);
    std::mt19937_64 yrng(seed + 2);
    real s = 0;
    for (auto& v : y) {
      v = std::uniform_real_distribution<real>(0.1, 1.0)(yrng);
      s += v;
    }
    for (auto& v : y) v /= s;
    fix[3] = fix[9] = 1;
    LossConfig lc;
    reg("joint_loss", 1e-4,
        [y, fix, lc](const Tensor& x) { return joint_loss(x, y, fix, lc).total; },
        randt({4, 4}, rng, 0.1, 1.0));
  }
  return cases;
}

inline int cmd_gradcheck(const std::string& ops, real tol_override = 0.0) {
  std::vector<GradCheckCase> cases = gradcheck_registry();
  if (ops != "all") {
    std::vector<GradCheckCase> picked;
    for (auto& c : cases)
      if (c.name == ops) picked.push_back(std::move(c));
    if (picked.empty()) throw UsageError("unknown op name: " + ops);
    cases = std::move(picked);
  }
  bool all_pass = true;
  for (const auto& c : cases) {
    const real tol = tol_override > 0.0 ? tol_override : c.tol;
    GradCheckReport rep = c.run(tol);
    std::cout << (rep.pass ? "PASS" : "FAIL") << "  " << std::left << std::setw(18) << c.name
              << " max_rel_err " << std::scientific << std::setprecision(3) << rep.max_rel_err
              << std::defaultfloat << " (tol " << tol << ")\n";
    all_pass = all_pass && rep.pass;
  }
  return all_pass ? 0 : 1;
}

}  // namespace gatedap
