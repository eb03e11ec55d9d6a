// Acceptance harness: nine end-to-end checks, one pass/fail line each.
// Exit code 0 only if every criterion passes.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include "gatedap/commands.hpp"
#include "oracles.hpp"

using namespace gatedap;
namespace fsn = std::filesystem;
using clock_t_ = std::chrono::steady_clock;

namespace {

double seconds_since(clock_t_::time_point t0) {
  return std::chrono::duration<double>(clock_t_::now() - t0).count();
}

std::vector<std::vector<std::string>> read_csv(const fsn::path& p) {
  std::ifstream in(p);
  if (!in.good()) throw InputError("cannot open " + p.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(std::move(cells));
  }
  return rows;
}

std::string slurp(const fsn::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

struct Harness {
  fsn::path work;
  int failures = 0;

  Harness() {
    work = fsn::temp_directory_path() / "gatedap_acceptance";
    fsn::remove_all(work);
    fsn::create_directories(work);
  }
  ~Harness() { fsn::remove_all(work); }

  void report(int idx, const std::string& label, bool pass, const std::string& detail = "") {
    std::cout << (pass ? "PASS" : "FAIL") << "  criterion " << idx << ": " << label;
    if (!detail.empty()) std::cout << "  [" << detail << "]";
    std::cout << std::endl;
    if (!pass) ++failures;
  }

  template <typename F>
  void criterion(int idx, const std::string& label, F&& body) {
    try {
      body(idx, label);
    } catch (const std::exception& e) {
      report(idx, label, false, std::string("exception: ") + e.what());
    }
  }
};

Tensor rnd(Shape s, std::mt19937_64& rng, real lo = -1.0, real hi = 1.0) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  std::vector<real> v(n);
  std::uniform_real_distribution<real> dist(lo, hi);
  for (auto& x : v) x = dist(rng);
  return Tensor::from_values(std::move(s), std::move(v));
}

MemogParams random_memog(std::mt19937_64& rng, std::size_t dh, std::size_t dx, std::size_t c,
                         std::size_t side) {
  MemogParams p;
  p.mo_wf = rnd({dh, dh}, rng);
  p.mo_bf = rnd({dh}, rng);
  p.mo_wg = rnd({dh, dh}, rng);
  p.mo_bg = rnd({dh}, rng);
  p.tu_red_w = rnd({1, c, 1, 1}, rng);
  p.tu_red_b = rnd({1}, rng);
  p.proj_w = rnd({dx, c * side * side}, rng, -0.3, 0.3);
  p.proj_b = rnd({dx}, rng);
  p.gru.wz = rnd({dh, dh + dx}, rng, -0.3, 0.3);
  p.gru.bz = rnd({dh}, rng);
  p.gru.wr = rnd({dh, dh + dx}, rng, -0.3, 0.3);
  p.gru.br = rnd({dh}, rng);
  p.gru.wh = rnd({dh, dh + dx}, rng, -0.3, 0.3);
  p.gru.bh = rnd({dh}, rng);
  return p;
}

// overfit dataset shared by criteria 5-8: eight 64x64 clips, k = 4
std::vector<ClipSample> make_overfit_dataset(const fsn::path& dir, real max_speed = 3.0,
                                             std::uint64_t seed = 1000) {
  SceneSpec spec;
  spec.seed = seed;
  spec.image_size = 64;
  spec.clip_len = 4;
  spec.max_speed = max_speed;
  std::vector<ClipSample> ds;
  fsn::create_directories(dir);
  for (std::size_t i = 0; i < 8; ++i) {
    ds.push_back(generate_synthetic_clip(spec, i));
    save_clip(ds.back(), dir);
  }
  return ds;
}

struct OverfitOutcome {
  TrainResult result;
  real cc = 0, kld = 0;
  double wall = 0;
};

OverfitOutcome run_overfit(const std::vector<ClipSample>& ds, ModelConfig mc,
                           const fsn::path& ckpt) {
  Model model(mc, 77);
  AdamState adam;
  TrainOptions opts;
  opts.steps = 2000;
  opts.eval_every = 50;
  opts.stop_cc = 0.9;
  opts.stop_kld = 0.3;
  opts.checkpoint_dir = ckpt;
  const auto t0 = clock_t_::now();
  OverfitOutcome out;
  out.result = train(ds, model, LossConfig{}, adam, opts);
  out.wall = seconds_since(t0);
  out.cc = dataset_mean_cc(ds, model, &out.kld);
  return out;
}

}  // namespace

int main() {
  Harness h;

  // ---- 1: gradient suite --------------------------------------------------
  h.criterion(1, "gradient checks for every op and module", [&](int idx, const std::string& label) {
    const auto t0 = clock_t_::now();
    std::size_t total = 0, passed = 0;
    real worst = 0;
    for (const auto& c : gradcheck_registry()) {
      GradCheckReport rep = c.run(c.tol);
      ++total;
      passed += rep.pass ? 1 : 0;
      worst = std::max(worst, rep.max_rel_err);
    }
    const double wall = seconds_since(t0);
    std::ostringstream d;
    d << passed << "/" << total << " ops, worst rel err " << worst << ", " << wall << " s";
    h.report(idx, label, passed == total && wall < 120.0, d.str());
  });

  // ---- 2: gating invariants -----------------------------------------------
  h.criterion(2, "gating invariants (partition of unity, open mask range, closed == ungated)",
              [&](int idx, const std::string& label) {
    std::mt19937_64 rng(2024);
    bool ok = true;

    // MU-InfoG masks sum to exactly one at every location, 100 random configs
    for (int trial = 0; trial < 100 && ok; ++trial) {
      const std::size_t n = 2 + trial % 4, c = 1 + trial % 3, side = 2 + trial % 4;
      std::vector<Tensor> ms, rw, rb;
      for (std::size_t i = 0; i < n; ++i) {
        ms.push_back(rnd({c, side, side}, rng, -2, 2));
        rw.push_back(rnd({1, c, 1, 1}, rng));
        rb.push_back(rnd({1}, rng));
      }
      MuInfogResult res = mu_infog_forward(ms, rw, rb, true, 1.0 / n);
      for (std::size_t loc = 0; loc < side * side; ++loc) {
        real s = 0;
        for (const auto& m : res.masks) s += m.value()[loc];
        if (std::abs(s - 1.0) >= 1e-9) ok = false;
      }
    }

    // SpaG mask strictly inside (0,1)
    for (int trial = 0; trial < 20 && ok; ++trial) {
      const std::size_t c = 1 + trial % 3, side = 3 + trial % 4;
      Tensor s = rnd({c, side, side}, rng, -3, 3);
      Tensor w = rnd({1, 2, 3, 3}, rng);
      Tensor b = rnd({1}, rng);
      Tensor mask;
      spag_forward(s, w, b, true, &mask);
      for (real v : mask.value())
        if (!(v > 0.0 && v < 1.0)) ok = false;
    }

    // closed gates == the same pipeline composed by hand with no gating code
    ModelConfig mc;
    mc.encoder.image_size = 32;
    mc.encoder.embed_dim = 16;
    mc.encoder.depth = 1;
    mc.clip_len = 2;
    mc.gru_hidden = 32;  // 2 channels on the 4x4 grid
    mc.gru_input = 16;
    mc.decoder_width = 8;
    mc.gate.spag_open = mc.gate.memog_open = mc.gate.mu_infog_open = false;
    Model model(mc, 512);
    SceneSpec sp;
    sp.seed = 93;
    sp.image_size = 32;
    sp.clip_len = 2;
    ClipSample clip = generate_synthetic_clip(sp, 0);
    Tensor gated = model.forward_clip(clip).prediction;

    ParamStore& P = model.params();
    const std::size_t g = mc.encoder.grid();
    const std::size_t t0 = clip.frames.size() - mc.clip_len;
    std::vector<Tensor> hidden;
    for (StreamKind stream : mc.streams) {
      const std::string sn = stream_name(stream);
      const std::string mg = "memog." + sn;
      GruParams gru{P.at(mg + ".gru.wz"), P.at(mg + ".gru.bz"), P.at(mg + ".gru.wr"),
                    P.at(mg + ".gru.br"), P.at(mg + ".gru.wh"), P.at(mg + ".gru.bh")};
      Tensor hvec = Tensor::zeros({mc.gru_hidden});
      for (std::size_t t = 0; t < mc.clip_len; ++t) {
        Tensor raw =
            normalize_stream(clip.frames[t0 + t], stream, clip.height, clip.width, mc.max_speed);
        Tensor x =
            conv2d(raw, P.at("stream." + sn + ".proj.w"), P.at("stream." + sn + ".proj.b"), 0);
        Tensor grid = tokens_to_grid(encode_frame(x, P, mc.encoder), g, g);
        hvec = gru_cell(hvec, matvec(P.at(mg + ".proj.w"), flatten(grid), P.at(mg + ".proj.b")),
                        gru);
      }
      hidden.push_back(scale(reshape(hvec, {mc.hidden_channels(), g, g}),
                             1.0 / static_cast<real>(mc.streams.size())));
    }
    Tensor hand = decode_attention_map(concat(hidden, 0), P, model.decoder_config(), false);
    const bool bitwise = gated.value() == hand.value();

    h.report(idx, label, ok && bitwise, bitwise ? "" : "closed-gate mismatch");
  });

  // ---- 3: metric oracle equivalence ---------------------------------------
  h.criterion(3, "six metrics vs brute-force oracles + hand cases",
              [&](int idx, const std::string& label) {
    std::mt19937_64 rng(62);
    bool ok = true;
    std::uniform_real_distribution<real> u(0.01, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<real> pred(36), gt(36);
      real s = 0;
      for (auto& v : pred) v = u(rng);
      for (auto& v : gt) {
        v = u(rng);
        s += v;
      }
      for (auto& v : gt) v /= s;
      std::vector<std::uint8_t> fix(36, 0), pool(36, 0);
      std::uniform_int_distribution<std::size_t> loc(0, 35);
      for (int i = 0; i < 4; ++i) fix[loc(rng)] = 1;
      for (int i = 0; i < 6; ++i) pool[loc(rng)] = 1;
      bool any_fix = false, any_pool = false;
      for (std::size_t i = 0; i < 36; ++i) {
        any_fix = any_fix || fix[i];
        any_pool = any_pool || (pool[i] && !fix[i]);
      }
      if (!any_fix || !any_pool) continue;
      const std::uint64_t seed = 1000 + trial;
      ok = ok && std::abs(kld(pred, gt) - oracle::kld(pred, gt)) < 1e-6;
      ok = ok && std::abs(cc(pred, gt) - oracle::cc(pred, gt)) < 1e-9;
      ok = ok && std::abs(sim(pred, gt) - oracle::sim(pred, gt)) < 1e-9;
      ok = ok && std::abs(nss(pred, fix) - oracle::nss(pred, fix)) < 1e-9;
      ok = ok && std::abs(auc_judd(pred, fix) - oracle::auc_judd(pred, fix)) < 1e-9;
      ok = ok && std::abs(auc_shuffled(pred, fix, {pool}, seed, 10) -
                          oracle::auc_shuffled(pred, fix, {pool}, seed, 10)) < 1e-9;
    }

    // NSS hand case: [0,0;0,1], one fixation at the 1 => sqrt(3)
    ok = ok && std::abs(nss({0, 0, 0, 1}, {0, 0, 0, 1}) - std::sqrt(3.0)) < 1e-9;
    // AUC-J perfect separation returns exactly 1
    ok = ok && auc_judd({0.1, 0.2, 0.9, 0.95}, {0, 0, 1, 1}) == 1.0;

    h.report(idx, label, ok);
  });

  // ---- 4: loss sanity -----------------------------------------------------
  h.criterion(4, "joint loss sanity at the optimum and in degenerate cases",
              [&](int idx, const std::string& label) {
    std::mt19937_64 rng(81);
    const std::size_t n = 16;
    std::vector<real> y(n);
    real s = 0;
    for (auto& v : y) {
      v = std::uniform_real_distribution<real>(0.05, 1.0)(rng);
      s += v;
    }
    for (auto& v : y) v /= s;
    std::vector<std::uint8_t> fix(n, 0);
    std::size_t arg = 0;
    for (std::size_t i = 1; i < n; ++i)
      if (y[i] > y[arg]) arg = i;
    fix[arg] = 1;

    LossConfig cfg;
    cfg.alpha = 0.25;
    LossBreakdown lb = joint_loss(Tensor::from_values({4, 4}, y), y, fix, cfg);
    bool ok = std::abs(lb.kld_term) < 1e-6 && std::abs(lb.cc_term + cfg.alpha) < 1e-9;

    // constant prediction drops CC/NSS, keeps a finite divergence term
    LossBreakdown flat = joint_loss(Tensor::full({4, 4}, 0.5), y, fix, cfg);
    ok = ok && flat.cc_term == 0.0 && flat.nss_term == 0.0 && std::isfinite(flat.total.item());
    // no fixations drops only the NSS term
    LossBreakdown nofix =
        joint_loss(Tensor::from_values({4, 4}, y), y, std::vector<std::uint8_t>(n, 0), cfg);
    ok = ok && nofix.nss_term == 0.0 && nofix.cc_term != 0.0;

    h.report(idx, label, ok);
  });

  // ---- 5: overfit experiment ----------------------------------------------
  std::vector<ClipSample> overfit_ds;
  OverfitOutcome overfit;
  h.criterion(5, "desk-scale overfit reaches CC > 0.9, KLD < 0.3, deterministically",
              [&](int idx, const std::string& label) {
    overfit_ds = make_overfit_dataset(h.work / "data");
    overfit = run_overfit(overfit_ds, ModelConfig{}, h.work / "ckpt");
    OverfitOutcome rerun = run_overfit(overfit_ds, ModelConfig{}, h.work / "ckpt_rerun");
    const bool converged = overfit.cc > 0.9 && overfit.kld < 0.3;
    const bool in_budget = overfit.result.steps_run <= 2000 && overfit.wall < 900.0;
    const bool deterministic = overfit.result.loss_curve == rerun.result.loss_curve;
    std::ostringstream d;
    d << "cc " << overfit.cc << ", kld " << overfit.kld << ", " << overfit.result.steps_run
      << " steps, " << overfit.wall << " s";
    h.report(idx, label, converged && in_budget && deterministic, d.str());
  });

  // ---- 6: ablation direction ----------------------------------------------
  h.criterion(6, "gate ablation: 8 rows, all-open CC >= all-closed CC",
              [&](int idx, const std::string& label) {
    RunConfig cfg;
    cfg.seed = 77;
    cfg.data_dir = (h.work / "data").string();
    cfg.checkpoint = (h.work / "ckpt").string();
    cfg.out_dir = (h.work / "abl").string();
    cmd_ablate(cfg);
    auto rows = read_csv(h.work / "abl" / "ablation.csv");
    bool ok = rows.size() == 9;  // header + 8 combinations
    real cc_open = 0, cc_closed = 0;
    if (ok) {
      for (std::size_t r = 1; r < rows.size(); ++r) {
        if (rows[r][0] == "open" && rows[r][1] == "open" && rows[r][2] == "open")
          cc_open = std::stod(rows[r][4]);
        if (rows[r][0] == "closed" && rows[r][1] == "closed" && rows[r][2] == "closed")
          cc_closed = std::stod(rows[r][4]);
      }
      ok = cc_open >= cc_closed;
    }
    std::ostringstream d;
    d << "cc open " << cc_open << " vs closed " << cc_closed;
    h.report(idx, label, ok, d.str());
  });

  // ---- 7: counterfactual harness ------------------------------------------
  h.criterion(7, "counterfactuals: ten variants, read-only model, zeroed-stream independence, "
                 "drivable > flow on slow objects",
              [&](int idx, const std::string& label) {
    RunConfig cfg;
    cfg.seed = 77;
    cfg.data_dir = (h.work / "data").string();
    cfg.checkpoint = (h.work / "ckpt").string();
    cfg.out_dir = (h.work / "cf").string();

    // snapshot the checkpoint, run, verify it is untouched
    std::vector<std::pair<fsn::path, std::string>> snap;
    for (const auto& e : fsn::recursive_directory_iterator(cfg.checkpoint))
      if (e.is_regular_file()) snap.emplace_back(e.path(), slurp(e.path()));
    cmd_counterfact(cfg);
    bool untouched = true;
    for (const auto& [p, bytes] : snap) untouched = untouched && slurp(p) == bytes;

    auto rows = read_csv(h.work / "cf" / "counterfact.csv");
    bool ok = rows.size() == 12 && rows[1][0] == "baseline";  // header + baseline + 10

    // pin the flow stream's MU mask to zero: flow counterfactuals become no-ops
    cfg.out_dir = (h.work / "cf_zero").string();
    cmd_counterfact(cfg, {2});  // flow is stream index 2
    real worst_delta = 0;
    for (const auto& row : read_csv(h.work / "cf_zero" / "counterfact.csv"))
      if (row[0].rfind("Gate-DAP-F", 0) == 0)
        for (std::size_t c = 7; c < row.size(); ++c)
          worst_delta = std::max(worst_delta, std::abs(std::stod(row[c])));
    ok = ok && worst_delta < 1e-9;

    // slow-object preset: objects move at a fraction of the nominal speed
    // range, so the normalized flow stream carries little signal and the
    // drivable mask should matter more than object flow
    ModelConfig slow_mc;  // keeps the nominal flow normalization constant
    std::vector<ClipSample> slow_ds = make_overfit_dataset(h.work / "slow_data", 0.5, 2000);
    run_overfit(slow_ds, slow_mc, h.work / "slow_ckpt");
    RunConfig slow_cfg;
    slow_cfg.seed = 77;
    slow_cfg.model = slow_mc;
    slow_cfg.data_dir = (h.work / "slow_data").string();
    slow_cfg.checkpoint = (h.work / "slow_ckpt").string();
    slow_cfg.out_dir = (h.work / "slow_cf").string();
    cmd_counterfact(slow_cfg);
    real d_drv = 0, d_flow = 0;
    for (const auto& row : read_csv(h.work / "slow_cf" / "counterfact.csv")) {
      if (row[0] == "Gate-DAP-D w/o Mask") d_drv = std::abs(std::stod(row[8]));
      if (row[0] == "Gate-DAP-F w/o V-P") d_flow = std::abs(std::stod(row[8]));
    }
    ok = ok && d_drv > d_flow;

    std::ostringstream d;
    d << "zeroed-flow worst delta " << worst_delta << ", |dCC| drivable " << d_drv << " vs flow "
      << d_flow;
    h.report(idx, label, ok && untouched, d.str());
  });

  // ---- 8: temporal-uncertainty variants -----------------------------------
  h.criterion(8, "TU window-1 equals no-TU bitwise; both variants overfit",
              [&](int idx, const std::string& label) {
    std::mt19937_64 rng(808);
    bool bitwise = true;
    for (int trial = 0; trial < 10; ++trial) {
      const std::size_t dh = 4 + trial % 3, dx = 3, c = 1 + trial % 2, side = 3;
      MemogParams p = random_memog(rng, dh, dx, c, side);
      Tensor hp = rnd({dh}, rng);
      std::vector<Tensor> window = {rnd({c, side, side}, rng)};
      Tensor with_tu = memog_forward(hp, window, p, true, true);
      Tensor without = memog_forward(hp, window, p, true, false);
      bitwise = bitwise && with_tu.value() == without.value();
    }

    // the TU-on variant is criterion 5's run; train the TU-off variant too
    ModelConfig no_tu;
    no_tu.gate.temporal_uncertainty = false;
    OverfitOutcome off = run_overfit(overfit_ds, no_tu, h.work / "ckpt_no_tu");
    const bool both = overfit.cc > 0.9 && off.cc > 0.9;
    std::ostringstream d;
    d << "cc with TU " << overfit.cc << ", without " << off.cc;
    h.report(idx, label, bitwise && both, d.str());
  });

  // ---- 9: format round trips ----------------------------------------------
  h.criterion(9, "GDAP/clip round trips bitwise, PGM within 1/255",
              [&](int idx, const std::string& label) {
    std::mt19937_64 rng(909);
    Tensor t = rnd({3, 5, 7}, rng, -10, 10);
    write_gdap(h.work / "t.gdap", t);
    Tensor t2 = read_gdap(h.work / "t.gdap");
    bool ok = t2.shape() == t.shape() && t2.value() == t.value();

    SceneSpec sp;
    sp.seed = 99;
    ClipSample clip = generate_synthetic_clip(sp, 0);
    save_clip(clip, h.work / "clip_rt");
    ClipSample back = load_clip(h.work / "clip_rt" / clip.clip_id);
    ok = ok && back.saliency == clip.saliency && back.fixations == clip.fixations;
    for (std::size_t f = 0; f < clip.frames.size() && ok; ++f)
      ok = back.frames[f].rgb.value() == clip.frames[f].rgb.value() &&
           back.frames[f].flow.value() == clip.frames[f].flow.value() &&
           back.frames[f].semantic == clip.frames[f].semantic &&
           back.frames[f].drivable == clip.frames[f].drivable;

    std::vector<real> map(64);
    for (auto& v : map) v = std::uniform_real_distribution<real>(0, 1)(rng);
    write_pgm_map(h.work / "m.pgm", 8, 8, map);
    std::size_t mh = 0, mw = 0;
    std::vector<std::uint8_t> bytes;
    read_pgm(h.work / "m.pgm", mh, mw, bytes);
    for (std::size_t i = 0; i < 64; ++i)
      ok = ok && std::abs(bytes[i] / 255.0 - map[i]) <= 1.0 / 255.0 + 1e-12;

    h.report(idx, label, ok);
  });

  std::cout << (h.failures == 0 ? "ALL CRITERIA PASSED" : "FAILURES: ") << (h.failures == 0 ? "" : std::to_string(h.failures))
            << std::endl;
  return h.failures == 0 ? 0 : 1;
}
