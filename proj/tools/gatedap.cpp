// gatedap — command-line front end.
//
// Exit codes: 0 success, 1 check failure, 2 usage/config error, 3 numerical
// abort.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gatedap/commands.hpp"

namespace {

using namespace gatedap;

// "--gate spag=off" style overrides, applied on top of the config file
void apply_gate_overrides(ModelConfig& model, const std::vector<std::string>& overrides) {
  for (const std::string& ov : overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos) throw UsageError("bad gate override (want name=on|off): " + ov);
    const std::string name = ov.substr(0, eq), val = ov.substr(eq + 1);
    bool open;
    if (val == "on" || val == "open")
      open = true;
    else if (val == "off" || val == "closed")
      open = false;
    else
      throw UsageError("bad gate value (want on|off): " + ov);
    if (name == "spag")
      model.gate.spag_open = open;
    else if (name == "memog")
      model.gate.memog_open = open;
    else if (name == "mu_infog")
      model.gate.mu_infog_open = open;
    else if (name == "tu")
      model.gate.temporal_uncertainty = open;
    else
      throw UsageError("unknown gate (want spag|memog|mu_infog|tu): " + name);
  }
}

struct CommonFlags {
  std::string config_file, data_dir, out_dir, checkpoint;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::size_t threads = 0;
  std::vector<std::string> gate_overrides;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config_file, "run configuration file (JSON)");
  cmd->add_option("--data", f.data_dir, "clip data directory");
  cmd->add_option("--out", f.out_dir, "output directory");
  cmd->add_option("--checkpoint", f.checkpoint, "checkpoint directory");
  cmd->add_option("--seed", f.seed, "RNG seed")->each([&f](const std::string&) { f.seed_set = true; });
  cmd->add_option("--threads", f.threads, "evaluation threads (deterministic merge)");
  cmd->add_option("--gate", f.gate_overrides, "gate override, e.g. spag=off")->take_all();
}

RunConfig resolve_config(const CommonFlags& f, const std::string& command) {
  RunConfig cfg = f.config_file.empty() ? RunConfig{} : load_run_config(f.config_file);
  cfg.command = command;
  if (f.seed_set) cfg.seed = f.seed;
  if (!f.data_dir.empty()) cfg.data_dir = f.data_dir;
  if (!f.out_dir.empty()) cfg.out_dir = f.out_dir;
  if (!f.checkpoint.empty()) cfg.checkpoint = f.checkpoint;
  if (f.threads > 0) cfg.threads = f.threads;
  apply_gate_overrides(cfg.model, f.gate_overrides);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gated driver-attention prediction toolkit"};
  app.require_subcommand(1);

  CommonFlags gen_f, train_f, eval_f, abl_f, cf_f;
  std::size_t gen_clips = 8, gen_size = 0, gen_clip_len = 0;
  double gen_event_prob = -1.0, gen_max_speed = -1.0;
  CLI::App* gen = app.add_subcommand("gen-data", "generate synthetic clips");
  add_common(gen, gen_f);
  gen->add_option("--clips", gen_clips, "number of clips");
  gen->add_option("--size", gen_size, "frame height/width");
  gen->add_option("--clip-len", gen_clip_len, "input window length k (clips carry k+1 frames)");
  gen->add_option("--event-prob", gen_event_prob, "sudden acceleration probability");
  gen->add_option("--max-speed", gen_max_speed, "object speed cap, pixels/frame");

  std::size_t train_steps = 0;
  double train_lr = -1.0;
  CLI::App* tr = app.add_subcommand("train", "train a model");
  add_common(tr, train_f);
  tr->add_option("--steps", train_steps, "Adam steps to run");
  tr->add_option("--lr", train_lr, "learning rate");

  CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(ev, eval_f);

  CLI::App* ab = app.add_subcommand("ablate", "gate-closing ablation sweep (8 rows)");
  add_common(ab, abl_f);

  std::vector<std::string> cf_force_zero;
  CLI::App* cf = app.add_subcommand("counterfact", "ten-variant counterfactual sweep");
  add_common(cf, cf_f);
  cf->add_option("--force-zero", cf_force_zero, "pin a stream's MU mask to zero (by name)")
      ->take_all();

  std::string gc_ops = "all";
  double gc_tol = 0.0;
  CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  gc->add_option("--ops", gc_ops, "all, or a single op name");
  gc->add_option("--tol", gc_tol, "tolerance override");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) {
      RunConfig cfg = resolve_config(gen_f, "gen-data");
      if (gen_size) cfg.gen.image_size = gen_size;
      if (gen_clip_len) {
        cfg.gen.clip_len = gen_clip_len;
        cfg.model.clip_len = gen_clip_len;
      }
      if (gen_event_prob >= 0.0) cfg.gen.sudden_event_prob = gen_event_prob;
      if (gen_max_speed >= 0.0) cfg.gen.max_speed = gen_max_speed;
      return cmd_gen_data(cfg, gen_clips);
    }
    if (tr->parsed()) {
      RunConfig cfg = resolve_config(train_f, "train");
      if (train_steps) cfg.train.steps = train_steps;
      if (train_lr >= 0.0) cfg.optimizer.learning_rate = train_lr;
      return cmd_train(cfg);
    }
    if (ev->parsed()) return cmd_eval(resolve_config(eval_f, "eval"));
    if (ab->parsed()) return cmd_ablate(resolve_config(abl_f, "ablate"));
    if (cf->parsed()) {
      RunConfig cfg = resolve_config(cf_f, "counterfact");
      std::set<std::size_t> fz;
      for (const std::string& name : cf_force_zero) {
        const StreamKind k = stream_from_name(name);
        bool found = false;
        for (std::size_t i = 0; i < cfg.model.streams.size(); ++i)
          if (cfg.model.streams[i] == k) {
            fz.insert(i);
            found = true;
          }
        if (!found) throw UsageError("--force-zero stream not in model config: " + name);
      }
      return cmd_counterfact(cfg, fz);
    }
    if (gc->parsed()) return cmd_gradcheck(gc_ops, gc_tol);
  } catch (const NumericalError& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return 3;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
