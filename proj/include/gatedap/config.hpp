// Run configuration: a fully serializable description of a command invocation.
// Every command writes the resolved copy back out (config.echo) so a run can
// be reproduced from its artifacts alone.

#pragma once

#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "gatedap/data.hpp"
#include "gatedap/param.hpp"
#include "gatedap/pipeline.hpp"

namespace gatedap {

using json = nlohmann::json;

struct TrainSection {
  std::size_t steps = 2000;
  std::size_t eval_every = 50;
  std::optional<real> stop_cc;
  std::optional<real> stop_kld;
};

struct RunConfig {
  std::string command;
  std::uint64_t seed = 7;
  std::size_t threads = 1;
  std::string data_dir, out_dir, checkpoint;
  ModelConfig model;
  LossConfig loss;
  AdamConfig optimizer;
  TrainSection train;
  SceneSpec gen;
};

namespace detail {

inline void reject_unknown_keys(const json& j, const std::string& section,
                                const std::set<std::string>& allowed) {
  for (const auto& [key, val] : j.items())
    if (!allowed.count(key))
      throw UsageError("unknown config key: " + (section.empty() ? key : section + "." + key));
}

template <typename T>
void read_key(const json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

inline void read_key(const json& j, const char* key, std::optional<real>& out) {
  if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<real>();
}

}  // namespace detail

inline json model_to_json(const ModelConfig& m) {
  std::vector<std::string> streams;
  for (auto s : m.streams) streams.emplace_back(stream_name(s));
  return json{{"image_size", m.encoder.image_size},
              {"patch_size", m.encoder.patch_size},
              {"enc_channels", m.encoder.in_channels},
              {"embed_dim", m.encoder.embed_dim},
              {"depth", m.encoder.depth},
              {"num_heads", m.encoder.num_heads},
              {"mlp_ratio", m.encoder.mlp_ratio},
              {"clip_len", m.clip_len},
              {"streams", streams},
              {"gru_hidden", m.gru_hidden},
              {"gru_input", m.gru_input},
              {"decoder_width", m.decoder_width},
              {"spag_kernel", m.spag_kernel},
              {"share_memog", m.share_memog},
              {"max_speed", m.max_speed},
              {"gate",
               {{"spag", m.gate.spag_open},
                {"memog", m.gate.memog_open},
                {"mu_infog", m.gate.mu_infog_open},
                {"tu", m.gate.temporal_uncertainty}}}};
}

inline void model_from_json(const json& j, ModelConfig& m) {
  detail::reject_unknown_keys(
      j, "model",
      {"image_size", "patch_size", "enc_channels", "embed_dim", "depth", "num_heads", "mlp_ratio",
       "clip_len", "streams", "gru_hidden", "gru_input", "decoder_width", "spag_kernel",
       "share_memog", "max_speed", "gate"});
  detail::read_key(j, "image_size", m.encoder.image_size);
  detail::read_key(j, "patch_size", m.encoder.patch_size);
  detail::read_key(j, "enc_channels", m.encoder.in_channels);
  detail::read_key(j, "embed_dim", m.encoder.embed_dim);
  detail::read_key(j, "depth", m.encoder.depth);
  detail::read_key(j, "num_heads", m.encoder.num_heads);
  detail::read_key(j, "mlp_ratio", m.encoder.mlp_ratio);
  detail::read_key(j, "clip_len", m.clip_len);
  if (j.contains("streams")) {
    m.streams.clear();
    for (const auto& s : j.at("streams")) m.streams.push_back(stream_from_name(s.get<std::string>()));
  }
  detail::read_key(j, "gru_hidden", m.gru_hidden);
  detail::read_key(j, "gru_input", m.gru_input);
  detail::read_key(j, "decoder_width", m.decoder_width);
  detail::read_key(j, "spag_kernel", m.spag_kernel);
  detail::read_key(j, "share_memog", m.share_memog);
  detail::read_key(j, "max_speed", m.max_speed);
  if (j.contains("gate")) {
    const json& g = j.at("gate");
    detail::reject_unknown_keys(g, "model.gate", {"spag", "memog", "mu_infog", "tu"});
    detail::read_key(g, "spag", m.gate.spag_open);
    detail::read_key(g, "memog", m.gate.memog_open);
    detail::read_key(g, "mu_infog", m.gate.mu_infog_open);
    detail::read_key(g, "tu", m.gate.temporal_uncertainty);
  }
}

inline json run_config_to_json(const RunConfig& c) {
  json j;
  j["command"] = c.command;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["data_dir"] = c.data_dir;
  j["out_dir"] = c.out_dir;
  j["checkpoint"] = c.checkpoint;
  j["model"] = model_to_json(c.model);
  j["loss"] = {{"alpha", c.loss.alpha}, {"beta", c.loss.beta}, {"epsilon", c.loss.epsilon}};
  j["optimizer"] = {{"learning_rate", c.optimizer.learning_rate},
                    {"beta1", c.optimizer.beta1},
                    {"beta2", c.optimizer.beta2},
                    {"epsilon", c.optimizer.epsilon},
                    {"weight_decay", c.optimizer.weight_decay}};
  j["train"] = {{"steps", c.train.steps},
                {"eval_every", c.train.eval_every},
                {"stop_cc", c.train.stop_cc ? json(*c.train.stop_cc) : json(nullptr)},
                {"stop_kld", c.train.stop_kld ? json(*c.train.stop_kld) : json(nullptr)}};
  j["gen"] = {{"clips", 0},  // filled by callers that generate data
              {"image_size", c.gen.image_size},
              {"clip_len", c.gen.clip_len},
              {"min_vehicles", c.gen.min_vehicles},
              {"max_vehicles", c.gen.max_vehicles},
              {"min_pedestrians", c.gen.min_pedestrians},
              {"max_pedestrians", c.gen.max_pedestrians},
              {"max_speed", c.gen.max_speed},
              {"sigma_g", c.gen.sigma_g},
              {"sudden_event_prob", c.gen.sudden_event_prob},
              {"fixation_peaks", c.gen.fixation_peaks}};
  return j;
}

inline RunConfig run_config_from_json(const json& j) {
  detail::reject_unknown_keys(j, "", {"command", "seed", "threads", "data_dir", "out_dir",
                                      "checkpoint", "model", "loss", "optimizer", "train", "gen"});
  RunConfig c;
  detail::read_key(j, "command", c.command);
  detail::read_key(j, "seed", c.seed);
  detail::read_key(j, "threads", c.threads);
  detail::read_key(j, "data_dir", c.data_dir);
  detail::read_key(j, "out_dir", c.out_dir);
  detail::read_key(j, "checkpoint", c.checkpoint);
  if (j.contains("model")) model_from_json(j.at("model"), c.model);
  if (j.contains("loss")) {
    const json& l = j.at("loss");
    detail::reject_unknown_keys(l, "loss", {"alpha", "beta", "epsilon"});
    detail::read_key(l, "alpha", c.loss.alpha);
    detail::read_key(l, "beta", c.loss.beta);
    detail::read_key(l, "epsilon", c.loss.epsilon);
  }
  if (j.contains("optimizer")) {
    const json& o = j.at("optimizer");
    detail::reject_unknown_keys(o, "optimizer",
                                {"learning_rate", "beta1", "beta2", "epsilon", "weight_decay"});
    detail::read_key(o, "learning_rate", c.optimizer.learning_rate);
    detail::read_key(o, "beta1", c.optimizer.beta1);
    detail::read_key(o, "beta2", c.optimizer.beta2);
    detail::read_key(o, "epsilon", c.optimizer.epsilon);
    detail::read_key(o, "weight_decay", c.optimizer.weight_decay);
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    detail::reject_unknown_keys(t, "train", {"steps", "eval_every", "stop_cc", "stop_kld"});
    detail::read_key(t, "steps", c.train.steps);
    detail::read_key(t, "eval_every", c.train.eval_every);
    detail::read_key(t, "stop_cc", c.train.stop_cc);
    detail::read_key(t, "stop_kld", c.train.stop_kld);
  }
  if (j.contains("gen")) {
    const json& g = j.at("gen");
    detail::reject_unknown_keys(g, "gen",
                                {"clips", "image_size", "clip_len", "min_vehicles", "max_vehicles",
                                 "min_pedestrians", "max_pedestrians", "max_speed", "sigma_g",
                                 "sudden_event_prob", "fixation_peaks"});
    detail::read_key(g, "image_size", c.gen.image_size);
    detail::read_key(g, "clip_len", c.gen.clip_len);
    detail::read_key(g, "min_vehicles", c.gen.min_vehicles);
    detail::read_key(g, "max_vehicles", c.gen.max_vehicles);
    detail::read_key(g, "min_pedestrians", c.gen.min_pedestrians);
    detail::read_key(g, "max_pedestrians", c.gen.max_pedestrians);
    detail::read_key(g, "max_speed", c.gen.max_speed);
    detail::read_key(g, "sigma_g", c.gen.sigma_g);
    detail::read_key(g, "sudden_event_prob", c.gen.sudden_event_prob);
    detail::read_key(g, "fixation_peaks", c.gen.fixation_peaks);
  }
  return c;
}

inline RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config file: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw UsageError("config parse error in " + path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

inline void write_config_echo(const RunConfig& cfg, const fs::path& out_dir,
                              std::size_t gen_clips = 0) {
  fs::create_directories(out_dir);
  json j = run_config_to_json(cfg);
  j["gen"]["clips"] = gen_clips;
  std::ofstream out(out_dir / "config.echo");
  out << j.dump(2) << "\n";
}

}  // namespace gatedap
