// Named parameter storage with deterministic initialization, plus the Adam
// optimizer with decoupled weight decay.

#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "gatedap/tensor.hpp"

namespace gatedap {

enum class Init { zeros, ones, trunc_normal_002, kaiming_uniform };

class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed = 0) : seed_(seed), rng_(seed) {}

  // Creates a parameter; draws from the store RNG in creation order, so a
  // fixed construction sequence plus a fixed seed gives identical weights.
  Tensor& create(const std::string& name, Shape shape, Init init, bool trainable = true) {
    if (params_.count(name)) throw UsageError("parameter already exists: " + name);
    Tensor t = Tensor::zeros(shape);
    initialize(t, init);
    t.set_requires_grad(trainable);
    auto [it, ok] = params_.emplace(name, std::move(t));
    (void)ok;
    return it->second;
  }

  Tensor& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw UsageError("unknown parameter: " + name);
    return it->second;
  }
  const Tensor& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw UsageError("unknown parameter: " + name);
    return it->second;
  }
  bool has(const std::string& name) const { return params_.count(name) != 0; }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  std::size_t count() const { return params_.size(); }
  std::uint64_t seed() const { return seed_; }

  void zero_grads() {
    for (auto& [name, t] : params_)
      if (!t.grad().empty()) std::fill(t.grad().begin(), t.grad().end(), 0.0);
  }

  // FNV-1a over the raw value bytes, in sorted name order.
  std::uint64_t value_checksum() const {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const void* data, std::size_t len) {
      const auto* p = static_cast<const unsigned char*>(data);
      for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
      }
    };
    for (const auto& [name, t] : params_) {
      mix(name.data(), name.size());
      mix(t.value().data(), t.value().size() * sizeof(real));
    }
    return h;
  }

  bool grads_finite() const {
    for (const auto& [name, t] : params_)
      for (real g : t.grad())
        if (!std::isfinite(g)) return false;
    return true;
  }

 private:
  void initialize(Tensor& t, Init init) {
    switch (init) {
      case Init::zeros:
        break;
      case Init::ones:
        std::fill(t.value().begin(), t.value().end(), 1.0);
        break;
      case Init::trunc_normal_002: {
        std::normal_distribution<real> dist(0.0, 0.02);
        for (auto& v : t.value()) {
          real s;
          do {
            s = dist(rng_);
          } while (std::abs(s) > 0.04);  // truncate at 2 sigma
          v = s;
        }
        break;
      }
      case Init::kaiming_uniform: {
        // fan_in = everything but the leading (output) axis
        std::size_t fan_in = 1;
        for (std::size_t i = 1; i < t.shape().size(); ++i) fan_in *= t.shape()[i];
        const real bound = std::sqrt(6.0 / static_cast<real>(std::max<std::size_t>(1, fan_in)));
        std::uniform_real_distribution<real> dist(-bound, bound);
        for (auto& v : t.value()) v = dist(rng_);
        break;
      }
    }
  }

  std::map<std::string, Tensor> params_;
  std::uint64_t seed_;
  std::mt19937_64 rng_;
};

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamConfig {
  real learning_rate = 1e-3;  // full-scale preset: 1e-6 with a pretrained backbone
  real beta1 = 0.9;
  real beta2 = 0.999;
  real epsilon = 1e-8;
  real weight_decay = 0.0;  // decoupled
};

class AdamState {
 public:
  explicit AdamState(AdamConfig cfg = {}) : cfg_(cfg) {}

  AdamConfig& config() { return cfg_; }
  const AdamConfig& config() const { return cfg_; }
  long step_count() const { return step_; }
  void set_step_count(long s) { step_ = s; }

  // Bias-corrected Adam update over every trainable parameter; gradients are
  // zeroed afterwards.
  void step(ParamStore& store) {
    ++step_;
    const real bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<real>(step_));
    const real bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<real>(step_));
    for (auto& [name, t] : store) {
      if (!t.requires_grad()) continue;
      // a parameter that took no part in the step's graph (e.g. behind a
      // closed gate) has no gradient buffer; leave it untouched
      if (t.grad().empty()) continue;
      if (t.grad().size() != t.value().size())
        throw UsageError("adam_step: gradient size mismatch for " + name);
      auto& mv = moments_[name];
      if (mv.m.size() != t.size()) {
        mv.m.assign(t.size(), 0.0);
        mv.v.assign(t.size(), 0.0);
      }
      auto& val = t.value();
      auto& grad = t.grad();
      for (std::size_t i = 0; i < val.size(); ++i) {
        const real g = grad[i];
        mv.m[i] = cfg_.beta1 * mv.m[i] + (1.0 - cfg_.beta1) * g;
        mv.v[i] = cfg_.beta2 * mv.v[i] + (1.0 - cfg_.beta2) * g * g;
        const real mhat = mv.m[i] / bc1;
        const real vhat = mv.v[i] / bc2;
        val[i] -= cfg_.learning_rate * (mhat / (std::sqrt(vhat) + cfg_.epsilon));
        if (cfg_.weight_decay != 0.0) val[i] -= cfg_.learning_rate * cfg_.weight_decay * val[i];
      }
      std::fill(grad.begin(), grad.end(), 0.0);
    }
  }

 private:
  struct Moments {
    std::vector<real> m, v;
  };
  AdamConfig cfg_;
  std::map<std::string, Moments> moments_;
  long step_ = 0;
};

inline void adam_step(ParamStore& store, AdamState& state) { state.step(store); }

}  // namespace gatedap
