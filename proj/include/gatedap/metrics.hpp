// The six saliency evaluation metrics: KLD, CC, SIM (distribution-based) and
// NSS, AUC-Judd, shuffled AUC (location-based). Pure functions over flat maps;
// degenerate inputs yield the documented fallbacks (0 with a warning, or NaN
// for genuinely undefined values).

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <limits>
#include <random>
#include <vector>

#include "gatedap/tensor.hpp"

namespace gatedap {

inline real metric_nan() { return std::numeric_limits<real>::quiet_NaN(); }

struct MetricsReport {
  real kld = 0, cc = 0, sim = 0, nss = 0, auc_j = 0, auc_s = 0;
};

namespace detail {

inline void metric_warn(const std::string& msg) { std::cerr << "[metrics] warning: " << msg << "\n"; }

inline bool normalize_to_sum1(std::vector<real>& m) {
  real s = 0.0;
  for (real v : m) s += v;
  if (s <= 0.0) return false;
  if (std::abs(s - 1.0) > 1e-9)
    for (auto& v : m) v /= s;
  return true;
}

inline real mean_of(const std::vector<real>& m) {
  real s = 0.0;
  for (real v : m) s += v;
  return s / static_cast<real>(m.size());
}

// population standard deviation (divide by N)
inline real stddev_of(const std::vector<real>& m, real mu) {
  real s = 0.0;
  for (real v : m) s += (v - mu) * (v - mu);
  return std::sqrt(s / static_cast<real>(m.size()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// distribution-based
// ---------------------------------------------------------------------------

// Epsilon-regularized divergence: sum Y * log(eps + Y/(eps+Yhat)), both maps
// normalized to sum 1 (auto-normalized with a warning otherwise).
inline real kld(std::vector<real> y_hat, std::vector<real> y, real eps = 1e-7) {
  if (y_hat.size() != y.size()) throw ShapeError("kld: size mismatch");
  const real s1 = std::accumulate(y_hat.begin(), y_hat.end(), 0.0);
  const real s2 = std::accumulate(y.begin(), y.end(), 0.0);
  if (std::abs(s1 - 1.0) > 1e-6 || std::abs(s2 - 1.0) > 1e-6)
    detail::metric_warn("kld: unnormalized input, auto-normalizing");
  if (!detail::normalize_to_sum1(y_hat) || !detail::normalize_to_sum1(y)) {
    detail::metric_warn("kld: zero-sum map");
    return metric_nan();
  }
  real acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i)
    if (y[i] != 0.0) acc += y[i] * std::log(eps + y[i] / (eps + y_hat[i]));
  return acc;
}

inline real cc(const std::vector<real>& y_hat, const std::vector<real>& y) {
  if (y_hat.size() != y.size()) throw ShapeError("cc: size mismatch");
  const real mu1 = detail::mean_of(y_hat), mu2 = detail::mean_of(y);
  const real s1 = detail::stddev_of(y_hat, mu1), s2 = detail::stddev_of(y, mu2);
  if (s1 == 0.0 || s2 == 0.0) {
    detail::metric_warn("cc: constant map, returning 0");
    return 0.0;
  }
  real cov = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) cov += (y_hat[i] - mu1) * (y[i] - mu2);
  cov /= static_cast<real>(y.size());
  return cov / (s1 * s2);
}

// Histogram intersection of the normalized maps.
inline real sim(std::vector<real> y_hat, std::vector<real> y) {
  if (y_hat.size() != y.size()) throw ShapeError("sim: size mismatch");
  if (!detail::normalize_to_sum1(y_hat) || !detail::normalize_to_sum1(y)) {
    detail::metric_warn("sim: zero-sum map, returning 0");
    return 0.0;
  }
  real acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) acc += std::min(y_hat[i], y[i]);
  return acc;
}

// ---------------------------------------------------------------------------
// location-based
// ---------------------------------------------------------------------------

inline real nss(const std::vector<real>& y_hat, const std::vector<std::uint8_t>& fix) {
  if (y_hat.size() != fix.size()) throw ShapeError("nss: size mismatch");
  std::size_t np = 0;
  for (auto p : fix) np += p ? 1 : 0;
  if (np == 0) {
    detail::metric_warn("nss: no fixations");
    return metric_nan();
  }
  const real mu = detail::mean_of(y_hat);
  const real sd = detail::stddev_of(y_hat, mu);
  if (sd == 0.0) {
    detail::metric_warn("nss: constant prediction, returning 0");
    return 0.0;
  }
  real acc = 0.0;
  for (std::size_t i = 0; i < fix.size(); ++i)
    if (fix[i]) acc += (y_hat[i] - mu) / sd;
  return acc / static_cast<real>(np);
}

namespace detail {

// ROC area with explicit positive/negative index sets. Thresholds sweep the
// distinct saliency values at the positives (>= comparison); trapezoidal area
// over the (FPR, TPR) points closed with (0,0) and (1,1).
inline real roc_area(const std::vector<real>& sal, const std::vector<std::size_t>& pos,
                     const std::vector<std::size_t>& neg) {
  std::vector<real> thresholds;
  thresholds.reserve(pos.size());
  for (auto i : pos) thresholds.push_back(sal[i]);
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  std::vector<real> pos_vals, neg_vals;
  pos_vals.reserve(pos.size());
  neg_vals.reserve(neg.size());
  for (auto i : pos) pos_vals.push_back(sal[i]);
  for (auto i : neg) neg_vals.push_back(sal[i]);
  std::sort(pos_vals.begin(), pos_vals.end());
  std::sort(neg_vals.begin(), neg_vals.end());

  std::vector<std::pair<real, real>> pts;  // (fpr, tpr)
  pts.emplace_back(0.0, 0.0);
  for (auto it = thresholds.rbegin(); it != thresholds.rend(); ++it) {
    const real t = *it;
    const auto tp = pos_vals.end() - std::lower_bound(pos_vals.begin(), pos_vals.end(), t);
    const auto fp = neg_vals.end() - std::lower_bound(neg_vals.begin(), neg_vals.end(), t);
    pts.emplace_back(static_cast<real>(fp) / static_cast<real>(neg_vals.size()),
                     static_cast<real>(tp) / static_cast<real>(pos_vals.size()));
  }
  pts.emplace_back(1.0, 1.0);
  std::sort(pts.begin(), pts.end());
  real area = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i)
    area += (pts[i].first - pts[i - 1].first) * (pts[i].second + pts[i - 1].second) * 0.5;
  return area;
}

}  // namespace detail

// AUC-Judd: fixated pixels are positives, every other pixel is a negative.
inline real auc_judd(const std::vector<real>& y_hat, const std::vector<std::uint8_t>& fix) {
  if (y_hat.size() != fix.size()) throw ShapeError("auc_judd: size mismatch");
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < fix.size(); ++i) (fix[i] ? pos : neg).push_back(i);
  if (pos.empty() || neg.empty()) {
    detail::metric_warn("auc_judd: undefined (need fixated and non-fixated pixels)");
    return metric_nan();
  }
  return detail::roc_area(y_hat, pos, neg);
}

// Deterministic negative sampling for AUC-S: unique fixated locations across
// the pool, minus this frame's positives, shuffled per split.
inline std::vector<std::size_t> shuffled_negative_pool(
    const std::vector<std::uint8_t>& fix, const std::vector<std::vector<std::uint8_t>>& others) {
  std::vector<std::uint8_t> in_pool(fix.size(), 0);
  for (const auto& o : others) {
    if (o.size() != fix.size()) throw ShapeError("auc_shuffled: pool map size mismatch");
    for (std::size_t i = 0; i < o.size(); ++i)
      if (o[i] && !fix[i]) in_pool[i] = 1;
  }
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < in_pool.size(); ++i)
    if (in_pool[i]) pool.push_back(i);
  return pool;
}

inline real auc_shuffled(const std::vector<real>& y_hat, const std::vector<std::uint8_t>& fix,
                         const std::vector<std::vector<std::uint8_t>>& other_fixations,
                         std::uint64_t seed, std::size_t n_splits = 10) {
  if (y_hat.size() != fix.size()) throw ShapeError("auc_shuffled: size mismatch");
  if (other_fixations.empty()) throw UsageError("auc_shuffled: empty shuffle pool");
  std::vector<std::size_t> pos;
  for (std::size_t i = 0; i < fix.size(); ++i)
    if (fix[i]) pos.push_back(i);
  std::vector<std::size_t> pool = shuffled_negative_pool(fix, other_fixations);
  if (pos.empty() || pool.empty()) {
    detail::metric_warn("auc_shuffled: undefined (no positives or empty negative pool)");
    return metric_nan();
  }
  std::mt19937_64 rng(seed);
  const std::size_t take = std::min(pos.size(), pool.size());
  real acc = 0.0;
  for (std::size_t s = 0; s < n_splits; ++s) {
    std::vector<std::size_t> shuffled = pool;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    shuffled.resize(take);
    acc += detail::roc_area(y_hat, pos, shuffled);
  }
  return acc / static_cast<real>(n_splits);
}

// ---------------------------------------------------------------------------
// combined report
// ---------------------------------------------------------------------------

struct MetricsConfig {
  real epsilon = 1e-7;
  std::size_t auc_s_splits = 10;
  std::uint64_t auc_s_seed = 0;
};

inline MetricsReport metrics_report(const std::vector<real>& y_hat, const std::vector<real>& y,
                                    const std::vector<std::uint8_t>& fix,
                                    const std::vector<std::vector<std::uint8_t>>& shuffle_pool,
                                    const MetricsConfig& cfg = {}) {
  MetricsReport r;
  // predictions arrive as raw (0,1) maps; normalize up front so the kld
  // misuse warning stays meaningful for direct callers
  std::vector<real> yh_n = y_hat;
  detail::normalize_to_sum1(yh_n);
  r.kld = kld(yh_n, y, cfg.epsilon);
  r.cc = cc(y_hat, y);
  r.sim = sim(y_hat, y);
  r.nss = nss(y_hat, fix);
  r.auc_j = auc_judd(y_hat, fix);
  r.auc_s = shuffle_pool.empty() ? metric_nan()
                                 : auc_shuffled(y_hat, fix, shuffle_pool, cfg.auc_s_seed,
                                                cfg.auc_s_splits);
  return r;
}

}  // namespace gatedap
