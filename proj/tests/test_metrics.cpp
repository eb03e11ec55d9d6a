#include <catch2/catch_amalgamated.hpp>

#include <fstream>
#include <random>

#include <json.hpp>

#include "gatedap/io.hpp"
#include "gatedap/metrics.hpp"
#include "oracles.hpp"

using namespace gatedap;
using Catch::Approx;

namespace {
std::vector<real> rndmap(std::size_t n, std::mt19937_64& rng, real lo = 0.0, real hi = 1.0) {
  std::vector<real> v(n);
  std::uniform_real_distribution<real> dist(lo, hi);
  for (auto& x : v) x = dist(rng);
  return v;
}
}  // namespace

TEST_CASE("kld hand cases") {
  // Y=[1,0], Yhat=[0.5,0.5]: ~log 2
  CHECK(kld({0.5, 0.5}, {1.0, 0.0}) == Approx(std::log(2.0)).margin(1e-5));
  // identical distributions: ~0
  CHECK(std::abs(kld({0.25, 0.75}, {0.25, 0.75})) < 1e-6);
  CHECK_THROWS_AS(kld({0.5}, {0.5, 0.5}), ShapeError);
}

TEST_CASE("cc hand cases") {
  CHECK(cc({1, 2, 3}, {2, 4, 6}) == Approx(1.0));
  CHECK(cc({1, 2, 3}, {3, 2, 1}) == Approx(-1.0));
  CHECK(cc({1, 1, 1}, {1, 2, 3}) == 0.0);  // constant map guard
}

TEST_CASE("sim hand case") {
  // Y=[0.5,0.5], Yhat=[1,0] -> 0.5
  CHECK(sim({1.0, 0.0}, {0.5, 0.5}) == Approx(0.5));
  CHECK(sim({0.3, 0.7}, {0.3, 0.7}) == Approx(1.0));
}

TEST_CASE("nss hand case: single fixation on the only peak") {
  // 2x2 map [0,0;0,1], fixation at the 1: (1-0.25)/sqrt(0.1875) = sqrt(3)
  std::vector<real> sal = {0, 0, 0, 1};
  std::vector<std::uint8_t> fix = {0, 0, 0, 1};
  CHECK(nss(sal, fix) == Approx(std::sqrt(3.0)).margin(1e-9));
  CHECK(nss({1, 1, 1, 1}, fix) == 0.0);             // constant prediction
  CHECK(std::isnan(nss(sal, {0, 0, 0, 0})));        // no fixations
}

TEST_CASE("auc_judd perfect separation and degenerate cases") {
  std::vector<real> sal = {0.9, 0.8, 0.1, 0.2};
  std::vector<std::uint8_t> fix = {1, 1, 0, 0};
  CHECK(auc_judd(sal, fix) == Approx(1.0));
  std::vector<std::uint8_t> anti = {0, 0, 1, 1};
  CHECK(auc_judd(sal, anti) < 0.5);
  CHECK(std::isnan(auc_judd(sal, {0, 0, 0, 0})));
  CHECK(std::isnan(auc_judd(sal, {1, 1, 1, 1})));
}

TEST_CASE("auc_shuffled determinism and pool semantics") {
  std::mt19937_64 rng(61);
  std::vector<real> sal = rndmap(36, rng);
  std::vector<std::uint8_t> fix(36, 0), o1(36, 0), o2(36, 0);
  fix[4] = fix[17] = 1;
  o1[3] = o1[4] = o1[20] = 1;  // location 4 overlaps a positive: excluded
  o2[9] = o2[30] = 1;
  auto pool = shuffled_negative_pool(fix, {o1, o2});
  CHECK(pool == std::vector<std::size_t>{3, 9, 20, 30});

  const real a = auc_shuffled(sal, fix, {o1, o2}, 77, 10);
  const real b = auc_shuffled(sal, fix, {o1, o2}, 77, 10);
  CHECK(a == b);  // same seed, bitwise
  CHECK_THROWS_AS(auc_shuffled(sal, fix, {}, 77, 10), UsageError);
}

TEST_CASE("all six metrics match brute-force oracles on 100 random 6x6 maps") {
  std::mt19937_64 rng(62);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<real> pred = rndmap(36, rng);
    std::vector<real> gt = rndmap(36, rng);
    real s = 0;
    for (real v : gt) s += v;
    for (auto& v : gt) v /= s;
    std::vector<std::uint8_t> fix(36, 0), other(36, 0);
    std::uniform_int_distribution<std::size_t> loc(0, 35);
    for (int i = 0; i < 4; ++i) fix[loc(rng)] = 1;
    for (int i = 0; i < 6; ++i) other[loc(rng)] = 1;
    bool any_fix = false, any_pool = false;
    for (std::size_t i = 0; i < 36; ++i) {
      any_fix = any_fix || fix[i];
      any_pool = any_pool || (other[i] && !fix[i]);
    }
    if (!any_fix || !any_pool) continue;

    CHECK(kld(pred, gt) == Approx(oracle::kld(pred, gt)).margin(1e-6));
    CHECK(cc(pred, gt) == Approx(oracle::cc(pred, gt)).margin(1e-9));
    CHECK(sim(pred, gt) == Approx(oracle::sim(pred, gt)).margin(1e-9));
    CHECK(nss(pred, fix) == Approx(oracle::nss(pred, fix)).margin(1e-9));
    CHECK(auc_judd(pred, fix) == Approx(oracle::auc_judd(pred, fix)).margin(1e-9));
    const std::uint64_t seed = 1000 + trial;
    CHECK(auc_shuffled(pred, fix, {other}, seed, 10) ==
          Approx(oracle::auc_shuffled(pred, fix, {other}, seed, 10)).margin(1e-9));
  }
}

TEST_CASE("golden 8x8 pair") {
  const std::string dir = GATEDAP_GOLDEN_DIR;
  Tensor pred = read_gdap(dir + "/pred.gdap");
  Tensor gt = read_gdap(dir + "/gt.gdap");
  std::size_t h = 0, w = 0;
  std::vector<std::uint8_t> fix_raw, pool_raw;
  read_pgm(dir + "/fix.pgm", h, w, fix_raw);
  REQUIRE(h == 8);
  read_pgm(dir + "/pool.pgm", h, w, pool_raw);
  std::vector<std::uint8_t> fix(64), pool(64);
  for (std::size_t i = 0; i < 64; ++i) {
    fix[i] = fix_raw[i] ? 1 : 0;
    pool[i] = pool_raw[i] ? 1 : 0;
  }
  std::ifstream in(dir + "/expected.json");
  REQUIRE(in.good());
  nlohmann::json exp;
  in >> exp;

  CHECK(kld(pred.value(), gt.value()) == Approx(exp["kld"].get<real>()).margin(1e-9));
  CHECK(cc(pred.value(), gt.value()) == Approx(exp["cc"].get<real>()).margin(1e-12));
  CHECK(sim(pred.value(), gt.value()) == Approx(exp["sim"].get<real>()).margin(1e-12));
  CHECK(nss(pred.value(), fix) == Approx(exp["nss"].get<real>()).margin(1e-12));
  CHECK(auc_judd(pred.value(), fix) == Approx(exp["auc_j"].get<real>()).margin(1e-12));
  CHECK(auc_shuffled(pred.value(), fix, {pool}, exp["auc_s_seed"].get<std::uint64_t>(),
                     exp["auc_s_splits"].get<std::size_t>()) ==
        Approx(exp["auc_s"].get<real>()).margin(1e-12));
}

TEST_CASE("metrics_report aggregates all six") {
  std::mt19937_64 rng(63);
  std::vector<real> pred = rndmap(16, rng);
  std::vector<real> gt = rndmap(16, rng);
  std::vector<std::uint8_t> fix(16, 0), other(16, 0);
  fix[2] = 1;
  other[10] = other[12] = 1;
  MetricsConfig cfg;
  cfg.auc_s_seed = 5;
  MetricsReport r = metrics_report(pred, gt, fix, {other}, cfg);
  CHECK(r.kld == Approx(oracle::kld(pred, gt)).margin(1e-6));
  CHECK(r.cc == Approx(oracle::cc(pred, gt)).margin(1e-9));
  CHECK(std::isfinite(r.auc_s));
  // empty shuffle pool: AUC-S undefined
  MetricsReport r2 = metrics_report(pred, gt, fix, {}, cfg);
  CHECK(std::isnan(r2.auc_s));
}
