#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "gatedap/gating.hpp"
#include "gatedap/grad_check.hpp"
#include "oracles.hpp"

using namespace gatedap;
using Catch::Approx;

namespace {
Tensor rnd(Shape s, std::mt19937_64& rng, real lo = -1.0, real hi = 1.0) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  std::vector<real> v(n);
  std::uniform_real_distribution<real> dist(lo, hi);
  for (auto& x : v) x = dist(rng);
  return Tensor::from_values(std::move(s), std::move(v));
}
}  // namespace

TEST_CASE("spag hand case and closed gate") {
  // C=1 input, 1x1 conv over [avg;max] picking the avg branch only:
  // S' = sigmoid(S) (.) S because avg == max == S for a single channel
  Tensor s = Tensor::from_values({1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
  Tensor w = Tensor::from_values({1, 2, 1, 1}, {1.0, 0.0});
  Tensor b = Tensor::zeros({1});
  Tensor mask;
  Tensor out = spag_forward(s, w, b, true, &mask);
  for (std::size_t i = 0; i < 4; ++i) {
    const real sv = s.value()[i];
    CHECK(out.value()[i] == Approx(oracle::sigmoid(sv) * sv));
    CHECK(mask.value()[i] > 0.0);
    CHECK(mask.value()[i] < 1.0);
  }
  CHECK(out.value()[0] == Approx(oracle::sigmoid(1.0) * 1.0));  // ~0.7311

  // closed: identical input, mask of ones
  Tensor closed = spag_forward(s, w, b, false, &mask);
  CHECK(closed.value() == s.value());
  for (real m : mask.value()) CHECK(m == 1.0);
}

TEST_CASE("spag mask stays in (0,1) across random configs") {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor s = rnd({3, 4, 4}, rng, -3, 3);
    Tensor w = rnd({1, 2, 3, 3}, rng);
    Tensor b = rnd({1}, rng);
    Tensor mask;
    spag_forward(s, w, b, true, &mask);
    for (real m : mask.value()) {
      CHECK(m > 0.0);
      CHECK(m < 1.0);
    }
  }
}

TEST_CASE("mo_infog values and pass-through") {
  std::mt19937_64 rng(42);
  Tensor m = rnd({2, 3, 3}, rng);
  Tensor wf = rnd({2, 2, 1, 1}, rng), bf = rnd({2}, rng);
  Tensor wg = rnd({2, 2, 1, 1}, rng), bg = rnd({2}, rng);
  Tensor out = mo_infog_forward(m, wf, bf, wg, bg, true);

  // loop oracle: 1x1 convs are per-pixel matrix multiplies
  const std::size_t hw = 9;
  for (std::size_t i = 0; i < hw; ++i) {
    for (std::size_t oc = 0; oc < 2; ++oc) {
      real f = bf.value()[oc], g = bg.value()[oc];
      for (std::size_t ic = 0; ic < 2; ++ic) {
        f += wf.value()[oc * 2 + ic] * m.value()[ic * hw + i];
        g += wg.value()[oc * 2 + ic] * m.value()[ic * hw + i];
      }
      const real felu = f >= 0.0 ? f : std::exp(f) - 1.0;
      CHECK(out.value()[oc * hw + i] == Approx(felu * oracle::sigmoid(g)).margin(1e-12));
    }
  }

  CHECK(mo_infog_forward(m, wf, bf, wg, bg, false).value() == m.value());
}

TEST_CASE("mu_infog masks form a partition of unity") {
  std::mt19937_64 rng(43);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + trial % 4, c = 1 + trial % 3;
    std::vector<Tensor> ms, rw, rb;
    for (std::size_t i = 0; i < n; ++i) {
      ms.push_back(rnd({c, 3, 3}, rng, -2, 2));
      rw.push_back(rnd({1, c, 1, 1}, rng));
      rb.push_back(rnd({1}, rng));
    }
    MuInfogResult res = mu_infog_forward(ms, rw, rb, true, 1.0 / static_cast<real>(n));
    for (std::size_t loc = 0; loc < 9; ++loc) {
      real total = 0.0;
      for (const auto& mask : res.masks) total += mask.value()[loc];
      CHECK(std::abs(total - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("mu_infog closed and forced-zero behavior") {
  std::mt19937_64 rng(44);
  std::vector<Tensor> ms = {rnd({2, 2, 2}, rng), rnd({2, 2, 2}, rng), rnd({2, 2, 2}, rng)};
  std::vector<Tensor> rw = {rnd({1, 2, 1, 1}, rng), rnd({1, 2, 1, 1}, rng), rnd({1, 2, 1, 1}, rng)};
  std::vector<Tensor> rb = {rnd({1}, rng), rnd({1}, rng), rnd({1}, rng)};

  // closed: every mask is the neutral constant 1/n
  MuInfogResult closed = mu_infog_forward(ms, rw, rb, false, 1.0 / 3.0);
  for (const auto& mask : closed.masks)
    for (real v : mask.value()) CHECK(v == Approx(1.0 / 3.0));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < ms[i].size(); ++j)
      CHECK(closed.outputs[i].value()[j] == Approx(ms[i].value()[j] / 3.0));

  // forcing stream 1 to zero: its mask is 0 and the other two still sum to 1,
  // independent of stream 1's content
  MuInfogResult forced = mu_infog_forward(ms, rw, rb, true, 1.0 / 3.0, {1});
  for (real v : forced.masks[1].value()) CHECK(v == 0.0);
  for (std::size_t loc = 0; loc < 4; ++loc)
    CHECK(forced.masks[0].value()[loc] + forced.masks[2].value()[loc] == Approx(1.0));

  std::vector<Tensor> ms2 = ms;
  ms2[1] = rnd({2, 2, 2}, rng, 5.0, 9.0);  // wildly different content
  MuInfogResult forced2 = mu_infog_forward(ms2, rw, rb, true, 1.0 / 3.0, {1});
  CHECK(forced.masks[0].value() == forced2.masks[0].value());
  CHECK(forced.outputs[2].value() == forced2.outputs[2].value());

  CHECK_THROWS_AS(mu_infog_forward(ms, rw, rb, true, 1.0 / 3.0, {0, 1, 2}), UsageError);
}

TEST_CASE("gru cell") {
  // all-zero weights: z = 0.5, candidate = 0, H = 0.5 * H_prev
  const std::size_t dh = 3, dx = 2;
  GruParams p;
  p.wz = Tensor::zeros({dh, dh + dx});
  p.bz = Tensor::zeros({dh});
  p.wr = Tensor::zeros({dh, dh + dx});
  p.br = Tensor::zeros({dh});
  p.wh = Tensor::zeros({dh, dh + dx});
  p.bh = Tensor::zeros({dh});
  Tensor h = Tensor::from_values({dh}, {1.0, -2.0, 4.0});
  Tensor x = Tensor::from_values({dx}, {0.3, 0.7});
  Tensor out = gru_cell(h, x, p);
  CHECK(out.value()[0] == Approx(0.5));
  CHECK(out.value()[1] == Approx(-1.0));
  CHECK(out.value()[2] == Approx(2.0));

  // random weights vs the scalar loop oracle
  std::mt19937_64 rng(45);
  GruParams q;
  q.wz = rnd({dh, dh + dx}, rng);
  q.bz = rnd({dh}, rng);
  q.wr = rnd({dh, dh + dx}, rng);
  q.br = rnd({dh}, rng);
  q.wh = rnd({dh, dh + dx}, rng);
  q.bh = rnd({dh}, rng);
  Tensor h2 = rnd({dh}, rng), x2 = rnd({dx}, rng);
  Tensor got = gru_cell(h2, x2, q);
  oracle::vec expect =
      oracle::gru(h2.value(), x2.value(), q.wz.value(), q.bz.value(), q.wr.value(), q.br.value(),
                  q.wh.value(), q.bh.value());
  for (std::size_t i = 0; i < dh; ++i) CHECK(got.value()[i] == Approx(expect[i]).margin(1e-12));

  CHECK_THROWS_AS(gru_cell(rnd({4}, rng), x, p), ShapeError);
}

namespace {
MemogParams random_memog(std::mt19937_64& rng, std::size_t dh, std::size_t dx, std::size_t c,
                         std::size_t hw_side) {
  MemogParams p;
  p.mo_wf = rnd({dh, dh}, rng);
  p.mo_bf = rnd({dh}, rng);
  p.mo_wg = rnd({dh, dh}, rng);
  p.mo_bg = rnd({dh}, rng);
  p.tu_red_w = rnd({1, c, 1, 1}, rng);
  p.tu_red_b = rnd({1}, rng);
  p.proj_w = rnd({dx, c * hw_side * hw_side}, rng);
  p.proj_b = rnd({dx}, rng);
  p.gru.wz = rnd({dh, dh + dx}, rng);
  p.gru.bz = rnd({dh}, rng);
  p.gru.wr = rnd({dh, dh + dx}, rng);
  p.gru.br = rnd({dh}, rng);
  p.gru.wh = rnd({dh, dh + dx}, rng);
  p.gru.bh = rnd({dh}, rng);
  return p;
}
}  // namespace

TEST_CASE("memog closed equals a plain GRU step, bitwise") {
  std::mt19937_64 rng(46);
  MemogParams p = random_memog(rng, 4, 3, 2, 2);
  Tensor h = rnd({4}, rng);
  std::vector<Tensor> window = {rnd({2, 2, 2}, rng), rnd({2, 2, 2}, rng), rnd({2, 2, 2}, rng)};

  // closed MemoG: MO-InfoG passes through, TU masks are 1 -> exactly
  // gru_cell(h, proj(flatten(last frame)))
  Tensor closed = memog_forward(h, window, p, /*memog_open=*/false, /*temporal_uncertainty=*/true);
  Tensor hand = gru_cell(h, matvec(p.proj_w, flatten(window.back()), p.proj_b), p.gru);
  CHECK(closed.value() == hand.value());  // bitwise

  // window of length 1 with TU on equals TU off, bitwise (singleton softmax)
  std::vector<Tensor> single = {window[0]};
  Tensor with_tu = memog_forward(h, single, p, true, true);
  Tensor without_tu = memog_forward(h, single, p, true, false);
  CHECK(with_tu.value() == without_tu.value());
}

TEST_CASE("memog open differs from closed and stays finite") {
  std::mt19937_64 rng(47);
  MemogParams p = random_memog(rng, 4, 3, 2, 2);
  Tensor h = rnd({4}, rng);
  std::vector<Tensor> window = {rnd({2, 2, 2}, rng), rnd({2, 2, 2}, rng)};
  Tensor open = memog_forward(h, window, p, true, true);
  Tensor closed = memog_forward(h, window, p, false, true);
  CHECK(open.value() != closed.value());
  CHECK(all_finite(open));
  CHECK_THROWS_AS(memog_forward(h, {}, p, true, true), UsageError);
}

TEST_CASE("gating modules pass gradient checks") {
  std::mt19937_64 rng(48);
  {
    Tensor w = rnd({1, 2, 3, 3}, rng), b = rnd({1}, rng);
    auto rep = grad_check(
        [w, b](const Tensor& x) { return sum(square(spag_forward(x, w, b, true))); },
        rnd({2, 4, 4}, rng), 1e-5, 1e-4);
    CHECK(rep.pass);
  }
  {
    Tensor wf = rnd({2, 2, 1, 1}, rng), bf = rnd({2}, rng);
    Tensor wg = rnd({2, 2, 1, 1}, rng), bg = rnd({2}, rng);
    auto rep = grad_check(
        [wf, bf, wg, bg](const Tensor& x) {
          return sum(square(mo_infog_forward(x, wf, bf, wg, bg, true)));
        },
        rnd({2, 3, 3}, rng), 1e-5, 1e-4);
    CHECK(rep.pass);
  }
  {
    MemogParams p = random_memog(rng, 4, 3, 2, 2);
    Tensor h = rnd({4}, rng);
    Tensor other = rnd({2, 2, 2}, rng);
    auto rep = grad_check(
        [p, h, other](const Tensor& x) {
          return sum(square(memog_forward(h, {other, x}, p, true, true)));
        },
        rnd({2, 2, 2}, rng), 1e-5, 1e-4);
    CHECK(rep.pass);
  }
}
