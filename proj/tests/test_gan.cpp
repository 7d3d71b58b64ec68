#include <cmath>

#include "doctest.h"
#include "pcodec/errors.hpp"
#include "pcodec/gan.hpp"
#include "pcodec/gradcheck.hpp"

using namespace pcodec;
using namespace pcodec::gan;

namespace {

DiscriminatorBank tiny_bank(uint64_t seed = 3) {
  DiscriminatorBank bank;
  bank.cfg.ch1 = 2;
  bank.cfg.ch2 = 3;
  Rng rng(seed);
  bank.init(rng);
  return bank;
}

std::vector<double> toy_signal(int n, uint64_t seed) {
  Rng rng(seed);
  std::vector<double> x(n);
  for (auto& e : x) e = 0.4 * std::sin(0.1 * rng.uniform(0, 50)) + 0.1 * rng.normal();
  return x;
}

ag::NodePtr wave_node(ag::Tape& tape, const std::vector<double>& x) {
  Tensor t = Tensor::zeros({1, int64_t(x.size())});
  t.data = x;
  return tape.constant(t);
}

SubOutput const_score(ag::Tape& tape, double value, int64_t n = 4) {
  SubOutput s;
  s.score = tape.constant(Tensor::full({1, n}, value));
  return s;
}

}  // namespace

TEST_SUITE("gan") {
  TEST_CASE("period view matches a naive truncating reshape") {
    Rng rng(7);
    std::vector<double> x(64);
    for (auto& e : x) e = rng.normal();
    ag::Tape tape;
    auto view = period_view(wave_node(tape, x), 11);
    REQUIRE(view->value.shape == std::vector<int64_t>{11, 5});  // floor(64/11) = 5
    for (int64_t c = 0; c < 11; ++c)
      for (int64_t t = 0; t < 5; ++t) REQUIRE(view->value.at(c, t) == x[t * 11 + c]);
  }

  TEST_CASE("discriminate yields 8 deterministic bundles") {
    auto bank = tiny_bank();
    auto x = toy_signal(256, 9);
    ag::Tape tape;
    Binding b = bind(bank.params, tape, false);
    auto subs = discriminate(bank.cfg, b, wave_node(tape, x));
    REQUIRE(subs.size() == 8);
    for (auto& s : subs) {
      CHECK(s.features.size() == 2);
      CHECK(s.score->value.all_finite());
    }
    auto subs2 = discriminate(bank.cfg, b, wave_node(tape, x));
    for (size_t i = 0; i < subs.size(); ++i)
      CHECK(subs[i].score->value.data == subs2[i].score->value.data);

    CHECK_THROWS_AS(discriminate(bank.cfg, b, wave_node(tape, std::vector<double>(20, 0.0))),
                    ShapeError);
  }

  TEST_CASE("hinge losses at hand-checked points") {
    ag::Tape tape;
    std::vector<SubOutput> real, fake;
    for (int i = 0; i < 8; ++i) {
      real.push_back(const_score(tape, 1.0));
      fake.push_back(const_score(tape, -1.0));
    }
    CHECK(d_hinge(real, fake)->value.data[0] == doctest::Approx(0.0));

    std::vector<SubOutput> rz, fz;
    for (int i = 0; i < 8; ++i) {
      rz.push_back(const_score(tape, 0.0));
      fz.push_back(const_score(tape, 0.0));
    }
    CHECK(d_hinge(rz, fz)->value.data[0] == doctest::Approx(2.0));
    CHECK(g_hinge(fz)->value.data[0] == doctest::Approx(0.0));
  }

  TEST_CASE("feature matching vanishes on identical features") {
    auto bank = tiny_bank();
    auto x = toy_signal(256, 11);
    ag::Tape tape;
    Binding b = bind(bank.params, tape, false);
    auto real = discriminate(bank.cfg, b, wave_node(tape, x));
    auto fake = discriminate(bank.cfg, b, wave_node(tape, x));
    CHECK(fm_l1(real, fake, 1.5)->value.data[0] == doctest::Approx(0.0));
  }

  TEST_CASE("d_loss gradchecks through the bank parameters") {
    auto bank = tiny_bank(5);
    auto xr = toy_signal(256, 13);
    auto xf = toy_signal(256, 14);
    std::vector<Tensor> params;
    for (auto& e : bank.params.entries()) params.push_back(e.value);
    auto err = ag::gradcheck_max_err(
        params,
        [&](ag::Tape& tape, const std::vector<ag::NodePtr>& p) {
          Binding b{&bank.params, p};
          auto real = discriminate(bank.cfg, b, wave_node(tape, xr));
          auto fake = discriminate(bank.cfg, b, wave_node(tape, xf));
          return d_hinge(real, fake);
        },
        1e-5, 6);
    CHECK(err < 1e-4);
  }

  TEST_CASE("g_loss and fm gradcheck through the fake input") {
    auto bank = tiny_bank(6);
    auto xr = toy_signal(256, 15);
    Tensor xf = Tensor::zeros({1, 256});
    for (int i = 0; i < 256; ++i) xf.data[i] = 0.3 * std::sin(0.2 * i);
    auto err = ag::gradcheck_max_err(
        {xf},
        [&](ag::Tape& tape, const std::vector<ag::NodePtr>& p) {
          Binding b = bind(bank.params, tape, false);
          auto real = discriminate(bank.cfg, b, wave_node(tape, xr));
          auto fake = discriminate(bank.cfg, b, p[0]);
          return ag::wsum({g_hinge(fake), fm_l1(real, fake, 1.3)}, {1.0, 1.0});
        },
        1e-5, 20);
    CHECK(err < 1e-4);
  }

  TEST_CASE("r1 penalty equals the direct finite-difference gradient norm") {
    auto bank = tiny_bank(8);
    auto x = toy_signal(256, 21);
    const double penalty = r1_penalty_value(bank, x);
    CHECK(penalty >= 0.0);

    // recompute d(sum scores)/dx by finite differences
    auto score_sum = [&](const std::vector<double>& xs) {
      ag::Tape tape;
      Binding b = bind(bank.params, tape, false);
      auto subs = discriminate(bank.cfg, b, wave_node(tape, xs));
      double s = 0.0;
      for (auto& sub : subs)
        for (double v : sub.score->value.data) s += v;
      return s;
    };
    double ss = 0.0;
    const double h = 1e-6;
    for (size_t i = 0; i < x.size(); ++i) {
      auto xp = x, xm = x;
      xp[i] += h;
      xm[i] -= h;
      const double g = (score_sum(xp) - score_sum(xm)) / (2.0 * h);
      ss += g * g;
    }
    CHECK(penalty == doctest::Approx(0.5 * bank.cfg.r1_gamma * ss).epsilon(1e-5));
  }

  TEST_CASE("r1 penalty is zero for a constant discriminator") {
    auto bank = tiny_bank(9);
    for (auto& e : bank.params.entries())
      if (e.name.find(".w") != std::string::npos)
        std::fill(e.value.data.begin(), e.value.data.end(), 0.0);
    CHECK(r1_penalty_value(bank, toy_signal(256, 22)) == doctest::Approx(0.0));
  }

  TEST_CASE("r1 penalty is input-independent when the bank is linear") {
    auto bank = tiny_bank(10);
    bank.cfg.leaky_slope = 1.0;  // degenerate slope makes every layer linear
    const double p1 = r1_penalty_value(bank, toy_signal(256, 23));
    const double p2 = r1_penalty_value(bank, toy_signal(256, 24));
    CHECK(p1 == doctest::Approx(p2).epsilon(1e-9));
    CHECK(p1 > 0.0);
  }

  TEST_CASE("r1 parameter gradients match finite differences of the penalty") {
    auto bank = tiny_bank(11);
    auto x = toy_signal(256, 25);
    bank.params.zero_grads();
    r1_accumulate_grads(bank, x, 1.0);
    const double h = 1e-5;
    int checked = 0;
    for (auto& e : bank.params.entries()) {
      if (e.name != "mpd2.l0.w" && e.name != "msd0.l1.w" && e.name != "mpd5.out.b") continue;
      for (size_t j = 0; j < e.value.data.size(); j += 7) {
        const double orig = e.value.data[j];
        e.value.data[j] = orig + h;
        const double lp = r1_penalty_value(bank, x);
        e.value.data[j] = orig - h;
        const double lm = r1_penalty_value(bank, x);
        e.value.data[j] = orig;
        const double fd = (lp - lm) / (2.0 * h);
        const double ad = e.grad.data[j];
        CHECK(std::abs(ad - fd) / std::max({1.0, std::abs(ad), std::abs(fd)}) < 1e-3);
        ++checked;
      }
    }
    CHECK(checked > 10);
  }

  TEST_CASE("gan gate pauses on strict threshold crossing") {
    GanConfig cfg;
    GanGateState s;
    s = gan_gate(s, 0.995, 1.0, 100, cfg);
    CHECK(s.paused_until == 600);
    CHECK(gate_paused(s, 100));
    CHECK(gate_paused(s, 599));
    CHECK_FALSE(gate_paused(s, 600));

    GanGateState below;
    below = gan_gate(below, 0.5, 1.0, 100, cfg);
    CHECK(below.paused_until == -1);

    GanGateState boundary;
    boundary = gan_gate(boundary, 0.99, 1.0, 100, cfg);
    CHECK(boundary.paused_until == -1);  // strict inequality

    // no extension while paused, but re-triggerable afterwards
    s = gan_gate(s, 0.999, 1.0, 200, cfg);
    CHECK(s.paused_until == 600);
    s = gan_gate(s, 0.999, 1.0, 700, cfg);
    CHECK(s.paused_until == 1200);

    CHECK_THROWS_AS(gan_gate(s, 0.5, 0.0, 0, cfg), ContractError);
  }

  TEST_CASE("fm weight ramps linearly inside [1.0, 1.5]") {
    GanConfig cfg;
    CHECK(fm_weight_at(cfg, 1000, 1000, 3000) == doctest::Approx(1.5));
    CHECK(fm_weight_at(cfg, 2000, 1000, 3000) == doctest::Approx(1.25));
    CHECK(fm_weight_at(cfg, 3000, 1000, 3000) == doctest::Approx(1.0));
    CHECK(fm_weight_at(cfg, 500, 1000, 3000) == doctest::Approx(1.5));   // clamped
    CHECK(fm_weight_at(cfg, 9000, 1000, 3000) == doctest::Approx(1.0));  // clamped
    for (int64_t s = 1000; s <= 3000; s += 100) {
      const double w = fm_weight_at(cfg, s, 1000, 3000);
      CHECK(w >= 1.0);
      CHECK(w <= 1.5);
    }
  }

  TEST_CASE("config validation") {
    GanConfig cfg;
    cfg.periods = {2, 3};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
}
