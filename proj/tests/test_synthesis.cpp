#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>
#include <random>
#include <tuple>

#include "safemr/synthesis.hpp"
#include "support.hpp"

using namespace safemr;
using testsupport::uniform;

namespace {

AgentConfig tiny_config() {
  AgentConfig c;
  c.policy_hidden = {8};
  c.critic_hidden = {8};
  c.multiplier_hidden = {8};
  c.batch_size = 16;
  c.buffer_capacity = 64;
  return c;
}

Batch feature_batch(std::mt19937_64& rng, int n, int obs_dim = 3) {
  std::vector<Transition> ts;
  for (int i = 0; i < n; ++i) {
    Transition t;
    t.obs = Eigen::VectorXd::NullaryExpr(obs_dim, [&] { return uniform(rng, -1, 1); });
    t.next_obs = t.obs;
    t.action = Eigen::VectorXd::Constant(1, uniform(rng, -1, 1));
    t.feat_now = {uniform(rng, 0.05, 1.5), uniform(rng, -2, 2)};
    t.feat_next = {uniform(rng, 0.05, 1.5), uniform(rng, -2, 2)};
    ts.push_back(t);
  }
  return Batch::from(ts);
}

Synthesizer make_synth(MultiTimescaleSchedule sched, MagRegWeights w, std::uint64_t seed = 1) {
  return Synthesizer(Agent(3, 1, 1.0, tiny_config(), sched.beta_pi, sched.beta_lambda, seed), SafetyIndexParams{},
                     sched, ZetaBox{}, w);
}

}  // namespace

TEST_CASE("schedule validation") {
  MultiTimescaleSchedule s;
  CHECK_NOTHROW(s.validate());
  s.m_lambda = s.m_pi;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s = {};
  s.beta_zeta = 0.0;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  ZetaBox box;
  box.n.lo = 0.5;
  CHECK_THROWS_AS(box.validate(), std::invalid_argument);
}

TEST_CASE("m = (1,2,4) over four steps gives 4/4/2/1 updates") {
  MultiTimescaleSchedule s;
  s.m_pi = 1;
  s.m_lambda = 2;
  s.m_phi = 4;
  Synthesizer syn = make_synth(s, {0.35, 0.15});
  std::mt19937_64 rng(2);
  const Batch b = feature_batch(rng, 16);
  int zeta_lines = 0;
  for (int step = 1; step <= 4; ++step) zeta_lines += syn.training_iteration(step, b).zeta.has_value();
  CHECK(syn.counts().critic == 4);
  CHECK(syn.counts().policy == 4);
  CHECK(syn.counts().multiplier == 2);
  CHECK(syn.counts().zeta == 1);
  CHECK(zeta_lines == 1);
  CHECK_THROWS_AS(syn.training_iteration(0, b), std::invalid_argument);
}

TEST_CASE("property: update counts equal floor(steps / period)") {
  std::mt19937_64 rng(3);
  const Batch b = feature_batch(rng, 16);
  for (const auto& [mp, ml, mf, steps] : {std::tuple{2, 4, 10, 37}, std::tuple{1, 3, 7, 50}, std::tuple{3, 5, 6, 31}}) {
    MultiTimescaleSchedule s;
    s.m_pi = mp;
    s.m_lambda = ml;
    s.m_phi = mf;
    Synthesizer syn = make_synth(s, {0.35, 0.15});
    for (int step = 1; step <= steps; ++step) syn.training_iteration(step, b);
    CHECK(syn.counts().critic == steps);
    CHECK(syn.counts().policy == steps / mp);
    CHECK(syn.counts().multiplier == steps / ml);
    CHECK(syn.counts().zeta == steps / mf);
  }
}

TEST_CASE("frozen certificates log constant values and never count updates") {
  MultiTimescaleSchedule s;
  s.freeze_zeta = true;
  Synthesizer syn = make_synth(s, {});
  std::mt19937_64 rng(4);
  const Batch b = feature_batch(rng, 16);
  int lines = 0;
  for (int step = 1; step <= 30; ++step) {
    const auto rep = syn.training_iteration(step, b);
    if (rep.zeta) {
      ++lines;
      CHECK(rep.zeta->sigma == 0.5);
      CHECK(rep.zeta->k == 1.0);
      CHECK(rep.zeta->n == 2.0);
    }
  }
  CHECK(lines == 3);
  CHECK(syn.counts().zeta == 0);
}

TEST_CASE("initial zeta outside the box is rejected unless frozen") {
  MultiTimescaleSchedule s;
  const SafetyIndexParams outside{0.0, 0.0, 1.0, 0.1, 0.05};
  CHECK_THROWS_AS(Synthesizer(Agent(3, 1, 1.0, tiny_config(), 1e-3, 1e-3, 0), outside, s, ZetaBox{}, {}),
                  std::invalid_argument);
  s.freeze_zeta = true;
  CHECK_NOTHROW(Synthesizer(Agent(3, 1, 1.0, tiny_config(), 1e-3, 1e-3, 0), outside, s, ZetaBox{}, {}));
}

TEST_CASE("property: zeta_grad matches central differences of zeta_loss") {
  std::mt19937_64 rng(5);
  const double h = 1e-6;
  int checked = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const Batch b = feature_batch(rng, 32);
    Eigen::VectorXd lambda = Eigen::VectorXd::NullaryExpr(32, [&] { return uniform(rng, 0, 2); });
    if (trial % 5 == 0) lambda.head(16).setZero();
    const SafetyIndexParams p{uniform(rng, 0.05, 0.9), uniform(rng, 0.05, 2.5), uniform(rng, 1.1, 2.9), 0.1, 0.05};
    const MagRegWeights w{uniform(rng, 0, 0.5), uniform(rng, 0, 0.5)};
    // Skip draws with a sample sitting on the max-branch kink.
    bool near_kink = false;
    for (std::size_t i = 0; i < b.feat_now.size(); ++i) {
      near_kink = near_kink || std::abs(phi(p, b.feat_now[i]) - p.eta_D) < 1e-4;
    }
    if (near_kink) continue;
    const ZetaGradient g = zeta_grad(b, lambda, p, w);
    auto shifted = [&](double ds, double dk, double dn) {
      SafetyIndexParams q = p;
      q.sigma += ds;
      q.k += dk;
      q.n += dn;
      return zeta_loss(b, lambda, q, w);
    };
    const double fs = (shifted(h, 0, 0) - shifted(-h, 0, 0)) / (2 * h);
    const double fk = (shifted(0, h, 0) - shifted(0, -h, 0)) / (2 * h);
    const double fn = (shifted(0, 0, h) - shifted(0, 0, -h)) / (2 * h);
    REQUIRE(std::abs(g.sigma - fs) < 1e-6);
    REQUIRE(std::abs(g.k - fk) < 1e-6);
    REQUIRE(std::abs(g.n - fn) < 1e-6);
    ++checked;
  }
  CHECK(checked > 200);
}

TEST_CASE("zero multipliers leave only the regularizer gradient") {
  std::mt19937_64 rng(6);
  const Batch b = feature_batch(rng, 16);
  const SafetyIndexParams p{0.3, 0.8, 2.0, 0.1, 0.05};
  const MagRegWeights w{0.35, 0.15};
  const ZetaGradient g = zeta_grad(b, Eigen::VectorXd::Zero(16), p, w);
  const ZetaGradient r = mag_reg_grad(p, w);
  CHECK(g.sigma == r.sigma);
  CHECK(g.k == r.k);
  CHECK(g.n == r.n);
  const ZetaGradient none = zeta_grad(b, Eigen::VectorXd::Zero(16), p, {});
  CHECK(none.norm() == 0.0);
  CHECK_THROWS_AS(zeta_grad(b, Eigen::VectorXd::Zero(3), p, w), std::invalid_argument);
}

TEST_CASE("zeta_step descends then clamps into the box") {
  const ZetaBox box;
  const SafetyIndexParams p{0.5, 1.0, 2.0, 0.1, 0.05};
  const SafetyIndexParams q = zeta_step(p, {1.0, -2.0, 0.5}, 0.1, box);
  CHECK(q.sigma == doctest::Approx(0.4));
  CHECK(q.k == doctest::Approx(1.2));
  CHECK(q.n == doctest::Approx(1.95));
  const SafetyIndexParams c = zeta_step(p, {100.0, -100.0, 100.0}, 1.0, box);
  CHECK(c.sigma == box.sigma.lo);
  CHECK(c.k == box.k.hi);
  CHECK(c.n == box.n.lo);
  CHECK(c.d_min == p.d_min);
  CHECK(c.eta_D == p.eta_D);
}

TEST_CASE("property: zeta stays in the box under arbitrary gradients") {
  std::mt19937_64 rng(7);
  const ZetaBox box;
  SafetyIndexParams p;
  for (int i = 0; i < 10000; ++i) {
    const ZetaGradient g{uniform(rng, -1e3, 1e3), uniform(rng, -1e3, 1e3), uniform(rng, -1e3, 1e3)};
    p = zeta_step(p, g, uniform(rng, 0, 1), box);
    REQUIRE(box.contains(p));
  }
}

TEST_CASE("property: regularizer-only steps strictly decrease mag_reg until the lower bounds") {
  const ZetaBox box;
  const MagRegWeights w{0.35, 0.15};
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    SafetyIndexParams p{uniform(rng, 0.02, 1.0), uniform(rng, 0.02, 3.0), uniform(rng, 1.0, 3.0), 0.1, 0.05};
    for (int i = 0; i < 5000; ++i) {
      const SafetyIndexParams next = zeta_step(p, mag_reg_grad(p, w), 1e-2, box);
      const bool at_floor = p.sigma == box.sigma.lo && p.k == box.k.lo;
      if (at_floor) {
        REQUIRE(mag_reg(next, w) <= mag_reg(p, w));
      } else {
        REQUIRE(mag_reg(next, w) < mag_reg(p, w));
      }
      p = next;
    }
    CHECK(p.sigma == box.sigma.lo);
    CHECK(p.k == box.k.lo);
  }
}

TEST_CASE("regularized and unregularized runs agree until the first zeta update") {
  MultiTimescaleSchedule s;
  std::mt19937_64 rng(9);
  std::vector<Batch> batches;
  for (int i = 0; i < 25; ++i) batches.push_back(feature_batch(rng, 16));
  Synthesizer reg = make_synth(s, {0.35, 0.15}, 21);
  Synthesizer plain = make_synth(s, {}, 21);
  for (int step = 1; step <= 25; ++step) {
    reg.training_iteration(step, batches[static_cast<std::size_t>(step - 1)]);
    plain.training_iteration(step, batches[static_cast<std::size_t>(step - 1)]);
    const bool identical_zeta = reg.zeta().sigma == plain.zeta().sigma && reg.zeta().k == plain.zeta().k &&
                                reg.zeta().n == plain.zeta().n;
    const bool identical_policy = reg.agent().nets().policy.params() == plain.agent().nets().policy.params();
    if (step < s.m_phi) {
      REQUIRE(identical_zeta);
      REQUIRE(identical_policy);
    }
    if (step == s.m_phi) CHECK(!identical_zeta);
  }
  // A different certificate changes the constraint critic targets from then on.
  CHECK(reg.agent().nets().q_constraint.params() != plain.agent().nets().q_constraint.params());
}

TEST_CASE("zero weights reproduce the unregularized trajectory exactly") {
  MultiTimescaleSchedule s;
  std::mt19937_64 rng(10);
  std::vector<Batch> batches;
  for (int i = 0; i < 40; ++i) batches.push_back(feature_batch(rng, 16));
  Synthesizer a = make_synth(s, {0.0, 0.0}, 5);
  Synthesizer b = make_synth(s, {}, 5);
  for (int step = 1; step <= 40; ++step) {
    const auto ra = a.training_iteration(step, batches[static_cast<std::size_t>(step - 1)]);
    const auto rb = b.training_iteration(step, batches[static_cast<std::size_t>(step - 1)]);
    REQUIRE(ra.zeta.has_value() == rb.zeta.has_value());
    if (ra.zeta) {
      REQUIRE(ra.zeta->sigma == rb.zeta->sigma);
      REQUIRE(ra.zeta->k == rb.zeta->k);
      REQUIRE(ra.zeta->n == rb.zeta->n);
      REQUIRE(ra.zeta->mag_reg == 0.0);
    }
  }
}

TEST_CASE("non-finite inputs trip a guard") {
  MultiTimescaleSchedule s;
  Synthesizer syn = make_synth(s, {0.35, 0.15});
  std::mt19937_64 rng(11);
  Batch b = feature_batch(rng, 16);
  b.reward[3] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS(syn.training_iteration(1, b));
}

TEST_CASE("checkpoints restore zeta and counters") {
  testsupport::TempDir dir("synthesis");
  MultiTimescaleSchedule s;
  Synthesizer syn = make_synth(s, {0.35, 0.15});
  std::mt19937_64 rng(12);
  const Batch b = feature_batch(rng, 16);
  for (int step = 1; step <= 20; ++step) syn.training_iteration(step, b);
  syn.save_checkpoint(dir.path(), 1234);
  Synthesizer other = make_synth(s, {0.35, 0.15}, 77);
  CHECK(other.load_checkpoint(dir.path()) == 1234);
  CHECK(other.zeta().sigma == syn.zeta().sigma);
  CHECK(other.zeta().k == syn.zeta().k);
  CHECK(other.zeta().n == syn.zeta().n);
  CHECK(other.counts().zeta == 2);
  CHECK(other.agent().nets().policy.params() == syn.agent().nets().policy.params());
  CHECK(read_checkpoint_zeta(dir.path()).sigma == syn.zeta().sigma);
}
