#include "doctest.h"

#include <cmath>
#include <vector>

#include "evseek/rl.hpp"

using namespace evseek;

namespace {

LoopConfig proxy_loop() {
  LoopConfig cfg;
  cfg.evidence_source = EvidenceSource::Proxy;
  cfg.proxy.informativeness = 3.0;
  return cfg;
}

std::vector<Case> tiny_dataset(std::uint64_t seed, std::uint64_t n) {
  GenSpec spec;
  spec.seed = seed;
  spec.width = 8;   // images are irrelevant under the proxy; keep them small
  spec.height = 8;
  spec.roi_size = 2;
  return generate_dataset(spec, n);
}

RolloutRecord make_record(const PolicyParams& policy, const AgentState& s,
                          Action a, double adv) {
  RolloutRecord r;
  r.terminal_state = s;
  r.terminal_action = a;
  r.advantage = adv;
  r.standardized = adv;
  r.logp_theta = log_prob(policy, s, a);
  r.logp_beta = r.logp_theta;
  r.entropy = entropy(policy, s);
  r.kl = 0.0;
  return r;
}

}  // namespace

TEST_CASE("terminal reward is the negative squared belief error") {
  CHECK(terminal_reward(1.0, 1) == 0.0);
  CHECK(terminal_reward(0.0, 1) == -1.0);
  CHECK(terminal_reward(0.5, 0) == -0.25);
  CHECK(terminal_reward(0.5, 1) == -0.25);
  CHECK(terminal_reward(0.9, 1) == doctest::Approx(-0.01).epsilon(1e-12));
}

TEST_CASE("self-critical advantages subtract the group mean and sum to zero") {
  const auto adv = self_critical_advantages({-0.1, -0.3, -0.2, -0.4});
  REQUIRE(adv.size() == 4);
  CHECK(adv[0] == doctest::Approx(0.15).epsilon(1e-12));
  CHECK(adv[1] == doctest::Approx(-0.05).epsilon(1e-12));
  CHECK(adv[2] == doctest::Approx(0.05).epsilon(1e-12));
  CHECK(adv[3] == doctest::Approx(-0.15).epsilon(1e-12));
  double sum = 0.0;
  for (double a : adv) sum += a;
  CHECK(sum == doctest::Approx(0.0).epsilon(1e-12));
  CHECK_THROWS(self_critical_advantages({-0.5}));
  CHECK_THROWS(self_critical_advantages({}));
}

TEST_CASE("standardize divides by the population std with a floor") {
  const auto z = standardize({1.0, -1.0});
  CHECK(z[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(z[1] == doctest::Approx(-1.0).epsilon(1e-12));

  const auto z2 = standardize({2.0, 0.0, -2.0, 0.0});
  const double std4 = std::sqrt(2.0);  // population std of {2,0,-2,0}
  CHECK(z2[0] == doctest::Approx(2.0 / std4).epsilon(1e-12));

  // a constant batch collapses to zeros under the floor, not to huge values
  const auto z3 = standardize({0.0, 0.0, 0.0});
  for (double v : z3) CHECK(v == 0.0);
}

TEST_CASE("clipped importance weights are one-sided") {
  CHECK(clipped_is_weight(0.0, 0.0, 2.0) == 1.0);
  CHECK(clipped_is_weight(std::log(1.5), 0.0, 2.0) == doctest::Approx(1.5).epsilon(1e-12));
  CHECK(clipped_is_weight(std::log(5.0), 0.0, 2.0) == 2.0);   // clipped above
  CHECK(clipped_is_weight(std::log(0.1), 0.0, 2.0) == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("loss gradient matches finite differences") {
  const double h = 1e-5;
  TrainConfig tc;
  tc.eta = 0.013;
  tc.beta_kl = 0.21;
  tc.c_clip = 2.0;
  for (std::uint64_t trial = 0; trial < 50; ++trial) {
    PolicyConfig pc;
    pc.bins = 4;
    pc.t_max = 2;
    PolicyParams policy = PolicyParams::zeros(pc);
    PolicyParams behavior = PolicyParams::zeros(pc);
    RngStream rng(derive_key(trial, "fd"));
    for (double& v : policy.theta) v = 0.5 * rng.next_normal();
    for (double& v : behavior.theta) v = 0.5 * rng.next_normal();

    std::vector<RolloutRecord> batch;
    for (int i = 0; i < 6; ++i) {
      const AgentState s{static_cast<int>(rng.next_below(4)),
                         static_cast<int>(rng.next_below(2)) + 1,
                         rng.next_bernoulli(0.5)};
      const MaskedLogits ml = masked_logits(policy, s);
      const Action a = safe_sample(ml, rng);
      RolloutRecord r;
      r.terminal_state = s;
      r.terminal_action = a;
      r.advantage = rng.next_normal();
      r.standardized = rng.next_normal();
      // snapshots: the weight w is a constant built from these, not from
      // the live policy, so FD perturbation must not change it
      r.logp_theta = log_prob(policy, s, a) + 0.05 * rng.next_normal();
      r.logp_beta = log_prob(policy, s, a);
      r.entropy = entropy(policy, s);
      r.kl = 0.0;
      batch.push_back(r);
    }

    const LossGrad lg = loss_and_gradient(batch, policy, behavior, tc);
    REQUIRE(lg.grad.size() == policy.theta.size());
    // probe a handful of coordinates, including every terminal-state row
    for (const RolloutRecord& r : batch) {
      const std::size_t row = policy.row(r.terminal_state);
      for (int a = 0; a < kNumActions; ++a) {
        PolicyParams up = policy, dn = policy;
        up.theta[row + a] += h;
        dn.theta[row + a] -= h;
        const double fu = loss_and_gradient(batch, up, behavior, tc).loss;
        const double fd = loss_and_gradient(batch, dn, behavior, tc).loss;
        CHECK(lg.grad[row + a] == doctest::Approx((fu - fd) / (2 * h)).epsilon(2e-4));
      }
    }
  }
}

TEST_CASE("loss reduces to plain policy gradient when regularizers vanish") {
  PolicyConfig pc;
  pc.bins = 2;
  pc.t_max = 1;
  PolicyParams policy = PolicyParams::zeros(pc);
  TrainConfig tc;
  tc.eta = 0.0;
  tc.beta_kl = 0.0;
  const AgentState s{0, 1, true};
  std::vector<RolloutRecord> batch{make_record(policy, s, Action::Claim, 1.0)};
  const LossGrad lg = loss_and_gradient(batch, policy, policy, tc);
  // uniform over 4 actions: -w * A * log(1/4) with w = 1
  CHECK(lg.loss == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  // gradient of -log pi(claim): pi - onehot
  const std::size_t row = policy.row(s);
  CHECK(lg.grad[row + static_cast<int>(Action::Claim)] ==
        doctest::Approx(0.25 - 1.0).epsilon(1e-12));
  CHECK(lg.grad[row + static_cast<int>(Action::Stop)] ==
        doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("entropy bonus pushes toward uniform when nothing else matters") {
  PolicyConfig pc;
  pc.bins = 1;
  pc.t_max = 1;
  PolicyParams policy = PolicyParams::zeros(pc);
  const AgentState s{0, 1, true};
  const std::size_t row = policy.row(s);
  policy.theta[row + 0] = 1.0;  // tilt toward ProbeGround
  TrainConfig tc;
  tc.eta = 1.0;
  tc.beta_kl = 0.0;
  RolloutRecord r = make_record(policy, s, Action::ProbeGround, 0.0);
  r.standardized = 0.0;  // kill the PG term
  const LossGrad lg = loss_and_gradient({r}, policy, policy, tc);
  // descending the gradient should reduce the tilt
  CHECK(lg.grad[row + 0] > 0.0);
}

TEST_CASE("importance weights are exactly one right after a behavior sync") {
  const auto dataset = tiny_dataset(9, 40);
  TrainConfig tc;
  tc.steps = 6;
  tc.sync_period = 1;  // sync after every step
  tc.batch_size = 8;
  tc.k = 2;
  tc.seed = 5;
  PolicyConfig pc;
  std::vector<TrainStepLog> logs;
  train(dataset, tc, proxy_loop(), pc, [&](const TrainStepLog& l) { logs.push_back(l); });
  REQUIRE(logs.size() == 6);
  for (const TrainStepLog& l : logs) {
    CHECK(l.w_min == 1.0);
    CHECK(l.w_max == 1.0);
  }
}

TEST_CASE("without syncing the weights drift away from one but stay clipped") {
  const auto dataset = tiny_dataset(10, 40);
  TrainConfig tc;
  tc.steps = 12;
  tc.sync_period = 1000;  // never within this run
  tc.batch_size = 8;
  tc.k = 2;
  tc.seed = 6;
  tc.c_clip = 2.0;
  PolicyConfig pc;
  std::vector<TrainStepLog> logs;
  train(dataset, tc, proxy_loop(), pc, [&](const TrainStepLog& l) { logs.push_back(l); });
  REQUIRE(logs.size() == 12);
  CHECK(logs[0].w_min == 1.0);  // behavior starts equal to theta
  CHECK(logs[0].w_max == 1.0);
  bool drifted = false;
  for (const TrainStepLog& l : logs) {
    CHECK(l.w_max <= 2.0 + 1e-12);
    CHECK(l.w_min > 0.0);
    if (l.w_max != 1.0 || l.w_min != 1.0) drifted = true;
  }
  CHECK(drifted);
}

TEST_CASE("training is deterministic in its seed") {
  const auto dataset = tiny_dataset(11, 30);
  TrainConfig tc;
  tc.steps = 10;
  tc.batch_size = 6;
  tc.k = 3;
  tc.seed = 77;
  PolicyConfig pc;
  const PolicyParams a = train(dataset, tc, proxy_loop(), pc);
  const PolicyParams b = train(dataset, tc, proxy_loop(), pc);
  CHECK(a.theta == b.theta);
  TrainConfig other = tc;
  other.seed = 78;
  const PolicyParams d = train(dataset, other, proxy_loop(), pc);
  CHECK(a.theta != d.theta);
}

TEST_CASE("training raises the reward and the probe rate") {
  const auto dataset = tiny_dataset(12, 80);
  TrainConfig tc;
  tc.steps = 150;
  tc.batch_size = 16;
  tc.k = 4;
  tc.seed = 1;
  PolicyConfig pc;
  std::vector<TrainStepLog> logs;
  const PolicyParams trained =
      train(dataset, tc, proxy_loop(), pc,
            [&](const TrainStepLog& l) { logs.push_back(l); });
  REQUIRE(logs.size() == 150);
  double early_r = 0.0, late_r = 0.0, early_pg = 0.0, late_pg = 0.0;
  for (int i = 0; i < 10; ++i) {
    early_r += logs[i].mean_reward;
    early_pg += logs[i].pg_rate;
    late_r += logs[logs.size() - 1 - i].mean_reward;
    late_pg += logs[logs.size() - 1 - i].pg_rate;
  }
  CHECK(late_r / 10 > early_r / 10);
  CHECK(late_pg / 10 > early_pg / 10);
  // and the trained table actually prefers probing in the fresh state
  const AgentState fresh{5, 1, false};
  const auto probs = action_probs(masked_logits(trained, fresh));
  CHECK(probs[static_cast<int>(Action::ProbeGround)] > 0.5);
}

TEST_CASE("train demands a proxy evidence source") {
  const auto dataset = tiny_dataset(13, 10);
  TrainConfig tc;
  tc.steps = 1;
  PolicyConfig pc;
  LoopConfig wrong = proxy_loop();
  wrong.evidence_source = EvidenceSource::Kbcs;
  CHECK_THROWS_AS(train(dataset, tc, wrong, pc), std::invalid_argument);
}

TEST_CASE("per-step KL stays non-negative during training") {
  const auto dataset = tiny_dataset(14, 40);
  TrainConfig tc;
  tc.steps = 20;
  tc.sync_period = 7;
  tc.seed = 3;
  PolicyConfig pc;
  std::vector<TrainStepLog> logs;
  train(dataset, tc, proxy_loop(), pc, [&](const TrainStepLog& l) { logs.push_back(l); });
  for (const TrainStepLog& l : logs) CHECK(l.mean_kl >= -1e-12);
}

TEST_CASE("train config validation") {
  TrainConfig ok;
  CHECK_NOTHROW(validate(ok));
  TrainConfig bad = ok;
  bad.k = 1;
  CHECK_THROWS(validate(bad));
  bad = ok;
  bad.c_clip = 0.0;
  CHECK_THROWS(validate(bad));
  bad = ok;
  bad.learning_rate = 0.0;
  CHECK_THROWS(validate(bad));
  bad = ok;
  bad.batch_size = 0;
  CHECK_THROWS(validate(bad));
  bad = ok;
  bad.sync_period = 0;
  CHECK_THROWS(validate(bad));
}
