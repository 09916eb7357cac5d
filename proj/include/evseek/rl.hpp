#pragma once

// Conservative policy-gradient alignment: K rollouts per example with a
// self-critical baseline, minibatch advantage standardization, one-sided
// clipped importance weights against a periodically synced behavior policy,
// entropy bonus and KL penalty, plain gradient descent.

#include <cstdint>
#include <functional>
#include <vector>

#include "evseek/loop.hpp"
#include "evseek/policy.hpp"

namespace evseek {

struct TrainConfig {
  int k = 4;                  // rollouts per example, >= 2
  double c_clip = 2.0;        // upper clip on the IS ratio, > 0
  double eta = 0.01;          // entropy bonus coefficient, >= 0
  double beta_kl = 0.1;       // KL penalty coefficient, >= 0
  double learning_rate = 0.1; // > 0
  int batch_size = 16;        // examples per step, >= 1
  int sync_period = 10;       // behavior sync every this many steps, >= 1
  int steps = 300;            // total gradient steps
  std::uint64_t seed = 0;
};

void validate(const TrainConfig& cfg);

// Terminal-step data for one rollout; only this enters the loss.
struct RolloutRecord {
  double advantage = 0.0;     // R_k - group mean
  double standardized = 0.0;  // batch-standardized advantage
  AgentState terminal_state;
  Action terminal_action = Action::Stop;
  double logp_theta = 0.0;  // snapshot under the collecting policy
  double logp_beta = 0.0;   // snapshot under the behavior policy
  double entropy = 0.0;
  double kl = 0.0;
};

// -(p_final - g)^2.
double terminal_reward(double p_final, int g);

// A_k = R_k - mean(R); requires K >= 2; outputs sum to 0.
std::vector<double> self_critical_advantages(const std::vector<double>& rewards);

// (A - mean) / max(population std, 1e-8); all zeros when the spread is
// below the floor.
std::vector<double> standardize(const std::vector<double>& advantages);

// min(exp(logp_theta - logp_beta), c_clip); one-sided.
double clipped_is_weight(double logp_theta, double logp_beta, double c_clip);

struct LossGrad {
  double loss = 0.0;
  std::vector<double> grad;  // same shape as policy.theta
};

// L = mean(-w * A~ * log pi_theta(a|s)) - eta * mean(H) + beta * mean(KL),
// with w computed from the stored log-prob snapshots and treated as a
// constant; gradients flow analytically through log pi_theta, H and KL
// evaluated at the current policy.
LossGrad loss_and_gradient(const std::vector<RolloutRecord>& batch,
                           const PolicyParams& policy,
                           const PolicyParams& behavior,
                           const TrainConfig& cfg);

struct TrainStepLog {
  int step = 0;
  double loss = 0.0;
  double mean_reward = 0.0;
  double mean_entropy = 0.0;
  double mean_kl = 0.0;
  double pg_rate = 0.0;  // fraction of rollouts that probed
  double w_min = 0.0;
  double w_max = 0.0;
};

using TrainLogger = std::function<void(const TrainStepLog&)>;

// Starts from theta = 0 with behavior = theta; per step samples a minibatch
// (with replacement), rolls K proxy-evidence episodes per example, takes one
// gradient-descent step, and copies behavior <- theta after every
// sync_period-th step. Deterministic given cfg.seed.
// Requires loop_cfg.evidence_source == Proxy.
PolicyParams train(const std::vector<Case>& dataset, const TrainConfig& cfg,
                   const LoopConfig& loop_cfg, const PolicyConfig& policy_cfg,
                   const TrainLogger& logger = {});

}  // namespace evseek
