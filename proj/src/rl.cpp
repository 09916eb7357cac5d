#include "evseek/rl.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace evseek {

void validate(const TrainConfig& cfg) {
  if (cfg.k < 2) throw std::invalid_argument("train.k must be >= 2");
  if (!(cfg.c_clip > 0.0))
    throw std::invalid_argument("train.c_clip must be > 0");
  if (cfg.eta < 0.0) throw std::invalid_argument("train.eta must be >= 0");
  if (cfg.beta_kl < 0.0)
    throw std::invalid_argument("train.beta_kl must be >= 0");
  if (!(cfg.learning_rate > 0.0))
    throw std::invalid_argument("train.learning_rate must be > 0");
  if (cfg.batch_size < 1)
    throw std::invalid_argument("train.batch_size must be >= 1");
  if (cfg.sync_period < 1)
    throw std::invalid_argument("train.sync_period must be >= 1");
  if (cfg.steps < 0) throw std::invalid_argument("train.steps must be >= 0");
  if (!std::isfinite(cfg.c_clip) || !std::isfinite(cfg.eta) ||
      !std::isfinite(cfg.beta_kl) || !std::isfinite(cfg.learning_rate))
    throw std::invalid_argument("train coefficients must be finite");
}

double terminal_reward(double p_final, int g) {
  const double d = p_final - static_cast<double>(g);
  return -d * d;
}

std::vector<double> self_critical_advantages(
    const std::vector<double>& rewards) {
  if (rewards.size() < 2)
    throw std::invalid_argument(
        "self_critical_advantages: need K >= 2 rewards");
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= static_cast<double>(rewards.size());
  std::vector<double> adv(rewards.size());
  for (std::size_t i = 0; i < rewards.size(); ++i) adv[i] = rewards[i] - mean;
  return adv;
}

std::vector<double> standardize(const std::vector<double>& advantages) {
  if (advantages.empty())
    throw std::invalid_argument("standardize: empty batch");
  const double n = static_cast<double>(advantages.size());
  double mean = 0.0;
  for (double a : advantages) mean += a;
  mean /= n;
  double var = 0.0;
  for (double a : advantages) var += (a - mean) * (a - mean);
  var /= n;  // population variance
  const double std_dev = std::sqrt(var);
  std::vector<double> out(advantages.size(), 0.0);
  if (std_dev < 1e-8) return out;  // zero-variance guard
  for (std::size_t i = 0; i < advantages.size(); ++i)
    out[i] = (advantages[i] - mean) / std_dev;
  return out;
}

double clipped_is_weight(double logp_theta, double logp_beta, double c_clip) {
  return std::min(std::exp(logp_theta - logp_beta), c_clip);
}

LossGrad loss_and_gradient(const std::vector<RolloutRecord>& batch,
                           const PolicyParams& policy,
                           const PolicyParams& behavior,
                           const TrainConfig& cfg) {
  if (batch.empty())
    throw std::invalid_argument("loss_and_gradient: empty batch");
  LossGrad out;
  out.grad.assign(policy.theta.size(), 0.0);
  const double inv_n = 1.0 / static_cast<double>(batch.size());

  for (const RolloutRecord& rec : batch) {
    const AgentState& s = rec.terminal_state;
    const MaskedLogits lt = masked_logits(policy, s);
    const MaskedLogits lb = masked_logits(behavior, s);
    const auto pt = action_probs(lt);
    const auto pb = action_probs(lb);
    const int ai = static_cast<int>(rec.terminal_action);
    if (!lt.valid[ai])
      throw std::invalid_argument(
          "loss_and_gradient: terminal action masked at its state");

    const double logp = std::log(pt[ai]);
    double h = 0.0;
    double kl = 0.0;
    for (int a = 0; a < kNumActions; ++a) {
      if (!lt.valid[a] || pt[a] <= 0.0) continue;
      h -= pt[a] * std::log(pt[a]);
      kl += pt[a] * (std::log(pt[a]) - std::log(pb[a]));
    }

    const double w =
        clipped_is_weight(rec.logp_theta, rec.logp_beta, cfg.c_clip);
    out.loss += inv_n * (-w * rec.standardized * logp - cfg.eta * h +
                         cfg.beta_kl * kl);

    const std::size_t row = policy.row(s);
    for (int a = 0; a < kNumActions; ++a) {
      if (!lt.valid[a]) continue;
      const double indicator = (a == ai) ? 1.0 : 0.0;
      double g = -w * rec.standardized * (indicator - pt[a]);
      if (pt[a] > 0.0) {
        const double log_pa = std::log(pt[a]);
        g += cfg.eta * pt[a] * (log_pa + h);
        g += cfg.beta_kl * pt[a] * (log_pa - std::log(pb[a]) - kl);
      }
      out.grad[row + a] += inv_n * g;
    }
  }
  return out;
}

PolicyParams train(const std::vector<Case>& dataset, const TrainConfig& cfg,
                   const LoopConfig& loop_cfg, const PolicyConfig& policy_cfg,
                   const TrainLogger& logger) {
  validate(cfg);
  validate(policy_cfg);
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  if (loop_cfg.evidence_source != EvidenceSource::Proxy)
    throw std::invalid_argument(
        "train: rollouts require evidence_source = proxy");
  validate(loop_cfg);

  PolicyParams theta = PolicyParams::zeros(policy_cfg);
  PolicyParams behavior = theta;
  const std::uint64_t minibatch_key = derive_key(cfg.seed, "minibatch");
  const std::uint64_t rollout_key = derive_key(cfg.seed, "rollout");

  for (int step = 0; step < cfg.steps; ++step) {
    RngStream mb(derive_key(minibatch_key, static_cast<std::uint64_t>(step)));
    std::vector<RolloutRecord> records;
    records.reserve(static_cast<std::size_t>(cfg.batch_size) * cfg.k);
    std::vector<double> all_advantages;
    all_advantages.reserve(records.capacity());
    double reward_sum = 0.0;
    int probed_count = 0;

    const std::uint64_t step_key =
        derive_key(rollout_key, static_cast<std::uint64_t>(step));
    for (int slot = 0; slot < cfg.batch_size; ++slot) {
      const Case& c = dataset[mb.next_below(dataset.size())];
      const std::uint64_t slot_key =
          derive_key(step_key, static_cast<std::uint64_t>(slot));
      std::vector<double> rewards(cfg.k);
      for (int k = 0; k < cfg.k; ++k) {
        RngStream er(derive_key(slot_key, static_cast<std::uint64_t>(k)));
        const EpisodeResult ep = run_episode(c, theta, loop_cfg, er);
        rewards[k] = terminal_reward(ep.p_final, c.label);
        reward_sum += rewards[k];
        probed_count += ep.probed ? 1 : 0;

        const TraceStep& last = ep.steps.back();
        RolloutRecord rec;
        rec.terminal_state =
            featurize(last.p_before, last.t, last.probed_before, theta);
        rec.terminal_action = last.action;
        rec.logp_theta = log_prob(theta, rec.terminal_state, last.action);
        rec.logp_beta = log_prob(behavior, rec.terminal_state, last.action);
        rec.entropy = entropy(theta, rec.terminal_state);
        rec.kl = kl_divergence(theta, behavior, rec.terminal_state);
        records.push_back(std::move(rec));
      }
      const std::vector<double> adv = self_critical_advantages(rewards);
      for (int k = 0; k < cfg.k; ++k) {
        records[records.size() - cfg.k + k].advantage = adv[k];
        all_advantages.push_back(adv[k]);
      }
    }

    const std::vector<double> standardized = standardize(all_advantages);
    for (std::size_t i = 0; i < records.size(); ++i)
      records[i].standardized = standardized[i];

    const LossGrad lg = loss_and_gradient(records, theta, behavior, cfg);
    for (std::size_t i = 0; i < theta.theta.size(); ++i)
      theta.theta[i] -= cfg.learning_rate * lg.grad[i];

    if (logger) {
      TrainStepLog log;
      log.step = step;
      log.loss = lg.loss;
      const double n_records = static_cast<double>(records.size());
      log.mean_reward = reward_sum / n_records;
      log.pg_rate = static_cast<double>(probed_count) / n_records;
      double w_min = std::numeric_limits<double>::infinity();
      double w_max = -std::numeric_limits<double>::infinity();
      for (const RolloutRecord& rec : records) {
        log.mean_entropy += rec.entropy / n_records;
        log.mean_kl += rec.kl / n_records;
        const double w =
            clipped_is_weight(rec.logp_theta, rec.logp_beta, cfg.c_clip);
        w_min = std::min(w_min, w);
        w_max = std::max(w_max, w);
      }
      log.w_min = w_min;
      log.w_max = w_max;
      logger(log);
    }

    if ((step + 1) % cfg.sync_period == 0) behavior = theta;
  }
  return theta;
}

}  // namespace evseek
