#pragma once

// Log-linear action policy over (belief bin, step, probed) features: masked
// logits, safe sampling, log-probabilities, entropy, KL and their analytic
// gradients. Stands in for an action-token head; the loop and trainer only
// see this interface.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "evseek/rng.hpp"

namespace evseek {

enum class Action { ProbeGround = 0, Claim = 1, Abstain = 2, Stop = 3 };
inline constexpr int kNumActions = 4;
inline constexpr std::array<Action, kNumActions> kAllActions = {
    Action::ProbeGround, Action::Claim, Action::Abstain, Action::Stop};

std::string to_string(Action a);
Action action_from_string(const std::string& name);

struct PolicyConfig {
  int bins = 10;   // equal-width belief bins over [0, 1]
  int t_max = 3;   // step feature cap
};

void validate(const PolicyConfig& cfg);

struct AgentState {
  int belief_bin = 0;  // in [0, bins)
  int t = 1;           // clamped to [1, t_max]
  bool probed = false;
};

struct PolicyParams {
  int bins = 10;
  int t_max = 3;
  std::vector<double> theta;  // [bins * t_max * 2][kNumActions], row-major

  static PolicyParams zeros(const PolicyConfig& cfg);

  int feature_count() const { return bins * t_max * 2; }
  std::size_t parameter_count() const {
    return static_cast<std::size_t>(feature_count()) * kNumActions;
  }
  // Offset of the state's action row inside theta.
  std::size_t row(const AgentState& s) const;
};

// belief_bin = floor(p * bins) clipped to bins-1; t clamped to t_max.
AgentState featurize(double p, int t, bool probed, const PolicyConfig& cfg);
AgentState featurize(double p, int t, bool probed, const PolicyParams& params);

struct MaskedLogits {
  std::array<double, kNumActions> z{};
  std::array<bool, kNumActions> valid{};
};

// Claim is masked iff probed = false; everything else is valid. The mask is
// an explicit valid flag; masked z entries are never exponentiated.
MaskedLogits masked_logits(const PolicyParams& params, const AgentState& s);

// Softmax probabilities over valid entries (0 for invalid). If any valid
// logit is non-finite, falls back to uniform over valid actions.
std::array<double, kNumActions> action_probs(const MaskedLogits& logits);

// Categorical draw over valid actions; consumes exactly one word from the
// stream. Non-finite valid logits fall back to uniform; if nothing is valid,
// returns Stop.
Action safe_sample(const MaskedLogits& logits, RngStream& rng);

// Throw if the action is masked in this state.
double log_prob(const PolicyParams& params, const AgentState& s, Action a);
double entropy(const PolicyParams& params, const AgentState& s);

// d log pi(a|s) / d theta, full table: row entries 1{a'=a} - pi(a'|s) over
// valid a', zero elsewhere.
std::vector<double> grad_log_prob(const PolicyParams& params,
                                  const AgentState& s, Action a);

// KL(pi_theta(.|s) || pi_beta(.|s)) over the state's valid actions.
double kl_divergence(const PolicyParams& theta, const PolicyParams& beta,
                     const AgentState& s);

// JSON file {bins, t_max, theta: [[...] per feature row]}.
void save_policy(const PolicyParams& params, const std::string& path);
PolicyParams load_policy(const std::string& path);

}  // namespace evseek
