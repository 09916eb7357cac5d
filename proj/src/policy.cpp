#include "evseek/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "json.hpp"

namespace evseek {

std::string to_string(Action a) {
  switch (a) {
    case Action::ProbeGround: return "ProbeGround";
    case Action::Claim: return "Claim";
    case Action::Abstain: return "Abstain";
    case Action::Stop: return "Stop";
  }
  throw std::logic_error("unreachable action tag");
}

Action action_from_string(const std::string& name) {
  for (Action a : kAllActions)
    if (to_string(a) == name) return a;
  throw std::invalid_argument("unknown action '" + name + "'");
}

void validate(const PolicyConfig& cfg) {
  if (cfg.bins < 1) throw std::invalid_argument("policy.bins must be >= 1");
  if (cfg.t_max < 1) throw std::invalid_argument("policy.t_max must be >= 1");
}

PolicyParams PolicyParams::zeros(const PolicyConfig& cfg) {
  validate(cfg);
  PolicyParams p;
  p.bins = cfg.bins;
  p.t_max = cfg.t_max;
  p.theta.assign(p.parameter_count(), 0.0);
  return p;
}

std::size_t PolicyParams::row(const AgentState& s) const {
  if (s.belief_bin < 0 || s.belief_bin >= bins || s.t < 1 || s.t > t_max)
    throw std::out_of_range("agent state outside policy feature space");
  const std::size_t feature =
      (static_cast<std::size_t>(s.belief_bin) * t_max + (s.t - 1)) * 2 +
      (s.probed ? 1 : 0);
  return feature * kNumActions;
}

AgentState featurize(double p, int t, bool probed, const PolicyConfig& cfg) {
  validate(cfg);
  if (t < 1) throw std::invalid_argument("featurize: step t must be >= 1");
  const double q = std::min(std::max(p, 0.0), 1.0);
  AgentState s;
  s.belief_bin = std::min(static_cast<int>(q * cfg.bins), cfg.bins - 1);
  s.t = std::min(t, cfg.t_max);
  s.probed = probed;
  return s;
}

AgentState featurize(double p, int t, bool probed, const PolicyParams& params) {
  return featurize(p, t, probed, PolicyConfig{params.bins, params.t_max});
}

MaskedLogits masked_logits(const PolicyParams& params, const AgentState& s) {
  const std::size_t row = params.row(s);
  MaskedLogits out;
  for (int a = 0; a < kNumActions; ++a) {
    out.z[a] = params.theta[row + a];
    out.valid[a] = true;
  }
  if (!s.probed) {
    out.valid[static_cast<int>(Action::Claim)] = false;
    out.z[static_cast<int>(Action::Claim)] =
        -std::numeric_limits<double>::infinity();
  }
  return out;
}

namespace {

bool valid_logits_finite(const MaskedLogits& logits) {
  for (int a = 0; a < kNumActions; ++a)
    if (logits.valid[a] && !std::isfinite(logits.z[a])) return false;
  return true;
}

}  // namespace

std::array<double, kNumActions> action_probs(const MaskedLogits& logits) {
  std::array<double, kNumActions> probs{};
  int n_valid = 0;
  for (int a = 0; a < kNumActions; ++a) n_valid += logits.valid[a] ? 1 : 0;
  if (n_valid == 0) return probs;

  if (!valid_logits_finite(logits)) {
    for (int a = 0; a < kNumActions; ++a)
      probs[a] = logits.valid[a] ? 1.0 / n_valid : 0.0;
    return probs;
  }

  double zmax = -std::numeric_limits<double>::infinity();
  for (int a = 0; a < kNumActions; ++a)
    if (logits.valid[a]) zmax = std::max(zmax, logits.z[a]);
  double total = 0.0;
  for (int a = 0; a < kNumActions; ++a) {
    if (!logits.valid[a]) continue;
    probs[a] = std::exp(logits.z[a] - zmax);
    total += probs[a];
  }
  for (int a = 0; a < kNumActions; ++a) probs[a] /= total;
  return probs;
}

Action safe_sample(const MaskedLogits& logits, RngStream& rng) {
  const double u = rng.next_double();  // always consume exactly one word
  int n_valid = 0;
  for (int a = 0; a < kNumActions; ++a) n_valid += logits.valid[a] ? 1 : 0;
  if (n_valid == 0) return Action::Stop;

  const auto probs = action_probs(logits);
  double cum = 0.0;
  int last_valid = 0;
  for (int a = 0; a < kNumActions; ++a) {
    if (!logits.valid[a]) continue;
    last_valid = a;
    cum += probs[a];
    if (u < cum) return static_cast<Action>(a);
  }
  return static_cast<Action>(last_valid);  // u landed on rounding slack
}

double log_prob(const PolicyParams& params, const AgentState& s, Action a) {
  const MaskedLogits logits = masked_logits(params, s);
  const int ai = static_cast<int>(a);
  if (!logits.valid[ai])
    throw std::invalid_argument("log_prob: action '" + to_string(a) +
                                "' is masked in this state");
  double zmax = -std::numeric_limits<double>::infinity();
  for (int b = 0; b < kNumActions; ++b)
    if (logits.valid[b]) zmax = std::max(zmax, logits.z[b]);
  double total = 0.0;
  for (int b = 0; b < kNumActions; ++b)
    if (logits.valid[b]) total += std::exp(logits.z[b] - zmax);
  return (logits.z[ai] - zmax) - std::log(total);
}

double entropy(const PolicyParams& params, const AgentState& s) {
  const auto probs = action_probs(masked_logits(params, s));
  double h = 0.0;
  for (double p : probs)
    if (p > 0.0) h -= p * std::log(p);
  return h;
}

std::vector<double> grad_log_prob(const PolicyParams& params,
                                  const AgentState& s, Action a) {
  const MaskedLogits logits = masked_logits(params, s);
  const int ai = static_cast<int>(a);
  if (!logits.valid[ai])
    throw std::invalid_argument("grad_log_prob: masked action");
  const auto probs = action_probs(logits);
  std::vector<double> grad(params.theta.size(), 0.0);
  const std::size_t row = params.row(s);
  for (int b = 0; b < kNumActions; ++b) {
    if (!logits.valid[b]) continue;
    grad[row + b] = (b == ai ? 1.0 : 0.0) - probs[b];
  }
  return grad;
}

double kl_divergence(const PolicyParams& theta, const PolicyParams& beta,
                     const AgentState& s) {
  if (theta.bins != beta.bins || theta.t_max != beta.t_max)
    throw std::invalid_argument("kl_divergence: mismatched policy shapes");
  const MaskedLogits lt = masked_logits(theta, s);
  const MaskedLogits lb = masked_logits(beta, s);
  const auto pt = action_probs(lt);
  const auto pb = action_probs(lb);
  double kl = 0.0;
  for (int a = 0; a < kNumActions; ++a) {
    if (!lt.valid[a] || pt[a] <= 0.0) continue;
    kl += pt[a] * (std::log(pt[a]) - std::log(pb[a]));
  }
  return kl;
}

void save_policy(const PolicyParams& params, const std::string& path) {
  nlohmann::json rows = nlohmann::json::array();
  for (int f = 0; f < params.feature_count(); ++f) {
    nlohmann::json row = nlohmann::json::array();
    for (int a = 0; a < kNumActions; ++a)
      row.push_back(params.theta[static_cast<std::size_t>(f) * kNumActions + a]);
    rows.push_back(std::move(row));
  }
  nlohmann::json j{
      {"bins", params.bins}, {"t_max", params.t_max}, {"theta", rows}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_policy: cannot open " + path);
  out << j.dump(2) << '\n';
}

PolicyParams load_policy(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_policy: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw std::runtime_error(path + ": invalid policy file: " + e.what());
  }
  PolicyParams p;
  p.bins = j.at("bins").get<int>();
  p.t_max = j.at("t_max").get<int>();
  validate(PolicyConfig{p.bins, p.t_max});
  const auto& rows = j.at("theta");
  if (!rows.is_array() ||
      rows.size() != static_cast<std::size_t>(p.feature_count()))
    throw std::runtime_error(path + ": theta has wrong number of rows");
  p.theta.reserve(p.parameter_count());
  for (const auto& row : rows) {
    if (!row.is_array() || row.size() != kNumActions)
      throw std::runtime_error(path + ": theta row has wrong width");
    for (const auto& v : row) {
      const double x = v.get<double>();
      if (!std::isfinite(x))
        throw std::runtime_error(path + ": non-finite theta entry");
      p.theta.push_back(x);
    }
  }
  return p;
}

}  // namespace evseek
