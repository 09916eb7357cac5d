#include "evseek/belief.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace evseek {

void validate(const FusionConfig& cfg) {
  if (cfg.alpha < 0.0 || cfg.alpha > 1.0)
    throw std::invalid_argument("fusion.alpha must be in [0, 1]");
  if (cfg.gate_threshold < 0.0)
    throw std::invalid_argument("fusion.gate_threshold must be >= 0");
  if (!(cfg.gamma > 1.0))
    throw std::invalid_argument("fusion.gamma must be > 1");
  if (!(cfg.epsilon > 0.0))
    throw std::invalid_argument("fusion.epsilon must be > 0");
}

double clamp_probability(double p, double eps) {
  return std::min(std::max(p, eps), 1.0 - eps);
}

double logit(double p) {
  const double q = clamp_probability(p);
  return std::log(q / (1.0 - q));
}

double sigmoid(double m) {
  if (!std::isfinite(m)) throw std::invalid_argument("sigmoid: non-finite score");
  if (m >= 0.0) return 1.0 / (1.0 + std::exp(-m));
  const double e = std::exp(m);
  return e / (1.0 + e);
}

double apply_calibration(double m_raw, const CalibrationParams& params) {
  if (!(params.temperature > 0.0))
    throw std::invalid_argument("calibration temperature must be > 0");
  return sigmoid(m_raw / params.temperature + params.bias);
}

namespace {

// Gradient descent on mean NLL of a two-parameter logistic model
// p = sigmoid(scale * m + bias). fit_bias=false freezes bias at 0.
std::pair<double, double> fit_logistic(
    const std::vector<std::pair<double, int>>& pairs, bool fit_bias) {
  constexpr int kIterations = 500;
  constexpr double kLearningRate = 0.1;

  double scale = 1.0;  // 1/T
  double bias = 0.0;
  const double n = static_cast<double>(pairs.size());
  for (int it = 0; it < kIterations; ++it) {
    double g_scale = 0.0;
    double g_bias = 0.0;
    for (const auto& [m, g] : pairs) {
      const double p = sigmoid(scale * m + bias);
      const double r = p - static_cast<double>(g);
      g_scale += r * m;
      g_bias += r;
    }
    scale -= kLearningRate * g_scale / n;
    if (fit_bias) bias -= kLearningRate * g_bias / n;
  }
  return {scale, bias};
}

}  // namespace

CalibrationParams fit_calibration(
    const std::vector<std::pair<double, int>>& pairs, std::string concept_id) {
  if (pairs.size() < 2)
    throw std::invalid_argument("fit_calibration: need at least 2 pairs");
  bool any_pos = false, any_neg = false;
  for (const auto& [m, g] : pairs) (g != 0 ? any_pos : any_neg) = true;
  if (!any_pos || !any_neg)
    throw std::invalid_argument(
        "fit_calibration: degenerate fit, input contains a single class");

  const auto [scale, bias] = fit_logistic(pairs, /*fit_bias=*/true);
  if (!(scale > 0.0))
    throw std::runtime_error(
        "fit_calibration: fitted scale is non-positive; scores are "
        "anti-correlated with labels");
  return CalibrationParams{std::move(concept_id), 1.0 / scale, bias};
}

double fit_overlay_temperature(
    const std::vector<std::pair<double, int>>& pairs) {
  if (pairs.size() < 2)
    throw std::invalid_argument("fit_overlay_temperature: need at least 2 pairs");
  bool any_pos = false, any_neg = false;
  for (const auto& [m, g] : pairs) (g != 0 ? any_pos : any_neg) = true;
  if (!any_pos || !any_neg)
    throw std::invalid_argument(
        "fit_overlay_temperature: degenerate fit, single class");

  std::vector<std::pair<double, int>> logits;
  logits.reserve(pairs.size());
  for (const auto& [p, g] : pairs) logits.emplace_back(logit(p), g);
  const auto [scale, bias] = fit_logistic(logits, /*fit_bias=*/false);
  (void)bias;
  if (!(scale > 0.0))
    throw std::runtime_error("fit_overlay_temperature: non-positive scale");
  return 1.0 / scale;
}

double fuse_mix(double p, double p_evidence, double alpha) {
  return (1.0 - alpha) * p + alpha * p_evidence;
}

GateResult fuse_gate(double p, double p_evidence, double alpha,
                     double gate_threshold) {
  if (std::abs(p_evidence - p) >= gate_threshold)
    return {fuse_mix(p, p_evidence, alpha), true};
  return {p, false};
}

double sharpen(double p, double gamma) {
  if (!(gamma > 1.0)) throw std::invalid_argument("sharpen: gamma must be > 1");
  return sigmoid(gamma * logit(p));
}

double temperature_overlay(double p, double t_overlay) {
  if (!(t_overlay > 0.0))
    throw std::invalid_argument("temperature_overlay: temperature must be > 0");
  return sigmoid(logit(p) / t_overlay);
}

}  // namespace evseek
