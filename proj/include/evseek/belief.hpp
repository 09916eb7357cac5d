#pragma once

// Scalar belief math: probability/log-odds transforms, evidence fusion,
// belief sharpening, score calibration and the test-time temperature overlay.
// Everything here is a pure function on values.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace evseek {

// Probabilities are clamped into [kLogitEps, 1 - kLogitEps] before any
// log-odds transform so boundary inputs never produce infinities.
inline constexpr double kLogitEps = 1e-6;

struct Belief {
  double p = 0.5;
};

struct CalibrationParams {
  std::string concept_id;
  double temperature = 1.0;  // T_c > 0
  double bias = 0.0;         // b_c

  static CalibrationParams identity(std::string concept_id) {
    return CalibrationParams{std::move(concept_id), 1.0, 0.0};
  }
};

struct FusionConfig {
  double alpha = 0.5;          // mix weight in [0, 1]
  double gate_threshold = 0.1; // adopt iff |p_evidence - p| >= gate_threshold
  double gamma = 2.0;          // sharpening exponent, > 1
  double epsilon = kLogitEps;  // logit clamp
};

void validate(const FusionConfig& cfg);

double clamp_probability(double p, double eps = kLogitEps);

// ln(p / (1 - p)) after clamping.
double logit(double p);

// 1 / (1 + exp(-m)). Throws on non-finite input.
double sigmoid(double m);

// sigmoid(m_raw / T_c + b_c). Throws if T_c <= 0.
double apply_calibration(double m_raw, const CalibrationParams& params);

// Fits (T_c, b_c) by plain gradient descent on the mean negative
// log-likelihood, parameterized as (1/T_c, b_c) from (1, 0). Deterministic:
// fixed 500 iterations at learning rate 0.1. Throws if the input does not
// contain both labels.
CalibrationParams fit_calibration(
    const std::vector<std::pair<double, int>>& pairs, std::string concept_id);

// Fits a single post-hoc overlay temperature T minimizing the mean negative
// log-likelihood of labels under sigmoid(logit(p) / T). Same optimizer
// settings as fit_calibration.
double fit_overlay_temperature(const std::vector<std::pair<double, int>>& pairs);

// (1 - alpha) * p + alpha * p_evidence.
double fuse_mix(double p, double p_evidence, double alpha);

// Adopts evidence via fuse_mix iff |p_evidence - p| >= gate_threshold.
struct GateResult {
  double p;
  bool adopted;
};
GateResult fuse_gate(double p, double p_evidence, double alpha,
                     double gate_threshold);

// sigmoid(gamma * logit(p)) with gamma > 1; fixes 0.5, pushes p away from it.
double sharpen(double p, double gamma);

// sigmoid(logit(p) / t_overlay) with t_overlay > 0.
double temperature_overlay(double p, double t_overlay);

}  // namespace evseek
