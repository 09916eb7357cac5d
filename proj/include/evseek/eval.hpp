#pragma once

// Evaluation protocol: Brier / ECE / reliability bins, behavioral rates, the
// four named variants, the agent-level ROI-masking intervention with its
// placebo control, tool-level occlusion drops with Cohen's d, gate and step
// sweeps, and the post-hoc temperature overlay.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "evseek/loop.hpp"

namespace evseek {

enum class Variant { NoPG, PriorMix, KbcsMix, KbcsGate };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& name);

// Applies the variant's evidence source / fusion mode on top of base.
LoopConfig variant_loop_config(const LoopConfig& base, Variant v);

struct Metrics {
  double brier = 0.0;
  double ece = 0.0;
  double pg_rate = 0.0;
  double adoption_rate = 0.0;
  double avg_steps = 0.0;
  double mean_wall_ms = 0.0;  // measured; kept out of deterministic artifacts
  std::size_t n = 0;
};

struct ReliabilityBin {
  int bin_index = 0;
  double mean_confidence = 0.0;
  double empirical_accuracy = 0.0;
  std::size_t count = 0;
};

inline constexpr int kEceBins = 15;

double brier(const std::vector<double>& preds, const std::vector<int>& labels);

// Equal-width bins on the predicted probability; p = 1 lands in the last
// bin. Empty bins are kept (count 0) so bin_index always runs 0..n_bins-1.
std::vector<ReliabilityBin> reliability_bins(const std::vector<double>& preds,
                                             const std::vector<int>& labels,
                                             int n_bins = kEceBins);

// Sum over non-empty bins of (count/n) * |confidence - accuracy|.
double ece(const std::vector<ReliabilityBin>& bins);

struct BehavioralRates {
  double pg_rate = 0.0;
  double adoption_rate = 0.0;
  double avg_steps = 0.0;
  double mean_wall_ms = 0.0;
};

BehavioralRates behavioral_rates(const std::vector<EpisodeResult>& episodes);

struct EvalResult {
  Metrics metrics;
  std::vector<ReliabilityBin> bins;
  std::vector<EpisodeResult> episodes;
};

EvalResult evaluate(const std::vector<Case>& cases,
                    const PolicyParams& policy, const LoopConfig& base,
                    Variant variant, std::uint64_t seed, int workers = 1);

struct InterventionReport {
  std::size_t cohort_size = 0;        // episodes with an adopted, ROI-bearing probe
  std::size_t n_excluded_no_roi = 0;  // adopted episodes with no maskable ROI
  bool placebo = false;
  // NaN when cohort_size == 0 (serialized as null).
  double brier_before = 0.0, brier_after = 0.0, delta_brier = 0.0;
  double ece_before = 0.0, ece_after = 0.0, delta_ece = 0.0;
};

// Pass 1 evaluates normally; pass 2 re-runs the adopted cohort with the same
// episode stream keys on images masked (fill 0) at the first adopted ROI —
// or, in placebo mode, at a random ROI disjoint from both the adopted ROI
// and any planted gt_roi.
InterventionReport intervene(const std::vector<Case>& cases,
                             const PolicyParams& policy,
                             const LoopConfig& base, Variant variant,
                             std::uint64_t seed, bool placebo = false,
                             int workers = 1);

enum class RoiSource { Gt, Pred };

std::string to_string(RoiSource s);
RoiSource roi_source_from_string(const std::string& name);

struct OcclusionReport {
  double real_drop_mean = 0.0;
  double rand_drop_mean = 0.0;
  double diff = 0.0;      // real_drop_mean - rand_drop_mean
  double cohens_d = 0.0;  // (diff) / pooled sample std of the two drop samples
  std::size_t n_cases = 0;
  std::size_t n_random = 0;
  std::size_t n_skipped = 0;        // cases without the requested ROI
  bool degenerate_spread = false;   // pooled std ~ 0 with a nonzero diff
};

// Sentinel magnitude reported for Cohen's d when the pooled spread is zero
// but the means differ.
inline constexpr double kDegenerateCohensD = 9999.0;

OcclusionReport occlusion_drop(const std::vector<Case>& cases,
                               const KbcsConfig& tool, RoiSource source,
                               int n_random, std::uint64_t seed,
                               int workers = 1);

struct GateSweepRow {
  double gate_threshold = 0.0;
  double adoption_rate = 0.0;
  double brier = 0.0;
};

std::vector<GateSweepRow> sweep_gate(const std::vector<Case>& cases,
                                     const PolicyParams& policy,
                                     const LoopConfig& base,
                                     const std::vector<double>& taus,
                                     std::uint64_t seed, int workers = 1);

struct StepSweepRow {
  int t_max = 1;
  double brier = 0.0;
  double ece = 0.0;
  double avg_steps = 0.0;
};

std::vector<StepSweepRow> sweep_steps(const std::vector<Case>& cases,
                                      const PolicyParams& policy,
                                      const LoopConfig& base, Variant variant,
                                      const std::vector<int>& t_maxes,
                                      std::uint64_t seed, int workers = 1);

struct OverlayResult {
  Metrics before;
  Metrics after;
  std::vector<ReliabilityBin> bins_before;
  std::vector<ReliabilityBin> bins_after;
};

// Evaluates once, then recomputes Brier/ECE after temperature_overlay on
// each p_final using the case concept's temperature; traces, behavioral
// rates and predicted classes are untouched. Missing concept -> error.
OverlayResult overlay_eval(const std::vector<Case>& cases,
                           const PolicyParams& policy, const LoopConfig& base,
                           Variant variant,
                           const std::map<std::string, double>& temperatures,
                           std::uint64_t seed, int workers = 1);

}  // namespace evseek
