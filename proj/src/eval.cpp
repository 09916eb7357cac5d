#include "evseek/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <limits>
#include <stdexcept>
#include <thread>

namespace evseek {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::NoPG: return "nopg";
    case Variant::PriorMix: return "prior-mix";
    case Variant::KbcsMix: return "kbcs-mix";
    case Variant::KbcsGate: return "kbcs-gate";
  }
  throw std::logic_error("unreachable variant");
}

Variant variant_from_string(const std::string& name) {
  if (name == "nopg") return Variant::NoPG;
  if (name == "prior-mix") return Variant::PriorMix;
  if (name == "kbcs-mix") return Variant::KbcsMix;
  if (name == "kbcs-gate") return Variant::KbcsGate;
  throw std::invalid_argument(
      "unknown variant '" + name +
      "' (expected nopg|prior-mix|kbcs-mix|kbcs-gate)");
}

LoopConfig variant_loop_config(const LoopConfig& base, Variant v) {
  LoopConfig cfg = base;
  switch (v) {
    case Variant::NoPG:
      cfg.evidence_source = EvidenceSource::Disabled;
      break;
    case Variant::PriorMix:
      cfg.evidence_source = EvidenceSource::Prior;
      cfg.fusion_mode = FusionMode::Mix;
      break;
    case Variant::KbcsMix:
      cfg.evidence_source = EvidenceSource::Kbcs;
      cfg.fusion_mode = FusionMode::Mix;
      break;
    case Variant::KbcsGate:
      cfg.evidence_source = EvidenceSource::Kbcs;
      cfg.fusion_mode = FusionMode::Gate;
      break;
  }
  return cfg;
}

double brier(const std::vector<double>& preds, const std::vector<int>& labels) {
  if (preds.empty() || preds.size() != labels.size())
    throw std::invalid_argument(
        "brier: need equal-length, non-empty predictions and labels");
  double sum = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double d = preds[i] - static_cast<double>(labels[i]);
    sum += d * d;
  }
  return sum / static_cast<double>(preds.size());
}

std::vector<ReliabilityBin> reliability_bins(const std::vector<double>& preds,
                                             const std::vector<int>& labels,
                                             int n_bins) {
  if (preds.empty() || preds.size() != labels.size())
    throw std::invalid_argument(
        "reliability_bins: need equal-length, non-empty inputs");
  if (n_bins < 1)
    throw std::invalid_argument("reliability_bins: n_bins must be >= 1");
  std::vector<double> conf_sum(n_bins, 0.0);
  std::vector<double> pos_sum(n_bins, 0.0);
  std::vector<std::size_t> counts(n_bins, 0);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const int b = std::min(static_cast<int>(preds[i] * n_bins), n_bins - 1);
    conf_sum[b] += preds[i];
    pos_sum[b] += labels[i];
    ++counts[b];
  }
  std::vector<ReliabilityBin> bins(n_bins);
  for (int b = 0; b < n_bins; ++b) {
    bins[b].bin_index = b;
    bins[b].count = counts[b];
    if (counts[b] > 0) {
      bins[b].mean_confidence = conf_sum[b] / static_cast<double>(counts[b]);
      bins[b].empirical_accuracy = pos_sum[b] / static_cast<double>(counts[b]);
    }
  }
  return bins;
}

double ece(const std::vector<ReliabilityBin>& bins) {
  std::size_t n = 0;
  for (const ReliabilityBin& b : bins) n += b.count;
  if (n == 0) throw std::invalid_argument("ece: empty bins");
  double sum = 0.0;
  for (const ReliabilityBin& b : bins)
    if (b.count > 0)
      sum += (static_cast<double>(b.count) / static_cast<double>(n)) *
             std::abs(b.mean_confidence - b.empirical_accuracy);
  return sum;
}

BehavioralRates behavioral_rates(const std::vector<EpisodeResult>& episodes) {
  if (episodes.empty())
    throw std::invalid_argument("behavioral_rates: empty episode list");
  BehavioralRates r;
  for (const EpisodeResult& ep : episodes) {
    bool any_probe = false, any_adopted = false;
    for (const TraceStep& s : ep.steps) {
      any_probe = any_probe || s.action == Action::ProbeGround;
      any_adopted = any_adopted || s.adopted;
    }
    r.pg_rate += any_probe ? 1.0 : 0.0;
    r.adoption_rate += any_adopted ? 1.0 : 0.0;
    r.avg_steps += static_cast<double>(ep.steps.size());
    r.mean_wall_ms += ep.wall_ms;
  }
  const double n = static_cast<double>(episodes.size());
  r.pg_rate /= n;
  r.adoption_rate /= n;
  r.avg_steps /= n;
  r.mean_wall_ms /= n;
  return r;
}

namespace {

Metrics metrics_from(const std::vector<EpisodeResult>& episodes,
                     const std::vector<int>& labels,
                     const std::vector<ReliabilityBin>& bins) {
  std::vector<double> preds;
  preds.reserve(episodes.size());
  for (const EpisodeResult& ep : episodes) preds.push_back(ep.p_final);
  const BehavioralRates rates = behavioral_rates(episodes);
  Metrics m;
  m.brier = brier(preds, labels);
  m.ece = ece(bins);
  m.pg_rate = rates.pg_rate;
  m.adoption_rate = rates.adoption_rate;
  m.avg_steps = rates.avg_steps;
  m.mean_wall_ms = rates.mean_wall_ms;
  m.n = episodes.size();
  return m;
}

std::vector<int> case_labels(const std::vector<Case>& cases) {
  std::vector<int> labels;
  labels.reserve(cases.size());
  for (const Case& c : cases) labels.push_back(c.label);
  return labels;
}

}  // namespace

EvalResult evaluate(const std::vector<Case>& cases,
                    const PolicyParams& policy, const LoopConfig& base,
                    Variant variant, std::uint64_t seed, int workers) {
  if (cases.empty()) throw std::invalid_argument("evaluate: empty dataset");
  const LoopConfig cfg = variant_loop_config(base, variant);
  EvalResult result;
  result.episodes = run_batch(cases, policy, cfg, seed, workers);
  std::vector<double> preds;
  preds.reserve(result.episodes.size());
  for (const EpisodeResult& ep : result.episodes) preds.push_back(ep.p_final);
  const std::vector<int> labels = case_labels(cases);
  result.bins = reliability_bins(preds, labels);
  result.metrics = metrics_from(result.episodes, labels, result.bins);
  return result;
}

namespace {

// First adopted step carrying an ROI, if any.
const TraceStep* adopted_roi_step(const EpisodeResult& ep) {
  for (const TraceStep& s : ep.steps)
    if (s.adopted && s.evidence && s.evidence->roi) return &s;
  return nullptr;
}

bool any_adopted(const EpisodeResult& ep) {
  for (const TraceStep& s : ep.steps)
    if (s.adopted) return true;
  return false;
}

Roi disjoint_placebo_roi(const Case& c, const Roi& adopted,
                         std::uint64_t seed) {
  RngStream rng(derive_key(derive_key(seed, "placebo"), c.id));
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const Roi r =
        random_roi(c.image.width, c.image.height, adopted.w, adopted.h, rng);
    if (rois_overlap(r, adopted)) continue;
    if (c.gt_roi && rois_overlap(r, *c.gt_roi)) continue;
    return r;
  }
  throw std::runtime_error(
      "intervene: could not place a disjoint placebo roi for case " + c.id);
}

}  // namespace

InterventionReport intervene(const std::vector<Case>& cases,
                             const PolicyParams& policy,
                             const LoopConfig& base, Variant variant,
                             std::uint64_t seed, bool placebo, int workers) {
  const LoopConfig cfg = variant_loop_config(base, variant);
  const std::vector<EpisodeResult> first_pass =
      run_batch(cases, policy, cfg, seed, workers);

  InterventionReport report;
  report.placebo = placebo;
  std::vector<Case> masked_cases;
  std::vector<double> preds_before;
  std::vector<int> labels;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const TraceStep* step = adopted_roi_step(first_pass[i]);
    if (!step) {
      if (any_adopted(first_pass[i])) ++report.n_excluded_no_roi;
      continue;
    }
    const Roi target =
        placebo ? disjoint_placebo_roi(cases[i], *step->evidence->roi, seed)
                : *step->evidence->roi;
    Case masked = cases[i];
    masked.image = mask_roi(masked.image, target, 0.0);
    masked_cases.push_back(std::move(masked));
    preds_before.push_back(first_pass[i].p_final);
    labels.push_back(cases[i].label);
  }
  report.cohort_size = masked_cases.size();

  const double nan = std::numeric_limits<double>::quiet_NaN();
  if (masked_cases.empty()) {
    report.brier_before = report.brier_after = report.delta_brier = nan;
    report.ece_before = report.ece_after = report.delta_ece = nan;
    return report;
  }

  // Same master seed, same case ids => identical episode stream keys.
  const std::vector<EpisodeResult> second_pass =
      run_batch(masked_cases, policy, cfg, seed, workers);
  std::vector<double> preds_after;
  preds_after.reserve(second_pass.size());
  for (const EpisodeResult& ep : second_pass) preds_after.push_back(ep.p_final);

  report.brier_before = brier(preds_before, labels);
  report.brier_after = brier(preds_after, labels);
  report.delta_brier = report.brier_after - report.brier_before;
  report.ece_before = ece(reliability_bins(preds_before, labels));
  report.ece_after = ece(reliability_bins(preds_after, labels));
  report.delta_ece = report.ece_after - report.ece_before;
  return report;
}

std::string to_string(RoiSource s) {
  return s == RoiSource::Gt ? "gt" : "pred";
}

RoiSource roi_source_from_string(const std::string& name) {
  if (name == "gt") return RoiSource::Gt;
  if (name == "pred") return RoiSource::Pred;
  throw std::invalid_argument("unknown roi source '" + name +
                              "' (expected gt|pred)");
}

namespace {

double sample_std(const std::vector<double>& xs, double mean) {
  if (xs.size() < 2) return 0.0;
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

double mean_of(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

}  // namespace

OcclusionReport occlusion_drop(const std::vector<Case>& cases,
                               const KbcsConfig& tool, RoiSource source,
                               int n_random, std::uint64_t seed, int workers) {
  validate(tool);
  if (n_random < 1)
    throw std::invalid_argument("occlusion: n_random must be >= 1");
  if (source == RoiSource::Pred && tool.backend != KbcsBackend::Fallback)
    throw std::invalid_argument(
        "occlusion: roi source 'pred' requires the fallback backend");

  const std::uint64_t rand_key = derive_key(seed, "randroi");
  struct PerCase {
    bool used = false;
    double real_drop = 0.0;
    double rand_drop = 0.0;
  };
  std::vector<PerCase> per_case(cases.size());

  const auto run_range = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const Case& c = cases[i];
      const EvidenceReport base_report = probe(c.image, c.concept_id, tool, 0);
      Roi target;
      if (source == RoiSource::Gt) {
        if (!c.gt_roi) continue;  // skipped; counted after the join
        target = *c.gt_roi;
      } else {
        target = *base_report.roi;
      }
      const double s0 = base_report.p_evidence;
      PerCase& pc = per_case[i];
      pc.used = true;
      pc.real_drop =
          s0 - probe(mask_roi(c.image, target, 0.0), c.concept_id, tool, 0)
                   .p_evidence;
      RngStream rng(derive_key(rand_key, c.id));
      double acc = 0.0;
      for (int j = 0; j < n_random; ++j) {
        const Roi r =
            random_roi(c.image.width, c.image.height, target.w, target.h, rng);
        acc += s0 - probe(mask_roi(c.image, r, 0.0), c.concept_id, tool, 0)
                        .p_evidence;
      }
      pc.rand_drop = acc / static_cast<double>(n_random);
    }
  };

  if (workers <= 1 || cases.size() < 2) {
    run_range(0, cases.size());
  } else {
    const std::size_t n_threads = std::min<std::size_t>(workers, cases.size());
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> errors(n_threads);
    const std::size_t chunk = (cases.size() + n_threads - 1) / n_threads;
    for (std::size_t w = 0; w < n_threads; ++w) {
      const std::size_t begin = w * chunk;
      const std::size_t end = std::min(begin + chunk, cases.size());
      threads.emplace_back([&, w, begin, end] {
        try {
          run_range(begin, end);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : threads) t.join();
    for (const auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  std::vector<double> real_drops, rand_drops;
  OcclusionReport report;
  report.n_random = static_cast<std::size_t>(n_random);
  for (std::size_t i = 0; i < cases.size(); ++i) {
    if (!per_case[i].used) {
      ++report.n_skipped;
      std::fprintf(stderr, "occlusion: skipping %s: no gt_roi\n",
                   cases[i].id.c_str());
      continue;
    }
    real_drops.push_back(per_case[i].real_drop);
    rand_drops.push_back(per_case[i].rand_drop);
  }
  if (real_drops.empty())
    throw std::runtime_error("occlusion: no usable cases");

  report.n_cases = real_drops.size();
  report.real_drop_mean = mean_of(real_drops);
  report.rand_drop_mean = mean_of(rand_drops);
  report.diff = report.real_drop_mean - report.rand_drop_mean;
  const double s_r = sample_std(real_drops, report.real_drop_mean);
  const double s_q = sample_std(rand_drops, report.rand_drop_mean);
  const double n_r = static_cast<double>(real_drops.size());
  const double n_q = static_cast<double>(rand_drops.size());
  const double pooled =
      (n_r + n_q > 2.0)
          ? std::sqrt(((n_r - 1.0) * s_r * s_r + (n_q - 1.0) * s_q * s_q) /
                      (n_r + n_q - 2.0))
          : 0.0;
  if (pooled < 1e-12) {
    if (report.diff == 0.0) {
      report.cohens_d = 0.0;
    } else {
      report.cohens_d = std::copysign(kDegenerateCohensD, report.diff);
      report.degenerate_spread = true;
      std::fprintf(stderr,
                   "occlusion: zero pooled spread with nonzero diff; "
                   "cohens_d is a sentinel\n");
    }
  } else {
    report.cohens_d = report.diff / pooled;
  }
  return report;
}

std::vector<GateSweepRow> sweep_gate(const std::vector<Case>& cases,
                                     const PolicyParams& policy,
                                     const LoopConfig& base,
                                     const std::vector<double>& taus,
                                     std::uint64_t seed, int workers) {
  std::vector<double> ordered = taus;
  std::sort(ordered.begin(), ordered.end());
  std::vector<GateSweepRow> rows;
  rows.reserve(ordered.size());
  for (double tau : ordered) {
    LoopConfig cfg = base;
    cfg.fusion.gate_threshold = tau;
    const EvalResult r =
        evaluate(cases, policy, cfg, Variant::KbcsGate, seed, workers);
    rows.push_back(GateSweepRow{tau, r.metrics.adoption_rate, r.metrics.brier});
  }
  return rows;
}

std::vector<StepSweepRow> sweep_steps(const std::vector<Case>& cases,
                                      const PolicyParams& policy,
                                      const LoopConfig& base, Variant variant,
                                      const std::vector<int>& t_maxes,
                                      std::uint64_t seed, int workers) {
  std::vector<int> ordered = t_maxes;
  std::sort(ordered.begin(), ordered.end());
  std::vector<StepSweepRow> rows;
  rows.reserve(ordered.size());
  for (int t_max : ordered) {
    LoopConfig cfg = base;
    cfg.t_max = t_max;
    const EvalResult r = evaluate(cases, policy, cfg, variant, seed, workers);
    rows.push_back(StepSweepRow{t_max, r.metrics.brier, r.metrics.ece,
                                r.metrics.avg_steps});
  }
  return rows;
}

OverlayResult overlay_eval(const std::vector<Case>& cases,
                           const PolicyParams& policy, const LoopConfig& base,
                           Variant variant,
                           const std::map<std::string, double>& temperatures,
                           std::uint64_t seed, int workers) {
  for (const auto& [concept_id, t] : temperatures)
    if (!(t > 0.0))
      throw std::invalid_argument("overlay temperature for concept '" +
                                  concept_id + "' must be > 0");

  const EvalResult r = evaluate(cases, policy, base, variant, seed, workers);
  std::vector<double> preds_after;
  preds_after.reserve(cases.size());
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto it = temperatures.find(cases[i].concept_id);
    if (it == temperatures.end())
      throw std::invalid_argument("no overlay temperature for concept '" +
                                  cases[i].concept_id + "'");
    preds_after.push_back(
        temperature_overlay(r.episodes[i].p_final, it->second));
  }
  const std::vector<int> labels = case_labels(cases);
  OverlayResult out;
  out.before = r.metrics;
  out.bins_before = r.bins;
  out.bins_after = reliability_bins(preds_after, labels);
  out.after = out.before;  // behavioral fields are untouched by the overlay
  out.after.brier = brier(preds_after, labels);
  out.after.ece = ece(out.bins_after);
  return out;
}

}  // namespace evseek
