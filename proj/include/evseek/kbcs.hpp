#pragma once

// Knowledge-based confidence scorer: tiered backends that turn an image into
// (optional ROI, calibrated evidence probability) with a provenance record on
// every call, plus the cheap label-correlated proxy used during RL rollouts.

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>

#include "evseek/belief.hpp"
#include "evseek/environment.hpp"

namespace evseek {

enum class KbcsBackend { Primary, Fallback };

std::string to_string(KbcsBackend backend);
KbcsBackend kbcs_backend_from_string(const std::string& name);

// Raised when a probe cannot be served (e.g. no calibration for the
// concept). The agent loop catches it and logs a failed probe; it is never
// fatal to an episode.
struct ToolError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Provenance {
  std::string backend_name;
  std::uint64_t backend_config_hash = 0;
  CalibrationParams calibration;
  int window = 0;
  std::uint64_t call_seed = 0;
};

struct EvidenceReport {
  std::optional<Roi> roi;  // present iff produced by the fallback backend
  double p_evidence = 0.5;
  double m_raw = 0.0;
  Provenance provenance;
};

struct KbcsConfig {
  KbcsBackend backend = KbcsBackend::Fallback;
  int window = 8;
  double score_scale = 1.0;
  // Concept coverage = calibration availability: probing a concept missing
  // here is a ToolError.
  std::map<std::string, CalibrationParams> calibrations;
};

void validate(const KbcsConfig& cfg);

// The canonical serialization hashed into Provenance.backend_config_hash;
// recomputable from the logged fields.
std::string backend_config_string(const KbcsConfig& cfg,
                                  const CalibrationParams& calibration);

// Mean-filter heatmap: value at (x, y) is the mean of the window x window
// patch with top-left (x, y); output dims (W-w+1) x (H-w+1). Implemented as
// a direct per-patch summation on purpose: each value depends only on the
// patch's own pixels, so masking pixels outside a patch cannot perturb it.
Image box_heatmap(const Image& image, int window);

struct PeakRoi {
  Roi roi;
  double peak = 0.0;
};

// Argmax top-left of the heatmap as a window x window roi; ties broken by
// smallest y, then smallest x.
PeakRoi select_peak_roi(const Image& heatmap, int window);

// One tool call. Primary: m_raw = score_scale * max(heatmap), no roi.
// Fallback: (roi, peak) from select_peak_roi, m_raw = score_scale * peak.
// Both: p_evidence = apply_calibration(m_raw, calibration for concept).
EvidenceReport probe(const Image& image, const std::string& concept_id,
                     const KbcsConfig& config, std::uint64_t call_seed);

// Uncalibrated m_raw for the configured backend; used to collect
// (score, label) pairs when fitting calibrations.
double raw_score(const Image& image, const KbcsConfig& config);

// JSON array of {concept, temperature, bias}.
void save_calibrations(
    const std::map<std::string, CalibrationParams>& calibrations,
    const std::string& path);
std::map<std::string, CalibrationParams> load_calibrations(
    const std::string& path);

struct ProxyConfig {
  double informativeness = 3.0;  // >= 0; 0 makes scores label-independent
};

void validate(const ProxyConfig& cfg);

// Training-time stand-in for probe: m_raw = informativeness*(2g-1) + N(0,1),
// p_evidence = sigmoid(m_raw), identity calibration. Consumes exactly one
// normal draw (two words) from the stream.
EvidenceReport proxy_report(const Case& c, const ProxyConfig& cfg,
                            RngStream& rng);
double proxy_score(const Case& c, const ProxyConfig& cfg, RngStream& rng);

}  // namespace evseek
