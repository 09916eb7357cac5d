#pragma once

// The belief-loop: one episode = up to t_max sampled actions over the
// H-Box state (p, t, probed), with ProbeGround fusing tool evidence into the
// belief and the terminal actions Claim / Abstain / Stop ending the episode.
// Episodes are pure functions of (case, policy, config, stream key).

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "evseek/belief.hpp"
#include "evseek/environment.hpp"
#include "evseek/kbcs.hpp"
#include "evseek/policy.hpp"

namespace evseek {

enum class EvidenceSource { Prior, Kbcs, Proxy, Disabled };
enum class FusionMode { Mix, Gate };
enum class P0Mode { Fixed, ConceptPrevalence };

std::string to_string(EvidenceSource s);
std::string to_string(FusionMode m);
std::string to_string(P0Mode m);
EvidenceSource evidence_source_from_string(const std::string& name);
FusionMode fusion_mode_from_string(const std::string& name);
P0Mode p0_mode_from_string(const std::string& name);

struct LoopConfig {
  int t_max = 3;
  FusionConfig fusion;
  EvidenceSource evidence_source = EvidenceSource::Kbcs;
  FusionMode fusion_mode = FusionMode::Mix;
  P0Mode p0_mode = P0Mode::Fixed;
  double p0 = 0.5;
  // Per-concept positive rate, used when p0_mode = ConceptPrevalence;
  // run_batch fills it from the input cases when left empty.
  std::map<std::string, double> concept_prevalence;
  KbcsConfig kbcs;
  ProxyConfig proxy;
};

void validate(const LoopConfig& cfg);

struct TraceStep {
  int t = 1;
  double p_before = 0.5;
  bool probed_before = false;
  Action action = Action::Stop;
  std::optional<EvidenceReport> evidence;  // present iff probe succeeded
  std::string error;                       // non-empty iff probe failed
  bool adopted = false;                    // implies action == ProbeGround
  double p_after = 0.5;
};

struct EpisodeResult {
  std::string case_id;
  std::vector<TraceStep> steps;
  double p0 = 0.5;
  double p_final = 0.5;
  bool probed = false;
  double wall_ms = 0.0;  // measured; excluded from serialized traces
  std::uint64_t seed = 0;
};

// Algorithm: p <- p0; for t = 1..t_max sample an action from the masked
// policy (ProbeGround additionally masked when evidence_source = Disabled).
// ProbeGround: draw call_seed, gather evidence (Prior: case.prior_score,
// Kbcs: probe, Proxy: proxy_report), fuse per fusion_mode, set probed,
// continue. Claim: p <- sharpen(p, gamma), end. Abstain: p <- 0.5, end.
// Stop / budget exhaustion: end. p_final = probed ? p : p0.
// Probe failures (missing prior, tool errors) log a failed step with the
// belief unchanged; probed is still set.
EpisodeResult run_episode(const Case& c, const PolicyParams& policy,
                          const LoopConfig& cfg, RngStream& rng);

// One episode per case, stream keyed by (master_seed, case.id); results in
// input order, bit-identical for any worker count.
std::vector<EpisodeResult> run_batch(const std::vector<Case>& cases,
                                     const PolicyParams& policy,
                                     const LoopConfig& cfg,
                                     std::uint64_t master_seed,
                                     int workers = 1);

std::map<std::string, double> concept_prevalence(
    const std::vector<Case>& cases);

// JSON-lines, one EpisodeResult per line; wall_ms is measurement, not
// state, and is deliberately not serialized so trace files are
// byte-reproducible. load_traces leaves it 0.
void save_traces(const std::vector<EpisodeResult>& episodes,
                 const std::string& path);
std::vector<EpisodeResult> load_traces(const std::string& path);

}  // namespace evseek
