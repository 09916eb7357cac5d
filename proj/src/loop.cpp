#include "evseek/loop.hpp"

#include <chrono>
#include <exception>
#include <fstream>
#include <thread>

#include "json.hpp"

namespace evseek {

std::string to_string(EvidenceSource s) {
  switch (s) {
    case EvidenceSource::Prior: return "prior";
    case EvidenceSource::Kbcs: return "kbcs";
    case EvidenceSource::Proxy: return "proxy";
    case EvidenceSource::Disabled: return "disabled";
  }
  throw std::logic_error("unreachable evidence source");
}

std::string to_string(FusionMode m) {
  return m == FusionMode::Mix ? "mix" : "gate";
}

std::string to_string(P0Mode m) {
  return m == P0Mode::Fixed ? "fixed" : "prevalence";
}

EvidenceSource evidence_source_from_string(const std::string& name) {
  if (name == "prior") return EvidenceSource::Prior;
  if (name == "kbcs") return EvidenceSource::Kbcs;
  if (name == "proxy") return EvidenceSource::Proxy;
  if (name == "disabled") return EvidenceSource::Disabled;
  throw std::invalid_argument("unknown evidence source '" + name +
                              "' (expected prior|kbcs|proxy|disabled)");
}

FusionMode fusion_mode_from_string(const std::string& name) {
  if (name == "mix") return FusionMode::Mix;
  if (name == "gate") return FusionMode::Gate;
  throw std::invalid_argument("unknown fusion mode '" + name +
                              "' (expected mix|gate)");
}

P0Mode p0_mode_from_string(const std::string& name) {
  if (name == "fixed") return P0Mode::Fixed;
  if (name == "prevalence") return P0Mode::ConceptPrevalence;
  throw std::invalid_argument("unknown p0 mode '" + name +
                              "' (expected fixed|prevalence)");
}

void validate(const LoopConfig& cfg) {
  if (cfg.t_max < 1) throw std::invalid_argument("loop.t_max must be >= 1");
  if (cfg.p0 < 0.0 || cfg.p0 > 1.0)
    throw std::invalid_argument("loop.p0 must be in [0, 1]");
  validate(cfg.fusion);
  if (cfg.evidence_source == EvidenceSource::Kbcs) validate(cfg.kbcs);
  if (cfg.evidence_source == EvidenceSource::Proxy) validate(cfg.proxy);
}

namespace {

double resolve_p0(const LoopConfig& cfg, const Case& c) {
  if (cfg.p0_mode == P0Mode::Fixed) return cfg.p0;
  const auto it = cfg.concept_prevalence.find(c.concept_id);
  if (it == cfg.concept_prevalence.end())
    throw std::invalid_argument("no prevalence known for concept '" +
                                c.concept_id + "'");
  return it->second;
}

struct EvidenceOutcome {
  std::optional<EvidenceReport> report;
  std::string error;
};

EvidenceOutcome gather_evidence(const Case& c, const LoopConfig& cfg,
                                std::uint64_t call_seed, RngStream& rng) {
  EvidenceOutcome out;
  try {
    switch (cfg.evidence_source) {
      case EvidenceSource::Prior: {
        if (!c.prior_score) {
          out.error = "case has no prior_score";
          break;
        }
        EvidenceReport report;
        report.m_raw = logit(*c.prior_score);
        report.p_evidence = sigmoid(report.m_raw);
        report.provenance.backend_name = "prior";
        report.provenance.backend_config_hash = fnv1a64("backend=prior");
        report.provenance.calibration =
            CalibrationParams::identity(c.concept_id);
        report.provenance.window = 0;
        report.provenance.call_seed = call_seed;
        out.report = std::move(report);
        break;
      }
      case EvidenceSource::Kbcs:
        out.report = probe(c.image, c.concept_id, cfg.kbcs, call_seed);
        break;
      case EvidenceSource::Proxy: {
        EvidenceReport report = proxy_report(c, cfg.proxy, rng);
        report.provenance.call_seed = call_seed;
        out.report = std::move(report);
        break;
      }
      case EvidenceSource::Disabled:
        out.error = "evidence source disabled";
        break;
    }
  } catch (const std::exception& e) {
    out.report.reset();
    out.error = e.what();
  }
  return out;
}

}  // namespace

EpisodeResult run_episode(const Case& c, const PolicyParams& policy,
                          const LoopConfig& cfg, RngStream& rng) {
  validate(cfg);
  const auto t_start = std::chrono::steady_clock::now();

  EpisodeResult ep;
  ep.case_id = c.id;
  ep.seed = rng.key();
  ep.p0 = resolve_p0(cfg, c);

  double p = ep.p0;
  bool probed = false;
  for (int t = 1; t <= cfg.t_max; ++t) {
    const AgentState state = featurize(p, t, probed, policy);
    MaskedLogits logits = masked_logits(policy, state);
    if (cfg.evidence_source == EvidenceSource::Disabled)
      logits.valid[static_cast<int>(Action::ProbeGround)] = false;
    const Action a = safe_sample(logits, rng);

    TraceStep step;
    step.t = t;
    step.p_before = p;
    step.probed_before = probed;
    step.action = a;

    bool terminal = true;
    switch (a) {
      case Action::ProbeGround: {
        const std::uint64_t call_seed = rng.next_u64();
        EvidenceOutcome outcome = gather_evidence(c, cfg, call_seed, rng);
        probed = true;
        if (outcome.report) {
          if (cfg.fusion_mode == FusionMode::Mix) {
            p = fuse_mix(p, outcome.report->p_evidence, cfg.fusion.alpha);
            step.adopted = true;
          } else {
            const GateResult gate =
                fuse_gate(p, outcome.report->p_evidence, cfg.fusion.alpha,
                          cfg.fusion.gate_threshold);
            p = gate.p;
            step.adopted = gate.adopted;
          }
          step.evidence = std::move(outcome.report);
        } else {
          step.error = outcome.error;  // failed probe: belief unchanged
        }
        terminal = false;
        break;
      }
      case Action::Claim:
        p = sharpen(p, cfg.fusion.gamma);
        break;
      case Action::Abstain:
        p = 0.5;
        break;
      case Action::Stop:
        break;
    }
    step.p_after = p;
    ep.steps.push_back(std::move(step));
    if (terminal) break;
  }

  ep.probed = probed;
  ep.p_final = probed ? p : ep.p0;
  ep.wall_ms = std::chrono::duration<double, std::milli>(
                   std::chrono::steady_clock::now() - t_start)
                   .count();
  return ep;
}

std::map<std::string, double> concept_prevalence(
    const std::vector<Case>& cases) {
  std::map<std::string, double> sums;
  std::map<std::string, double> counts;
  for (const Case& c : cases) {
    sums[c.concept_id] += c.label;
    counts[c.concept_id] += 1.0;
  }
  std::map<std::string, double> out;
  for (const auto& [concept_id, count] : counts)
    out[concept_id] = sums[concept_id] / count;
  return out;
}

std::vector<EpisodeResult> run_batch(const std::vector<Case>& cases,
                                     const PolicyParams& policy,
                                     const LoopConfig& cfg,
                                     std::uint64_t master_seed, int workers) {
  LoopConfig resolved = cfg;
  if (resolved.p0_mode == P0Mode::ConceptPrevalence &&
      resolved.concept_prevalence.empty())
    resolved.concept_prevalence = concept_prevalence(cases);
  validate(resolved);

  std::vector<EpisodeResult> results(cases.size());
  const auto run_range = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      RngStream rng(derive_key(master_seed, cases[i].id));
      results[i] = run_episode(cases[i], policy, resolved, rng);
    }
  };

  if (workers <= 1 || cases.size() < 2) {
    run_range(0, cases.size());
    return results;
  }

  const std::size_t n_threads =
      std::min<std::size_t>(workers, cases.size());
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
  return results;
}

namespace {

using nlohmann::json;

json roi_json(const std::optional<Roi>& roi) {
  if (!roi) return nullptr;
  return json{{"x", roi->x}, {"y", roi->y}, {"w", roi->w}, {"h", roi->h}};
}

json evidence_json(const EvidenceReport& r) {
  return json{
      {"roi", roi_json(r.roi)},
      {"p_evidence", r.p_evidence},
      {"m_raw", r.m_raw},
      {"provenance",
       {{"backend", r.provenance.backend_name},
        {"config_hash", r.provenance.backend_config_hash},
        {"calibration",
         {{"concept", r.provenance.calibration.concept_id},
          {"temperature", r.provenance.calibration.temperature},
          {"bias", r.provenance.calibration.bias}}},
        {"window", r.provenance.window},
        {"call_seed", r.provenance.call_seed}}}};
}

EvidenceReport evidence_from_json(const json& j) {
  EvidenceReport r;
  if (!j.at("roi").is_null()) {
    const auto& q = j.at("roi");
    r.roi = Roi{q.at("x").get<int>(), q.at("y").get<int>(),
                q.at("w").get<int>(), q.at("h").get<int>()};
  }
  r.p_evidence = j.at("p_evidence").get<double>();
  r.m_raw = j.at("m_raw").get<double>();
  const auto& p = j.at("provenance");
  r.provenance.backend_name = p.at("backend").get<std::string>();
  r.provenance.backend_config_hash = p.at("config_hash").get<std::uint64_t>();
  const auto& cal = p.at("calibration");
  r.provenance.calibration.concept_id = cal.at("concept").get<std::string>();
  r.provenance.calibration.temperature = cal.at("temperature").get<double>();
  r.provenance.calibration.bias = cal.at("bias").get<double>();
  r.provenance.window = p.at("window").get<int>();
  r.provenance.call_seed = p.at("call_seed").get<std::uint64_t>();
  return r;
}

}  // namespace

void save_traces(const std::vector<EpisodeResult>& episodes,
                 const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_traces: cannot open " + path);
  for (const EpisodeResult& ep : episodes) {
    json steps = json::array();
    for (const TraceStep& s : ep.steps) {
      steps.push_back(
          json{{"t", s.t},
               {"p_before", s.p_before},
               {"probed_before", s.probed_before},
               {"action", to_string(s.action)},
               {"evidence", s.evidence ? evidence_json(*s.evidence)
                                       : json(nullptr)},
               {"error", s.error},
               {"adopted", s.adopted},
               {"p_after", s.p_after}});
    }
    json j{{"case_id", ep.case_id}, {"seed", ep.seed},
           {"p0", ep.p0},           {"p_final", ep.p_final},
           {"probed", ep.probed},   {"steps", std::move(steps)}};
    out << j.dump() << '\n';
  }
}

std::vector<EpisodeResult> load_traces(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_traces: cannot open " + path);
  std::vector<EpisodeResult> episodes;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      EpisodeResult ep;
      ep.case_id = j.at("case_id").get<std::string>();
      ep.seed = j.at("seed").get<std::uint64_t>();
      ep.p0 = j.at("p0").get<double>();
      ep.p_final = j.at("p_final").get<double>();
      ep.probed = j.at("probed").get<bool>();
      for (const auto& sj : j.at("steps")) {
        TraceStep s;
        s.t = sj.at("t").get<int>();
        s.p_before = sj.at("p_before").get<double>();
        s.probed_before = sj.at("probed_before").get<bool>();
        s.action = action_from_string(sj.at("action").get<std::string>());
        if (!sj.at("evidence").is_null())
          s.evidence = evidence_from_json(sj.at("evidence"));
        s.error = sj.at("error").get<std::string>();
        s.adopted = sj.at("adopted").get<bool>();
        s.p_after = sj.at("p_after").get<double>();
        ep.steps.push_back(std::move(s));
      }
      episodes.push_back(std::move(ep));
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ": parse error at line " +
                               std::to_string(line_no) + ": " + e.what());
    }
  }
  return episodes;
}

}  // namespace evseek
