#include "evseek/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "evseek/config.hpp"
#include "evseek/eval.hpp"
#include "evseek/reporting.hpp"
#include "evseek/rl.hpp"

namespace evseek {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt_g17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string join_list(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ',';
    out += items[i];
  }
  return out;
}

// Collects a run's resolved scientific parameters and output artifacts,
// then writes resolved-config.txt plus a manifest of content hashes.
// Runtime details (paths, worker counts) and measured timings stay out of
// both so reruns of one config are byte-comparable.
class RunDir {
 public:
  explicit RunDir(const fs::path& dir) : dir_(dir) {
    if (!dir_.empty()) fs::create_directories(dir_);
  }

  void set(const std::string& key, const std::string& value) {
    resolved_[key] = value;
  }
  void set(const std::string& key, double value) { set(key, fmt_g17(value)); }
  void set(const std::string& key, int value) { set(key, std::to_string(value)); }
  void set(const std::string& key, std::uint64_t value) {
    set(key, std::to_string(value));
  }
  void set(const std::string& key, bool value) {
    set(key, value ? std::string("true") : std::string("false"));
  }

  fs::path path(const std::string& name) const { return dir_ / name; }

  void write(const std::string& name, const std::string& content) {
    write_text_file((dir_ / name).string(), content);
    artifacts_.push_back(name);
  }

  // Records an artifact some other writer already placed in the run dir.
  void track(const std::string& name) { artifacts_.push_back(name); }

  void write_json(const std::string& name, const json& j) {
    write(name, j.dump(2) + "\n");
  }

  // Written but excluded from the manifest (non-deterministic content).
  void write_untracked(const std::string& name, const std::string& content) {
    write_text_file((dir_ / name).string(), content);
  }

  void finalize() {
    std::string cfg;
    for (const auto& [key, value] : resolved_) cfg += key + "=" + value + "\n";
    write("resolved-config.txt", cfg);
    std::sort(artifacts_.begin(), artifacts_.end());
    std::string manifest;
    for (const std::string& name : artifacts_) {
      const std::string bytes = read_text_file((dir_ / name).string());
      char line[512];
      std::snprintf(line, sizeof(line), "%016llx  %s\n",
                    static_cast<unsigned long long>(fnv1a64(bytes)),
                    name.c_str());
      manifest += line;
    }
    write_text_file((dir_ / "manifest.txt").string(), manifest);
  }

 private:
  fs::path dir_;
  std::map<std::string, std::string> resolved_;
  std::vector<std::string> artifacts_;
};

std::string timing_text(double mean_wall_ms, std::size_t n) {
  return "n=" + std::to_string(n) + "\nmean_wall_ms=" + fmt_g17(mean_wall_ms) +
         "\n";
}

json metrics_json(const Metrics& m, Variant variant, std::uint64_t seed) {
  return json{{"variant", to_string(variant)},
              {"n", m.n},
              {"brier", m.brier},
              {"ece", m.ece},
              {"pg_rate", m.pg_rate},
              {"adoption_rate", m.adoption_rate},
              {"avg_steps", m.avg_steps},
              {"seed", seed}};
}

json nan_to_null(double v) { return std::isnan(v) ? json(nullptr) : json(v); }

// ---- shared option bundles -------------------------------------------------

const std::set<std::string> kDataKeys = {
    "data.n",           "data.seed",
    "data.width",       "data.height",
    "data.noise_sigma", "data.signal_amplitude",
    "data.roi_size",    "data.positive_rate",
    "data.n_peaks",     "data.prior_informativeness",
    "data.concepts",    "data.domain_tag",
    "data.min_peak_separation"};

const std::set<std::string> kKbcsKeys = {"kbcs.backend", "kbcs.window",
                                         "kbcs.score_scale"};

const std::set<std::string> kLoopKeys = {
    "fusion.alpha", "fusion.gate_threshold", "fusion.gamma",
    "loop.t_max",   "loop.fusion_mode",      "loop.p0_mode",
    "loop.p0",      "proxy.informativeness"};

const std::set<std::string> kPolicyKeys = {"policy.bins", "policy.t_max"};

const std::set<std::string> kTrainKeys = {
    "train.k",          "train.c_clip",     "train.eta",
    "train.beta_kl",    "train.learning_rate", "train.batch_size",
    "train.sync_period", "train.steps",     "train.seed"};

const std::set<std::string> kEvalKeys = {"eval.seed", "eval.variant"};

std::set<std::string> keys_union(std::initializer_list<std::set<std::string>> sets) {
  std::set<std::string> out;
  for (const auto& s : sets) out.insert(s.begin(), s.end());
  return out;
}

Config load_config_checked(const std::string& path,
                           const std::set<std::string>& allowed) {
  Config cfg = path.empty() ? Config{} : Config::load(path);
  cfg.check_known(allowed);
  return cfg;
}

KbcsConfig resolve_kbcs(const Config& cfg, RunDir& run) {
  KbcsConfig k;
  k.backend =
      kbcs_backend_from_string(cfg.get_string("kbcs.backend", "fallback"));
  k.window = cfg.get_int("kbcs.window", 8);
  k.score_scale = cfg.get_double("kbcs.score_scale", 1.0);
  run.set("kbcs.backend", to_string(k.backend));
  run.set("kbcs.window", k.window);
  run.set("kbcs.score_scale", k.score_scale);
  return k;
}

LoopConfig resolve_loop(const Config& cfg, RunDir& run) {
  LoopConfig loop;
  loop.t_max = cfg.get_int("loop.t_max", 3);
  loop.fusion.alpha = cfg.get_double("fusion.alpha", 0.5);
  loop.fusion.gate_threshold = cfg.get_double("fusion.gate_threshold", 0.1);
  loop.fusion.gamma = cfg.get_double("fusion.gamma", 2.0);
  loop.fusion_mode =
      fusion_mode_from_string(cfg.get_string("loop.fusion_mode", "mix"));
  loop.p0_mode = p0_mode_from_string(cfg.get_string("loop.p0_mode", "fixed"));
  loop.p0 = cfg.get_double("loop.p0", 0.5);
  loop.proxy.informativeness = cfg.get_double("proxy.informativeness", 3.0);
  run.set("loop.t_max", loop.t_max);
  run.set("fusion.alpha", loop.fusion.alpha);
  run.set("fusion.gate_threshold", loop.fusion.gate_threshold);
  run.set("fusion.gamma", loop.fusion.gamma);
  run.set("loop.fusion_mode", to_string(loop.fusion_mode));
  run.set("loop.p0_mode", to_string(loop.p0_mode));
  run.set("loop.p0", loop.p0);
  run.set("proxy.informativeness", loop.proxy.informativeness);
  return loop;
}

// ---- subcommand options ----------------------------------------------------

struct GenDataOpts {
  std::uint64_t n = 0;
  std::uint64_t seed = 0;
  int width = 64, height = 64;
  double noise = 1.0, amplitude = 2.0;
  int roi_size = 8;
  double pos_rate = 0.5;
  int peaks = 1;
  double prior_info = 0.0;
  int min_sep = 0;
  std::string concepts = "lesion";
  std::string domain_tag = "source";
  std::string config_path;
  std::string out;
  CLI::Option *o_n = nullptr, *o_seed = nullptr, *o_width = nullptr,
              *o_height = nullptr, *o_noise = nullptr, *o_amplitude = nullptr,
              *o_roi = nullptr, *o_pos = nullptr, *o_peaks = nullptr,
              *o_prior = nullptr, *o_minsep = nullptr, *o_concepts = nullptr,
              *o_domain = nullptr;
};

void run_gen_data(const GenDataOpts& o) {
  const Config cfg = load_config_checked(o.config_path, kDataKeys);
  const auto pick_i = [&](CLI::Option* opt, int flag, const char* key,
                          int def) {
    return opt->count() ? flag : cfg.get_int(key, def);
  };
  const auto pick_d = [&](CLI::Option* opt, double flag, const char* key,
                          double def) {
    return opt->count() ? flag : cfg.get_double(key, def);
  };

  GenSpec spec;
  const std::uint64_t n =
      o.o_n->count() ? o.n : cfg.get_u64("data.n", 0);
  if (n == 0) throw ConfigError("data.n must be >= 1");
  spec.seed = o.o_seed->count() ? o.seed : cfg.get_u64("data.seed", 0);
  spec.width = pick_i(o.o_width, o.width, "data.width", 64);
  spec.height = pick_i(o.o_height, o.height, "data.height", 64);
  spec.noise_sigma = pick_d(o.o_noise, o.noise, "data.noise_sigma", 1.0);
  spec.signal_amplitude =
      pick_d(o.o_amplitude, o.amplitude, "data.signal_amplitude", 2.0);
  spec.roi_size = pick_i(o.o_roi, o.roi_size, "data.roi_size", 8);
  spec.positive_rate = pick_d(o.o_pos, o.pos_rate, "data.positive_rate", 0.5);
  spec.n_peaks = pick_i(o.o_peaks, o.peaks, "data.n_peaks", 1);
  spec.prior_informativeness =
      pick_d(o.o_prior, o.prior_info, "data.prior_informativeness", 0.0);
  spec.min_peak_separation =
      pick_i(o.o_minsep, o.min_sep, "data.min_peak_separation", 0);
  spec.concepts = split_list(o.o_concepts->count()
                                 ? o.concepts
                                 : cfg.get_string("data.concepts", "lesion"));
  spec.domain_tag = o.o_domain->count()
                        ? o.domain_tag
                        : cfg.get_string("data.domain_tag", "source");
  validate(spec);

  const fs::path out_path(o.out);
  RunDir run(out_path.parent_path());
  run.set("data.n", n);
  run.set("data.seed", spec.seed);
  run.set("data.width", spec.width);
  run.set("data.height", spec.height);
  run.set("data.noise_sigma", spec.noise_sigma);
  run.set("data.signal_amplitude", spec.signal_amplitude);
  run.set("data.roi_size", spec.roi_size);
  run.set("data.positive_rate", spec.positive_rate);
  run.set("data.n_peaks", spec.n_peaks);
  run.set("data.prior_informativeness", spec.prior_informativeness);
  run.set("data.min_peak_separation", spec.min_peak_separation);
  run.set("data.concepts", join_list(spec.concepts));
  run.set("data.domain_tag", spec.domain_tag);

  const std::vector<Case> cases = generate_dataset(spec, n);
  save_dataset(cases, out_path.string());
  run.track(out_path.filename().string());
  run.finalize();
  std::printf("wrote %zu cases to %s\n", cases.size(), o.out.c_str());
}

struct CalibrateOpts {
  std::string data, out, config_path;
  std::string backend = "fallback";
  int window = 8;
  double scale = 1.0;
  CLI::Option *o_backend = nullptr, *o_window = nullptr, *o_scale = nullptr;
};

void run_calibrate(const CalibrateOpts& o) {
  const Config cfg = load_config_checked(o.config_path, kKbcsKeys);
  KbcsConfig tool;
  tool.backend = kbcs_backend_from_string(
      o.o_backend->count() ? o.backend
                           : cfg.get_string("kbcs.backend", "fallback"));
  tool.window =
      o.o_window->count() ? o.window : cfg.get_int("kbcs.window", 8);
  tool.score_scale =
      o.o_scale->count() ? o.scale : cfg.get_double("kbcs.score_scale", 1.0);
  validate(tool);

  const std::vector<Case> cases = load_dataset(o.data);
  std::map<std::string, std::vector<std::pair<double, int>>> pairs;
  for (const Case& c : cases)
    pairs[c.concept_id].emplace_back(raw_score(c.image, tool), c.label);

  std::map<std::string, CalibrationParams> calibrations;
  for (const auto& [concept_id, concept_pairs] : pairs)
    calibrations[concept_id] = fit_calibration(concept_pairs, concept_id);

  const fs::path out_path(o.out);
  RunDir run(out_path.parent_path());
  run.set("kbcs.backend", to_string(tool.backend));
  run.set("kbcs.window", tool.window);
  run.set("kbcs.score_scale", tool.score_scale);
  save_calibrations(calibrations, out_path.string());
  run.track(out_path.filename().string());
  run.finalize();
  for (const auto& [concept_id, params] : calibrations)
    std::printf("%s: temperature=%.6f bias=%.6f\n", concept_id.c_str(),
                params.temperature, params.bias);
}

struct TrainOpts {
  std::string data, config_path, out, log_path;
  std::uint64_t seed = 0;
  CLI::Option* o_seed = nullptr;
};

void run_train(const TrainOpts& o) {
  const Config cfg = load_config_checked(
      o.config_path, keys_union({kLoopKeys, kPolicyKeys, kTrainKeys}));

  fs::path out_path(o.out);
  RunDir run(out_path.parent_path());

  TrainConfig tc;
  tc.k = cfg.get_int("train.k", 4);
  tc.c_clip = cfg.get_double("train.c_clip", 2.0);
  tc.eta = cfg.get_double("train.eta", 0.01);
  tc.beta_kl = cfg.get_double("train.beta_kl", 0.1);
  tc.learning_rate = cfg.get_double("train.learning_rate", 0.1);
  tc.batch_size = cfg.get_int("train.batch_size", 16);
  tc.sync_period = cfg.get_int("train.sync_period", 10);
  tc.steps = cfg.get_int("train.steps", 300);
  tc.seed = o.o_seed->count() ? o.seed : cfg.get_u64("train.seed", 0);

  PolicyConfig pc;
  pc.bins = cfg.get_int("policy.bins", 10);
  pc.t_max = cfg.get_int("policy.t_max", 3);

  LoopConfig loop = resolve_loop(cfg, run);
  loop.evidence_source = EvidenceSource::Proxy;

  run.set("train.k", tc.k);
  run.set("train.c_clip", tc.c_clip);
  run.set("train.eta", tc.eta);
  run.set("train.beta_kl", tc.beta_kl);
  run.set("train.learning_rate", tc.learning_rate);
  run.set("train.batch_size", tc.batch_size);
  run.set("train.sync_period", tc.sync_period);
  run.set("train.steps", tc.steps);
  run.set("train.seed", tc.seed);
  run.set("policy.bins", pc.bins);
  run.set("policy.t_max", pc.t_max);

  const std::vector<Case> dataset = load_dataset(o.data);
  std::string log_lines;
  const TrainLogger logger = [&](const TrainStepLog& l) {
    const json j{{"step", l.step},
                 {"loss", l.loss},
                 {"mean_reward", l.mean_reward},
                 {"mean_entropy", l.mean_entropy},
                 {"mean_kl", l.mean_kl},
                 {"pg_rate", l.pg_rate},
                 {"w_min", l.w_min},
                 {"w_max", l.w_max}};
    log_lines += j.dump() + "\n";
  };
  const PolicyParams policy = train(dataset, tc, loop, pc, logger);

  save_policy(policy, out_path.string());
  run.track(out_path.filename().string());
  if (!o.log_path.empty()) {
    const fs::path log(o.log_path);
    if (!log.parent_path().empty()) fs::create_directories(log.parent_path());
    write_text_file(log.string(), log_lines);
    if (log.parent_path() == out_path.parent_path())
      run.track(log.filename().string());
  }
  run.finalize();
  std::printf("trained %d steps; policy written to %s\n", tc.steps,
              o.out.c_str());
}

struct EvalLikeOpts {
  std::string data, policy, calib, variant, config_path, out_dir;
  std::uint64_t seed = 0;
  int workers = 1;
  bool placebo = false;
  CLI::Option *o_seed = nullptr, *o_variant = nullptr;
};

struct ResolvedEval {
  std::vector<Case> cases;
  PolicyParams policy;
  LoopConfig loop;
  Variant variant = Variant::KbcsMix;
  std::uint64_t seed = 0;
};

ResolvedEval resolve_eval(const EvalLikeOpts& o, RunDir& run) {
  const Config cfg = load_config_checked(
      o.config_path, keys_union({kLoopKeys, kKbcsKeys, kEvalKeys}));
  ResolvedEval r;
  r.cases = load_dataset(o.data);
  r.policy = load_policy(o.policy);
  r.loop = resolve_loop(cfg, run);
  r.loop.kbcs = resolve_kbcs(cfg, run);
  if (!o.calib.empty())
    r.loop.kbcs.calibrations = load_calibrations(o.calib);
  const std::string variant_name =
      o.o_variant->count() ? o.variant
                           : cfg.get_string("eval.variant", o.variant);
  r.variant = variant_from_string(variant_name);
  r.seed = o.o_seed->count() ? o.seed : cfg.get_u64("eval.seed", 0);
  run.set("eval.variant", to_string(r.variant));
  run.set("eval.seed", r.seed);
  return r;
}

void run_eval(const EvalLikeOpts& o) {
  RunDir run{fs::path(o.out_dir)};
  const ResolvedEval r = resolve_eval(o, run);
  const EvalResult result =
      evaluate(r.cases, r.policy, r.loop, r.variant, r.seed, o.workers);
  run.write_json("metrics.json",
                 metrics_json(result.metrics, r.variant, r.seed));
  run.write("bins.csv", bins_csv(result.bins));
  save_traces(result.episodes, run.path("traces.jsonl").string());
  run.track("traces.jsonl");
  run.write_untracked(
      "timing.txt",
      timing_text(result.metrics.mean_wall_ms, result.metrics.n));
  run.finalize();
  std::printf("%s: n=%zu brier=%.4f ece=%.4f pg_rate=%.3f\n",
              to_string(r.variant).c_str(), result.metrics.n,
              result.metrics.brier, result.metrics.ece,
              result.metrics.pg_rate);
}

void run_intervene(const EvalLikeOpts& o) {
  RunDir run{fs::path(o.out_dir)};
  const ResolvedEval r = resolve_eval(o, run);
  run.set("intervene.placebo", o.placebo);
  const InterventionReport rep = intervene(r.cases, r.policy, r.loop,
                                           r.variant, r.seed, o.placebo,
                                           o.workers);
  run.write_json("intervention.json",
                 json{{"cohort_size", rep.cohort_size},
                      {"n_excluded_no_roi", rep.n_excluded_no_roi},
                      {"placebo", rep.placebo},
                      {"brier_before", nan_to_null(rep.brier_before)},
                      {"brier_after", nan_to_null(rep.brier_after)},
                      {"delta_brier", nan_to_null(rep.delta_brier)},
                      {"ece_before", nan_to_null(rep.ece_before)},
                      {"ece_after", nan_to_null(rep.ece_after)},
                      {"delta_ece", nan_to_null(rep.delta_ece)}});
  run.finalize();
  std::printf("cohort=%zu delta_brier=%s\n", rep.cohort_size,
              std::isnan(rep.delta_brier) ? "n/a"
                                          : fmt_g17(rep.delta_brier).c_str());
}

struct OcclusionOpts {
  std::string data, calib, roi_source = "pred", config_path, out_dir;
  int n_random = 20;
  std::uint64_t seed = 0;
  int workers = 1;
};

void run_occlusion(const OcclusionOpts& o) {
  RunDir run{fs::path(o.out_dir)};
  const Config cfg = load_config_checked(o.config_path, kKbcsKeys);
  KbcsConfig tool = resolve_kbcs(cfg, run);
  tool.calibrations = load_calibrations(o.calib);
  const RoiSource source = roi_source_from_string(o.roi_source);
  run.set("occlusion.roi_source", to_string(source));
  run.set("occlusion.n_random", o.n_random);
  run.set("occlusion.seed", o.seed);

  const std::vector<Case> cases = load_dataset(o.data);
  const OcclusionReport rep =
      occlusion_drop(cases, tool, source, o.n_random, o.seed, o.workers);
  run.write_json("occlusion.json",
                 json{{"roi_source", to_string(source)},
                      {"n_cases", rep.n_cases},
                      {"n_random", rep.n_random},
                      {"n_skipped", rep.n_skipped},
                      {"real_drop_mean", rep.real_drop_mean},
                      {"rand_drop_mean", rep.rand_drop_mean},
                      {"diff", rep.diff},
                      {"cohens_d", rep.cohens_d},
                      {"degenerate_spread", rep.degenerate_spread}});
  run.finalize();
  std::printf("real_drop=%.6f rand_drop=%.6f d=%.4f\n", rep.real_drop_mean,
              rep.rand_drop_mean, rep.cohens_d);
}

struct SweepGateOpts {
  std::string data, policy, calib, taus, config_path, out_dir;
  std::uint64_t seed = 0;
  int workers = 1;
  CLI::Option* o_seed = nullptr;
};

void run_sweep_gate(const SweepGateOpts& o) {
  RunDir run{fs::path(o.out_dir)};
  const Config cfg = load_config_checked(
      o.config_path, keys_union({kLoopKeys, kKbcsKeys, kEvalKeys}));
  LoopConfig loop = resolve_loop(cfg, run);
  loop.kbcs = resolve_kbcs(cfg, run);
  loop.kbcs.calibrations = load_calibrations(o.calib);
  const std::uint64_t seed =
      o.o_seed->count() ? o.seed : cfg.get_u64("eval.seed", 0);
  const std::vector<double> taus = parse_double_list(o.taus, "--taus");
  run.set("eval.seed", seed);
  run.set("sweep.taus", o.taus);

  const std::vector<Case> cases = load_dataset(o.data);
  const PolicyParams policy = load_policy(o.policy);
  const auto rows = sweep_gate(cases, policy, loop, taus, seed, o.workers);
  run.write("gate_sweep.csv", gate_sweep_csv(rows));
  run.finalize();
  for (const auto& row : rows)
    std::printf("tau=%.3f adoption=%.3f brier=%.4f\n", row.gate_threshold,
                row.adoption_rate, row.brier);
}

struct SweepStepsOpts {
  std::string data, policy, calib, tmax_list, variant = "kbcs-mix",
              config_path, out_dir;
  std::uint64_t seed = 0;
  int workers = 1;
  CLI::Option *o_seed = nullptr, *o_variant = nullptr;
};

void run_sweep_steps(const SweepStepsOpts& o) {
  RunDir run{fs::path(o.out_dir)};
  const Config cfg = load_config_checked(
      o.config_path, keys_union({kLoopKeys, kKbcsKeys, kEvalKeys}));
  LoopConfig loop = resolve_loop(cfg, run);
  loop.kbcs = resolve_kbcs(cfg, run);
  if (!o.calib.empty()) loop.kbcs.calibrations = load_calibrations(o.calib);
  const Variant variant = variant_from_string(
      o.o_variant->count() ? o.variant
                           : cfg.get_string("eval.variant", o.variant));
  const std::uint64_t seed =
      o.o_seed->count() ? o.seed : cfg.get_u64("eval.seed", 0);
  const std::vector<int> t_maxes =
      parse_int_list(o.tmax_list, "--tmax-list");
  run.set("eval.variant", to_string(variant));
  run.set("eval.seed", seed);
  run.set("sweep.t_max_list", o.tmax_list);

  const std::vector<Case> cases = load_dataset(o.data);
  const PolicyParams policy = load_policy(o.policy);
  const auto rows =
      sweep_steps(cases, policy, loop, variant, t_maxes, seed, o.workers);
  run.write("step_sweep.csv", step_sweep_csv(rows));
  run.finalize();
  for (const auto& row : rows)
    std::printf("t_max=%d brier=%.4f ece=%.4f avg_steps=%.2f\n", row.t_max,
                row.brier, row.ece, row.avg_steps);
}

struct OverlayOpts {
  std::string data, policy, calib, variant = "kbcs-mix", config_path, out_dir;
  int calib_n = 100;
  std::uint64_t seed = 0;
  int workers = 1;
  CLI::Option *o_seed = nullptr, *o_variant = nullptr;
};

void run_overlay(const OverlayOpts& o) {
  RunDir run{fs::path(o.out_dir)};
  const Config cfg = load_config_checked(
      o.config_path, keys_union({kLoopKeys, kKbcsKeys, kEvalKeys}));
  LoopConfig loop = resolve_loop(cfg, run);
  loop.kbcs = resolve_kbcs(cfg, run);
  if (!o.calib.empty()) loop.kbcs.calibrations = load_calibrations(o.calib);
  const Variant variant = variant_from_string(
      o.o_variant->count() ? o.variant
                           : cfg.get_string("eval.variant", o.variant));
  const std::uint64_t seed =
      o.o_seed->count() ? o.seed : cfg.get_u64("eval.seed", 0);
  run.set("eval.variant", to_string(variant));
  run.set("eval.seed", seed);
  run.set("overlay.calib_n", o.calib_n);

  const std::vector<Case> cases = load_dataset(o.data);
  if (o.calib_n < 1 || static_cast<std::size_t>(o.calib_n) >= cases.size())
    throw ConfigError(
        "overlay.calib_n must leave at least one fit case and one holdout "
        "case");
  const PolicyParams policy = load_policy(o.policy);
  const std::vector<Case> fit_split(cases.begin(), cases.begin() + o.calib_n);
  const std::vector<Case> holdout(cases.begin() + o.calib_n, cases.end());

  const EvalResult fit_eval =
      evaluate(fit_split, policy, loop, variant, seed, o.workers);
  std::map<std::string, std::vector<std::pair<double, int>>> pairs;
  for (std::size_t i = 0; i < fit_split.size(); ++i)
    pairs[fit_split[i].concept_id].emplace_back(
        fit_eval.episodes[i].p_final, fit_split[i].label);
  std::map<std::string, double> temperatures;
  for (const auto& [concept_id, concept_pairs] : pairs)
    temperatures[concept_id] = fit_overlay_temperature(concept_pairs);

  const OverlayResult result =
      overlay_eval(holdout, policy, loop, variant, temperatures, seed,
                   o.workers);
  json temps_json = json::object();
  for (const auto& [concept_id, t] : temperatures) temps_json[concept_id] = t;
  const auto brief = [](const Metrics& m) {
    return json{{"brier", m.brier},
                {"ece", m.ece},
                {"pg_rate", m.pg_rate},
                {"adoption_rate", m.adoption_rate},
                {"avg_steps", m.avg_steps},
                {"n", m.n}};
  };
  run.write_json("overlay.json", json{{"variant", to_string(variant)},
                                      {"seed", seed},
                                      {"n_fit", fit_split.size()},
                                      {"n_holdout", holdout.size()},
                                      {"temperatures", temps_json},
                                      {"before", brief(result.before)},
                                      {"after", brief(result.after)}});
  run.write("bins_before.csv", bins_csv(result.bins_before));
  run.write("bins_after.csv", bins_csv(result.bins_after));
  run.finalize();
  std::printf("ece before=%.4f after=%.4f\n", result.before.ece,
              result.after.ece);
}

struct ReportOpts {
  std::vector<std::string> metrics_paths;
  std::vector<std::string> bins_paths;
  std::string out_dir;
};

std::vector<ReliabilityBin> parse_bins_csv(const std::string& path) {
  const std::string text = read_text_file(path);
  std::vector<ReliabilityBin> bins;
  std::istringstream in(text);
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    ReliabilityBin b;
    unsigned long long count = 0;
    if (std::sscanf(line.c_str(), "%d,%lf,%lf,%llu", &b.bin_index,
                    &b.mean_confidence, &b.empirical_accuracy, &count) != 4)
      throw std::runtime_error(path + ": malformed bins row '" + line + "'");
    b.count = static_cast<std::size_t>(count);
    bins.push_back(b);
  }
  return bins;
}

void run_report(const ReportOpts& o) {
  RunDir run{fs::path(o.out_dir)};
  std::vector<ReportRow> rows;
  for (const std::string& path : o.metrics_paths) {
    json j;
    std::istringstream in(read_text_file(path));
    in >> j;
    ReportRow row;
    row.variant = j.at("variant").get<std::string>();
    row.metrics.brier = j.at("brier").get<double>();
    row.metrics.ece = j.at("ece").get<double>();
    row.metrics.pg_rate = j.at("pg_rate").get<double>();
    row.metrics.adoption_rate = j.at("adoption_rate").get<double>();
    row.metrics.avg_steps = j.at("avg_steps").get<double>();
    row.metrics.n = j.at("n").get<std::size_t>();
    const fs::path timing = fs::path(path).parent_path() / "timing.txt";
    if (fs::exists(timing)) {
      const Config t = Config::load(timing.string());
      row.wall_ms = t.get_double("mean_wall_ms", 0.0);
    }
    rows.push_back(std::move(row));
  }
  const std::string table = comparison_table(rows);
  run.write("report.txt", table);
  for (const std::string& path : o.bins_paths) {
    const auto bins = parse_bins_csv(path);
    const std::string stem = fs::path(path).stem().string();
    run.write(stem + ".svg", reliability_svg(bins, stem));
  }
  run.finalize();
  std::fputs(table.c_str(), stdout);
}

}  // namespace

int dispatch(int argc, const char* const* argv) {
  CLI::App app{"evidence-seeking diagnostic agent workbench"};
  app.require_subcommand(1);

  GenDataOpts gen;
  auto* c_gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  gen.o_n = c_gen->add_option("--n", gen.n, "number of cases");
  gen.o_seed = c_gen->add_option("--seed", gen.seed, "generation seed");
  gen.o_width = c_gen->add_option("--width", gen.width, "image width");
  gen.o_height = c_gen->add_option("--height", gen.height, "image height");
  gen.o_noise = c_gen->add_option("--noise", gen.noise, "noise sigma");
  gen.o_amplitude =
      c_gen->add_option("--amplitude", gen.amplitude, "signal amplitude");
  gen.o_roi = c_gen->add_option("--roi-size", gen.roi_size, "planted roi size");
  gen.o_pos = c_gen->add_option("--pos-rate", gen.pos_rate, "positive rate");
  gen.o_peaks = c_gen->add_option("--peaks", gen.peaks, "peaks per positive");
  gen.o_prior =
      c_gen->add_option("--prior-info", gen.prior_info, "prior informativeness");
  gen.o_minsep = c_gen->add_option("--min-sep", gen.min_sep,
                                   "min Chebyshev separation between peaks");
  gen.o_concepts =
      c_gen->add_option("--concepts", gen.concepts, "comma-separated concepts");
  gen.o_domain = c_gen->add_option("--domain-tag", gen.domain_tag, "domain tag");
  c_gen->add_option("--config", gen.config_path, "key=value config file");
  c_gen->add_option("--out", gen.out, "output dataset path")->required();
  c_gen->callback([&gen] { run_gen_data(gen); });

  CalibrateOpts cal;
  auto* c_cal =
      app.add_subcommand("calibrate", "fit per-concept score calibrations");
  c_cal->add_option("--data", cal.data, "dataset path")->required();
  c_cal->add_option("--out", cal.out, "output calibration path")->required();
  c_cal->add_option("--config", cal.config_path, "key=value config file");
  cal.o_backend = c_cal->add_option("--backend", cal.backend, "primary|fallback");
  cal.o_window = c_cal->add_option("--window", cal.window, "heatmap window");
  cal.o_scale = c_cal->add_option("--scale", cal.scale, "score scale");
  c_cal->callback([&cal] { run_calibrate(cal); });

  TrainOpts tr;
  auto* c_tr = app.add_subcommand("train", "align the policy with proxy RL");
  c_tr->add_option("--data", tr.data, "dataset path")->required();
  c_tr->add_option("--config", tr.config_path, "key=value config file");
  c_tr->add_option("--out", tr.out, "output policy path")->required();
  c_tr->add_option("--log", tr.log_path, "per-step JSONL log path");
  tr.o_seed = c_tr->add_option("--seed", tr.seed, "training seed");
  c_tr->callback([&tr] { run_train(tr); });

  const auto add_eval_like = [&app](const char* name, const char* desc,
                                    EvalLikeOpts& o, bool with_placebo) {
    auto* c = app.add_subcommand(name, desc);
    c->add_option("--data", o.data, "dataset path")->required();
    c->add_option("--policy", o.policy, "policy JSON path")->required();
    c->add_option("--calib", o.calib, "calibration JSON path");
    o.o_variant = c->add_option("--variant", o.variant,
                                "nopg|prior-mix|kbcs-mix|kbcs-gate");
    o.o_seed = c->add_option("--seed", o.seed, "evaluation seed");
    c->add_option("--config", o.config_path, "key=value config file");
    c->add_option("--out-dir", o.out_dir, "output directory")->required();
    c->add_option("--workers", o.workers, "parallel episode workers")
        ->check(CLI::PositiveNumber);
    if (with_placebo)
      c->add_flag("--placebo", o.placebo,
                  "mask a disjoint control roi instead of the adopted one");
    return c;
  };

  EvalLikeOpts ev;
  ev.variant = "kbcs-mix";
  auto* c_ev = add_eval_like("eval", "run one evaluation variant", ev, false);
  c_ev->callback([&ev] { run_eval(ev); });

  EvalLikeOpts iv;
  iv.variant = "kbcs-mix";
  auto* c_iv = add_eval_like(
      "intervene", "roi-masking causal intervention on the adopted cohort",
      iv, true);
  c_iv->callback([&iv] { run_intervene(iv); });

  OcclusionOpts oc;
  auto* c_oc =
      app.add_subcommand("occlusion", "tool-level occlusion-drop analysis");
  c_oc->add_option("--data", oc.data, "dataset path")->required();
  c_oc->add_option("--calib", oc.calib, "calibration JSON path")->required();
  c_oc->add_option("--roi-source", oc.roi_source, "gt|pred");
  c_oc->add_option("--n-random", oc.n_random, "random rois per case")
      ->check(CLI::PositiveNumber);
  c_oc->add_option("--seed", oc.seed, "random-roi seed");
  c_oc->add_option("--config", oc.config_path, "key=value config file");
  c_oc->add_option("--out-dir", oc.out_dir, "output directory")->required();
  c_oc->add_option("--workers", oc.workers, "parallel workers")
      ->check(CLI::PositiveNumber);
  c_oc->callback([&oc] { run_occlusion(oc); });

  SweepGateOpts sg;
  auto* c_sg =
      app.add_subcommand("sweep-gate", "adoption/brier vs gate threshold");
  c_sg->add_option("--data", sg.data, "dataset path")->required();
  c_sg->add_option("--policy", sg.policy, "policy JSON path")->required();
  c_sg->add_option("--calib", sg.calib, "calibration JSON path")->required();
  c_sg->add_option("--taus", sg.taus, "comma-separated gate thresholds")
      ->required();
  sg.o_seed = c_sg->add_option("--seed", sg.seed, "evaluation seed");
  c_sg->add_option("--config", sg.config_path, "key=value config file");
  c_sg->add_option("--out-dir", sg.out_dir, "output directory")->required();
  c_sg->add_option("--workers", sg.workers, "parallel workers")
      ->check(CLI::PositiveNumber);
  c_sg->callback([&sg] { run_sweep_gate(sg); });

  SweepStepsOpts ss;
  auto* c_ss = app.add_subcommand("sweep-steps", "metrics vs step budget");
  c_ss->add_option("--data", ss.data, "dataset path")->required();
  c_ss->add_option("--policy", ss.policy, "policy JSON path")->required();
  c_ss->add_option("--calib", ss.calib, "calibration JSON path");
  c_ss->add_option("--tmax-list", ss.tmax_list, "comma-separated step budgets")
      ->required();
  ss.o_variant = c_ss->add_option("--variant", ss.variant,
                                  "nopg|prior-mix|kbcs-mix|kbcs-gate");
  ss.o_seed = c_ss->add_option("--seed", ss.seed, "evaluation seed");
  c_ss->add_option("--config", ss.config_path, "key=value config file");
  c_ss->add_option("--out-dir", ss.out_dir, "output directory")->required();
  c_ss->add_option("--workers", ss.workers, "parallel workers")
      ->check(CLI::PositiveNumber);
  c_ss->callback([&ss] { run_sweep_steps(ss); });

  OverlayOpts ov;
  auto* c_ov = app.add_subcommand(
      "overlay", "fit and apply a post-hoc temperature overlay");
  c_ov->add_option("--data", ov.data, "dataset path (shifted domain)")
      ->required();
  c_ov->add_option("--policy", ov.policy, "policy JSON path")->required();
  c_ov->add_option("--calib", ov.calib, "calibration JSON path");
  ov.o_variant = c_ov->add_option("--variant", ov.variant,
                                  "nopg|prior-mix|kbcs-mix|kbcs-gate");
  c_ov->add_option("--calib-n", ov.calib_n,
                   "cases used to fit the overlay (prefix of the dataset)")
      ->check(CLI::PositiveNumber);
  ov.o_seed = c_ov->add_option("--seed", ov.seed, "evaluation seed");
  c_ov->add_option("--config", ov.config_path, "key=value config file");
  c_ov->add_option("--out-dir", ov.out_dir, "output directory")->required();
  c_ov->add_option("--workers", ov.workers, "parallel workers")
      ->check(CLI::PositiveNumber);
  c_ov->callback([&ov] { run_overlay(ov); });

  ReportOpts rp;
  auto* c_rp = app.add_subcommand(
      "report", "comparison table and reliability bubble diagrams");
  c_rp->add_option("--metrics", rp.metrics_paths, "metrics JSON paths")
      ->expected(-1);
  c_rp->add_option("--bins", rp.bins_paths, "reliability bins CSV paths")
      ->expected(-1);
  c_rp->add_option("--out-dir", rp.out_dir, "output directory")->required();
  c_rp->callback([&rp] { run_report(rp); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

int dispatch(const std::vector<std::string>& args) {
  std::vector<std::string> with_program = args;
  with_program.insert(with_program.begin(), "evseek");
  std::vector<const char*> argv;
  argv.reserve(with_program.size());
  for (const std::string& a : with_program) argv.push_back(a.c_str());
  return dispatch(static_cast<int>(argv.size()), argv.data());
}

}  // namespace evseek
