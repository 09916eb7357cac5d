#include "evseek/kbcs.hpp"

#include <cstdio>
#include <fstream>

#include "json.hpp"

namespace evseek {

std::string to_string(KbcsBackend backend) {
  return backend == KbcsBackend::Primary ? "primary" : "fallback";
}

KbcsBackend kbcs_backend_from_string(const std::string& name) {
  if (name == "primary") return KbcsBackend::Primary;
  if (name == "fallback") return KbcsBackend::Fallback;
  throw std::invalid_argument("unknown kbcs backend '" + name +
                              "' (expected primary|fallback)");
}

void validate(const KbcsConfig& cfg) {
  if (cfg.window < 1) throw std::invalid_argument("kbcs.window must be >= 1");
  if (!(cfg.score_scale > 0.0))
    throw std::invalid_argument("kbcs.score_scale must be > 0");
}

namespace {

std::string fmt_g17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::string backend_config_string(const KbcsConfig& cfg,
                                  const CalibrationParams& calibration) {
  std::string s;
  s += "backend=" + to_string(cfg.backend);
  s += ";window=" + std::to_string(cfg.window);
  s += ";score_scale=" + fmt_g17(cfg.score_scale);
  s += ";concept=" + calibration.concept_id;
  s += ";temperature=" + fmt_g17(calibration.temperature);
  s += ";bias=" + fmt_g17(calibration.bias);
  return s;
}

Image box_heatmap(const Image& image, int window) {
  if (window < 1 || window > image.width || window > image.height)
    throw std::out_of_range("box_heatmap: window must be in [1, min(W, H)]");
  Image out;
  out.width = image.width - window + 1;
  out.height = image.height - window + 1;
  out.pixels.resize(static_cast<std::size_t>(out.width) * out.height);
  const double inv = 1.0 / (static_cast<double>(window) * window);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      double sum = 0.0;
      for (int dy = 0; dy < window; ++dy)
        for (int dx = 0; dx < window; ++dx) sum += image.at(x + dx, y + dy);
      out.at(x, y) = sum * inv;
    }
  }
  return out;
}

PeakRoi select_peak_roi(const Image& heatmap, int window) {
  if (heatmap.pixels.empty())
    throw std::invalid_argument("select_peak_roi: empty heatmap");
  int best_x = 0, best_y = 0;
  double best = heatmap.at(0, 0);
  for (int y = 0; y < heatmap.height; ++y)
    for (int x = 0; x < heatmap.width; ++x)
      if (heatmap.at(x, y) > best) {  // strict: keeps smallest (y, x) on ties
        best = heatmap.at(x, y);
        best_x = x;
        best_y = y;
      }
  return PeakRoi{Roi{best_x, best_y, window, window}, best};
}

EvidenceReport probe(const Image& image, const std::string& concept_id,
                     const KbcsConfig& config, std::uint64_t call_seed) {
  validate(config);
  const auto it = config.calibrations.find(concept_id);
  if (it == config.calibrations.end())
    throw ToolError("kbcs: no calibration for concept '" + concept_id + "'");
  const CalibrationParams& calibration = it->second;

  EvidenceReport report;
  const Image heat = box_heatmap(image, config.window);
  const PeakRoi peak = select_peak_roi(heat, config.window);
  report.m_raw = config.score_scale * peak.peak;
  if (config.backend == KbcsBackend::Fallback) report.roi = peak.roi;
  report.p_evidence = apply_calibration(report.m_raw, calibration);
  report.provenance.backend_name = to_string(config.backend);
  report.provenance.backend_config_hash =
      fnv1a64(backend_config_string(config, calibration));
  report.provenance.calibration = calibration;
  report.provenance.window = config.window;
  report.provenance.call_seed = call_seed;
  return report;
}

double raw_score(const Image& image, const KbcsConfig& config) {
  validate(config);
  const Image heat = box_heatmap(image, config.window);
  return config.score_scale * select_peak_roi(heat, config.window).peak;
}

void save_calibrations(
    const std::map<std::string, CalibrationParams>& calibrations,
    const std::string& path) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& [concept_id, params] : calibrations)
    arr.push_back({{"concept", concept_id},
                   {"temperature", params.temperature},
                   {"bias", params.bias}});
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_calibrations: cannot open " + path);
  out << arr.dump(2) << '\n';
}

std::map<std::string, CalibrationParams> load_calibrations(
    const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_calibrations: cannot open " + path);
  nlohmann::json arr;
  try {
    in >> arr;
  } catch (const std::exception& e) {
    throw std::runtime_error(path + ": invalid calibration file: " + e.what());
  }
  std::map<std::string, CalibrationParams> out;
  for (const auto& j : arr) {
    CalibrationParams p;
    p.concept_id = j.at("concept").get<std::string>();
    p.temperature = j.at("temperature").get<double>();
    p.bias = j.at("bias").get<double>();
    if (!(p.temperature > 0.0))
      throw std::runtime_error(path + ": temperature for concept '" +
                               p.concept_id + "' must be > 0");
    out[p.concept_id] = p;
  }
  return out;
}

void validate(const ProxyConfig& cfg) {
  if (cfg.informativeness < 0.0)
    throw std::invalid_argument("proxy.informativeness must be >= 0");
}

EvidenceReport proxy_report(const Case& c, const ProxyConfig& cfg,
                            RngStream& rng) {
  validate(cfg);
  EvidenceReport report;
  report.m_raw =
      cfg.informativeness * (2.0 * c.label - 1.0) + rng.next_normal();
  report.p_evidence = sigmoid(report.m_raw);
  report.provenance.backend_name = "proxy";
  report.provenance.calibration = CalibrationParams::identity(c.concept_id);
  report.provenance.backend_config_hash = fnv1a64(
      "backend=proxy;informativeness=" + fmt_g17(cfg.informativeness));
  report.provenance.window = 0;
  report.provenance.call_seed = rng.key();
  return report;
}

double proxy_score(const Case& c, const ProxyConfig& cfg, RngStream& rng) {
  return proxy_report(c, cfg, rng).p_evidence;
}

}  // namespace evseek
