#include "evseek/environment.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "evseek/belief.hpp"
#include "json.hpp"

namespace evseek {

bool roi_in_bounds(const Roi& roi, const Image& image) {
  return roi.w >= 1 && roi.h >= 1 && roi.x >= 0 && roi.y >= 0 &&
         roi.x + roi.w <= image.width && roi.y + roi.h <= image.height;
}

bool rois_overlap(const Roi& a, const Roi& b) {
  return a.x < b.x + b.w && b.x < a.x + a.w && a.y < b.y + b.h &&
         b.y < a.y + a.h;
}

void validate(const GenSpec& spec) {
  if (spec.width < 1 || spec.height < 1)
    throw std::invalid_argument("data.width/data.height must be >= 1");
  if (spec.roi_size < 1 || spec.roi_size > spec.width ||
      spec.roi_size > spec.height)
    throw std::invalid_argument("data.roi_size must fit inside the image");
  if (spec.positive_rate < 0.0 || spec.positive_rate > 1.0)
    throw std::invalid_argument("data.positive_rate must be in [0, 1]");
  if (spec.n_peaks < 1) throw std::invalid_argument("data.n_peaks must be >= 1");
  if (spec.noise_sigma < 0.0)
    throw std::invalid_argument("data.noise_sigma must be >= 0");
  if (spec.prior_informativeness < 0.0)
    throw std::invalid_argument("data.prior_informativeness must be >= 0");
  if (spec.concepts.empty())
    throw std::invalid_argument("data.concepts must be non-empty");
  if (spec.min_peak_separation < 0)
    throw std::invalid_argument("data.min_peak_separation must be >= 0");
}

namespace {

bool separated(const Roi& a, const Roi& b, int min_sep) {
  return std::max(std::abs(a.x - b.x), std::abs(a.y - b.y)) >= min_sep;
}

std::vector<Roi> place_peaks(const GenSpec& spec, RngStream& rng) {
  std::vector<Roi> peaks;
  peaks.reserve(spec.n_peaks);
  const int s = spec.roi_size;
  for (int k = 0; k < spec.n_peaks; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      Roi candidate{
          static_cast<int>(rng.next_below(spec.width - s + 1)),
          static_cast<int>(rng.next_below(spec.height - s + 1)), s, s};
      bool ok = true;
      for (const Roi& prev : peaks) {
        if (rois_overlap(candidate, prev) ||
            (spec.min_peak_separation > 0 &&
             !separated(candidate, prev, spec.min_peak_separation))) {
          ok = false;
          break;
        }
      }
      if (ok) {
        peaks.push_back(candidate);
        placed = true;
      }
    }
    if (!placed)
      throw std::runtime_error(
          "generate_case: could not place non-overlapping peak rectangles "
          "after 100 attempts");
  }
  return peaks;
}

}  // namespace

Case generate_case(const GenSpec& spec, std::uint64_t index) {
  validate(spec);
  const std::uint64_t case_key = derive_key(spec.seed, index);

  Case c;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "c%06llu",
                static_cast<unsigned long long>(index));
  c.id = buf;
  c.domain_tag = spec.domain_tag;

  RngStream concept_rng(derive_key(case_key, "concept"));
  c.concept_id = spec.concepts[concept_rng.next_below(spec.concepts.size())];

  RngStream label_rng(derive_key(case_key, "label"));
  c.label = label_rng.next_bernoulli(spec.positive_rate) ? 1 : 0;

  RngStream pixel_rng(derive_key(case_key, "pixels"));
  c.image.width = spec.width;
  c.image.height = spec.height;
  c.image.pixels.resize(static_cast<std::size_t>(spec.width) * spec.height);
  for (double& px : c.image.pixels) px = spec.noise_sigma * pixel_rng.next_normal();

  if (c.label == 1) {
    RngStream roi_rng(derive_key(case_key, "roi"));
    const auto peaks = place_peaks(spec, roi_rng);
    for (const Roi& peak : peaks)
      for (int y = peak.y; y < peak.y + peak.h; ++y)
        for (int x = peak.x; x < peak.x + peak.w; ++x)
          c.image.at(x, y) += spec.signal_amplitude;
    c.gt_roi = peaks.front();
  }

  RngStream prior_rng(derive_key(case_key, "prior"));
  const double raw = spec.prior_informativeness * (2.0 * c.label - 1.0) +
                     prior_rng.next_normal();
  c.prior_score = sigmoid(raw);
  return c;
}

std::vector<Case> generate_dataset(const GenSpec& spec, std::uint64_t count) {
  std::vector<Case> cases;
  cases.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) cases.push_back(generate_case(spec, i));
  return cases;
}

Image mask_roi(const Image& image, const Roi& roi, double fill) {
  if (!roi_in_bounds(roi, image))
    throw std::out_of_range("mask_roi: roi outside image bounds");
  Image out = image;
  for (int y = roi.y; y < roi.y + roi.h; ++y)
    for (int x = roi.x; x < roi.x + roi.w; ++x) out.at(x, y) = fill;
  return out;
}

Roi random_roi(int width, int height, int w, int h, RngStream& rng) {
  if (w > width || h > height || w < 1 || h < 1)
    throw std::invalid_argument("random_roi: rectangle larger than image");
  const int x = static_cast<int>(rng.next_below(width - w + 1));
  const int y = static_cast<int>(rng.next_below(height - h + 1));
  return Roi{x, y, w, h};
}

namespace {

using nlohmann::json;

json roi_to_json(const Roi& r) {
  return json{{"x", r.x}, {"y", r.y}, {"w", r.w}, {"h", r.h}};
}

Roi roi_from_json(const json& j) {
  return Roi{j.at("x").get<int>(), j.at("y").get<int>(), j.at("w").get<int>(),
             j.at("h").get<int>()};
}

}  // namespace

void save_dataset(const std::vector<Case>& cases, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_dataset: cannot open " + path);
  for (const Case& c : cases) {
    json j{{"id", c.id},
           {"concept", c.concept_id},
           {"label", c.label},
           {"width", c.image.width},
           {"height", c.image.height},
           {"pixels", c.image.pixels},
           {"gt_roi", c.gt_roi ? roi_to_json(*c.gt_roi) : json(nullptr)},
           {"prior_score", c.prior_score ? json(*c.prior_score) : json(nullptr)},
           {"domain_tag", c.domain_tag}};
    out << j.dump() << '\n';
  }
}

std::vector<Case> load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_dataset: cannot open " + path);
  std::vector<Case> cases;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
      Case c;
      c.id = j.at("id").get<std::string>();
      c.concept_id = j.at("concept").get<std::string>();
      c.label = j.at("label").get<int>();
      c.image.width = j.at("width").get<int>();
      c.image.height = j.at("height").get<int>();
      c.image.pixels = j.at("pixels").get<std::vector<double>>();
      if (!j.at("gt_roi").is_null()) c.gt_roi = roi_from_json(j.at("gt_roi"));
      if (!j.at("prior_score").is_null())
        c.prior_score = j.at("prior_score").get<double>();
      c.domain_tag = j.at("domain_tag").get<std::string>();
      if (c.label != 0 && c.label != 1)
        throw std::runtime_error("label must be 0 or 1");
      if (c.image.pixels.size() !=
          static_cast<std::size_t>(c.image.width) * c.image.height)
        throw std::runtime_error("pixel count does not match width*height");
      if (c.gt_roi && !roi_in_bounds(*c.gt_roi, c.image))
        throw std::runtime_error("gt_roi outside image bounds");
      cases.push_back(std::move(c));
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ": parse error at line " +
                               std::to_string(line_no) + ": " + e.what());
    }
  }
  return cases;
}

}  // namespace evseek
