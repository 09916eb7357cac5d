#pragma once

// Deterministic synthetic image environment: cases with plantable signal
// rectangles on Gaussian noise, pixel masking for causal interventions, and
// JSON-lines dataset serialization. Generation is a pure function of
// (spec, index), so datasets can be produced in any order on any number of
// workers and remain bit-identical.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "evseek/rng.hpp"

namespace evseek {

struct Roi {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;

  bool operator==(const Roi&) const = default;
};

struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> pixels;  // row-major

  double at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  double& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }

  bool operator==(const Image&) const = default;
};

bool roi_in_bounds(const Roi& roi, const Image& image);
bool rois_overlap(const Roi& a, const Roi& b);

struct Case {
  std::string id;
  std::string concept_id;
  Image image;
  int label = 0;  // g in {0, 1}
  std::optional<Roi> gt_roi;
  std::optional<double> prior_score;
  std::string domain_tag = "source";
};

struct GenSpec {
  int width = 64;
  int height = 64;
  double noise_sigma = 1.0;
  double signal_amplitude = 2.0;
  int roi_size = 8;
  double positive_rate = 0.5;
  int n_peaks = 1;
  double prior_informativeness = 0.0;
  std::uint64_t seed = 0;
  std::vector<std::string> concepts = {"lesion"};
  std::string domain_tag = "source";
  // Minimum Chebyshev separation between planted peak origins. 0 keeps plain
  // uniform placement; the two-peak occlusion construction sets this to keep
  // one peak out of reach of any single same-size mask.
  int min_peak_separation = 0;
};

void validate(const GenSpec& spec);

// Deterministic per (spec.seed, index). Throws if peak rectangles cannot be
// placed without overlap after 100 attempts per peak.
Case generate_case(const GenSpec& spec, std::uint64_t index);

std::vector<Case> generate_dataset(const GenSpec& spec, std::uint64_t count);

// Copy of image with all pixels inside roi set to fill. Throws on
// out-of-bounds roi.
Image mask_roi(const Image& image, const Roi& roi, double fill);

// Uniform random in-bounds placement of a w x h rectangle.
Roi random_roi(int width, int height, int w, int h, RngStream& rng);

// JSON-lines dataset IO; load(save(d)) == d bit-exactly.
void save_dataset(const std::vector<Case>& cases, const std::string& path);
std::vector<Case> load_dataset(const std::string& path);

}  // namespace evseek
