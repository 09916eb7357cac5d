#pragma once

// Artifact emitters: reliability-bin CSV, sweep CSVs, the SVG bubble
// reliability diagram, and the plain-text variant comparison table. All
// output is built from values only, so files are byte-reproducible.

#include <optional>
#include <string>
#include <vector>

#include "evseek/eval.hpp"

namespace evseek {

// Circles at (mean_confidence, empirical_accuracy), radius proportional to
// sqrt(count), dashed identity diagonal. Empty bins draw nothing.
std::string reliability_svg(const std::vector<ReliabilityBin>& bins,
                            const std::string& title);

std::string bins_csv(const std::vector<ReliabilityBin>& bins);
std::string gate_sweep_csv(const std::vector<GateSweepRow>& rows);
std::string step_sweep_csv(const std::vector<StepSweepRow>& rows);

struct ReportRow {
  std::string variant;
  Metrics metrics;
  std::optional<double> wall_ms;  // absent renders as "n/a"
};

// variant x {Brier, ECE, P&G rate, adoption rate, WallMS} text table.
std::string comparison_table(const std::vector<ReportRow>& rows);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace evseek
