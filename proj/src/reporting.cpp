#include "evseek/reporting.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace evseek {

namespace {

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

}  // namespace

std::string reliability_svg(const std::vector<ReliabilityBin>& bins,
                            const std::string& title) {
  constexpr int kSize = 480;
  constexpr int kMargin = 48;
  constexpr double kPlot = kSize - 2.0 * kMargin;
  const auto sx = [&](double v) { return kMargin + v * kPlot; };
  const auto sy = [&](double v) { return kSize - kMargin - v * kPlot; };

  std::size_t max_count = 0;
  for (const ReliabilityBin& b : bins) max_count = std::max(max_count, b.count);

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kSize
      << "\" height=\"" << kSize << "\" viewBox=\"0 0 " << kSize << ' '
      << kSize << "\">\n";
  svg << "<rect width=\"" << kSize << "\" height=\"" << kSize
      << "\" fill=\"white\"/>\n";
  svg << "<text x=\"" << kSize / 2 << "\" y=\"24\" text-anchor=\"middle\" "
         "font-family=\"sans-serif\" font-size=\"14\">"
      << title << "</text>\n";
  // axes
  svg << "<line x1=\"" << fmt("%.1f", sx(0)) << "\" y1=\""
      << fmt("%.1f", sy(0)) << "\" x2=\"" << fmt("%.1f", sx(1)) << "\" y2=\""
      << fmt("%.1f", sy(0)) << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << fmt("%.1f", sx(0)) << "\" y1=\""
      << fmt("%.1f", sy(0)) << "\" x2=\"" << fmt("%.1f", sx(0)) << "\" y2=\""
      << fmt("%.1f", sy(1)) << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double v = i / 5.0;
    svg << "<text x=\"" << fmt("%.1f", sx(v)) << "\" y=\""
        << fmt("%.1f", sy(0) + 18) << "\" text-anchor=\"middle\" "
           "font-family=\"sans-serif\" font-size=\"10\">"
        << fmt("%.1f", v) << "</text>\n";
    svg << "<text x=\"" << fmt("%.1f", sx(0) - 10) << "\" y=\""
        << fmt("%.1f", sy(v) + 3) << "\" text-anchor=\"end\" "
           "font-family=\"sans-serif\" font-size=\"10\">"
        << fmt("%.1f", v) << "</text>\n";
  }
  svg << "<text x=\"" << kSize / 2 << "\" y=\"" << kSize - 8
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"12\">Confidence</text>\n";
  svg << "<text x=\"14\" y=\"" << kSize / 2
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"12\" transform=\"rotate(-90 14 "
      << kSize / 2 << ")\">Accuracy</text>\n";
  // identity diagonal
  svg << "<line x1=\"" << fmt("%.1f", sx(0)) << "\" y1=\""
      << fmt("%.1f", sy(0)) << "\" x2=\"" << fmt("%.1f", sx(1)) << "\" y2=\""
      << fmt("%.1f", sy(1))
      << "\" stroke=\"gray\" stroke-dasharray=\"6,4\"/>\n";
  // bubbles: radius proportional to sqrt(count)
  if (max_count > 0) {
    const double scale = 26.0 / std::sqrt(static_cast<double>(max_count));
    for (const ReliabilityBin& b : bins) {
      if (b.count == 0) continue;
      const double r = scale * std::sqrt(static_cast<double>(b.count));
      svg << "<circle cx=\"" << fmt("%.2f", sx(b.mean_confidence))
          << "\" cy=\"" << fmt("%.2f", sy(b.empirical_accuracy)) << "\" r=\""
          << fmt("%.2f", r)
          << "\" fill=\"steelblue\" fill-opacity=\"0.55\" "
             "stroke=\"steelblue\"/>\n";
    }
  }
  svg << "</svg>\n";
  return svg.str();
}

std::string bins_csv(const std::vector<ReliabilityBin>& bins) {
  std::string out = "bin_index,mean_confidence,accuracy,count\n";
  for (const ReliabilityBin& b : bins) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%zu\n", b.bin_index,
                  b.mean_confidence, b.empirical_accuracy, b.count);
    out += buf;
  }
  return out;
}

std::string gate_sweep_csv(const std::vector<GateSweepRow>& rows) {
  std::string out = "gate_threshold,adoption_rate,brier\n";
  for (const GateSweepRow& r : rows) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g\n", r.gate_threshold,
                  r.adoption_rate, r.brier);
    out += buf;
  }
  return out;
}

std::string step_sweep_csv(const std::vector<StepSweepRow>& rows) {
  std::string out = "t_max,brier,ece,avg_steps\n";
  for (const StepSweepRow& r : rows) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g\n", r.t_max, r.brier,
                  r.ece, r.avg_steps);
    out += buf;
  }
  return out;
}

std::string comparison_table(const std::vector<ReportRow>& rows) {
  std::ostringstream out;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%-12s %8s %8s %9s %10s %9s\n", "Variant",
                "Brier", "ECE", "PG-Rate", "Adpt-Rate", "WallMS");
  out << buf;
  out << std::string(60, '-') << '\n';
  for (const ReportRow& r : rows) {
    std::string wall = "n/a";
    if (r.wall_ms) wall = fmt("%.3f", *r.wall_ms);
    std::snprintf(buf, sizeof(buf), "%-12s %8.4f %8.4f %9.3f %10.3f %9s\n",
                  r.variant.c_str(), r.metrics.brier, r.metrics.ece,
                  r.metrics.pg_rate, r.metrics.adoption_rate, wall.c_str());
    out << buf;
  }
  return out.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << content;
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace evseek
