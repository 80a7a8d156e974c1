#pragma once

// Static score-versus-time figures written as standalone SVG.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "dada/dataset.hpp"
#include "dada/error.hpp"

namespace dada::plot {

struct ScorePlot {
  std::string title;
  std::vector<double> scores;
  std::optional<std::vector<double>> values;  // raw series drawn in a panel above
  std::optional<Labels> labels;               // shaded as ground-truth events
  Labels decisions;
  double threshold = std::nan("");
};

namespace detail {

// Min/max envelope per pixel column keeps spikes visible after downsampling.
inline std::string envelope_path(std::span<const double> y, double x0, double width, double y0, double height,
                                 double lo, double hi) {
  const std::size_t n = y.size();
  const auto cols = static_cast<std::size_t>(width);
  const double span = hi > lo ? hi - lo : 1.0;
  const auto py = [&](double v) { return y0 + height - (v - lo) / span * height; };
  std::ostringstream d;
  d.setf(std::ios::fixed);
  d.precision(1);
  for (std::size_t c = 0; c < cols; ++c) {
    const std::size_t a = c * n / cols;
    const std::size_t b = std::max(a + 1, (c + 1) * n / cols);
    if (a >= n) break;
    const auto [mn, mx] = std::minmax_element(y.begin() + static_cast<std::ptrdiff_t>(a),
                                              y.begin() + static_cast<std::ptrdiff_t>(std::min(b, n)));
    const double x = x0 + static_cast<double>(c);
    d << (c == 0 ? "M" : "L") << x << ',' << py(*mx) << " L" << x << ',' << py(*mn) << ' ';
  }
  return d.str();
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    if (ch == '<') out += "&lt;";
    else if (ch == '>') out += "&gt;";
    else if (ch == '&') out += "&amp;";
    else out += ch;
  }
  return out;
}

inline void shade_runs(std::ostringstream& svg, std::span<const std::uint8_t> y, double x0, double width, double top,
                       double height, const char* fill) {
  const double n = static_cast<double>(y.size());
  for (std::size_t i = 0; i < y.size();) {
    if (!y[i]) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < y.size() && y[j]) ++j;
    const double xa = x0 + width * static_cast<double>(i) / n;
    const double xb = x0 + width * static_cast<double>(j) / n;
    svg << "<rect x=\"" << xa << "\" y=\"" << top << "\" width=\"" << std::max(0.5, xb - xa) << "\" height=\""
        << height << "\" fill=\"" << fill << "\"/>\n";
    i = j;
  }
}

}  // namespace detail

inline std::string render_svg(const ScorePlot& p) {
  if (p.scores.empty()) throw EvaluationError("EmptyPlot", "no scores to plot");
  const double width = 1000, left = 60, right = 20, panel = 180, gap = 30, top = 40;
  const double plot_w = width - left - right;
  const bool raw = p.values.has_value() && !p.values->empty();
  const double height = top + (raw ? 2 * panel + gap : panel) + 40;
  std::ostringstream svg;
  svg.setf(std::ios::fixed);
  svg.precision(2);
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << left << "\" y=\"24\" font-size=\"14\">" << detail::escape(p.title) << "</text>\n";

  auto panel_frame = [&](double y0, const std::string& label, double lo, double hi) {
    svg << "<rect x=\"" << left << "\" y=\"" << y0 << "\" width=\"" << plot_w << "\" height=\"" << panel
        << "\" fill=\"none\" stroke=\"#888\"/>\n";
    svg << "<text x=\"4\" y=\"" << y0 + 12 << "\">" << label << "</text>\n";
    svg << "<text x=\"4\" y=\"" << y0 + panel << "\">" << lo << "</text>\n";
    svg << "<text x=\"4\" y=\"" << y0 + 26 << "\">" << hi << "</text>\n";
  };

  double y0 = top;
  if (raw) {
    const auto [mn, mx] = std::minmax_element(p.values->begin(), p.values->end());
    if (p.labels) detail::shade_runs(svg, *p.labels, left, plot_w, y0, panel, "#f6c6c6");
    panel_frame(y0, "value", *mn, *mx);
    svg << "<path d=\"" << detail::envelope_path(*p.values, left, plot_w, y0, panel, *mn, *mx)
        << "\" fill=\"none\" stroke=\"#1f4e8c\" stroke-width=\"0.8\"/>\n";
    y0 += panel + gap;
  }

  const double lo = 0.0;
  double hi = *std::max_element(p.scores.begin(), p.scores.end());
  if (std::isfinite(p.threshold)) hi = std::max(hi, p.threshold * 1.1);
  if (!(hi > lo)) hi = lo + 1.0;
  if (p.labels) detail::shade_runs(svg, *p.labels, left, plot_w, y0, panel, "#f6c6c6");
  if (!p.decisions.empty()) detail::shade_runs(svg, p.decisions, left, plot_w, y0 + panel - 6, 6, "#d62728");
  panel_frame(y0, "score", lo, hi);
  svg << "<path d=\"" << detail::envelope_path(p.scores, left, plot_w, y0, panel, lo, hi)
      << "\" fill=\"none\" stroke=\"#333\" stroke-width=\"0.8\"/>\n";
  if (std::isfinite(p.threshold)) {
    const double ty = y0 + panel - (p.threshold - lo) / (hi - lo) * panel;
    svg << "<line x1=\"" << left << "\" x2=\"" << left + plot_w << "\" y1=\"" << ty << "\" y2=\"" << ty
        << "\" stroke=\"#d62728\" stroke-dasharray=\"6,4\"/>\n";
    svg << "<text x=\"" << left + plot_w - 140 << "\" y=\"" << ty - 4 << "\" fill=\"#d62728\">threshold "
        << p.threshold << "</text>\n";
  }
  svg << "<text x=\"" << left << "\" y=\"" << height - 12 << "\">t = 0 .. " << p.scores.size() - 1 << "</text>\n";
  svg << "</svg>\n";
  return svg.str();
}

inline void write_svg(const std::filesystem::path& path, const ScorePlot& p) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("MalformedFile", "cannot write " + path.string());
  out << render_svg(p);
}

}  // namespace dada::plot
