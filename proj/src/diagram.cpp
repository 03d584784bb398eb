#include "clampcal/diagram.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "clampcal/error.hpp"
#include "clampcal/metrics.hpp"

namespace clampcal {

ReliabilityDiagram build_diagram(const ProbMatrix& probs, std::span<const int> labels,
                                 std::size_t num_bins) {
  auto acc = top_label_bins(probs, labels, {BinScheme::equal_width, num_bins});
  ReliabilityDiagram d;
  d.n = probs.num_samples();
  d.m = num_bins;
  d.bins.reserve(num_bins);
  const auto m_total = static_cast<double>(num_bins);
  for (std::size_t b = 0; b < num_bins; ++b) {
    BinStat s;
    s.index = b + 1;
    s.lower = static_cast<double>(b) / m_total;
    s.upper = static_cast<double>(b + 1) / m_total;
    s.count = acc[b].count;
    if (s.count > 0) {
      s.accuracy = acc[b].accuracy();
      s.mean_confidence = acc[b].mean_confidence();
      s.gap = acc[b].gap();
    }
    d.bins.push_back(s);
  }
  d.ece = weighted_gap(acc, d.n);
  return d;
}

std::string to_json(const ReliabilityDiagram& diagram) {
  nlohmann::ordered_json j;
  j["m"] = diagram.m;
  j["n"] = diagram.n;
  j["ece"] = diagram.ece;
  auto bins = nlohmann::ordered_json::array();
  for (const auto& b : diagram.bins) {
    nlohmann::ordered_json o;
    o["index"] = b.index;
    o["lower"] = b.lower;
    o["upper"] = b.upper;
    o["count"] = b.count;
    o["accuracy"] = b.accuracy;
    o["mean_confidence"] = b.mean_confidence;
    o["gap"] = b.gap;
    bins.push_back(std::move(o));
  }
  j["bins"] = std::move(bins);
  return j.dump();
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

constexpr const char* kActualFill = "rgb(56,56,255)";
constexpr const char* kExpectedFill = "rgb(255,164,181)";

}  // namespace

std::string render_svg(const ReliabilityDiagram& diagram, int width_px, int height_px,
                       const SvgOptions& options) {
  if (width_px <= 0 || height_px <= 0) throw ValidationError("SVG dimensions must be positive");
  const double w = width_px;
  const double h = height_px;
  // Plot area inside fixed-fraction margins.
  const double left = w * 0.12, right = w * 0.96, top = h * 0.08, bottom = h * 0.86;
  const double pw = right - left, ph = bottom - top;
  auto px = [&](double v) { return left + v * pw; };
  auto py = [&](double v) { return bottom - v * ph; };

  std::ostringstream out;
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << width_px
      << "\" height=\"" << height_px << "\" viewBox=\"0 0 " << width_px << ' ' << height_px
      << "\">\n";
  out << "<rect x=\"0\" y=\"0\" width=\"" << width_px << "\" height=\"" << height_px
      << "\" fill=\"white\"/>\n";

  const auto m_total = static_cast<double>(std::max<std::size_t>(diagram.m, 1));
  const double bar_w = pw / m_total;

  out << "<g class=\"expected\">\n";
  for (const auto& b : diagram.bins) {
    double height = (static_cast<double>(b.index) - 0.5) / m_total;
    if (options.expected == ExpectedBar::mean_confidence && b.count > 0) height = b.mean_confidence;
    out << "<rect class=\"bar-expected\" x=\"" << fmt(px(b.lower)) << "\" y=\"" << fmt(py(height))
        << "\" width=\"" << fmt(bar_w) << "\" height=\"" << fmt(height * ph) << "\" fill=\""
        << kExpectedFill << "\" fill-opacity=\"0.6\" stroke=\"" << kExpectedFill << "\"/>\n";
  }
  out << "</g>\n<g class=\"actual\">\n";
  for (const auto& b : diagram.bins) {
    out << "<rect class=\"bar-actual\" x=\"" << fmt(px(b.lower)) << "\" y=\""
        << fmt(py(b.accuracy)) << "\" width=\"" << fmt(bar_w) << "\" height=\""
        << fmt(b.accuracy * ph) << "\" fill=\"" << kActualFill
        << "\" fill-opacity=\"0.8\" stroke=\"black\" stroke-width=\"0.5\"/>\n";
  }
  out << "</g>\n";

  // Diagonal and axes.
  out << "<line class=\"diagonal\" x1=\"" << fmt(px(0)) << "\" y1=\"" << fmt(py(0)) << "\" x2=\""
      << fmt(px(1)) << "\" y2=\"" << fmt(py(1))
      << "\" stroke=\"gray\" stroke-dasharray=\"4,4\"/>\n";
  out << "<line class=\"axis\" x1=\"" << fmt(px(0)) << "\" y1=\"" << fmt(py(0)) << "\" x2=\""
      << fmt(px(1)) << "\" y2=\"" << fmt(py(0)) << "\" stroke=\"black\"/>\n";
  out << "<line class=\"axis\" x1=\"" << fmt(px(0)) << "\" y1=\"" << fmt(py(0)) << "\" x2=\""
      << fmt(px(0)) << "\" y2=\"" << fmt(py(1)) << "\" stroke=\"black\"/>\n";
  const double font = std::max(8.0, h * 0.03);
  for (int t = 0; t <= 5; ++t) {
    double v = t / 5.0;
    char label[8];
    std::snprintf(label, sizeof label, "%.1f", v);
    out << "<text x=\"" << fmt(px(v)) << "\" y=\"" << fmt(py(0) + font * 1.2)
        << "\" font-size=\"" << fmt(font) << "\" text-anchor=\"middle\">" << label << "</text>\n";
    out << "<text x=\"" << fmt(px(0) - font * 0.4) << "\" y=\"" << fmt(py(v) + font * 0.35)
        << "\" font-size=\"" << fmt(font) << "\" text-anchor=\"end\">" << label << "</text>\n";
  }
  out << "<text x=\"" << fmt(left + pw / 2) << "\" y=\"" << fmt(h - font * 0.3)
      << "\" font-size=\"" << fmt(font) << "\" text-anchor=\"middle\">Confidence</text>\n";
  out << "<text x=\"" << fmt(font) << "\" y=\"" << fmt(top + ph / 2) << "\" font-size=\""
      << fmt(font) << "\" text-anchor=\"middle\" transform=\"rotate(-90 " << fmt(font) << ' '
      << fmt(top + ph / 2) << ")\">Accuracy</text>\n";

  char ece_text[48];
  std::snprintf(ece_text, sizeof ece_text, "ECE = %.4f", diagram.ece);
  out << "<text class=\"ece\" x=\"" << fmt(left + font * 0.5) << "\" y=\"" << fmt(top + font * 1.2)
      << "\" font-size=\"" << fmt(font) << "\">" << ece_text << "</text>\n";
  out << "</svg>\n";
  return out.str();
}

}  // namespace clampcal
