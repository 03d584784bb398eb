#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "clampcal/dataset.hpp"

namespace clampcal {

struct BinStat {
  std::size_t index = 0;  // 1-based
  double lower = 0.0;
  double upper = 0.0;
  std::size_t count = 0;
  // Empty bins carry zeros for accuracy, mean_confidence and gap.
  double accuracy = 0.0;
  double mean_confidence = 0.0;
  double gap = 0.0;
};

struct ReliabilityDiagram {
  std::vector<BinStat> bins;
  double ece = 0.0;
  std::size_t n = 0;
  std::size_t m = 0;
};

ReliabilityDiagram build_diagram(const ProbMatrix& probs, std::span<const int> labels,
                                 std::size_t num_bins);

std::string to_json(const ReliabilityDiagram& diagram);

// Height of the pink "expected accuracy" bar.
enum class ExpectedBar {
  midpoint,         // (m - 0.5) / M
  mean_confidence,  // conf(B_m); falls back to the midpoint for empty bins
};

struct SvgOptions {
  ExpectedBar expected = ExpectedBar::midpoint;
};

// Reliability diagram as standalone SVG 1.1. Output is a pure function of the inputs.
std::string render_svg(const ReliabilityDiagram& diagram, int width_px, int height_px,
                       const SvgOptions& options = {});

}  // namespace clampcal
