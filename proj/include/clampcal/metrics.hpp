#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "clampcal/dataset.hpp"

namespace clampcal {

inline constexpr std::size_t kDefaultBins = 15;
inline constexpr std::size_t kDefaultRanges = 15;
inline constexpr double kLogClamp = 1e-12;

enum class BinScheme { equal_width, equal_mass };

struct BinSpec {
  BinScheme scheme = BinScheme::equal_width;
  std::size_t num_bins = kDefaultBins;
};

struct MetricReport {
  double ece = 0.0;
  double sce = 0.0;
  double ace = 0.0;
  double nll = 0.0;
  std::size_t num_bins_used = 0;  // populated top-label bins
  std::size_t n = 0;
};

// Bin m in [1, M] with (m-1)/M < confidence <= m/M. The interval edges are the
// doubles (m-1)/M and m/M, so membership agrees with an explicit interval test.
std::size_t bin_index(double confidence, std::size_t num_bins);

// Running sums for one bin.
struct BinAccumulator {
  std::size_t count = 0;
  double hits = 0.0;
  double confidence_sum = 0.0;

  void add(double confidence, bool hit) {
    ++count;
    hits += hit ? 1.0 : 0.0;
    confidence_sum += confidence;
  }
  double accuracy() const { return count ? hits / static_cast<double>(count) : 0.0; }
  double mean_confidence() const {
    return count ? confidence_sum / static_cast<double>(count) : 0.0;
  }
  double gap() const;
};

// Sum over bins of (count/N) * |acc - conf|, bins visited in index order.
double weighted_gap(std::span<const BinAccumulator> bins, std::size_t n);

// Top-label bins. For equal_mass, samples are sorted by confidence (ties put
// misses before hits) and cut into M contiguous runs, larger runs first.
std::vector<BinAccumulator> top_label_bins(const ProbMatrix& probs, std::span<const int> labels,
                                           const BinSpec& spec);

double ece(const ProbMatrix& probs, std::span<const int> labels, const BinSpec& spec = {});
double sce(const ProbMatrix& probs, std::span<const int> labels, const BinSpec& spec = {});
double ace(const ProbMatrix& probs, std::span<const int> labels,
           std::size_t num_ranges = kDefaultRanges);
double nll(const ProbMatrix& probs, std::span<const int> labels);
double focal_loss(const ProbMatrix& probs, std::span<const int> labels, double gamma);

// Sizes of R contiguous ranges over N items, the larger ranges first.
std::vector<std::size_t> range_sizes(std::size_t n, std::size_t num_ranges);

// ECE/SCE over `num_bins` equal-width bins, ACE over min(num_ranges, N) ranges.
MetricReport compute_report(const ProbMatrix& probs, std::span<const int> labels,
                            std::size_t num_bins = kDefaultBins,
                            std::size_t num_ranges = kDefaultRanges);

std::string to_json(const MetricReport& report);

}  // namespace clampcal
