#include "clampcal/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "clampcal/error.hpp"

namespace clampcal {
namespace {

void check_inputs(const ProbMatrix& probs, std::span<const int> labels) {
  if (probs.num_samples() == 0) throw ValidationError("no samples (N = 0)");
  if (labels.size() != probs.num_samples()) {
    throw ValidationError("label count " + std::to_string(labels.size()) +
                          " does not match sample count " + std::to_string(probs.num_samples()));
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= probs.num_classes()) {
      throw ValidationError("sample " + std::to_string(i) + ": label " + std::to_string(labels[i]) +
                            " out of range [0," + std::to_string(probs.num_classes()) + ")");
    }
  }
}

void check_bins(std::size_t num_bins) {
  if (num_bins < 1) throw ValidationError("number of bins must be at least 1");
}

// Class-probability columns may contain exact zeros; they belong to bin 1.
std::size_t column_bin(double p, std::size_t num_bins) {
  return p <= 0.0 ? 1 : bin_index(p, num_bins);
}

// Indices 0..N-1 ordered by (value, hit) with misses first, then by index.
// Samples that still tie are interchangeable for every range statistic, so the
// resulting partition does not depend on the input order.
std::vector<std::size_t> sorted_order(std::size_t n, auto value_at, auto hit_at) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    double va = value_at(a), vb = value_at(b);
    if (va != vb) return va < vb;
    return !hit_at(a) && hit_at(b);
  });
  return order;
}

}  // namespace

std::size_t bin_index(double confidence, std::size_t num_bins) {
  if (!(confidence > 0.0 && confidence <= 1.0)) {
    throw ValidationError("confidence must lie in (0,1]");
  }
  check_bins(num_bins);
  const auto m_total = static_cast<double>(num_bins);
  auto m = static_cast<std::size_t>(std::ceil(confidence * m_total));
  m = std::clamp<std::size_t>(m, 1, num_bins);
  // ceil(c*M) can be off by one near an edge; settle against the edges themselves.
  while (m > 1 && confidence <= static_cast<double>(m - 1) / m_total) --m;
  while (m < num_bins && confidence > static_cast<double>(m) / m_total) ++m;
  return m;
}

double BinAccumulator::gap() const { return std::abs(accuracy() - mean_confidence()); }

double weighted_gap(std::span<const BinAccumulator> bins, std::size_t n) {
  double total = 0.0;
  for (const auto& b : bins) {
    if (b.count == 0) continue;
    total += static_cast<double>(b.count) / static_cast<double>(n) * b.gap();
  }
  return total;
}

std::vector<std::size_t> range_sizes(std::size_t n, std::size_t num_ranges) {
  if (num_ranges < 1) throw ValidationError("number of ranges must be at least 1");
  if (num_ranges > n) {
    throw ValidationError("number of ranges " + std::to_string(num_ranges) +
                          " exceeds sample count " + std::to_string(n));
  }
  std::vector<std::size_t> sizes(num_ranges, n / num_ranges);
  for (std::size_t r = 0; r < n % num_ranges; ++r) ++sizes[r];
  return sizes;
}

std::vector<BinAccumulator> top_label_bins(const ProbMatrix& probs, std::span<const int> labels,
                                           const BinSpec& spec) {
  check_inputs(probs, labels);
  check_bins(spec.num_bins);
  const auto preds = predict(probs);
  std::vector<BinAccumulator> bins(spec.num_bins);

  if (spec.scheme == BinScheme::equal_width) {
    for (std::size_t i = 0; i < preds.size(); ++i) {
      bins[bin_index(preds[i].confidence, spec.num_bins) - 1].add(
          preds[i].confidence, preds[i].predicted_class == labels[i]);
    }
    return bins;
  }

  if (preds.size() < spec.num_bins) {
    throw ValidationError("equal-mass binning needs at least as many samples as bins");
  }
  auto order = sorted_order(
      preds.size(), [&](std::size_t i) { return preds[i].confidence; },
      [&](std::size_t i) { return preds[i].predicted_class == labels[i]; });
  auto sizes = range_sizes(preds.size(), spec.num_bins);
  std::size_t pos = 0;
  for (std::size_t b = 0; b < sizes.size(); ++b) {
    for (std::size_t j = 0; j < sizes[b]; ++j, ++pos) {
      auto i = order[pos];
      bins[b].add(preds[i].confidence, preds[i].predicted_class == labels[i]);
    }
  }
  return bins;
}

double ece(const ProbMatrix& probs, std::span<const int> labels, const BinSpec& spec) {
  auto bins = top_label_bins(probs, labels, spec);
  return weighted_gap(bins, probs.num_samples());
}

double sce(const ProbMatrix& probs, std::span<const int> labels, const BinSpec& spec) {
  check_inputs(probs, labels);
  check_bins(spec.num_bins);
  const std::size_t n = probs.num_samples();
  const std::size_t k_total = probs.num_classes();
  double total = 0.0;
  std::vector<BinAccumulator> bins;
  for (std::size_t k = 0; k < k_total; ++k) {
    bins.assign(spec.num_bins, {});
    if (spec.scheme == BinScheme::equal_width) {
      for (std::size_t i = 0; i < n; ++i) {
        double p = probs(i, k);
        bins[column_bin(p, spec.num_bins) - 1].add(p, labels[i] == static_cast<int>(k));
      }
    } else {
      auto order = sorted_order(
          n, [&](std::size_t i) { return probs(i, k); },
          [&](std::size_t i) { return labels[i] == static_cast<int>(k); });
      auto sizes = range_sizes(n, spec.num_bins);
      std::size_t pos = 0;
      for (std::size_t b = 0; b < sizes.size(); ++b) {
        for (std::size_t j = 0; j < sizes[b]; ++j, ++pos) {
          auto i = order[pos];
          bins[b].add(probs(i, k), labels[i] == static_cast<int>(k));
        }
      }
    }
    total += weighted_gap(bins, n);
  }
  return total / static_cast<double>(k_total);
}

double ace(const ProbMatrix& probs, std::span<const int> labels, std::size_t num_ranges) {
  check_inputs(probs, labels);
  const std::size_t n = probs.num_samples();
  const std::size_t k_total = probs.num_classes();
  const auto sizes = range_sizes(n, num_ranges);
  double total = 0.0;
  for (std::size_t k = 0; k < k_total; ++k) {
    auto order = sorted_order(
          n, [&](std::size_t i) { return probs(i, k); },
          [&](std::size_t i) { return labels[i] == static_cast<int>(k); });
    std::size_t pos = 0;
    for (auto size : sizes) {
      BinAccumulator range;
      for (std::size_t j = 0; j < size; ++j, ++pos) {
        auto i = order[pos];
        range.add(probs(i, k), labels[i] == static_cast<int>(k));
      }
      total += range.gap();
    }
  }
  return total / static_cast<double>(k_total * num_ranges);
}

double nll(const ProbMatrix& probs, std::span<const int> labels) {
  return focal_loss(probs, labels, 0.0);
}

double focal_loss(const ProbMatrix& probs, std::span<const int> labels, double gamma) {
  if (!(gamma >= 0.0)) throw ValidationError("focal gamma must be non-negative");
  check_inputs(probs, labels);
  double total = 0.0;
  for (std::size_t i = 0; i < probs.num_samples(); ++i) {
    double p = std::max(probs(i, static_cast<std::size_t>(labels[i])), kLogClamp);
    double weight = gamma == 0.0 ? 1.0 : std::pow(1.0 - p, gamma);
    total += -weight * std::log(p);
  }
  return total / static_cast<double>(probs.num_samples());
}

MetricReport compute_report(const ProbMatrix& probs, std::span<const int> labels,
                            std::size_t num_bins, std::size_t num_ranges) {
  MetricReport r;
  auto bins = top_label_bins(probs, labels, {BinScheme::equal_width, num_bins});
  r.n = probs.num_samples();
  r.ece = weighted_gap(bins, r.n);
  r.num_bins_used = static_cast<std::size_t>(
      std::count_if(bins.begin(), bins.end(), [](const BinAccumulator& b) { return b.count > 0; }));
  r.sce = sce(probs, labels, {BinScheme::equal_width, num_bins});
  r.ace = ace(probs, labels, std::min(num_ranges, r.n));
  r.nll = nll(probs, labels);
  return r;
}

std::string to_json(const MetricReport& report) {
  nlohmann::ordered_json j;
  j["ece"] = report.ece;
  j["sce"] = report.sce;
  j["ace"] = report.ace;
  j["nll"] = report.nll;
  j["num_bins_used"] = report.num_bins_used;
  j["n"] = report.n;
  return j.dump();
}

}  // namespace clampcal
