#include <doctest.h>

#include <json.hpp>
#include <numeric>
#include <random>
#include <regex>

#include "clampcal/diagram.hpp"
#include "clampcal/error.hpp"
#include "clampcal/metrics.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace clampcal;

namespace {

std::size_t count_of(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1)) ++n;
  return n;
}

// Heights of rects with the given class, in document order.
std::vector<double> bar_heights(const std::string& svg, const std::string& cls) {
  std::vector<double> out;
  std::regex re("<rect class=\"" + cls + "\"[^>]* height=\"([0-9.]+)\"");
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), re); it != std::sregex_iterator(); ++it) {
    out.push_back(std::stod((*it)[1]));
  }
  return out;
}

}  // namespace

TEST_CASE("four-sample diagram") {
  // probabilities given directly: softmax of ln1.5 rounds just above 0.6
  auto ds = testing::four_sample();
  ProbMatrix p(testing::matrix({{0.1, 0.9}, {0.1, 0.9}, {0.6, 0.4}, {0.2, 0.8}}));
  auto d = build_diagram(p, ds.labels(), 10);
  REQUIRE(d.bins.size() == 10);
  CHECK(d.n == 4);
  CHECK(d.m == 10);
  for (const auto& b : d.bins) {
    if (b.index == 6) {
      CHECK(b.count == 1);
      CHECK(b.accuracy == 1.0);
      CHECK(b.mean_confidence == doctest::Approx(0.6).epsilon(1e-12));
    } else if (b.index == 8) {
      CHECK(b.count == 1);
      CHECK(b.accuracy == 1.0);
      CHECK(b.mean_confidence == doctest::Approx(0.8).epsilon(1e-12));
    } else if (b.index == 9) {
      CHECK(b.count == 2);
      CHECK(b.accuracy == 0.5);
      CHECK(b.mean_confidence == doctest::Approx(0.9).epsilon(1e-12));
    } else {
      CHECK(b.count == 0);
      CHECK(b.accuracy == 0.0);
      CHECK(b.mean_confidence == 0.0);
      CHECK(b.gap == 0.0);
    }
  }
  CHECK(std::abs(d.ece - 0.35) <= 1e-12);
}

TEST_CASE("single confident sample lands in the last bin") {
  auto d = build_diagram(ProbMatrix(testing::matrix({{1.0, 0.0}})), std::vector<int>{0}, 5);
  CHECK(d.bins[4].count == 1);
  CHECK(d.bins[4].accuracy == 1.0);
  CHECK(d.bins[4].mean_confidence == 1.0);
  CHECK(d.bins[4].gap == 0.0);
  CHECK_THROWS_AS(build_diagram(ProbMatrix{}, std::vector<int>{}, 5), ValidationError);
}

TEST_CASE("calibrated-by-construction data has small per-bin gaps") {
  // Binary rows with confidence c on a fine grid; exactly round(c * 100) of
  // every 100 copies are correct.
  oracle::Rows rows;
  std::vector<int> labels;
  for (int g = 50; g <= 100; ++g) {
    double c = g / 100.0;
    for (int copy = 0; copy < 100; ++copy) {
      rows.push_back({c, 1.0 - c});
      labels.push_back(copy < g ? 0 : 1);
    }
  }
  for (std::size_t m : {1, 5, 10, 20}) {
    auto d = build_diagram(ProbMatrix(testing::matrix(rows)), labels, m);
    for (const auto& b : d.bins) {
      if (b.count > 0) CHECK(b.gap <= 1.0 / static_cast<double>(m));
    }
  }
}

TEST_CASE("diagram partition properties on random inputs") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    std::size_t n = 1 + rng() % 150;
    auto set = oracle::random_prediction_set(rng, n, 2 + rng() % 5);
    std::size_t m = 1 + rng() % 50;
    ProbMatrix probs(testing::matrix(set.probs));
    auto d = build_diagram(probs, set.labels, m);

    std::size_t total = 0;
    double from_bins = 0.0;
    for (std::size_t b = 0; b < m; ++b) {
      const auto& bin = d.bins[b];
      CHECK(bin.index == b + 1);
      CHECK(bin.lower == static_cast<double>(b) / static_cast<double>(m));
      CHECK(bin.upper == static_cast<double>(b + 1) / static_cast<double>(m));
      if (b > 0) CHECK(bin.lower == d.bins[b - 1].upper);
      CHECK(std::abs((bin.upper - bin.lower) - 1.0 / static_cast<double>(m)) <= 1e-15);
      total += bin.count;
      if (bin.count > 0) {
        // a mean of equal values may round one ulp past the edge
        CHECK(bin.lower * (1 - 1e-15) < bin.mean_confidence);
        CHECK(bin.mean_confidence <= bin.upper * (1 + 1e-15));
      }
      from_bins += static_cast<double>(bin.count) / static_cast<double>(n) * bin.gap;
    }
    CHECK(d.bins.front().lower == 0.0);
    CHECK(d.bins.back().upper == 1.0);
    CHECK(total == n);
    CHECK(d.ece == from_bins);
    CHECK(std::abs(d.ece - ece(probs, set.labels, {BinScheme::equal_width, m})) <= 1e-12);

    // rebuilding after a permutation yields identical bins
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    oracle::Rows rows;
    std::vector<int> labels;
    for (auto i : perm) {
      rows.push_back(set.probs[i]);
      labels.push_back(set.labels[i]);
    }
    auto d2 = build_diagram(ProbMatrix(testing::matrix(rows)), labels, m);
    for (std::size_t b = 0; b < m; ++b) {
      CHECK(d2.bins[b].count == d.bins[b].count);
      CHECK(std::abs(d2.bins[b].accuracy - d.bins[b].accuracy) <= 1e-12);
      CHECK(std::abs(d2.bins[b].mean_confidence - d.bins[b].mean_confidence) <= 1e-12);
    }
  }
}

TEST_CASE("diagram JSON has a fixed shape") {
  auto ds = testing::four_sample();
  auto j = nlohmann::json::parse(to_json(build_diagram(softmax(ds), ds.labels(), 10)));
  CHECK(j["m"] == 10);
  CHECK(j["n"] == 4);
  REQUIRE(j["bins"].size() == 10);
  for (const auto& b : j["bins"]) {
    for (const char* key : {"index", "lower", "upper", "count", "accuracy", "mean_confidence", "gap"}) {
      CHECK(b.contains(key));
      CHECK(!b[key].is_null());
    }
  }
}

TEST_CASE("SVG rendering") {
  auto ds = testing::four_sample();
  auto d = build_diagram(softmax(ds), ds.labels(), 10);
  auto svg = render_svg(d, 640, 480);
  CHECK(svg.starts_with("<?xml"));
  CHECK(count_of(svg, "class=\"bar-expected\"") == 10);
  CHECK(count_of(svg, "class=\"bar-actual\"") == 10);
  auto actual = bar_heights(svg, "bar-actual");
  CHECK(std::count_if(actual.begin(), actual.end(), [](double h) { return h > 0.0; }) == 3);
  auto expected = bar_heights(svg, "bar-expected");
  CHECK(std::count_if(expected.begin(), expected.end(), [](double h) { return h > 0.0; }) == 10);
  // expected heights grow with the bin midpoint
  CHECK(std::is_sorted(expected.begin(), expected.end()));
  CHECK(svg.find("rgb(56,56,255)") != std::string::npos);
  CHECK(svg.find("rgb(255,164,181)") != std::string::npos);
  CHECK(svg.find("class=\"diagonal\"") != std::string::npos);
  CHECK(svg.find("ECE = 0.3500") != std::string::npos);
  CHECK(render_svg(d, 640, 480) == svg);
  CHECK_THROWS_AS(render_svg(d, 0, 480), ValidationError);

  auto mean = render_svg(d, 640, 480, {ExpectedBar::mean_confidence});
  CHECK(mean != svg);
  CHECK(count_of(mean, "class=\"bar-expected\"") == 10);
}
