#include <doctest.h>

#include <cmath>
#include <json.hpp>
#include <numeric>
#include <random>

#include "clampcal/error.hpp"
#include "clampcal/metrics.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace clampcal;
using testing::matrix;

namespace {

ProbMatrix probs_of(const oracle::Rows& rows) { return ProbMatrix(matrix(rows)); }

}  // namespace

TEST_CASE("bin_index uses left-open right-closed intervals") {
  CHECK(bin_index(0.65, 10) == 7);
  CHECK(bin_index(0.1, 10) == 1);
  CHECK(bin_index(1.0, 10) == 10);
  CHECK(bin_index(0.7, 10) == 7);
  CHECK(bin_index(std::nextafter(0.7, 1.0), 10) == 8);
  CHECK(bin_index(1e-300, 10) == 1);
  CHECK(bin_index(0.5, 1) == 1);
  CHECK_THROWS_AS(bin_index(0.0, 10), ValidationError);
  CHECK_THROWS_AS(bin_index(1.0000001, 10), ValidationError);
  CHECK_THROWS_AS(bin_index(0.5, 0), ValidationError);
}

TEST_CASE("bin_index partitions (0,1] consistently with the interval edges") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 20000; ++trial) {
    std::size_t m_total = 1 + rng() % 50;
    double c = trial % 3 == 0 ? static_cast<double>(1 + rng() % m_total) / static_cast<double>(m_total)
                              : u(rng);
    if (trial % 5 == 0) c = std::nextafter(c, 1.0);
    if (!(c > 0.0 && c <= 1.0)) continue;
    std::size_t hits = 0, which = 0;
    for (std::size_t m = 1; m <= m_total; ++m) {
      if (oracle::in_bin(c, m, m_total)) {
        ++hits;
        which = m;
      }
    }
    REQUIRE(hits == 1);
    CHECK(bin_index(c, m_total) == which);
  }
}

TEST_CASE("ece hand-derived fixtures") {
  const auto ds = testing::four_sample();
  auto p = softmax(ds);
  const auto& y = ds.labels();
  CHECK(std::abs(ece(p, y, {BinScheme::equal_width, 10}) - 0.35) <= 1e-12);
  CHECK(std::abs(ece(p, y, {BinScheme::equal_width, 1}) - 0.05) <= 1e-12);

  auto perfect = probs_of({{1.0, 0.0}, {0.0, 1.0}});
  std::vector<int> labels{0, 1};
  CHECK(ece(perfect, labels, {}) == 0.0);
  CHECK_THROWS_AS(ece(ProbMatrix{}, std::vector<int>{}, {}), ValidationError);
}

TEST_CASE("ece with M=1 is |accuracy - mean confidence|") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    auto set = oracle::random_prediction_set(rng, 1 + rng() % 100, 2 + rng() % 4);
    auto tops = oracle::top_labels(set.probs, set.labels);
    double hits = 0.0, conf = 0.0;
    for (auto& t : tops) {
      hits += t.correct;
      conf += t.confidence;
    }
    double n = static_cast<double>(tops.size());
    CHECK(std::abs(ece(probs_of(set.probs), set.labels, {BinScheme::equal_width, 1}) -
                   std::abs(hits / n - conf / n)) <= 1e-12);
  }
}

TEST_CASE("equal-mass ece splits sorted confidences into contiguous runs") {
  // confidences 0.6, 0.8, 0.9, 0.9 sorted; M=2 -> runs {0.6,0.8} and {0.9,0.9}
  const auto ds = testing::four_sample();
  auto p = softmax(ds);
  const auto& y = ds.labels();
  double expected = 0.5 * std::abs(1.0 - 0.7) + 0.5 * std::abs(0.5 - 0.9);
  CHECK(std::abs(ece(p, y, {BinScheme::equal_mass, 2}) - expected) <= 1e-12);
  CHECK_THROWS_AS(ece(p, y, {BinScheme::equal_mass, 5}), ValidationError);
}

TEST_CASE("sce fixtures") {
  auto p = probs_of({{0.7, 0.3}, {0.6, 0.4}});
  std::vector<int> y{0, 1};
  CHECK(std::abs(sce(p, y, {BinScheme::equal_width, 2}) - 0.15) <= 1e-12);
  CHECK(sce(probs_of({{1, 0, 0}, {0, 0, 1}}), std::vector<int>{0, 2}, {}) == 0.0);
  for (std::size_t m : {1, 2, 7, 15}) {
    CHECK(sce(probs_of({{0.5, 0.5}, {0.5, 0.5}, {0.5, 0.5}, {0.5, 0.5}}), std::vector<int>{0, 1, 0, 1},
              {BinScheme::equal_width, m}) == 0.0);
  }
}

TEST_CASE("ace fixtures") {
  auto p = probs_of({{0.7, 0.3}, {0.6, 0.4}});
  std::vector<int> y{0, 1};
  CHECK(std::abs(ace(p, y, 1) - 0.15) <= 1e-12);
  CHECK(ace(probs_of({{1, 0}, {0, 1}, {1, 0}}), std::vector<int>{0, 1, 0}, 3) == 0.0);
  CHECK(range_sizes(4, 3) == std::vector<std::size_t>{2, 1, 1});
  CHECK(range_sizes(10, 4) == std::vector<std::size_t>{3, 3, 2, 2});
  CHECK_THROWS_AS(ace(p, y, 3), ValidationError);
}

TEST_CASE("nll and focal loss") {
  CHECK(nll(probs_of({{0.5, 0.5}}), std::vector<int>{0}) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(nll(probs_of({{1.0, 0.0}, {0.0, 1.0}}), std::vector<int>{0, 1}) == 0.0);
  auto thirds = probs_of({{2.0 / 3, 1.0 / 3}, {2.0 / 3, 1.0 / 3}, {2.0 / 3, 1.0 / 3}});
  std::vector<int> y{0, 0, 1};
  double expected = (2 * std::log(1.5) + std::log(3.0)) / 3;
  CHECK(std::abs(nll(thirds, y) - expected) <= 1e-12);
  CHECK(std::abs(expected - 0.636514) < 1e-6);

  CHECK(std::abs(focal_loss(thirds, y, 0.0) - nll(thirds, y)) <= 1e-12);
  CHECK(focal_loss(probs_of({{1.0, 0.0}}), std::vector<int>{0}, 2.0) == 0.0);
  CHECK(std::abs(focal_loss(probs_of({{0.5, 0.5}}), std::vector<int>{0}, 2.0) - 0.25 * std::log(2.0)) <= 1e-15);
  CHECK_THROWS_AS(focal_loss(thirds, y, -1.0), ValidationError);

  // clamp keeps the loss finite when the true class has probability 0
  CHECK(nll(probs_of({{1.0, 0.0}}), std::vector<int>{1}) == doctest::Approx(-std::log(1e-12)));
}

TEST_CASE("nll ignores zero-probability padding classes") {
  std::mt19937_64 rng(2);
  auto set = oracle::random_prediction_set(rng, 30, 3);
  auto padded = set.probs;
  for (auto& r : padded) r.insert(r.end(), {0.0, 0.0});
  CHECK(nll(probs_of(set.probs), set.labels) == nll(probs_of(padded), set.labels));
}

TEST_CASE("metrics match the brute-force oracle and stay in [0,1]") {
  std::mt19937_64 rng(1234);
  for (int trial = 0; trial < 200; ++trial) {
    std::size_t n = 1 + rng() % 200;
    std::size_t k = 2 + rng() % 5;
    auto set = oracle::random_prediction_set(rng, n, k);
    auto probs = probs_of(set.probs);
    std::size_t m = 1 + rng() % 50;
    std::size_t r = 1 + rng() % std::min<std::size_t>(n, 50);

    double e = ece(probs, set.labels, {BinScheme::equal_width, m});
    double s = sce(probs, set.labels, {BinScheme::equal_width, m});
    double a = ace(probs, set.labels, r);
    CHECK(std::abs(e - oracle::ece(set.probs, set.labels, m)) <= 1e-12);
    CHECK(std::abs(s - oracle::sce(set.probs, set.labels, m)) <= 1e-12);
    CHECK(std::abs(a - oracle::ace(set.probs, set.labels, r)) <= 1e-12);
    for (double v : {e, s, a}) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("metrics are invariant under sample permutation") {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 30; ++trial) {
    auto set = oracle::random_prediction_set(rng, 20 + rng() % 80, 2 + rng() % 4);
    auto shuffled = set;
    std::vector<std::size_t> perm(set.labels.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t i = 0; i < perm.size(); ++i) {
      shuffled.probs[i] = set.probs[perm[i]];
      shuffled.labels[i] = set.labels[perm[i]];
    }
    auto a = compute_report(probs_of(set.probs), set.labels, 13, 7);
    auto b = compute_report(probs_of(shuffled.probs), shuffled.labels, 13, 7);
    CHECK(std::abs(a.ece - b.ece) <= 1e-12);
    CHECK(std::abs(a.sce - b.sce) <= 1e-12);
    CHECK(std::abs(a.ace - b.ace) <= 1e-12);
    CHECK(std::abs(a.nll - b.nll) <= 1e-12);
  }
}

TEST_CASE("metric report serialises every field") {
  auto p = softmax(testing::four_sample());
  auto report = compute_report(p, testing::four_sample().labels(), 10);
  CHECK(report.n == 4);
  CHECK(report.num_bins_used == 3);
  auto j = nlohmann::json::parse(to_json(report));
  CHECK(std::abs(j["ece"].get<double>() - 0.35) <= 1e-12);
  CHECK(j["n"] == 4);
  CHECK(j.size() == 6);
  // the double survives the text form exactly
  CHECK(j["nll"].get<double>() == report.nll);
}
