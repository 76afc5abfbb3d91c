#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "cometnet/dtw.hpp"
#include "cometnet/error.hpp"
#include "oracles.hpp"

using namespace cometnet;

TEST_CASE("hand-computed DTW distances") {
  CHECK(dtw_distance(std::vector<double>{0, 1, 2}, std::vector<double>{0, 2}) == 1.0);
  CHECK(dtw_distance(std::vector<double>{0, 0, 1, 1}, std::vector<double>{0, 1}) == 0.0);
  CHECK(dtw_distance(std::vector<double>{1}, std::vector<double>{4, 2}) == 4.0);
}

TEST_CASE("DTW equals exhaustive path enumeration") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::size_t> len(1, 6);
  for (int trial = 0; trial < 200; ++trial) {
    const auto a = oracle::random_series(rng, len(rng));
    const auto b = oracle::random_series(rng, len(rng));
    CHECK(dtw_distance(a, b) == oracle::dtw(a, b));
  }
}

TEST_CASE("banded DTW equals enumeration restricted to the band") {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<std::size_t> len(1, 6);
  for (int trial = 0; trial < 200; ++trial) {
    const auto a = oracle::random_series(rng, len(rng));
    const auto b = oracle::random_series(rng, len(rng));
    const std::size_t gap = a.size() > b.size() ? a.size() - b.size() : b.size() - a.size();
    for (std::size_t r = gap; r <= gap + 2; ++r)
      CHECK(dtw_distance(a, b, r) == oracle::dtw(a, b, r));
  }
}

TEST_CASE("DTW is symmetric and zero on identical input") {
  std::mt19937_64 rng(8);
  const auto a = oracle::random_series(rng, 30);
  const auto b = oracle::random_series(rng, 25);
  CHECK(dtw_distance(a, b) == doctest::Approx(dtw_distance(b, a)));
  CHECK(dtw_distance(a, a) == 0.0);
}

TEST_CASE("DTW rejects empty input and bands narrower than the length gap") {
  CHECK_THROWS_AS(dtw_distance(std::vector<double>{}, std::vector<double>{1.0}), DataError);
  CHECK_THROWS_AS(dtw_distance(std::vector<double>{1, 2, 3, 4}, std::vector<double>{1}, 2),
                  ConfigError);
}

TEST_CASE("band radius widens to the length gap") {
  SimilarityConfig c;
  c.band_fraction = 0.1;
  CHECK(*c.radius_for(20, 20) == 2);
  CHECK(*c.radius_for(20, 12) == 8);
  c.band_radius = 1;
  CHECK(*c.radius_for(10, 10) == 1);
  CHECK(*c.radius_for(10, 13) == 3);
  CHECK_FALSE(SimilarityConfig{}.radius_for(5, 9).has_value());
}

TEST_CASE("z-normalization") {
  const auto z = znormalize(std::vector<double>{1, 2, 3});
  CHECK(z[0] == doctest::Approx(-std::sqrt(1.5)));
  CHECK(z[1] == doctest::Approx(0.0));
  bool constant = false;
  const auto c = znormalize(std::vector<double>{4, 4, 4}, &constant);
  CHECK(constant);
  CHECK(c == std::vector<double>{0, 0, 0});
}

TEST_CASE("similarity kernel is scale-invariant under z-normalization") {
  SimilarityConfig c;
  c.sigma = 2.0;
  const std::vector<double> a{0, 1, 3, 1, 0}, b{10, 12, 16, 12, 10};
  CHECK(dtw_similarity(a, b, c) == doctest::Approx(1.0));
  c.znormalize = false;
  CHECK(dtw_similarity(a, b, c) < 1e-10);
  CHECK(gaussian_kernel(2.0, 2.0) == doctest::Approx(std::exp(-1.0)));
}

TEST_CASE("Pearson correlation") {
  CHECK(pearson(std::vector<double>{1, 2, 3}, std::vector<double>{2, 4, 6}) == doctest::Approx(1.0));
  CHECK(pearson(std::vector<double>{1, 2, 3}, std::vector<double>{3, 2, 1}) == doctest::Approx(-1.0));
  CHECK_THROWS_AS(pearson(std::vector<double>{1, 1, 1}, std::vector<double>{3, 2, 1}), DataError);
}

TEST_CASE("pairwise matrix and median heuristic") {
  const std::vector<std::vector<double>> seqs{{0, 1, 2}, {0, 2}, {5, 5, 5}};
  SimilarityConfig c;
  c.znormalize = false;
  const auto d = pairwise_dtw(seqs, c);
  CHECK(d[0 * 3 + 1] == 1.0);
  CHECK(d[1 * 3 + 0] == 1.0);
  CHECK(d[0 * 3 + 0] == 0.0);
  CHECK(d[0 * 3 + 2] == 12.0);
  CHECK(d[1 * 3 + 2] == 11.0);
  CHECK(median_heuristic_sigma(d, 3) == 11.0);
  CHECK(median_heuristic_sigma(std::vector<double>{0.0}, 1) == 1.0);
}
