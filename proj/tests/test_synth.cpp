#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "cometnet/synth.hpp"

using namespace cometnet;

namespace {

double mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double variance(const std::vector<double>& v) {
  const double mu = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - mu) * (x - mu);
  return ss / static_cast<double>(v.size());
}

}  // namespace

TEST_CASE("templates are standardized with periods 24 and 36") {
  const auto a = synth::template_a();
  const auto b = synth::template_b();
  CHECK(a.size() == 24);
  CHECK(b.size() == 36);
  CHECK(mean(a) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(variance(a) == doctest::Approx(1.0));
  CHECK(mean(b) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(variance(b) == doctest::Approx(1.0));
}

TEST_CASE("tile repeats the pattern from an offset") {
  const std::vector<double> p{1, 2, 3};
  CHECK(synth::tile(p, 7, 1) == std::vector<double>{2, 3, 1, 2, 3, 1, 2});
}

TEST_CASE("motif fixture is deterministic and has two regimes") {
  const auto x = synth::two_regime_motifs(5000, 2, 0.05);
  const auto y = synth::two_regime_motifs(5000, 2, 0.05);
  CHECK(x.values == y.values);
  CHECK(x.values.size() == 5000);
  CHECK(x.templates.size() == 2);
  CHECK(x.regime_starts.front() == 0);
  CHECK(synth::two_regime_motifs(5000, 3, 0.05).values != x.values);
  const auto clean = synth::two_regime_motifs(480, 0, 0.0);
  // Without noise, the first half is an exact 24-periodic tiling.
  for (std::size_t t = 0; t + 24 < 240; ++t) CHECK(clean.values[t] == doctest::Approx(clean.values[t + 24]));
}

TEST_CASE("forecasting fixture alternates whole cycles") {
  const auto f = synth::two_regime_forecasting(5000, 1, 0.05);
  CHECK(f.values.size() == 5000);
  REQUIRE(f.regime_starts.size() == f.regime_ids.size());
  REQUIRE(f.regime_starts.size() >= 4);
  for (std::size_t i = 1; i < f.regime_ids.size(); ++i) CHECK(f.regime_ids[i] != f.regime_ids[i - 1]);
  for (std::size_t i = 0; i + 2 < f.regime_starts.size(); ++i) {
    const std::size_t len = f.regime_starts[i + 1] - f.regime_starts[i];
    const std::size_t period = f.templates[f.regime_ids[i]].size();
    CHECK(len % period == 0);
    CHECK(len / period >= 2);
    CHECK(len / period <= 3);
  }
}
