#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "cometnet/error.hpp"
#include "cometnet/spectral.hpp"
#include "oracles.hpp"

using namespace cometnet;

namespace {

std::vector<double> sinusoid(std::size_t T, double period, double amp = 1.0, double phase = 0.0) {
  std::vector<double> x(T);
  for (std::size_t t = 0; t < T; ++t)
    x[t] = amp * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / period + phase);
  return x;
}

}  // namespace

TEST_CASE("amplitude spectrum of 1,2,3,4") {
  const auto s = amplitude_spectrum(std::vector<double>{1, 2, 3, 4});
  REQUIRE(s.amplitudes.size() == 3);
  CHECK(s.amplitudes[0] == doctest::Approx(10.0));
  CHECK(s.amplitudes[1] == doctest::Approx(2.0 * std::sqrt(2.0)));
  CHECK(s.amplitudes[2] == doctest::Approx(2.0));
}

TEST_CASE("amplitude spectrum matches the direct transform for odd and prime lengths") {
  std::mt19937_64 rng(11);
  for (std::size_t T : {4u, 7u, 64u, 97u, 250u}) {
    const auto x = oracle::random_series(rng, T);
    const auto got = amplitude_spectrum(x).amplitudes;
    const auto want = oracle::dft_amplitudes(x);
    REQUIRE(got.size() == want.size());
    for (std::size_t f = 0; f < want.size(); ++f)
      CHECK(std::abs(got[f] - want[f]) <= 1e-8 * std::max(1.0, want[f]));
  }
}

TEST_CASE("full DFT satisfies Parseval") {
  std::mt19937_64 rng(5);
  const auto x = oracle::random_series(rng, 129);
  const auto X = dft(x);
  double time = 0.0, freq = 0.0;
  for (double v : x) time += v * v;
  for (const auto& c : X) freq += std::norm(c);
  CHECK(freq / static_cast<double>(x.size()) == doctest::Approx(time).epsilon(1e-10));
}

TEST_CASE("dominant period of a pure sinusoid") {
  const auto p = dominant_periods(amplitude_spectrum(sinusoid(48, 12.0)), 1);
  REQUIRE(p.periods.size() == 1);
  CHECK(p.periods[0] == 12);
  CHECK(p.frequencies[0] == 4);
  CHECK(p.amplitudes[0] == doctest::Approx(24.0));
}

TEST_CASE("dominant periods rank by amplitude and deduplicate") {
  auto x = sinusoid(240, 24.0, 2.0);
  const auto y = sinusoid(240, 40.0, 1.0);
  for (std::size_t t = 0; t < x.size(); ++t) x[t] += y[t];
  const auto p = dominant_periods(amplitude_spectrum(x), 2);
  REQUIRE(p.periods.size() == 2);
  CHECK(p.periods[0] == 24);
  CHECK(p.periods[1] == 40);
}

TEST_CASE("periods are ceil(T/f) clamped to [2, T/2]") {
  // T = 10: frequency 1 maps to 10, which is clamped to 5; frequency 3 maps to 4.
  std::vector<double> x = sinusoid(10, 10.0, 3.0);
  const auto y = sinusoid(10, 10.0 / 3.0, 1.0);
  for (std::size_t t = 0; t < x.size(); ++t) x[t] += y[t];
  const auto p = dominant_periods(amplitude_spectrum(x), 2);
  REQUIRE(p.periods.size() == 2);
  CHECK(p.periods[0] == 5);
  CHECK(p.periods[1] == 4);
}

TEST_CASE("constant input has no dominant periods beyond ties") {
  const auto s = amplitude_spectrum(std::vector<double>(16, 2.0));
  CHECK(s.amplitudes[0] == doctest::Approx(32.0));
  for (std::size_t f = 1; f < s.amplitudes.size(); ++f) CHECK(s.amplitudes[f] == doctest::Approx(0.0));
}

TEST_CASE("period set JSON round trip") {
  const auto p = dominant_periods(amplitude_spectrum(sinusoid(96, 24.0)), 3);
  CHECK(PeriodSet::from_json(p.to_json()) == p);
}

TEST_CASE("k-DFH groups channels that share their top bins") {
  const MultivariateSeries s({sinusoid(240, 24.0), sinusoid(240, 40.0), sinusoid(240, 24.0, 3.0, 1.0),
                              sinusoid(240, 40.0, 0.5)},
                             {"a", "b", "c", "d"});
  const auto groups = kdfh_group(s, 1);
  REQUIRE(groups.size() == 2);
  CHECK(groups[0] == std::vector<std::size_t>{0, 2});
  CHECK(groups[1] == std::vector<std::size_t>{1, 3});
}

TEST_CASE("spectrum rejects series shorter than four points") {
  CHECK_THROWS_AS(amplitude_spectrum(std::vector<double>{1, 2, 3}), DataError);
}
