#include "cometnet/synth.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

namespace cometnet::synth {

namespace {

std::vector<double> unit_scaled(std::vector<double> v) {
  const double n = static_cast<double>(v.size());
  const double mu = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : v) ss += (x - mu) * (x - mu);
  const double sd = std::sqrt(ss / n);
  for (double& x : v) x = (x - mu) / sd;
  return v;
}

double bump(double t, double center, double width) {
  const double z = (t - center) / width;
  return std::exp(-0.5 * z * z);
}

std::vector<double> spiky_cycle(std::size_t period,
                                std::initializer_list<std::pair<double, double>> spikes) {
  std::vector<double> v(period);
  for (std::size_t t = 0; t < period; ++t) {
    const double x = static_cast<double>(t);
    v[t] = 0.6 * std::sin(2.0 * std::numbers::pi * x / static_cast<double>(period));
    for (auto [center, height] : spikes) v[t] += height * bump(x, center, 2.0);
  }
  return v;
}

}  // namespace

std::vector<double> template_a() {
  std::vector<double> v(24);
  for (std::size_t t = 0; t < v.size(); ++t) {
    const double x = static_cast<double>(t);
    v[t] = t < 4 ? x / 4.0 : std::exp(-(x - 4.0) / 5.0);
  }
  return unit_scaled(std::move(v));
}

std::vector<double> template_b() {
  std::vector<double> v(36);
  for (std::size_t t = 0; t < v.size(); ++t) {
    const double x = static_cast<double>(t);
    v[t] = 1.0 * bump(x, 8.0, 3.0) + 0.5 * bump(x, 24.0, 3.0);
  }
  return unit_scaled(std::move(v));
}

std::vector<double> tile(const std::vector<double>& pattern, std::size_t length,
                         std::size_t offset) {
  std::vector<double> out(length);
  for (std::size_t t = 0; t < length; ++t) out[t] = pattern[(t + offset) % pattern.size()];
  return out;
}

PlantedSeries two_regime_motifs(std::size_t length, std::uint64_t seed, double noise) {
  std::mt19937_64 rng(seed);
  PlantedSeries out;
  out.templates = {template_a(), template_b()};
  const std::size_t half = length / 2;
  std::uniform_int_distribution<std::size_t> phase_a(0, 23), phase_b(0, 35);
  auto first = tile(out.templates[0], half, phase_a(rng));
  auto second = tile(out.templates[1], length - half, phase_b(rng));
  out.values = std::move(first);
  out.values.insert(out.values.end(), second.begin(), second.end());
  out.regime_starts = {0, half};
  out.regime_ids = {0, 1};
  std::normal_distribution<double> eps(0.0, noise);
  for (double& x : out.values) x += eps(rng);
  return out;
}

PlantedSeries two_regime_forecasting(std::size_t length, std::uint64_t seed, double noise) {
  std::mt19937_64 rng(seed);
  PlantedSeries out;
  out.templates = {spiky_cycle(240, {{60.0, 3.0}, {170.0, -2.5}}),
                   spiky_cycle(168, {{40.0, -3.0}, {110.0, 2.5}})};
  std::uniform_int_distribution<int> cycles(2, 3);
  std::size_t regime = 0;
  while (out.values.size() < length) {
    const auto& pattern = out.templates[regime];
    const std::size_t n = pattern.size() * static_cast<std::size_t>(cycles(rng));
    out.regime_starts.push_back(out.values.size());
    out.regime_ids.push_back(regime);
    for (std::size_t t = 0; t < n && out.values.size() < length; ++t)
      out.values.push_back(pattern[t % pattern.size()]);
    regime ^= 1;
  }
  std::normal_distribution<double> eps(0.0, noise);
  for (double& x : out.values) x += eps(rng);
  return out;
}

double best_template_similarity(const MotifLibrary& library, const std::vector<double>& pattern) {
  const auto sim = library.similarity();
  double best = 0.0;
  for (const auto& m : library.motifs)
    for (std::size_t r = 0; r < pattern.size(); ++r)
      best = std::max(best, shape_similarity(m.values, tile(pattern, m.values.size(), r), sim,
                                             library.config.max_motif_points));
  return best;
}

}  // namespace cometnet::synth
