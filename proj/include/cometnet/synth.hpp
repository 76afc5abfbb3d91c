#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "cometnet/motif.hpp"

namespace cometnet::synth {

struct PlantedSeries {
  std::vector<double> values;
  std::vector<std::vector<double>> templates;  // one full period per regime
  std::vector<std::size_t> regime_starts;      // first row of every regime block
  std::vector<std::size_t> regime_ids;         // template index of every block
};

/// Zero-mean, unit-variance period-24 template (sharp rise, slow decay).
std::vector<double> template_a();
/// Zero-mean, unit-variance period-36 template (two unequal bumps).
std::vector<double> template_b();

/// First half tiles template A, second half tiles template B, each at a
/// seed-dependent phase, plus Gaussian noise of standard deviation `noise`.
PlantedSeries two_regime_motifs(std::size_t length = 5000, std::uint64_t seed = 0,
                                double noise = 0.05);

/// Forecasting fixture: blocks of 2-3 whole cycles alternate between a
/// period-240 and a period-168 pattern, each a slow sinusoid carrying sharp
/// spikes, plus Gaussian noise. Spikes make the continuation a nonlinear
/// function of the look-back window.
PlantedSeries two_regime_forecasting(std::size_t length = 5000, std::uint64_t seed = 0,
                                     double noise = 0.05);

/// Template tiled from phase `offset` to `length` points.
std::vector<double> tile(const std::vector<double>& pattern, std::size_t length,
                         std::size_t offset = 0);

/// Best similarity between any library motif and any cyclic rotation of the
/// template tiled to the motif's length, under the library's kernel.
double best_template_similarity(const MotifLibrary& library, const std::vector<double>& pattern);

}  // namespace cometnet::synth
