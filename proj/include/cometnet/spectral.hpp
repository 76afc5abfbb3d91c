#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

#include <json.hpp>

#include "cometnet/series.hpp"

namespace cometnet {

/// Moduli of the DFT coefficients at integer frequencies 0..floor(T/2).
struct AmplitudeSpectrum {
  std::vector<double> amplitudes;
  std::size_t series_length = 0;
};

/// Candidate scales in descending amplitude order.
struct PeriodSet {
  std::vector<std::size_t> periods;
  std::vector<double> amplitudes;
  std::vector<std::size_t> frequencies;

  nlohmann::json to_json() const;
  static PeriodSet from_json(const nlohmann::json& j);
  bool operator==(const PeriodSet&) const = default;
};

/// Full unnormalized DFT, X_f = sum_t x_t exp(-2 pi i f t / T), all T bins.
std::vector<std::complex<double>> dft(std::span<const double> x);

AmplitudeSpectrum amplitude_spectrum(std::span<const double> channel);

/// Ranks f >= 1 by amplitude (ties: lower frequency first), maps each to
/// ceil(T/f) clamped to [2, T/2], and keeps the first `count` distinct periods.
PeriodSet dominant_periods(const AmplitudeSpectrum& spectrum, std::size_t count);

/// Groups channels whose top-k frequency bins coincide. Groups are ordered by
/// their smallest member; members ascend.
std::vector<std::vector<std::size_t>> kdfh_group(const MultivariateSeries& series, std::size_t k);

}  // namespace cometnet
