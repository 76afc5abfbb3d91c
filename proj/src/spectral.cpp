#include "cometnet/spectral.hpp"

#include <algorithm>
#include <map>
#include <numeric>

#include <unsupported/Eigen/FFT>

#include "cometnet/error.hpp"

namespace cometnet {

std::vector<std::complex<double>> dft(std::span<const double> x) {
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> in(x.begin(), x.end());
  std::vector<std::complex<double>> half;
  fft.fwd(half, in);
  // Rebuild the upper half from conjugate symmetry of a real input.
  const std::size_t n = x.size();
  std::vector<std::complex<double>> full(n);
  for (std::size_t f = 0; f < half.size() && f < n; ++f) full[f] = half[f];
  for (std::size_t f = half.size(); f < n; ++f) full[f] = std::conj(full[n - f]);
  return full;
}

AmplitudeSpectrum amplitude_spectrum(std::span<const double> channel) {
  if (channel.size() < 4) throw DataError("amplitude spectrum needs at least 4 points");
  const auto coeffs = dft(channel);
  AmplitudeSpectrum spec;
  spec.series_length = channel.size();
  spec.amplitudes.resize(channel.size() / 2 + 1);
  for (std::size_t f = 0; f < spec.amplitudes.size(); ++f) spec.amplitudes[f] = std::abs(coeffs[f]);
  return spec;
}

PeriodSet dominant_periods(const AmplitudeSpectrum& spectrum, std::size_t count) {
  if (count < 1) throw ConfigError("period count must be >= 1");
  const auto& amp = spectrum.amplitudes;
  const std::size_t T = spectrum.series_length;
  if (amp.size() < 2 || T < 4) throw DataError("spectrum too short for period detection");

  const double peak = *std::max_element(amp.begin(), amp.end());
  const double floor_amp = 1e-9 * std::max(1.0, peak);
  std::vector<std::size_t> freqs;
  for (std::size_t f = 1; f < amp.size(); ++f)
    if (amp[f] > floor_amp) freqs.push_back(f);
  if (freqs.empty()) throw DataError("no frequency with positive amplitude");
  std::stable_sort(freqs.begin(), freqs.end(),
                   [&](std::size_t a, std::size_t b) { return amp[a] > amp[b]; });

  const std::size_t max_period = std::max<std::size_t>(2, T / 2);
  PeriodSet out;
  for (std::size_t f : freqs) {
    const std::size_t period = std::clamp<std::size_t>((T + f - 1) / f, 2, max_period);
    if (std::find(out.periods.begin(), out.periods.end(), period) != out.periods.end()) continue;
    out.periods.push_back(period);
    out.amplitudes.push_back(amp[f]);
    out.frequencies.push_back(f);
    if (out.periods.size() == count) break;
  }
  return out;
}

nlohmann::json PeriodSet::to_json() const {
  return {{"periods", periods}, {"amplitudes", amplitudes}, {"frequencies", frequencies}};
}

PeriodSet PeriodSet::from_json(const nlohmann::json& j) {
  PeriodSet p;
  p.periods = j.at("periods").get<std::vector<std::size_t>>();
  p.amplitudes = j.at("amplitudes").get<std::vector<double>>();
  p.frequencies = j.at("frequencies").get<std::vector<std::size_t>>();
  return p;
}

std::vector<std::vector<std::size_t>> kdfh_group(const MultivariateSeries& series, std::size_t k) {
  if (k < 1) throw ConfigError("k-DFH needs k >= 1");
  std::map<std::vector<std::size_t>, std::size_t> group_of_key;
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t n = 0; n < series.cols(); ++n) {
    const auto spec = amplitude_spectrum(series.channel(n));
    std::vector<std::size_t> bins(spec.amplitudes.size() - 1);
    std::iota(bins.begin(), bins.end(), 1);
    std::stable_sort(bins.begin(), bins.end(), [&](std::size_t a, std::size_t b) {
      return spec.amplitudes[a] > spec.amplitudes[b];
    });
    bins.resize(std::min(k, bins.size()));
    std::sort(bins.begin(), bins.end());
    auto [it, inserted] = group_of_key.try_emplace(bins, groups.size());
    if (inserted) groups.emplace_back();
    groups[it->second].push_back(n);
  }
  return groups;
}

}  // namespace cometnet
