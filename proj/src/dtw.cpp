#include "cometnet/dtw.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "cometnet/error.hpp"

namespace cometnet {

void SimilarityConfig::validate() const {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ConfigError("similarity sigma must be > 0");
  if (band_fraction && !(*band_fraction >= 0.0)) throw ConfigError("band fraction must be >= 0");
}

std::optional<std::size_t> SimilarityConfig::radius_for(std::size_t len_a,
                                                        std::size_t len_b) const {
  const std::size_t gap = len_a > len_b ? len_a - len_b : len_b - len_a;
  if (band_radius) return std::max(*band_radius, gap);
  if (band_fraction) {
    const auto r = static_cast<std::size_t>(
        std::ceil(*band_fraction * static_cast<double>(std::max(len_a, len_b))));
    return std::max(r, gap);
  }
  return std::nullopt;
}

double dtw_distance(std::span<const double> a, std::span<const double> b,
                    std::optional<std::size_t> band_radius) {
  if (a.empty() || b.empty()) throw DataError("DTW needs non-empty sequences");
  const std::size_t n = a.size();
  const std::size_t m = b.size();
  const std::size_t gap = n > m ? n - m : m - n;
  if (band_radius && *band_radius < gap)
    throw ConfigError("Sakoe-Chiba radius " + std::to_string(*band_radius) +
                      " admits no warping path for lengths " + std::to_string(n) + " and " +
                      std::to_string(m));
  const std::size_t r = band_radius.value_or(std::max(n, m));

  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> prev(m + 1, inf);
  std::vector<double> cur(m + 1, inf);
  prev[0] = 0.0;
  for (std::size_t i = 1; i <= n; ++i) {
    std::fill(cur.begin(), cur.end(), inf);
    const std::size_t lo = i > r ? i - r : 1;
    const std::size_t hi = std::min(m, i + r);
    for (std::size_t j = lo; j <= hi; ++j) {
      const double best = std::min({prev[j], cur[j - 1], prev[j - 1]});
      cur[j] = std::abs(a[i - 1] - b[j - 1]) + best;
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

std::vector<double> znormalize(std::span<const double> x, bool* was_constant) {
  const double n = static_cast<double>(x.size());
  const double mu = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : x) ss += (v - mu) * (v - mu);
  const double sd = std::sqrt(ss / n);
  std::vector<double> out(x.size(), 0.0);
  const bool constant = !(sd > 1e-12 * std::max(1.0, std::abs(mu)));
  if (was_constant) *was_constant = constant;
  if (!constant)
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mu) / sd;
  return out;
}

double gaussian_kernel(double distance, double sigma) {
  return std::exp(-(distance * distance) / (sigma * sigma));
}

double dtw_similarity(std::span<const double> a, std::span<const double> b,
                      const SimilarityConfig& config) {
  config.validate();
  const auto radius = config.radius_for(a.size(), b.size());
  double d = 0.0;
  if (config.znormalize) {
    const auto za = znormalize(a);
    const auto zb = znormalize(b);
    d = dtw_distance(za, zb, radius);
  } else {
    d = dtw_distance(a, b, radius);
  }
  return gaussian_kernel(d, config.sigma);
}

double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2)
    throw DataError("pearson needs equal lengths of at least 2");
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (!(saa > 0.0) || !(sbb > 0.0)) throw DataError("pearson is undefined for constant input");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

std::vector<double> pairwise_dtw(const std::vector<std::vector<double>>& seqs,
                                 const SimilarityConfig& config) {
  const std::size_t n = seqs.size();
  std::vector<std::vector<double>> prepared;
  prepared.reserve(n);
  for (const auto& s : seqs) prepared.push_back(config.znormalize ? znormalize(s) : s);
  std::vector<double> d(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = dtw_distance(prepared[i], prepared[j],
                                    config.radius_for(prepared[i].size(), prepared[j].size()));
      d[i * n + j] = v;
      d[j * n + i] = v;
    }
  return d;
}

double median_heuristic_sigma(const std::vector<double>& distances, std::size_t n) {
  std::vector<double> upper;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) upper.push_back(distances[i * n + j]);
  if (upper.empty()) return 1.0;
  const auto mid = upper.begin() + static_cast<std::ptrdiff_t>(upper.size() / 2);
  std::nth_element(upper.begin(), mid, upper.end());
  double med = *mid;
  if (upper.size() % 2 == 0) {
    const double lower = *std::max_element(upper.begin(), mid);
    med = 0.5 * (med + lower);
  }
  return med > 0.0 ? med : 1.0;
}

}  // namespace cometnet
