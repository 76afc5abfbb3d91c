#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace cometnet {

struct SimilarityConfig {
  double sigma = 1.0;
  /// Absolute Sakoe-Chiba radius. Takes precedence over `band_fraction`.
  std::optional<std::size_t> band_radius;
  /// Radius as a fraction of the longer sequence, widened to the length gap.
  std::optional<double> band_fraction;
  bool znormalize = true;

  void validate() const;
  /// Radius to use for a pair of the given lengths; nullopt means exact DTW.
  std::optional<std::size_t> radius_for(std::size_t len_a, std::size_t len_b) const;
};

/// Classic DTW with |a_i - b_j| cell cost over monotone paths.
double dtw_distance(std::span<const double> a, std::span<const double> b,
                    std::optional<std::size_t> band_radius = std::nullopt);

/// (x - mean) / population std. Constant input maps to zeros and sets `was_constant`.
std::vector<double> znormalize(std::span<const double> x, bool* was_constant = nullptr);

/// exp(-d^2 / sigma^2) with d the DTW distance between (optionally z-normalized) inputs.
double dtw_similarity(std::span<const double> a, std::span<const double> b,
                      const SimilarityConfig& config);

/// Kernel applied to a precomputed distance.
double gaussian_kernel(double distance, double sigma);

double pearson(std::span<const double> a, std::span<const double> b);

/// Symmetric n x n distance matrix (row-major) with zero diagonal.
std::vector<double> pairwise_dtw(const std::vector<std::vector<double>>& seqs,
                                 const SimilarityConfig& config);

/// Median of the off-diagonal entries of a pairwise matrix; 1.0 when the
/// median is zero or there are fewer than two sequences.
double median_heuristic_sigma(const std::vector<double>& distances, std::size_t n);

}  // namespace cometnet
