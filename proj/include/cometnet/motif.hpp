#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cometnet/dtw.hpp"
#include "cometnet/spectral.hpp"

namespace cometnet {

struct QualityWeights {
  double saliency = 0.6;
  double prevalence = 0.2;
  double atomicity = 0.2;

  bool operator==(const QualityWeights&) const = default;
};

/// How a refined prototype's occurrences are enumerated for coverage.
enum class OccurrenceMode {
  merged,  // union of the member clusters' positions
  rescan,  // positions where the prototype itself matches the series above tau_g
};

struct ExtractionConfig {
  std::size_t ma_window = 25;
  std::size_t n_periods = 10;
  std::size_t n_anchors = 64;
  std::size_t n_clusters = 10;
  double tau_s = 0.7;
  double tau_g = 0.8;
  QualityWeights weights;
  double gamma_d = 2.0;
  std::size_t k = 10;
  std::uint64_t seed = 2025;
  /// Fixed kernel scale; unset means median of pairwise candidate distances.
  std::optional<double> sigma;
  bool znormalize = true;
  double band_fraction = 0.1;
  bool normalize_quality = true;
  /// Discovery resolution: each scale is downsampled to at most this many points.
  std::size_t max_motif_points = 48;
  double benefit_floor = 1e-9;
  OccurrenceMode occurrences = OccurrenceMode::rescan;

  void validate() const;
  nlohmann::json to_json() const;
  static ExtractionConfig from_json(const nlohmann::json& j);
  bool operator==(const ExtractionConfig&) const = default;
};

/// How one full-resolution scale is explored on the downsampled series.
struct ScalePlan {
  std::size_t scale = 0;      // full-resolution length
  std::size_t factor = 1;     // block-mean downsampling factor
  std::size_t ds_scale = 0;   // length on the downsampled series
  std::size_t stride = 1;     // enumeration stride on the downsampled series
};

ScalePlan plan_scale(std::size_t scale, const ExtractionConfig& config);

struct Anchor {
  std::size_t start_index = 0;  // on the downsampled series
  std::size_t scale = 0;        // downsampled length
  std::vector<double> values;
  double density = 0.0;
};

struct CandidateMotif {
  std::vector<double> values;  // full resolution, length == scale
  std::size_t scale = 0;
  std::size_t cluster_support = 0;
  std::vector<std::size_t> occurrences;  // full-resolution start indices, ascending
  std::size_t series_length = 0;
};

struct SimilarityGraph {
  std::size_t size = 0;
  std::vector<double> weights;  // row-major, zero means no edge

  double weight(std::size_t i, std::size_t j) const { return weights[i * size + j]; }
};

struct QualityScores {
  double raw_saliency = 0.0;
  double raw_prevalence = 0.0;
  double raw_atomicity = 0.0;
  double saliency = 0.0;
  double prevalence = 0.0;
  double atomicity = 0.0;
  double total = 0.0;
};

struct Motif {
  std::vector<double> values;
  std::size_t scale = 0;
  std::vector<std::size_t> occurrences;
  QualityScores quality;
  double benefit = 0.0;
  std::size_t source_candidate = 0;  // index into the refined set
};

/// Benefits of every unselected candidate in one greedy round.
struct SelectionRound {
  std::vector<std::size_t> candidates;
  std::vector<double> benefits;
  std::size_t chosen = 0;
};

struct MotifLibrary {
  static constexpr int kFormatVersion = 1;

  std::size_t channel = 0;
  std::string channel_name;
  std::size_t series_length = 0;
  std::vector<Motif> motifs;
  ExtractionConfig config;
  double sigma = 1.0;
  PeriodSet periods;
  std::size_t candidate_count = 0;
  std::size_t refined_count = 0;
  std::vector<SelectionRound> trace;
  std::vector<std::string> warnings;

  SimilarityConfig similarity() const;
  nlohmann::json to_json() const;
  static MotifLibrary from_json(const nlohmann::json& j);
  std::string serialize() const;
  void save(const std::filesystem::path& path) const;
  static MotifLibrary load(const std::filesystem::path& path);
};

/// Representation used for every shape comparison: block-mean downsampled so
/// that long motifs are compared at discovery resolution.
std::vector<double> similarity_view(std::span<const double> values, std::size_t max_points = 48);

double shape_similarity(std::span<const double> a, std::span<const double> b,
                        const SimilarityConfig& config, std::size_t max_points = 48);

std::vector<Anchor> sample_anchors(std::span<const double> series, std::size_t scale,
                                   std::size_t n_anchors, std::uint64_t seed);

/// rho_i = sum_j R_ij [R_ij > tau], self included. Constant anchors get rho = 1.
std::vector<Anchor> density_scores(std::vector<Anchor> anchors, double tau_s);

/// The `n` densest anchors, ties broken by start index.
std::vector<Anchor> top_centroids(const std::vector<Anchor>& anchors, std::size_t n);

/// Member minimizing mean DTW distance to all members; ties -> lowest index.
std::size_t medoid_index(const std::vector<std::vector<double>>& members);

/// Assigns every enumerated subsequence of the scale to its most correlated
/// centroid and emits one medoid candidate per non-empty cluster.
std::vector<CandidateMotif> cluster_and_medoid(std::span<const double> channel,
                                               const ScalePlan& plan,
                                               const std::vector<Anchor>& centroids);

/// Pairwise shape similarity matrix over candidates (unit diagonal).
std::vector<double> similarity_matrix(const std::vector<CandidateMotif>& candidates,
                                      const SimilarityConfig& config,
                                      std::size_t max_points = 48);

SimilarityGraph build_similarity_graph(const std::vector<double>& similarities, std::size_t n,
                                       double tau_g);
SimilarityGraph build_similarity_graph(const std::vector<CandidateMotif>& candidates,
                                       double tau_g, const SimilarityConfig& config);

/// Components ordered by smallest vertex; vertices ascend within each.
std::vector<std::vector<std::size_t>> connected_components(const SimilarityGraph& graph);

/// Member with the highest mean similarity to its component (self included).
std::size_t prototype_index(const std::vector<std::size_t>& component,
                            const std::vector<double>& similarities, std::size_t n);

std::vector<CandidateMotif> select_prototypes(
    const std::vector<std::vector<std::size_t>>& components,
    const std::vector<CandidateMotif>& candidates, const SimilarityConfig& config);

/// Starts (on the scale's enumeration grid) where `candidate` matches the
/// channel with shape similarity above `threshold`. Empty if none match.
std::vector<std::size_t> rescan_occurrences(std::span<const double> channel,
                                            const CandidateMotif& candidate,
                                            const ExtractionConfig& config,
                                            const SimilarityConfig& similarity, double threshold);

/// Copy of `library` whose occurrences are re-enumerated on another series
/// (for example a held-out split) with the library's own kernel and tau_g.
/// Motifs may end up with no occurrences.
MotifLibrary rescan_library(const MotifLibrary& library, std::span<const double> series);

/// Raw (unnormalized) saliency, prevalence and atomicity.
QualityScores raw_quality(const CandidateMotif& candidate);

/// Scores for a whole refined set; components are min-max normalized across
/// the set when `normalize` is on.
std::vector<QualityScores> quality(const std::vector<CandidateMotif>& candidates,
                                   const QualityWeights& weights, bool normalize = true);

struct Interval {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive
};

/// Union of [start, start + scale) as sorted disjoint intervals.
std::vector<Interval> footprint(const std::vector<std::size_t>& occurrences, std::size_t scale);

double marginal_coverage(const CandidateMotif& candidate, const std::vector<Motif>& selected);

double marginal_diversity(const CandidateMotif& candidate, const std::vector<Motif>& selected,
                          double gamma_d, const SimilarityConfig& config,
                          std::size_t max_points = 48);

/// Greedy benefit-driven selection. Fills motifs and trace of `library`.
MotifLibrary select_dominant(const std::vector<CandidateMotif>& refined,
                             const ExtractionConfig& config, const SimilarityConfig& similarity);

/// Full cascade for one univariate channel.
MotifLibrary extract_motifs(std::span<const double> channel, const ExtractionConfig& config,
                            std::size_t channel_index = 0, const std::string& channel_name = "");

}  // namespace cometnet
