#include "cometnet/motif.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "cometnet/error.hpp"
#include "cometnet/series.hpp"

namespace cometnet {

void ExtractionConfig::validate() const {
  if (ma_window == 0 || ma_window % 2 == 0) throw ConfigError("ma_window must be odd and positive");
  if (n_periods < 1) throw ConfigError("n_periods must be >= 1");
  if (n_anchors < 2) throw ConfigError("n_anchors must be >= 2");
  if (n_clusters < 1) throw ConfigError("n_clusters must be >= 1");
  if (!(tau_s >= -1.0 && tau_s < 1.0)) throw ConfigError("tau_s must lie in [-1, 1)");
  if (!(tau_g >= 0.0 && tau_g < 1.0)) throw ConfigError("tau_g must lie in [0, 1)");
  if (weights.saliency < 0 || weights.prevalence < 0 || weights.atomicity < 0)
    throw ConfigError("quality weights must be non-negative");
  if (!(gamma_d >= 0.0)) throw ConfigError("gamma_d must be >= 0");
  if (k < 1) throw ConfigError("K must be >= 1");
  if (sigma && !(*sigma > 0.0)) throw ConfigError("sigma must be > 0");
  if (!(band_fraction >= 0.0)) throw ConfigError("band_fraction must be >= 0");
  if (max_motif_points < 4) throw ConfigError("max_motif_points must be >= 4");
}

ScalePlan plan_scale(std::size_t scale, const ExtractionConfig& config) {
  ScalePlan p;
  p.scale = scale;
  p.factor = std::max<std::size_t>(1, scale / config.max_motif_points);
  p.ds_scale = std::max<std::size_t>(2, scale / p.factor);
  p.stride = std::max<std::size_t>(1, p.ds_scale / 4);
  return p;
}

std::vector<double> similarity_view(std::span<const double> values, std::size_t max_points) {
  const std::size_t factor = std::max<std::size_t>(1, values.size() / max_points);
  if (factor == 1) return {values.begin(), values.end()};
  return downsample(values, factor);
}

double shape_similarity(std::span<const double> a, std::span<const double> b,
                        const SimilarityConfig& config, std::size_t max_points) {
  return dtw_similarity(similarity_view(a, max_points), similarity_view(b, max_points), config);
}

std::vector<Anchor> sample_anchors(std::span<const double> series, std::size_t scale,
                                   std::size_t n_anchors, std::uint64_t seed) {
  if (scale < 2) throw ConfigError("anchor scale must be >= 2");
  if (n_anchors < 1) throw ConfigError("need at least one anchor");
  if (series.size() < scale)
    throw DataError("series of " + std::to_string(series.size()) +
                    " points is shorter than scale " + std::to_string(scale));
  std::vector<std::size_t> positions(series.size() - scale + 1);
  std::iota(positions.begin(), positions.end(), 0);
  std::vector<std::size_t> starts;
  std::mt19937_64 rng(seed);
  std::sample(positions.begin(), positions.end(), std::back_inserter(starts), n_anchors, rng);

  std::vector<Anchor> anchors;
  anchors.reserve(starts.size());
  for (std::size_t s : starts)
    anchors.push_back({s, scale, {series.begin() + static_cast<std::ptrdiff_t>(s),
                                  series.begin() + static_cast<std::ptrdiff_t>(s + scale)},
                       0.0});
  return anchors;
}

std::vector<Anchor> density_scores(std::vector<Anchor> anchors, double tau_s) {
  const std::size_t n = anchors.size();
  std::vector<std::vector<double>> z(n);
  std::vector<bool> constant(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    bool c = false;
    z[i] = znormalize(anchors[i].values, &c);
    constant[i] = c;
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (constant[i]) {
      anchors[i].density = 1.0;
      continue;
    }
    const double len = static_cast<double>(z[i].size());
    double rho = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (constant[j]) continue;
      const double r =
          i == j ? 1.0
                 : std::clamp(std::inner_product(z[i].begin(), z[i].end(), z[j].begin(), 0.0) / len,
                              -1.0, 1.0);
      if (r > tau_s) rho += r;
    }
    anchors[i].density = rho;
  }
  return anchors;
}

std::vector<Anchor> top_centroids(const std::vector<Anchor>& anchors, std::size_t n) {
  std::vector<Anchor> sorted = anchors;
  std::stable_sort(sorted.begin(), sorted.end(), [](const Anchor& a, const Anchor& b) {
    if (a.density != b.density) return a.density > b.density;
    return a.start_index < b.start_index;
  });
  if (sorted.size() > n) sorted.resize(n);
  return sorted;
}

std::size_t medoid_index(const std::vector<std::vector<double>>& members) {
  if (members.empty()) throw DataError("medoid of an empty cluster");
  const std::size_t n = members.size();
  std::vector<double> total(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = dtw_distance(members[i], members[j]);
      total[i] += d;
      total[j] += d;
    }
  return static_cast<std::size_t>(std::min_element(total.begin(), total.end()) - total.begin());
}

std::vector<CandidateMotif> cluster_and_medoid(std::span<const double> channel,
                                               const ScalePlan& plan,
                                               const std::vector<Anchor>& centroids) {
  if (centroids.empty()) throw DataError("clustering needs at least one centroid");
  const auto xs = downsample(channel, plan.factor);
  const std::size_t T = channel.size();

  std::vector<std::vector<double>> cz;
  std::vector<bool> usable;
  for (const auto& c : centroids) {
    if (c.values.size() != plan.ds_scale) throw DataError("centroid length does not match scale");
    bool constant = false;
    cz.push_back(znormalize(c.values, &constant));
    usable.push_back(!constant);
  }

  std::vector<std::vector<std::size_t>> members(centroids.size());
  const double len = static_cast<double>(plan.ds_scale);
  for (std::size_t s = 0; s + plan.ds_scale <= xs.size() && s * plan.factor + plan.scale <= T;
       s += plan.stride) {
    bool constant = false;
    const auto z = znormalize(std::span<const double>(xs).subspan(s, plan.ds_scale), &constant);
    if (constant) continue;
    std::size_t best = centroids.size();
    double best_r = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centroids.size(); ++c) {
      if (!usable[c]) continue;
      const double r = std::inner_product(z.begin(), z.end(), cz[c].begin(), 0.0) / len;
      if (r > best_r) {
        best_r = r;
        best = c;
      }
    }
    if (best < centroids.size()) members[best].push_back(s);
  }

  std::vector<CandidateMotif> out;
  for (const auto& cluster : members) {
    if (cluster.empty()) continue;
    std::vector<std::vector<double>> values;
    values.reserve(cluster.size());
    for (std::size_t s : cluster)
      values.emplace_back(xs.begin() + static_cast<std::ptrdiff_t>(s),
                          xs.begin() + static_cast<std::ptrdiff_t>(s + plan.ds_scale));
    const std::size_t m = cluster[medoid_index(values)];
    CandidateMotif cand;
    const std::size_t start = m * plan.factor;
    cand.values.assign(channel.begin() + static_cast<std::ptrdiff_t>(start),
                       channel.begin() + static_cast<std::ptrdiff_t>(start + plan.scale));
    cand.scale = plan.scale;
    cand.cluster_support = cluster.size();
    for (std::size_t s : cluster) cand.occurrences.push_back(s * plan.factor);
    cand.series_length = T;
    out.push_back(std::move(cand));
  }
  return out;
}

namespace {

std::vector<double> kernel_matrix(const std::vector<double>& distances, std::size_t n,
                                  double sigma) {
  std::vector<double> s(n * n, 1.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) s[i * n + j] = gaussian_kernel(distances[i * n + j], sigma);
  return s;
}

std::vector<std::vector<double>> views_of(const std::vector<CandidateMotif>& candidates,
                                          std::size_t max_points) {
  std::vector<std::vector<double>> views;
  views.reserve(candidates.size());
  for (const auto& c : candidates) views.push_back(similarity_view(c.values, max_points));
  return views;
}

std::vector<CandidateMotif> prototypes_from(const std::vector<std::vector<std::size_t>>& components,
                                            const std::vector<CandidateMotif>& candidates,
                                            const std::vector<double>& sims) {
  const std::size_t n = candidates.size();
  std::vector<CandidateMotif> refined;
  refined.reserve(components.size());
  for (const auto& comp : components) {
    CandidateMotif proto = candidates[prototype_index(comp, sims, n)];
    std::size_t support = 0;
    std::vector<std::size_t> occ;
    for (std::size_t v : comp) {
      support += candidates[v].cluster_support;
      occ.insert(occ.end(), candidates[v].occurrences.begin(), candidates[v].occurrences.end());
    }
    std::sort(occ.begin(), occ.end());
    occ.erase(std::unique(occ.begin(), occ.end()), occ.end());
    std::erase_if(occ, [&](std::size_t o) { return o + proto.scale > proto.series_length; });
    proto.cluster_support = support;
    proto.occurrences = std::move(occ);
    refined.push_back(std::move(proto));
  }
  return refined;
}

}  // namespace

std::vector<double> similarity_matrix(const std::vector<CandidateMotif>& candidates,
                                      const SimilarityConfig& config, std::size_t max_points) {
  config.validate();
  const auto d = pairwise_dtw(views_of(candidates, max_points), config);
  return kernel_matrix(d, candidates.size(), config.sigma);
}

SimilarityGraph build_similarity_graph(const std::vector<double>& similarities, std::size_t n,
                                       double tau_g) {
  SimilarityGraph g;
  g.size = n;
  g.weights.assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double s = similarities[i * n + j];
      if (i != j && s > tau_g) g.weights[i * n + j] = s;
    }
  return g;
}

SimilarityGraph build_similarity_graph(const std::vector<CandidateMotif>& candidates,
                                       double tau_g, const SimilarityConfig& config) {
  if (candidates.empty()) throw DataError("similarity graph needs at least one candidate");
  return build_similarity_graph(similarity_matrix(candidates, config), candidates.size(), tau_g);
}

std::vector<std::vector<std::size_t>> connected_components(const SimilarityGraph& graph) {
  const std::size_t n = graph.size;
  std::vector<bool> seen(n, false);
  std::vector<std::vector<std::size_t>> comps;
  for (std::size_t root = 0; root < n; ++root) {
    if (seen[root]) continue;
    std::vector<std::size_t> comp{root};
    seen[root] = true;
    for (std::size_t head = 0; head < comp.size(); ++head) {
      const std::size_t v = comp[head];
      for (std::size_t u = 0; u < n; ++u)
        if (!seen[u] && graph.weight(v, u) > 0.0) {
          seen[u] = true;
          comp.push_back(u);
        }
    }
    std::sort(comp.begin(), comp.end());
    comps.push_back(std::move(comp));
  }
  return comps;
}

std::size_t prototype_index(const std::vector<std::size_t>& component,
                            const std::vector<double>& similarities, std::size_t n) {
  if (component.empty()) throw DataError("prototype of an empty component");
  std::size_t best = component.front();
  double best_score = -1.0;
  for (std::size_t c : component) {
    double s = 0.0;
    for (std::size_t o : component) s += similarities[c * n + o];
    s /= static_cast<double>(component.size());
    if (s > best_score) {
      best_score = s;
      best = c;
    }
  }
  return best;
}

std::vector<CandidateMotif> select_prototypes(
    const std::vector<std::vector<std::size_t>>& components,
    const std::vector<CandidateMotif>& candidates, const SimilarityConfig& config) {
  return prototypes_from(components, candidates, similarity_matrix(candidates, config));
}

std::vector<std::size_t> rescan_occurrences(std::span<const double> channel,
                                            const CandidateMotif& candidate,
                                            const ExtractionConfig& config,
                                            const SimilarityConfig& similarity, double threshold) {
  const auto plan = plan_scale(candidate.scale, config);
  const std::size_t step = plan.stride * plan.factor;
  std::vector<std::size_t> occ;
  for (std::size_t s = 0; s + candidate.scale <= channel.size(); s += step)
    if (shape_similarity(candidate.values, channel.subspan(s, candidate.scale), similarity,
                         config.max_motif_points) > threshold)
      occ.push_back(s);
  return occ;
}

MotifLibrary rescan_library(const MotifLibrary& library, std::span<const double> series) {
  MotifLibrary out = library;
  out.series_length = series.size();
  const auto sim = library.similarity();
  for (auto& m : out.motifs) {
    CandidateMotif c;
    c.values = m.values;
    c.scale = m.scale;
    m.occurrences = rescan_occurrences(series, c, library.config, sim, library.config.tau_g);
  }
  return out;
}

QualityScores raw_quality(const CandidateMotif& candidate) {
  const auto& v = candidate.values;
  if (v.size() < 2) throw DataError("quality needs a candidate of length >= 2");
  const double n = static_cast<double>(v.size());
  const double mu = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : v) ss += (x - mu) * (x - mu);
  const double sd = std::sqrt(ss / n);
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  QualityScores q;
  q.raw_saliency = sd > 0.0 ? std::max(std::abs(*hi - mu), std::abs(*lo - mu)) / sd : 0.0;
  q.raw_prevalence = static_cast<double>(candidate.cluster_support);
  q.raw_atomicity = 1.0 / std::log(1.0 + n);
  return q;
}

std::vector<QualityScores> quality(const std::vector<CandidateMotif>& candidates,
                                   const QualityWeights& weights, bool normalize) {
  std::vector<QualityScores> out;
  out.reserve(candidates.size());
  for (const auto& c : candidates) out.push_back(raw_quality(c));

  auto rescale = [&](double QualityScores::*raw, double QualityScores::*norm) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const auto& q : out) {
      lo = std::min(lo, q.*raw);
      hi = std::max(hi, q.*raw);
    }
    for (auto& q : out) {
      if (!normalize)
        q.*norm = q.*raw;
      else
        q.*norm = hi > lo ? (q.*raw - lo) / (hi - lo) : 1.0;
    }
  };
  rescale(&QualityScores::raw_saliency, &QualityScores::saliency);
  rescale(&QualityScores::raw_prevalence, &QualityScores::prevalence);
  rescale(&QualityScores::raw_atomicity, &QualityScores::atomicity);
  for (auto& q : out)
    q.total = weights.saliency * q.saliency + weights.prevalence * q.prevalence +
              weights.atomicity * q.atomicity;
  return out;
}

std::vector<Interval> footprint(const std::vector<std::size_t>& occurrences, std::size_t scale) {
  std::vector<std::size_t> starts = occurrences;
  std::sort(starts.begin(), starts.end());
  std::vector<Interval> out;
  for (std::size_t s : starts) {
    if (!out.empty() && s <= out.back().end)
      out.back().end = std::max(out.back().end, s + scale);
    else
      out.push_back({s, s + scale});
  }
  return out;
}

namespace {

std::size_t total_length(const std::vector<Interval>& iv) {
  std::size_t n = 0;
  for (const auto& i : iv) n += i.end - i.begin;
  return n;
}

std::vector<Interval> merge(std::vector<Interval> iv) {
  std::sort(iv.begin(), iv.end(),
            [](const Interval& a, const Interval& b) { return a.begin < b.begin; });
  std::vector<Interval> out;
  for (const auto& i : iv) {
    if (!out.empty() && i.begin <= out.back().end)
      out.back().end = std::max(out.back().end, i.end);
    else
      out.push_back(i);
  }
  return out;
}

// Length of the intersection of two sorted disjoint interval lists.
std::size_t overlap_length(const std::vector<Interval>& a, const std::vector<Interval>& b) {
  std::size_t i = 0, j = 0, n = 0;
  while (i < a.size() && j < b.size()) {
    const std::size_t lo = std::max(a[i].begin, b[j].begin);
    const std::size_t hi = std::min(a[i].end, b[j].end);
    if (lo < hi) n += hi - lo;
    if (a[i].end < b[j].end)
      ++i;
    else
      ++j;
  }
  return n;
}

double coverage_against(const std::vector<Interval>& cand, const std::vector<Interval>& covered) {
  const std::size_t total = total_length(cand);
  if (total == 0) return 0.0;
  return static_cast<double>(total - overlap_length(cand, covered)) / static_cast<double>(total);
}

}  // namespace

double marginal_coverage(const CandidateMotif& candidate, const std::vector<Motif>& selected) {
  if (candidate.occurrences.empty()) throw DataError("candidate has no occurrences");
  std::vector<Interval> covered;
  for (const auto& m : selected) {
    auto fp = footprint(m.occurrences, m.scale);
    covered.insert(covered.end(), fp.begin(), fp.end());
  }
  return coverage_against(footprint(candidate.occurrences, candidate.scale), merge(covered));
}

double marginal_diversity(const CandidateMotif& candidate, const std::vector<Motif>& selected,
                          double gamma_d, const SimilarityConfig& config, std::size_t max_points) {
  if (!(gamma_d >= 0.0)) throw ConfigError("gamma_d must be >= 0");
  double max_sim = 0.0;
  for (const auto& m : selected)
    max_sim = std::max(max_sim, shape_similarity(candidate.values, m.values, config, max_points));
  return std::pow(1.0 - max_sim, gamma_d);
}

namespace {

MotifLibrary greedy_select(const std::vector<CandidateMotif>& refined,
                           const std::vector<double>& sims, const ExtractionConfig& config) {
  const std::size_t n = refined.size();
  const auto scores = quality(refined, config.weights, config.normalize_quality);
  std::vector<std::vector<Interval>> prints;
  prints.reserve(n);
  for (const auto& c : refined) prints.push_back(footprint(c.occurrences, c.scale));

  MotifLibrary lib;
  std::vector<bool> taken(n, false);
  std::vector<std::size_t> chosen;
  std::vector<Interval> covered;
  while (chosen.size() < config.k) {
    SelectionRound round;
    std::size_t best = n;
    double best_benefit = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      double max_sim = 0.0;
      for (std::size_t j : chosen) max_sim = std::max(max_sim, sims[i * n + j]);
      const double benefit = scores[i].total * coverage_against(prints[i], covered) *
                             std::pow(1.0 - max_sim, config.gamma_d);
      round.candidates.push_back(i);
      round.benefits.push_back(benefit);
      if (benefit > best_benefit) {
        best_benefit = benefit;
        best = i;
      }
    }
    if (best == n || best_benefit < config.benefit_floor) break;
    round.chosen = best;
    lib.trace.push_back(std::move(round));
    taken[best] = true;
    chosen.push_back(best);
    covered.insert(covered.end(), prints[best].begin(), prints[best].end());
    covered = merge(std::move(covered));

    Motif m;
    m.values = refined[best].values;
    m.scale = refined[best].scale;
    m.occurrences = refined[best].occurrences;
    m.quality = scores[best];
    m.benefit = best_benefit;
    m.source_candidate = best;
    lib.motifs.push_back(std::move(m));
  }
  lib.refined_count = n;
  return lib;
}

}  // namespace

MotifLibrary select_dominant(const std::vector<CandidateMotif>& refined,
                             const ExtractionConfig& config, const SimilarityConfig& similarity) {
  if (refined.empty()) throw DataError("no candidates to select from");
  config.validate();
  auto lib = greedy_select(refined, similarity_matrix(refined, similarity, config.max_motif_points),
                           config);
  lib.config = config;
  lib.sigma = similarity.sigma;
  lib.series_length = refined.front().series_length;
  return lib;
}

MotifLibrary extract_motifs(std::span<const double> channel, const ExtractionConfig& config,
                            std::size_t channel_index, const std::string& channel_name) {
  config.validate();
  const std::size_t T = channel.size();
  if (T < 8) throw DataError("series of " + std::to_string(T) + " points is too short to mine");

  std::vector<std::string> warnings;
  std::size_t window = std::min(config.ma_window, T % 2 == 1 ? T : T - 1);
  if (window != config.ma_window)
    warnings.push_back("moving-average window shrunk to " + std::to_string(window));
  const auto detrended = moving_average_detrend(channel, window);
  const auto periods = dominant_periods(amplitude_spectrum(detrended), config.n_periods);

  std::vector<CandidateMotif> pool;
  for (std::size_t scale : periods.periods) {
    const auto plan = plan_scale(scale, config);
    const auto xs = downsample(channel, plan.factor);
    if (xs.size() < plan.ds_scale + 1) {
      warnings.push_back("scale " + std::to_string(scale) + " skipped: series too short");
      continue;
    }
    std::seed_seq seq{static_cast<std::uint32_t>(config.seed),
                      static_cast<std::uint32_t>(config.seed >> 32),
                      static_cast<std::uint32_t>(scale)};
    std::uint64_t scale_seed = 0;
    {
      std::array<std::uint32_t, 2> words{};
      seq.generate(words.begin(), words.end());
      scale_seed = (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
    }
    auto anchors = density_scores(sample_anchors(xs, plan.ds_scale, config.n_anchors, scale_seed),
                                  config.tau_s);
    auto found = cluster_and_medoid(channel, plan, top_centroids(anchors, config.n_clusters));
    for (auto& c : found) pool.push_back(std::move(c));
  }
  if (pool.empty()) throw DataError("motif extraction produced no candidates");

  const std::size_t n = pool.size();
  SimilarityConfig sim;
  sim.band_fraction = config.band_fraction;
  sim.znormalize = config.znormalize;
  const auto distances = pairwise_dtw(views_of(pool, config.max_motif_points), sim);
  sim.sigma = config.sigma.value_or(median_heuristic_sigma(distances, n));
  const auto sims = kernel_matrix(distances, n, sim.sigma);

  const auto components = connected_components(build_similarity_graph(sims, n, config.tau_g));
  auto refined = prototypes_from(components, pool, sims);
  if (config.occurrences == OccurrenceMode::rescan)
    for (auto& r : refined) {
      auto occ = rescan_occurrences(channel, r, config, sim, config.tau_g);
      if (!occ.empty()) r.occurrences = std::move(occ);
    }
  for (std::size_t i = 0; i < refined.size(); ++i)
    if (raw_quality(refined[i]).raw_saliency == 0.0)
      warnings.push_back("refined candidate " + std::to_string(i) +
                         " has zero variance; saliency set to 0");

  auto lib = greedy_select(
      refined, similarity_matrix(refined, sim, config.max_motif_points), config);
  lib.channel = channel_index;
  lib.channel_name = channel_name;
  lib.series_length = T;
  lib.config = config;
  lib.sigma = sim.sigma;
  lib.periods = periods;
  lib.candidate_count = n;
  lib.warnings = std::move(warnings);
  return lib;
}

}  // namespace cometnet
