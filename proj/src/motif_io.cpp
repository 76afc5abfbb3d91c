#include "cometnet/error.hpp"
#include "cometnet/io.hpp"
#include "cometnet/motif.hpp"

namespace cometnet {

namespace {

const char* occurrence_mode_name(OccurrenceMode m) {
  return m == OccurrenceMode::merged ? "merged" : "rescan";
}

OccurrenceMode parse_occurrence_mode(const std::string& s) {
  if (s == "merged") return OccurrenceMode::merged;
  if (s == "rescan") return OccurrenceMode::rescan;
  throw ConfigError("unknown occurrence mode '" + s + "' (expected merged or rescan)");
}

}  // namespace

nlohmann::json ExtractionConfig::to_json() const {
  nlohmann::json j = {
      {"ma_window", ma_window},
      {"n_periods", n_periods},
      {"n_anchors", n_anchors},
      {"n_clusters", n_clusters},
      {"tau_s", tau_s},
      {"tau_g", tau_g},
      {"alpha_s", weights.saliency},
      {"alpha_p", weights.prevalence},
      {"alpha_a", weights.atomicity},
      {"gamma_d", gamma_d},
      {"k", k},
      {"seed", seed},
      {"sigma", nullptr},
      {"znormalize", znormalize},
      {"band_fraction", band_fraction},
      {"normalize_quality", normalize_quality},
      {"max_motif_points", max_motif_points},
      {"benefit_floor", benefit_floor},
      {"occurrences", occurrence_mode_name(occurrences)},
  };
  if (sigma) j["sigma"] = *sigma;
  return j;
}

ExtractionConfig ExtractionConfig::from_json(const nlohmann::json& j) {
  ExtractionConfig c;
  c.ma_window = j.value("ma_window", c.ma_window);
  c.n_periods = j.value("n_periods", c.n_periods);
  c.n_anchors = j.value("n_anchors", c.n_anchors);
  c.n_clusters = j.value("n_clusters", c.n_clusters);
  c.tau_s = j.value("tau_s", c.tau_s);
  c.tau_g = j.value("tau_g", c.tau_g);
  c.weights.saliency = j.value("alpha_s", c.weights.saliency);
  c.weights.prevalence = j.value("alpha_p", c.weights.prevalence);
  c.weights.atomicity = j.value("alpha_a", c.weights.atomicity);
  c.gamma_d = j.value("gamma_d", c.gamma_d);
  c.k = j.value("k", c.k);
  c.seed = j.value("seed", c.seed);
  if (j.contains("sigma") && !j["sigma"].is_null()) c.sigma = j["sigma"].get<double>();
  c.znormalize = j.value("znormalize", c.znormalize);
  c.band_fraction = j.value("band_fraction", c.band_fraction);
  c.normalize_quality = j.value("normalize_quality", c.normalize_quality);
  c.max_motif_points = j.value("max_motif_points", c.max_motif_points);
  c.benefit_floor = j.value("benefit_floor", c.benefit_floor);
  if (j.contains("occurrences"))
    c.occurrences = parse_occurrence_mode(j["occurrences"].get<std::string>());
  return c;
}

SimilarityConfig MotifLibrary::similarity() const {
  SimilarityConfig s;
  s.sigma = sigma;
  s.band_fraction = config.band_fraction;
  s.znormalize = config.znormalize;
  return s;
}

nlohmann::json MotifLibrary::to_json() const {
  nlohmann::json motifs_json = nlohmann::json::array();
  for (const auto& m : motifs) {
    motifs_json.push_back({
        {"values", m.values},
        {"scale", m.scale},
        {"occurrences", m.occurrences},
        {"quality",
         {{"saliency", m.quality.saliency},
          {"prevalence", m.quality.prevalence},
          {"atomicity", m.quality.atomicity},
          {"total", m.quality.total},
          {"raw_saliency", m.quality.raw_saliency},
          {"raw_prevalence", m.quality.raw_prevalence},
          {"raw_atomicity", m.quality.raw_atomicity}}},
        {"benefit", m.benefit},
        {"source_candidate", m.source_candidate},
    });
  }
  nlohmann::json trace_json = nlohmann::json::array();
  for (const auto& r : trace)
    trace_json.push_back(
        {{"candidates", r.candidates}, {"benefits", r.benefits}, {"chosen", r.chosen}});
  return {
      {"format", "cometnet.motif_library"},
      {"version", kFormatVersion},
      {"channel", channel},
      {"channel_name", channel_name},
      {"series_length", series_length},
      {"config", config.to_json()},
      {"sigma", sigma},
      {"periods", periods.to_json()},
      {"candidate_count", candidate_count},
      {"refined_count", refined_count},
      {"motifs", motifs_json},
      {"selection_trace", trace_json},
      {"warnings", warnings},
  };
}

MotifLibrary MotifLibrary::from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "cometnet.motif_library")
      throw DataError("not a motif library document");
    if (j.at("version").get<int>() != kFormatVersion)
      throw DataError("unsupported motif library version " + j.at("version").dump());
    MotifLibrary lib;
    lib.channel = j.at("channel").get<std::size_t>();
    lib.channel_name = j.at("channel_name").get<std::string>();
    lib.series_length = j.at("series_length").get<std::size_t>();
    lib.config = ExtractionConfig::from_json(j.at("config"));
    lib.sigma = j.at("sigma").get<double>();
    lib.periods = PeriodSet::from_json(j.at("periods"));
    lib.candidate_count = j.at("candidate_count").get<std::size_t>();
    lib.refined_count = j.at("refined_count").get<std::size_t>();
    for (const auto& mj : j.at("motifs")) {
      Motif m;
      m.values = mj.at("values").get<std::vector<double>>();
      m.scale = mj.at("scale").get<std::size_t>();
      m.occurrences = mj.at("occurrences").get<std::vector<std::size_t>>();
      const auto& q = mj.at("quality");
      m.quality.saliency = q.at("saliency").get<double>();
      m.quality.prevalence = q.at("prevalence").get<double>();
      m.quality.atomicity = q.at("atomicity").get<double>();
      m.quality.total = q.at("total").get<double>();
      m.quality.raw_saliency = q.at("raw_saliency").get<double>();
      m.quality.raw_prevalence = q.at("raw_prevalence").get<double>();
      m.quality.raw_atomicity = q.at("raw_atomicity").get<double>();
      m.benefit = mj.at("benefit").get<double>();
      m.source_candidate = mj.at("source_candidate").get<std::size_t>();
      if (m.values.size() != m.scale || m.occurrences.empty())
        throw DataError("motif record is inconsistent");
      for (std::size_t o : m.occurrences)
        if (o + m.scale > lib.series_length) throw DataError("motif occurrence out of bounds");
      lib.motifs.push_back(std::move(m));
    }
    for (const auto& rj : j.at("selection_trace")) {
      SelectionRound r;
      r.candidates = rj.at("candidates").get<std::vector<std::size_t>>();
      r.benefits = rj.at("benefits").get<std::vector<double>>();
      r.chosen = rj.at("chosen").get<std::size_t>();
      lib.trace.push_back(std::move(r));
    }
    lib.warnings = j.at("warnings").get<std::vector<std::string>>();
    if (lib.motifs.empty()) throw DataError("motif library is empty");
    return lib;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed motif library: ") + e.what());
  }
}

std::string MotifLibrary::serialize() const { return dump_json(to_json()); }

void MotifLibrary::save(const std::filesystem::path& path) const {
  atomic_write(path, serialize());
}

MotifLibrary MotifLibrary::load(const std::filesystem::path& path) {
  return from_json(read_json(path));
}

}  // namespace cometnet
