#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "cometnet/forecaster.hpp"
#include "cometnet/motif.hpp"
#include "cometnet/neural.hpp"
#include "cometnet/series.hpp"

namespace cometnet {

enum class SplitMode { ratio, ett };
enum class Grouping { channel, kdfh };

/// Everything a run needs, serializable as flat `section.key = value` text
/// or as nested JSON.
struct RunConfig {
  std::filesystem::path data;
  std::string date_column = "date";
  SplitSpec split;
  SplitMode split_mode = SplitMode::ratio;
  std::size_t steps_per_day = 24;  // ett split only
  std::size_t lookback = 96;
  std::size_t horizon = 96;
  std::vector<std::size_t> horizons = {96};  // evaluated prefixes of the forecast
  Grouping grouping = Grouping::channel;
  std::size_t kdfh_bins = 3;  // top spectral bins per channel for k-DFH grouping
  ExtractionConfig extraction;
  ForecasterConfig model;
  TrainConfig training;
  std::uint64_t seed = 2025;

  /// Copies `seed` into every component that draws random numbers.
  void propagate_seed();
  void validate() const;
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  std::string to_text() const;
  static RunConfig from_text(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);
  bool operator==(const RunConfig&) const = default;
};

/// Sets one `section.key` field from its textual value.
void set_config_value(RunConfig& config, const std::string& key, const std::string& value);

/// Thread cap from COMETNET_THREADS, at least 1.
std::size_t thread_limit();

/// Runs fn(0..n-1) on up to `threads` workers. Each index runs exactly once;
/// callers write results by index so the output does not depend on timing.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

/// Channels that share one library and one model.
struct ChannelGroup {
  std::string name;
  std::vector<std::size_t> channels;
};

std::vector<ChannelGroup> make_groups(const MultivariateSeries& train, Grouping grouping,
                                      std::size_t kdfh_bins);

/// Train/val/test parts, each standardized with train statistics.
struct PreparedData {
  MultivariateSeries raw;
  SplitBorders borders;
  MultivariateSeries train, val, test;
  ChannelStats stats;
};

PreparedData prepare_data(const RunConfig& config);

struct ExtractSummary {
  std::vector<ChannelGroup> groups;
  std::vector<std::filesystem::path> libraries;
};

/// Writes library_<group>.json per group and extract_manifest.json to `out_dir`.
ExtractSummary cmd_extract(const RunConfig& config, const std::filesystem::path& out_dir,
                           std::ostream& log);

/// Trains one model per group from the libraries in `library_dir`. Writes
/// model_<group>.ckpt, report_<group>.json and train_manifest.json.
void cmd_train(const RunConfig& config, const std::filesystem::path& library_dir,
               const std::filesystem::path& out_dir, std::ostream& log);

struct HorizonMetrics {
  std::size_t horizon = 0;
  double model_mse = 0.0, model_mae = 0.0;
  double naive_mse = 0.0, naive_mae = 0.0;
  double linear_mse = 0.0, linear_mae = 0.0;
};

/// Test-split metrics for each requested horizon, averaged over channels.
std::vector<HorizonMetrics> evaluate(const RunConfig& config,
                                     const std::filesystem::path& model_dir);

/// Writes metrics.csv and metrics.json to `out_dir`.
std::vector<HorizonMetrics> cmd_eval(const RunConfig& config,
                                     const std::filesystem::path& model_dir,
                                     const std::filesystem::path& out_dir, std::ostream& log);

/// One (start, end, motif_id) record per occurrence, end exclusive.
nlohmann::json library_spans(const MotifLibrary& library);

/// (t, truth, prediction) rows for one test window of one channel.
nlohmann::json prediction_trace(const RunConfig& config, const std::filesystem::path& model_dir,
                                std::size_t channel, std::size_t window);

std::string spans_csv(const nlohmann::json& spans);
std::string trace_csv(const nlohmann::json& trace);

enum class SynthKind { motifs, forecasting };

/// Writes a planted fixture as CSV plus a JSON sidecar with the templates.
void cmd_synth(SynthKind kind, std::size_t length, std::uint64_t seed, double noise,
               const std::filesystem::path& out_csv);

/// Maps the library's error types to process exit codes.
int exit_code_for(const std::exception& e);

}  // namespace cometnet
