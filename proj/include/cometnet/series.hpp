#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace cometnet {

/// Dense T x N block of observations stored channel-major, so that
/// `channel(n)` is a contiguous view. Immutable after construction.
class MultivariateSeries {
 public:
  MultivariateSeries() = default;
  MultivariateSeries(std::vector<std::vector<double>> channels,
                     std::vector<std::string> names,
                     std::int64_t step_seconds = 1);

  static MultivariateSeries univariate(std::vector<double> values,
                                       std::string name = "value",
                                       std::int64_t step_seconds = 1);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return channels_.size(); }
  std::int64_t step_seconds() const { return step_seconds_; }
  const std::vector<std::string>& names() const { return names_; }

  std::span<const double> channel(std::size_t n) const { return channels_.at(n); }
  double at(std::size_t t, std::size_t n) const { return channels_[n][t]; }

  /// Rows [begin, end) as a new series.
  MultivariateSeries slice(std::size_t begin, std::size_t end) const;

  bool operator==(const MultivariateSeries&) const = default;

 private:
  std::vector<std::vector<double>> channels_;
  std::vector<std::string> names_;
  std::size_t rows_ = 0;
  std::int64_t step_seconds_ = 1;
};

/// Reads a comma-separated file with one header row. The timestamp column
/// is dropped after checking it is strictly increasing.
MultivariateSeries load_csv(const std::filesystem::path& path,
                            const std::string& date_column = "date");

void write_csv(const std::filesystem::path& path, const MultivariateSeries& series,
               const std::string& date_column = "date");

struct SplitSpec {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;

  void validate() const;
  bool operator==(const SplitSpec&) const = default;
};

struct SplitParts {
  MultivariateSeries train;
  MultivariateSeries val;
  MultivariateSeries test;
};

/// Row ranges [begin, end) of the three parts within the source series.
struct SplitBorders {
  std::size_t train_begin = 0, train_end = 0;
  std::size_t val_begin = 0, val_end = 0;
  std::size_t test_begin = 0, test_end = 0;
};

SplitBorders split_borders(std::size_t rows, const SplitSpec& spec);
SplitParts split_chronological(const MultivariateSeries& series, const SplitSpec& spec);

/// Fixed-month slicing used by the public ETT benchmarks: 12/4/4 months of
/// data, with val and test borders pulled back by `lookback` rows so the
/// first window of each part has full history. `steps_per_day` is 24 for
/// hourly files and 96 for 15-minute files.
SplitBorders ett_borders(std::size_t rows, std::size_t lookback,
                         std::size_t steps_per_day = 24);

/// Number of length-`lookback` windows inside a part.
inline std::size_t window_count(std::size_t part_rows, std::size_t lookback) {
  return part_rows >= lookback ? part_rows - lookback + 1 : 0;
}

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> stddev;

  nlohmann::json to_json() const;
  static ChannelStats from_json(const nlohmann::json& j);
  bool operator==(const ChannelStats&) const = default;
};

ChannelStats channel_stats(const MultivariateSeries& source);

/// (x - mean) / std per channel using population statistics of `stats_source`.
std::pair<MultivariateSeries, ChannelStats> standardize(const MultivariateSeries& series,
                                                        const MultivariateSeries& stats_source);
MultivariateSeries apply_standardize(const MultivariateSeries& series, const ChannelStats& stats);
MultivariateSeries inverse_standardize(const MultivariateSeries& series,
                                       const ChannelStats& stats);

/// Input minus its centered moving average, with edge-replicated padding.
std::vector<double> moving_average_detrend(std::span<const double> x, std::size_t window);
MultivariateSeries moving_average_detrend(const MultivariateSeries& series, std::size_t window);

/// Block means over [i*factor, (i+1)*factor); a trailing partial block is dropped.
std::vector<double> downsample(std::span<const double> x, std::size_t factor);
MultivariateSeries downsample(const MultivariateSeries& series, std::size_t factor);

struct Annotation {
  std::size_t y_class = 0;
  double y_pos = 0.0;
  double match_similarity = 0.0;
  bool fallback = false;  // no occurrence overlapped the window end
};

struct WindowSample {
  std::vector<double> window;
  std::vector<double> target;
  std::size_t channel = 0;
  std::size_t t_end = 0;
  std::optional<Annotation> annotation;
};

/// One list of samples per channel, windows ending at L-1, L-1+stride, ...
std::vector<std::vector<WindowSample>> sliding_windows(const MultivariateSeries& series,
                                                       std::size_t lookback, std::size_t horizon,
                                                       std::size_t stride = 1);

std::vector<WindowSample> channel_windows(std::span<const double> x, std::size_t channel,
                                          std::size_t lookback, std::size_t horizon,
                                          std::size_t stride = 1);

double mse(std::span<const double> pred, std::span<const double> truth);
double mae(std::span<const double> pred, std::span<const double> truth);

/// Multichannel variants: rows are channels, averaged with equal weight.
double mse(const std::vector<std::vector<double>>& pred,
           const std::vector<std::vector<double>>& truth);
double mae(const std::vector<std::vector<double>>& pred,
           const std::vector<std::vector<double>>& truth);

}  // namespace cometnet
