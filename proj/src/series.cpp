#include "cometnet/series.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

#include "cometnet/error.hpp"

namespace cometnet {

MultivariateSeries::MultivariateSeries(std::vector<std::vector<double>> channels,
                                       std::vector<std::string> names, std::int64_t step_seconds)
    : channels_(std::move(channels)), names_(std::move(names)), step_seconds_(step_seconds) {
  if (channels_.empty()) throw DataError("series needs at least one channel");
  if (names_.size() != channels_.size())
    throw DataError("channel name count " + std::to_string(names_.size()) +
                    " does not match channel count " + std::to_string(channels_.size()));
  if (std::set<std::string>(names_.begin(), names_.end()).size() != names_.size())
    throw DataError("channel names must be distinct");
  if (step_seconds_ <= 0) throw DataError("sampling step must be positive");
  rows_ = channels_.front().size();
  if (rows_ == 0) throw DataError("series needs at least one row");
  for (std::size_t n = 0; n < channels_.size(); ++n) {
    if (channels_[n].size() != rows_) throw DataError("ragged channels in series");
    for (std::size_t t = 0; t < rows_; ++t)
      if (!std::isfinite(channels_[n][t]))
        throw DataError("non-finite value at row " + std::to_string(t) + ", channel '" +
                        names_[n] + "'");
  }
}

MultivariateSeries MultivariateSeries::univariate(std::vector<double> values, std::string name,
                                                  std::int64_t step_seconds) {
  std::vector<std::vector<double>> channels;
  channels.push_back(std::move(values));
  return MultivariateSeries(std::move(channels), {std::move(name)}, step_seconds);
}

MultivariateSeries MultivariateSeries::slice(std::size_t begin, std::size_t end) const {
  if (begin >= end || end > rows_)
    throw DataError("invalid row slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                    ") of " + std::to_string(rows_) + " rows");
  std::vector<std::vector<double>> out;
  out.reserve(channels_.size());
  for (const auto& c : channels_) out.emplace_back(c.begin() + begin, c.begin() + end);
  return MultivariateSeries(std::move(out), names_, step_seconds_);
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::string trim(std::string s) {
  auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

std::optional<double> parse_double(const std::string& s) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || !std::isfinite(v)) return std::nullopt;
  return v;
}

// Seconds since epoch for ISO-like timestamps, or the plain number for
// numeric time columns.
std::optional<double> parse_timestamp(const std::string& s) {
  for (const char* fmt : {"%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M",
                          "%Y/%m/%d %H:%M", "%Y-%m-%d"}) {
    std::tm tm{};
    std::istringstream is(s);
    is >> std::get_time(&tm, fmt);
    if (!is.fail()) {
      is >> std::ws;
      if (is.eof()) return static_cast<double>(timegm(&tm));
    }
  }
  return parse_double(s);
}

std::string format_timestamp(std::int64_t seconds) {
  std::time_t tt = static_cast<std::time_t>(seconds);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%d %H:%M:%S", &tm);
  return buf;
}

}  // namespace

MultivariateSeries load_csv(const std::filesystem::path& path, const std::string& date_column) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open data file '" + path.string() + "'");

  std::string line;
  if (!std::getline(in, line)) throw DataError("empty data file '" + path.string() + "'");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line = line.substr(3);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> header = split_line(line);
  for (auto& h : header) h = trim(h);

  auto date_it = std::find(header.begin(), header.end(), date_column);
  if (date_it == header.end())
    throw DataError("timestamp column '" + date_column + "' not found in '" + path.string() + "'");
  const std::size_t date_idx = static_cast<std::size_t>(date_it - header.begin());

  std::vector<std::string> names;
  for (std::size_t c = 0; c < header.size(); ++c)
    if (c != date_idx) names.push_back(header[c]);
  if (names.empty()) throw DataError("no value columns in '" + path.string() + "'");

  std::vector<std::vector<double>> channels(names.size());
  std::optional<double> prev_time;
  std::optional<double> first_step;
  std::size_t row = 0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    ++row;
    auto cells = split_line(line);
    if (cells.size() != header.size())
      throw DataError("row " + std::to_string(row) + " (line " + std::to_string(line_no) +
                      ") has " + std::to_string(cells.size()) + " cells, expected " +
                      std::to_string(header.size()));
    std::size_t out = 0;
    for (std::size_t c = 0; c < cells.size(); ++c) {
      std::string cell = trim(cells[c]);
      if (c == date_idx) {
        auto ts = parse_timestamp(cell);
        if (!ts)
          throw DataError("row " + std::to_string(row) + ": unparseable timestamp '" + cell + "'");
        if (prev_time && *ts <= *prev_time)
          throw DataError("row " + std::to_string(row) + ": timestamp '" + cell +
                          "' is duplicate or out of order");
        if (prev_time && !first_step) first_step = *ts - *prev_time;
        prev_time = ts;
        continue;
      }
      auto v = parse_double(cell);
      if (!v)
        throw DataError("row " + std::to_string(row) + ", column '" + header[c] +
                        "': cannot parse '" + cell + "' as a finite number");
      channels[out++].push_back(*v);
    }
  }
  if (row == 0) throw DataError("no data rows in '" + path.string() + "'");
  const auto step = first_step ? std::max<std::int64_t>(1, std::llround(*first_step)) : 1;
  return MultivariateSeries(std::move(channels), std::move(names), step);
}

void write_csv(const std::filesystem::path& path, const MultivariateSeries& series,
               const std::string& date_column) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << date_column;
  for (const auto& n : series.names()) out << ',' << n;
  out << '\n';
  out << std::setprecision(17);
  constexpr std::int64_t kOrigin = 1577836800;  // 2020-01-01 00:00:00 UTC
  for (std::size_t t = 0; t < series.rows(); ++t) {
    out << format_timestamp(kOrigin + static_cast<std::int64_t>(t) * series.step_seconds());
    for (std::size_t n = 0; n < series.cols(); ++n) out << ',' << series.at(t, n);
    out << '\n';
  }
}

void SplitSpec::validate() const {
  for (double f : {train, val, test})
    if (!(f > 0.0 && f < 1.0)) throw ConfigError("split fractions must lie in (0, 1)");
  if (std::abs(train + val + test - 1.0) > 1e-9)
    throw ConfigError("split fractions must sum to 1");
}

SplitBorders split_borders(std::size_t rows, const SplitSpec& spec) {
  spec.validate();
  const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(rows) * spec.train));
  const auto n_val = static_cast<std::size_t>(std::floor(static_cast<double>(rows) * spec.val));
  if (n_train == 0 || n_val == 0 || n_train + n_val >= rows)
    throw DataError("series of " + std::to_string(rows) + " rows is too short to split");
  return {0, n_train, n_train, n_train + n_val, n_train + n_val, rows};
}

SplitParts split_chronological(const MultivariateSeries& series, const SplitSpec& spec) {
  const auto b = split_borders(series.rows(), spec);
  return {series.slice(b.train_begin, b.train_end), series.slice(b.val_begin, b.val_end),
          series.slice(b.test_begin, b.test_end)};
}

SplitBorders ett_borders(std::size_t rows, std::size_t lookback, std::size_t steps_per_day) {
  const std::size_t month = 30 * steps_per_day;
  const std::size_t train_end = 12 * month;
  const std::size_t val_end = 16 * month;
  const std::size_t test_end = 20 * month;
  if (rows < test_end)
    throw DataError("ETT slicing needs " + std::to_string(test_end) + " rows, got " +
                    std::to_string(rows));
  if (lookback > train_end) throw ConfigError("lookback exceeds the training span");
  return {0, train_end, train_end - lookback, val_end, val_end - lookback, test_end};
}

nlohmann::json ChannelStats::to_json() const { return {{"mean", mean}, {"std", stddev}}; }

ChannelStats ChannelStats::from_json(const nlohmann::json& j) {
  ChannelStats s;
  s.mean = j.at("mean").get<std::vector<double>>();
  s.stddev = j.at("std").get<std::vector<double>>();
  if (s.mean.size() != s.stddev.size()) throw DataError("malformed channel stats");
  return s;
}

ChannelStats channel_stats(const MultivariateSeries& source) {
  ChannelStats stats;
  for (std::size_t n = 0; n < source.cols(); ++n) {
    auto x = source.channel(n);
    const double mu = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
    double ss = 0.0;
    for (double v : x) ss += (v - mu) * (v - mu);
    const double sd = std::sqrt(ss / static_cast<double>(x.size()));
    if (!(sd > 0.0))
      throw DataError("channel '" + source.names()[n] + "' has zero variance in the stats source");
    stats.mean.push_back(mu);
    stats.stddev.push_back(sd);
  }
  return stats;
}

std::pair<MultivariateSeries, ChannelStats> standardize(const MultivariateSeries& series,
                                                        const MultivariateSeries& stats_source) {
  auto stats = channel_stats(stats_source);
  return {apply_standardize(series, stats), std::move(stats)};
}

namespace {

template <typename F>
MultivariateSeries map_channels(const MultivariateSeries& series, F&& f) {
  std::vector<std::vector<double>> out;
  out.reserve(series.cols());
  for (std::size_t n = 0; n < series.cols(); ++n) out.push_back(f(series.channel(n), n));
  return MultivariateSeries(std::move(out), series.names(), series.step_seconds());
}

void check_stats(const MultivariateSeries& series, const ChannelStats& stats) {
  if (stats.mean.size() != series.cols())
    throw DataError("stats cover " + std::to_string(stats.mean.size()) + " channels, series has " +
                    std::to_string(series.cols()));
}

}  // namespace

MultivariateSeries apply_standardize(const MultivariateSeries& series, const ChannelStats& stats) {
  check_stats(series, stats);
  return map_channels(series, [&](std::span<const double> x, std::size_t n) {
    std::vector<double> y(x.size());
    for (std::size_t t = 0; t < x.size(); ++t) y[t] = (x[t] - stats.mean[n]) / stats.stddev[n];
    return y;
  });
}

MultivariateSeries inverse_standardize(const MultivariateSeries& series,
                                       const ChannelStats& stats) {
  check_stats(series, stats);
  return map_channels(series, [&](std::span<const double> x, std::size_t n) {
    std::vector<double> y(x.size());
    for (std::size_t t = 0; t < x.size(); ++t) y[t] = x[t] * stats.stddev[n] + stats.mean[n];
    return y;
  });
}

std::vector<double> moving_average_detrend(std::span<const double> x, std::size_t window) {
  if (window == 0 || window % 2 == 0) throw ConfigError("moving-average window must be odd");
  if (window > x.size())
    throw ConfigError("moving-average window " + std::to_string(window) + " exceeds length " +
                      std::to_string(x.size()));
  const auto n = static_cast<std::ptrdiff_t>(x.size());
  const auto half = static_cast<std::ptrdiff_t>(window / 2);
  auto padded = [&](std::ptrdiff_t i) { return x[static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i, 0, n - 1))]; };

  std::vector<double> out(x.size());
  double sum = 0.0;
  for (std::ptrdiff_t i = -half; i <= half; ++i) sum += padded(i);
  for (std::ptrdiff_t t = 0; t < n; ++t) {
    if (t > 0) sum += padded(t + half) - padded(t - half - 1);
    out[static_cast<std::size_t>(t)] = x[static_cast<std::size_t>(t)] - sum / static_cast<double>(window);
  }
  return out;
}

MultivariateSeries moving_average_detrend(const MultivariateSeries& series, std::size_t window) {
  return map_channels(series, [&](std::span<const double> x, std::size_t) {
    return moving_average_detrend(x, window);
  });
}

std::vector<double> downsample(std::span<const double> x, std::size_t factor) {
  if (factor < 1) throw ConfigError("downsampling factor must be >= 1");
  const std::size_t n = x.size() / factor;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < factor; ++j) s += x[i * factor + j];
    out[i] = s / static_cast<double>(factor);
  }
  return out;
}

MultivariateSeries downsample(const MultivariateSeries& series, std::size_t factor) {
  if (factor < 1) throw ConfigError("downsampling factor must be >= 1");
  if (series.rows() / factor == 0) throw DataError("series shorter than downsampling factor");
  std::vector<std::vector<double>> out;
  for (std::size_t n = 0; n < series.cols(); ++n) out.push_back(downsample(series.channel(n), factor));
  return MultivariateSeries(std::move(out), series.names(),
                            series.step_seconds() * static_cast<std::int64_t>(factor));
}

std::vector<WindowSample> channel_windows(std::span<const double> x, std::size_t channel,
                                          std::size_t lookback, std::size_t horizon,
                                          std::size_t stride) {
  if (lookback < 1 || horizon < 1 || stride < 1)
    throw ConfigError("lookback, horizon and stride must be >= 1");
  if (x.size() < lookback + horizon)
    throw DataError("series of " + std::to_string(x.size()) + " rows is shorter than L+H = " +
                    std::to_string(lookback + horizon));
  std::vector<WindowSample> out;
  out.reserve((x.size() - lookback - horizon) / stride + 1);
  for (std::size_t end = lookback - 1; end + horizon < x.size(); end += stride) {
    WindowSample s;
    s.window.assign(x.begin() + static_cast<std::ptrdiff_t>(end + 1 - lookback),
                    x.begin() + static_cast<std::ptrdiff_t>(end + 1));
    s.target.assign(x.begin() + static_cast<std::ptrdiff_t>(end + 1),
                    x.begin() + static_cast<std::ptrdiff_t>(end + 1 + horizon));
    s.channel = channel;
    s.t_end = end;
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<std::vector<WindowSample>> sliding_windows(const MultivariateSeries& series,
                                                       std::size_t lookback, std::size_t horizon,
                                                       std::size_t stride) {
  std::vector<std::vector<WindowSample>> out;
  for (std::size_t n = 0; n < series.cols(); ++n)
    out.push_back(channel_windows(series.channel(n), n, lookback, horizon, stride));
  return out;
}

namespace {

void check_metric_args(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size())
    throw DataError("prediction length " + std::to_string(pred.size()) +
                    " does not match truth length " + std::to_string(truth.size()));
  if (pred.empty()) throw DataError("metrics need at least one value");
}

}  // namespace

double mse(std::span<const double> pred, std::span<const double> truth) {
  check_metric_args(pred, truth);
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - truth[i]) * (pred[i] - truth[i]);
  return s / static_cast<double>(pred.size());
}

double mae(std::span<const double> pred, std::span<const double> truth) {
  check_metric_args(pred, truth);
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - truth[i]);
  return s / static_cast<double>(pred.size());
}

double mse(const std::vector<std::vector<double>>& pred,
           const std::vector<std::vector<double>>& truth) {
  if (pred.size() != truth.size() || pred.empty()) throw DataError("channel count mismatch");
  double s = 0.0;
  for (std::size_t c = 0; c < pred.size(); ++c) s += mse(pred[c], truth[c]);
  return s / static_cast<double>(pred.size());
}

double mae(const std::vector<std::vector<double>>& pred,
           const std::vector<std::vector<double>>& truth) {
  if (pred.size() != truth.size() || pred.empty()) throw DataError("channel count mismatch");
  double s = 0.0;
  for (std::size_t c = 0; c < pred.size(); ++c) s += mae(pred[c], truth[c]);
  return s / static_cast<double>(pred.size());
}

}  // namespace cometnet
