#include "cometnet/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "cometnet/error.hpp"
#include "cometnet/io.hpp"
#include "cometnet/spectral.hpp"
#include "cometnet/synth.hpp"

namespace cometnet {

namespace {

const char* split_mode_name(SplitMode m) { return m == SplitMode::ett ? "ett" : "ratio"; }

SplitMode parse_split_mode(const std::string& s) {
  if (s == "ratio") return SplitMode::ratio;
  if (s == "ett") return SplitMode::ett;
  throw ConfigError("unknown split mode '" + s + "' (expected ratio or ett)");
}

const char* grouping_name(Grouping g) { return g == Grouping::kdfh ? "kdfh" : "channel"; }

Grouping parse_grouping(const std::string& s) {
  if (s == "channel") return Grouping::channel;
  if (s == "kdfh") return Grouping::kdfh;
  throw ConfigError("unknown grouping '" + s + "' (expected channel or kdfh)");
}

// Keys that appear in the text form, with the comment printed above each section.
const std::vector<std::pair<std::string, std::string>> kSections = {
    {"data", "input file and chronological split"},
    {"window", "look-back length, forecast length and evaluated horizons"},
    {"grouping", "one model per channel, or per k-DFH frequency group"},
    {"extract", "motif extraction (sigma = auto uses the median heuristic)"},
    {"model", "forecaster architecture and loss weights"},
    {"train", "optimizer and early stopping, shared by all three phases"},
    {"run", "single seed for every random choice"},
};

void flatten(const nlohmann::json& j, const std::string& prefix,
             std::vector<std::pair<std::string, nlohmann::json>>& out) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (it->is_object())
      flatten(*it, key, out);
    else
      out.emplace_back(key, *it);
  }
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string value_text(const nlohmann::json& v) {
  if (v.is_null()) return "auto";
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

// Parses `text` into the JSON type of `schema`.
nlohmann::json typed_value(const std::string& key, const nlohmann::json& schema,
                           const std::string& text) {
  auto fail = [&](const std::string& what) {
    return ConfigError("config key '" + key + "': " + what + " (got '" + text + "')");
  };
  try {
    if (schema.is_string()) return text;
    if (schema.is_boolean()) {
      if (text == "true") return true;
      if (text == "false") return false;
      throw fail("expected true or false");
    }
    if (schema.is_null()) {  // optional number
      if (text == "auto") return nullptr;
      std::size_t used = 0;
      const double v = std::stod(text, &used);
      if (used != text.size()) throw fail("expected a number or auto");
      return v;
    }
    if (schema.is_number_unsigned() || schema.is_number_integer()) {
      if (text.empty() || text[0] == '-') throw fail("expected a non-negative integer");
      std::size_t used = 0;
      const auto v = std::stoull(text, &used);
      if (used != text.size()) throw fail("expected a non-negative integer");
      return v;
    }
    if (schema.is_number_float()) {
      std::size_t used = 0;
      const double v = std::stod(text, &used);
      if (used != text.size()) throw fail("expected a number");
      return v;
    }
    if (schema.is_array()) {
      std::string body = text;
      if (body.empty() || body.front() != '[') body = "[" + body + "]";
      auto arr = nlohmann::json::parse(body);
      if (!arr.is_array()) throw fail("expected a list");
      for (const auto& e : arr)
        if (!e.is_number_unsigned()) throw fail("expected a list of non-negative integers");
      return arr;
    }
  } catch (const std::invalid_argument&) {
    throw fail("malformed value");
  } catch (const std::out_of_range&) {
    throw fail("value out of range");
  } catch (const nlohmann::json::exception&) {
    throw fail("malformed list");
  }
  throw fail("unsupported field type");
}

nlohmann::json unflatten(const std::vector<std::pair<std::string, nlohmann::json>>& flat) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& [key, value] : flat) out[nlohmann::json::json_pointer("/" + [&] {
    std::string p = key;
    std::replace(p.begin(), p.end(), '.', '/');
    return p;
  }())] = value;
  return out;
}

std::string file_stem(std::size_t index, const std::string& name) {
  std::string clean;
  for (char c : name) clean += (std::isalnum(static_cast<unsigned char>(c)) || c == '-') ? c : '_';
  return std::to_string(index) + "_" + clean;
}

}  // namespace

void RunConfig::propagate_seed() {
  extraction.seed = seed;
  model.seed = seed;
  training.seed = seed;
  model.lookback = lookback;
  model.horizon = horizon;
  model.experts = extraction.k;
}

void RunConfig::validate() const {
  split.validate();
  if (lookback < 2) throw ConfigError("lookback must be >= 2");
  if (horizon < 1) throw ConfigError("horizon must be >= 1");
  if (horizons.empty()) throw ConfigError("at least one evaluation horizon is required");
  for (auto h : horizons)
    if (h < 1 || h > horizon)
      throw ConfigError("evaluation horizon " + std::to_string(h) + " must lie in [1, " +
                        std::to_string(horizon) + "]");
  if (steps_per_day < 1) throw ConfigError("steps_per_day must be >= 1");
  if (kdfh_bins < 1) throw ConfigError("kdfh_bins must be >= 1");
  extraction.validate();
  model.validate();
  training.validate();
}

nlohmann::json RunConfig::to_json() const {
  auto extract = extraction.to_json();
  extract.erase("seed");
  auto train = training.to_json();
  train.erase("seed");
  return {
      {"data",
       {{"path", data.string()},
        {"date_column", date_column},
        {"split_mode", split_mode_name(split_mode)},
        {"train", split.train},
        {"val", split.val},
        {"test", split.test},
        {"steps_per_day", steps_per_day}}},
      {"window", {{"lookback", lookback}, {"horizon", horizon}, {"horizons", horizons}}},
      {"grouping", {{"mode", grouping_name(grouping)}, {"kdfh_bins", kdfh_bins}}},
      {"extract", extract},
      {"model",
       {{"embed_dim", model.embed_dim},
        {"separate_fusion", model.separate_fusion},
        {"alpha_pos", model.alpha_pos},
        {"gamma", model.gamma}}},
      {"train", train},
      {"run", {{"seed", seed}}},
  };
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig c;
  try {
    const nlohmann::json empty = nlohmann::json::object();
    auto section = [&](const char* name) -> const nlohmann::json& {
      return j.contains(name) ? j.at(name) : empty;
    };
    const auto& d = section("data");
    c.data = d.value("path", std::string());
    c.date_column = d.value("date_column", c.date_column);
    c.split_mode = parse_split_mode(d.value("split_mode", std::string("ratio")));
    c.split.train = d.value("train", c.split.train);
    c.split.val = d.value("val", c.split.val);
    c.split.test = d.value("test", c.split.test);
    c.steps_per_day = d.value("steps_per_day", c.steps_per_day);
    const auto& w = section("window");
    c.lookback = w.value("lookback", c.lookback);
    c.horizon = w.value("horizon", c.horizon);
    c.horizons = w.value("horizons", std::vector<std::size_t>{c.horizon});
    const auto& g = section("grouping");
    c.grouping = parse_grouping(g.value("mode", std::string("channel")));
    c.kdfh_bins = g.value("kdfh_bins", c.kdfh_bins);
    c.extraction = ExtractionConfig::from_json(section("extract"));
    const auto& m = section("model");
    c.model.embed_dim = m.value("embed_dim", c.model.embed_dim);
    c.model.separate_fusion = m.value("separate_fusion", c.model.separate_fusion);
    c.model.alpha_pos = m.value("alpha_pos", c.model.alpha_pos);
    c.model.gamma = m.value("gamma", c.model.gamma);
    c.training = TrainConfig::from_json(section("train"));
    c.seed = section("run").value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad run configuration: ") + e.what());
  }
  c.propagate_seed();
  c.validate();
  return c;
}

std::string RunConfig::to_text() const {
  std::vector<std::pair<std::string, nlohmann::json>> flat;
  flatten(to_json(), "", flat);
  std::ostringstream out;
  out << "# cometnet run configuration: one `section.key = value` per line\n";
  for (const auto& [section, comment] : kSections) {
    out << "\n# " << comment << '\n';
    for (const auto& [key, value] : flat)
      if (key.rfind(section + ".", 0) == 0) out << key << " = " << value_text(value) << '\n';
  }
  return out.str();
}

void set_config_value(RunConfig& config, const std::string& key, const std::string& value) {
  std::vector<std::pair<std::string, nlohmann::json>> flat;
  flatten(config.to_json(), "", flat);
  std::vector<std::pair<std::string, nlohmann::json>> schema;
  flatten(RunConfig{}.to_json(), "", schema);
  auto it = std::find_if(schema.begin(), schema.end(), [&](auto& kv) { return kv.first == key; });
  if (it == schema.end()) throw ConfigError("unknown config key '" + key + "'");
  const auto typed = typed_value(key, it->second, trim(value));
  for (auto& kv : flat)
    if (kv.first == key) kv.second = typed;
  config = RunConfig::from_json(unflatten(flat));
}

RunConfig RunConfig::from_text(const std::string& text) {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(number) + ": expected key = value");
    try {
      set_config_value(c, trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(number) + ": " + e.what());
    }
  }
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path))
    throw ConfigError("config file not found: " + path.string());
  const std::string text = read_file(path);
  if (path.extension() == ".json") {
    try {
      return from_json(nlohmann::json::parse(text));
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("malformed JSON config '" + path.string() + "': " + e.what());
    }
  }
  return from_text(text);
}

std::size_t thread_limit() {
  const char* env = std::getenv("COMETNET_THREADS");
  const std::size_t hw = std::max(1u, std::thread::hardware_concurrency());
  if (!env || !*env) return hw;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1) throw ConfigError("COMETNET_THREADS must be a positive integer");
  return static_cast<std::size_t>(v);
}

void parallel_for(std::size_t n, std::size_t threads,
                  const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min(std::max<std::size_t>(1, threads), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::vector<ChannelGroup> make_groups(const MultivariateSeries& train, Grouping grouping,
                                      std::size_t kdfh_bins) {
  std::vector<ChannelGroup> groups;
  if (grouping == Grouping::channel) {
    for (std::size_t n = 0; n < train.cols(); ++n) groups.push_back({train.names()[n], {n}});
    return groups;
  }
  const auto parts = kdfh_group(train, kdfh_bins);
  for (std::size_t g = 0; g < parts.size(); ++g)
    groups.push_back({"group" + std::to_string(g), parts[g]});
  return groups;
}

PreparedData prepare_data(const RunConfig& config) {
  if (config.data.empty()) throw ConfigError("no data path given");
  if (!std::filesystem::exists(config.data))
    throw ConfigError("data file not found: " + config.data.string());
  PreparedData p;
  p.raw = load_csv(config.data, config.date_column);
  p.borders = config.split_mode == SplitMode::ett
                  ? ett_borders(p.raw.rows(), config.lookback, config.steps_per_day)
                  : split_borders(p.raw.rows(), config.split);
  const auto& b = p.borders;
  const auto train = p.raw.slice(b.train_begin, b.train_end);
  auto [train_std, stats] = standardize(train, train);
  p.train = std::move(train_std);
  p.stats = stats;
  p.val = apply_standardize(p.raw.slice(b.val_begin, b.val_end), stats);
  p.test = apply_standardize(p.raw.slice(b.test_begin, b.test_end), stats);
  return p;
}

namespace {

std::vector<double> group_series(const MultivariateSeries& s, const ChannelGroup& g) {
  std::vector<double> out(s.rows(), 0.0);
  for (auto c : g.channels) {
    const auto ch = s.channel(c);
    for (std::size_t t = 0; t < out.size(); ++t) out[t] += ch[t];
  }
  for (double& v : out) v /= static_cast<double>(g.channels.size());
  return out;
}

nlohmann::json borders_json(const SplitBorders& b) {
  return {{"train", {b.train_begin, b.train_end}},
          {"val", {b.val_begin, b.val_end}},
          {"test", {b.test_begin, b.test_end}}};
}

}  // namespace

ExtractSummary cmd_extract(const RunConfig& config, const std::filesystem::path& out_dir,
                           std::ostream& log) {
  config.validate();
  const auto data = prepare_data(config);
  ExtractSummary summary;
  summary.groups = make_groups(data.train, config.grouping, config.kdfh_bins);
  const std::size_t G = summary.groups.size();
  std::vector<MotifLibrary> libs(G);
  parallel_for(G, thread_limit(), [&](std::size_t g) {
    const auto& group = summary.groups[g];
    libs[g] = extract_motifs(group_series(data.train, group), config.extraction, g, group.name);
  });

  nlohmann::json groups = nlohmann::json::array();
  for (std::size_t g = 0; g < G; ++g) {
    const auto file = "library_" + file_stem(g, summary.groups[g].name) + ".json";
    libs[g].save(out_dir / file);
    summary.libraries.push_back(out_dir / file);
    groups.push_back({{"name", summary.groups[g].name},
                      {"channels", summary.groups[g].channels},
                      {"library", file},
                      {"motifs", libs[g].motifs.size()}});
    log << "group " << summary.groups[g].name << ": " << libs[g].motifs.size() << " motifs from "
        << libs[g].candidate_count << " candidates -> " << file << '\n';
    for (const auto& w : libs[g].warnings) log << "  warning: " << w << '\n';
  }
  const nlohmann::json manifest = {{"format", "cometnet.extract"},
                                   {"config", config.to_json()},
                                   {"channels", data.raw.names()},
                                   {"stats", data.stats.to_json()},
                                   {"borders", borders_json(data.borders)},
                                   {"groups", groups}};
  atomic_write(out_dir / "extract_manifest.json", dump_json(manifest));
  return summary;
}

namespace {

std::vector<ChannelGroup> groups_from(const nlohmann::json& manifest) {
  std::vector<ChannelGroup> groups;
  for (const auto& g : manifest.at("groups"))
    groups.push_back({g.at("name").get<std::string>(),
                      g.at("channels").get<std::vector<std::size_t>>()});
  return groups;
}

nlohmann::json read_manifest(const std::filesystem::path& path, const std::string& format) {
  if (!std::filesystem::exists(path)) throw DataError("missing manifest: " + path.string());
  auto m = read_json(path);
  if (m.value("format", std::string()) != format)
    throw DataError("'" + path.string() + "' is not a " + format + " manifest");
  return m;
}

}  // namespace

void cmd_train(const RunConfig& config, const std::filesystem::path& library_dir,
               const std::filesystem::path& out_dir, std::ostream& log) {
  config.validate();
  const auto manifest = read_manifest(library_dir / "extract_manifest.json", "cometnet.extract");
  const auto data = prepare_data(config);
  std::vector<ChannelGroup> groups;
  try {
    if (manifest.at("channels").get<std::vector<std::string>>() != data.raw.names())
      throw DataError("library channels do not match the data columns");
    groups = groups_from(manifest);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad extract manifest: ") + e.what());
  }
  for (const auto& g : groups)
    for (auto c : g.channels)
      if (c >= data.raw.cols()) throw DataError("library group references a missing channel");

  const std::size_t G = groups.size();
  std::vector<std::string> logs(G);
  std::vector<nlohmann::json> entries(G);
  parallel_for(G, thread_limit(), [&](std::size_t g) {
    std::ostringstream glog;
    const auto& group = groups[g];
    const auto lib_file = manifest.at("groups").at(g).at("library").get<std::string>();
    const auto lib = MotifLibrary::load(library_dir / lib_file);
    if (lib.motifs.empty()) throw DataError("library " + lib_file + " has no motifs");
    std::vector<std::string> warnings;
    ForecasterConfig mc = config.model;
    mc.experts = lib.motifs.size();
    if (mc.experts != config.extraction.k)
      warnings.push_back("config K=" + std::to_string(config.extraction.k) +
                         " overridden by library K=" + std::to_string(mc.experts));
    const auto sim = lib.similarity();
    std::vector<WindowSample> train_w, val_w;
    for (auto c : group.channels) {
      auto tw = annotate_windows(
          channel_windows(data.train.channel(c), c, config.lookback, config.horizon), lib, sim);
      const auto val_lib = rescan_library(lib, data.val.channel(c));
      auto vw = annotate_windows(
          channel_windows(data.val.channel(c), c, config.lookback, config.horizon), val_lib, sim);
      train_w.insert(train_w.end(), tw.begin(), tw.end());
      val_w.insert(val_w.end(), vw.begin(), vw.end());
    }
    if (train_w.empty() || val_w.empty())
      throw DataError("group " + group.name + ": split too short for lookback + horizon");
    std::size_t fallback = 0;
    for (const auto& w : train_w) fallback += w.annotation->fallback;

    auto result = train_three_phase(WindowSet::from_samples(train_w),
                                    WindowSet::from_samples(val_w), mc, config.training, &glog);
    if (group.channels.size() == 1) {
      const auto c = group.channels.front();
      result.model.scaling = {data.stats.mean[c], data.stats.stddev[c]};
    }
    const std::string stem = file_stem(g, group.name);
    auto ck = result.model.to_checkpoint();
    ck.manifest["group"] = {{"name", group.name}, {"channels", group.channels}};
    ck.manifest["library"] = lib_file;
    ck.manifest["run_config"] = config.to_json();
    ck.save(out_dir / ("model_" + stem + ".ckpt"));

    auto report = result.report.to_json();
    report["group"] = {{"name", group.name}, {"channels", group.channels}};
    report["library"] = lib_file;
    report["experts"] = mc.experts;
    report["train_windows"] = train_w.size();
    report["val_windows"] = val_w.size();
    report["fallback_annotations"] = fallback;
    report["warnings"] = warnings;
    report["run_config"] = config.to_json();
    atomic_write(out_dir / ("report_" + stem + ".json"), dump_json(report));

    for (const auto& w : warnings) glog << "warning: " << w << '\n';
    glog << "group " << group.name << ": gate accuracy " << result.report.gate_accuracy
         << ", probe val mse " << result.report.probe_val_mse << ", final val mse "
         << result.report.final_val_mse << '\n';
    logs[g] = glog.str();
    entries[g] = {{"name", group.name},
                  {"channels", group.channels},
                  {"checkpoint", "model_" + stem + ".ckpt"},
                  {"report", "report_" + stem + ".json"},
                  {"experts", mc.experts}};
  });
  for (const auto& l : logs) log << l;
  const nlohmann::json out = {{"format", "cometnet.train"},
                              {"config", config.to_json()},
                              {"channels", data.raw.names()},
                              {"stats", data.stats.to_json()},
                              {"groups", entries}};
  atomic_write(out_dir / "train_manifest.json", dump_json(out));
}

namespace {

struct LoadedModels {
  PreparedData data;
  std::vector<ChannelGroup> groups;
  std::vector<ForecasterModel> models;
};

LoadedModels load_models(const RunConfig& config, const std::filesystem::path& model_dir) {
  const auto manifest = read_manifest(model_dir / "train_manifest.json", "cometnet.train");
  LoadedModels out;
  out.data = prepare_data(config);
  try {
    if (manifest.at("channels").get<std::vector<std::string>>() != out.data.raw.names())
      throw DataError("model channels do not match the data columns");
    out.groups = groups_from(manifest);
    for (const auto& g : manifest.at("groups"))
      out.models.push_back(
          ForecasterModel::load(model_dir / g.at("checkpoint").get<std::string>()));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad train manifest: ") + e.what());
  }
  for (const auto& m : out.models)
    if (m.config.lookback != config.lookback)
      throw ConfigError("checkpoint lookback " + std::to_string(m.config.lookback) +
                        " differs from config lookback " + std::to_string(config.lookback));
  return out;
}

}  // namespace

std::vector<HorizonMetrics> evaluate(const RunConfig& config,
                                     const std::filesystem::path& model_dir) {
  config.validate();
  const auto loaded = load_models(config, model_dir);
  std::vector<HorizonMetrics> rows;
  for (auto h : config.horizons) {
    HorizonMetrics m;
    m.horizon = h;
    rows.push_back(m);
  }
  std::size_t channels = 0;
  for (std::size_t g = 0; g < loaded.groups.size(); ++g) {
    const auto& model = loaded.models[g];
    const std::size_t H = model.config.horizon;
    for (auto h : config.horizons)
      if (h > H)
        throw ConfigError("horizon " + std::to_string(h) + " exceeds checkpoint horizon " +
                          std::to_string(H));
    for (auto c : loaded.groups[g].channels) {
      const auto test = WindowSet::from_samples(
          channel_windows(loaded.data.test.channel(c), c, model.config.lookback, H));
      const auto train = WindowSet::from_samples(
          channel_windows(loaded.data.train.channel(c), c, model.config.lookback, H));
      if (test.size() == 0 || train.size() == 0)
        throw DataError("channel " + std::to_string(c) + ": split too short for evaluation");
      const Matrix pred = predict_batch(model, test.x);
      const Matrix naive = naive_forecast(test.x, H);
      const Matrix linear = LinearBaseline::fit(train.x, train.y).predict(test.x);
      for (auto& r : rows) {
        const auto h = static_cast<Eigen::Index>(r.horizon);
        auto err = [&](const Matrix& p, double& mse_out, double& mae_out) {
          const Matrix diff = p.leftCols(h) - test.y.leftCols(h);
          mse_out += diff.squaredNorm() / static_cast<double>(diff.size());
          mae_out += diff.cwiseAbs().sum() / static_cast<double>(diff.size());
        };
        err(pred, r.model_mse, r.model_mae);
        err(naive, r.naive_mse, r.naive_mae);
        err(linear, r.linear_mse, r.linear_mae);
      }
      ++channels;
    }
  }
  const double n = static_cast<double>(channels);
  for (auto& r : rows) {
    r.model_mse /= n;
    r.model_mae /= n;
    r.naive_mse /= n;
    r.naive_mae /= n;
    r.linear_mse /= n;
    r.linear_mae /= n;
  }
  return rows;
}

std::vector<HorizonMetrics> cmd_eval(const RunConfig& config,
                                     const std::filesystem::path& model_dir,
                                     const std::filesystem::path& out_dir, std::ostream& log) {
  const auto rows = evaluate(config, model_dir);
  std::ostringstream csv;
  csv.precision(10);
  csv << "horizon,model_mse,model_mae,naive_mse,linear_mse\n";
  nlohmann::json table = nlohmann::json::array();
  for (const auto& r : rows) {
    csv << r.horizon << ',' << r.model_mse << ',' << r.model_mae << ',' << r.naive_mse << ','
        << r.linear_mse << '\n';
    table.push_back({{"horizon", r.horizon},
                     {"model_mse", r.model_mse},
                     {"model_mae", r.model_mae},
                     {"naive_mse", r.naive_mse},
                     {"naive_mae", r.naive_mae},
                     {"linear_mse", r.linear_mse},
                     {"linear_mae", r.linear_mae}});
    log << "H=" << r.horizon << " model mse " << r.model_mse << " mae " << r.model_mae
        << " | naive mse " << r.naive_mse << " | linear mse " << r.linear_mse << '\n';
  }
  atomic_write(out_dir / "metrics.csv", csv.str());
  atomic_write(out_dir / "metrics.json",
               dump_json({{"format", "cometnet.metrics"},
                          {"space", "standardized"},
                          {"metrics", table},
                          {"config", config.to_json()}}));
  return rows;
}

nlohmann::json library_spans(const MotifLibrary& library) {
  nlohmann::json spans = nlohmann::json::array();
  for (std::size_t k = 0; k < library.motifs.size(); ++k) {
    const auto& m = library.motifs[k];
    for (auto o : m.occurrences) {
      if (o + m.scale > library.series_length)
        throw DataError("motif " + std::to_string(k) + " occurrence at " + std::to_string(o) +
                        " runs past the series end");
      spans.push_back({{"start", o}, {"end", o + m.scale}, {"motif_id", k}});
    }
  }
  return spans;
}

nlohmann::json prediction_trace(const RunConfig& config, const std::filesystem::path& model_dir,
                                std::size_t channel, std::size_t window) {
  const auto loaded = load_models(config, model_dir);
  if (channel >= loaded.data.raw.cols())
    throw ConfigError("channel " + std::to_string(channel) + " does not exist");
  std::size_t g = 0;
  while (g < loaded.groups.size() &&
         std::find(loaded.groups[g].channels.begin(), loaded.groups[g].channels.end(), channel) ==
             loaded.groups[g].channels.end())
    ++g;
  if (g == loaded.groups.size()) throw DataError("no model covers channel " + std::to_string(channel));
  const auto& model = loaded.models[g];
  const std::size_t L = model.config.lookback, H = model.config.horizon;
  const auto samples = channel_windows(loaded.data.test.channel(channel), channel, L, H);
  if (window >= samples.size())
    throw ConfigError("test window " + std::to_string(window) + " out of range (" +
                      std::to_string(samples.size()) + " windows)");
  const auto& s = samples[window];
  const auto pred = predict(model, s.window);
  const double mu = loaded.data.stats.mean[channel], sd = loaded.data.stats.stddev[channel];
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t h = 0; h < H; ++h)
    rows.push_back({{"t", loaded.data.borders.test_begin + s.t_end + 1 + h},
                    {"truth", s.target[h] * sd + mu},
                    {"prediction", pred[h] * sd + mu}});
  return rows;
}

std::string spans_csv(const nlohmann::json& spans) {
  std::ostringstream out;
  out << "start,end,motif_id\n";
  for (const auto& s : spans)
    out << s.at("start").get<std::size_t>() << ',' << s.at("end").get<std::size_t>() << ','
        << s.at("motif_id").get<std::size_t>() << '\n';
  return out.str();
}

std::string trace_csv(const nlohmann::json& trace) {
  std::ostringstream out;
  out.precision(12);
  out << "t,truth,prediction\n";
  for (const auto& r : trace)
    out << r.at("t").get<std::size_t>() << ',' << r.at("truth").get<double>() << ','
        << r.at("prediction").get<double>() << '\n';
  return out.str();
}

void cmd_synth(SynthKind kind, std::size_t length, std::uint64_t seed, double noise,
               const std::filesystem::path& out_csv) {
  if (!(noise >= 0.0)) throw ConfigError("noise must be >= 0");
  if (length < 2) throw ConfigError("length must be >= 2");
  const auto planted = kind == SynthKind::motifs ? synth::two_regime_motifs(length, seed, noise)
                                                 : synth::two_regime_forecasting(length, seed, noise);
  const auto series = MultivariateSeries::univariate(planted.values, "value", 3600);
  write_csv(out_csv, series);
  auto truth = out_csv;
  truth.replace_extension(".truth.json");
  atomic_write(truth, dump_json({{"kind", kind == SynthKind::motifs ? "motifs" : "forecasting"},
                                 {"length", length},
                                 {"seed", seed},
                                 {"noise", noise},
                                 {"templates", planted.templates},
                                 {"regime_starts", planted.regime_starts},
                                 {"regime_ids", planted.regime_ids}}));
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const DataError*>(&e)) return 3;
  if (dynamic_cast<const NumericError*>(&e)) return 4;
  if (dynamic_cast<const nlohmann::json::exception*>(&e)) return 3;
  if (dynamic_cast<const std::filesystem::filesystem_error*>(&e)) return 3;
  return 1;
}

}  // namespace cometnet
