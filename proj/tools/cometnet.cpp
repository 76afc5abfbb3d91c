// Command-line front end: synth, extract, train, eval and export.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cometnet/cli.hpp"
#include "cometnet/error.hpp"
#include "cometnet/io.hpp"

namespace fs = std::filesystem;
using namespace cometnet;

namespace {

// Flags that mirror RunConfig fields. Each set flag becomes a `key = value`
// override applied after the config file, in declaration order.
struct RunFlags {
  std::string config;
  std::vector<std::pair<std::string, std::string>> bound;  // config key, value
  std::vector<std::string> sets;
  std::string print_config;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config, "config file (.json or flat text)")->check(CLI::ExistingFile);
    cmd->add_option("--set", sets, "override any config key, as section.key=value");
    cmd->add_option("--write-config", print_config, "write the effective config to this file");
    const std::vector<std::pair<std::string, std::string>> mirrored = {
        {"--data", "data.path"},
        {"--date-column", "data.date_column"},
        {"--split-mode", "data.split_mode"},
        {"--steps-per-day", "data.steps_per_day"},
        {"--lookback", "window.lookback"},
        {"--horizon", "window.horizon"},
        {"--horizons", "window.horizons"},
        {"--grouping", "grouping.mode"},
        {"--k", "extract.k"},
        {"--sigma", "extract.sigma"},
        {"--tau-g", "extract.tau_g"},
        {"--embed-dim", "model.embed_dim"},
        {"--gamma", "model.gamma"},
        {"--alpha-pos", "model.alpha_pos"},
        {"--lr", "train.lr"},
        {"--batch", "train.batch"},
        {"--patience", "train.patience"},
        {"--max-epochs", "train.max_epochs"},
        {"--seed", "run.seed"},
    };
    for (const auto& [flag, key] : mirrored) {
      const std::string k = key;
      cmd->add_option_function<std::string>(
          flag, [this, k](const std::string& v) { bound.emplace_back(k, v); }, "sets " + key);
    }
  }

  RunConfig resolve() const {
    RunConfig c = config.empty() ? RunConfig{} : RunConfig::load(config);
    for (const auto& [key, value] : bound) set_config_value(c, key, value);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
      set_config_value(c, s.substr(0, eq), s.substr(eq + 1));
    }
    c.propagate_seed();
    c.validate();
    if (!print_config.empty()) atomic_write(print_config, c.to_text());
    return c;
  }
};

fs::path ensure_dir(const std::string& dir) {
  fs::create_directories(dir);
  return dir;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Motif extraction and motif-guided mixture-of-experts forecasting"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "write a planted two-regime fixture as CSV");
  std::string synth_kind = "motifs", synth_out;
  std::size_t synth_length = 5000;
  std::uint64_t synth_seed = 0;
  double synth_noise = 0.05;
  synth->add_option("--kind", synth_kind, "motifs or forecasting")
      ->check(CLI::IsMember({"motifs", "forecasting"}))
      ->capture_default_str();
  synth->add_option("--length", synth_length)->capture_default_str();
  synth->add_option("--seed", synth_seed)->capture_default_str();
  synth->add_option("--noise", synth_noise, "Gaussian noise std")->capture_default_str();
  synth->add_option("--out", synth_out, "output CSV")->required();

  RunFlags extract_flags, train_flags, eval_flags, trace_flags;
  std::string extract_out, train_library, train_out, eval_model, eval_out;

  auto* extract = app.add_subcommand("extract", "build one motif library per channel or group");
  extract_flags.attach(extract);
  extract->add_option("--out", extract_out, "output directory")->required();

  auto* train = app.add_subcommand("train", "train one forecaster per library");
  train_flags.attach(train);
  train->add_option("--library", train_library, "directory written by extract")->required();
  train->add_option("--out", train_out, "output directory")->required();

  auto* eval = app.add_subcommand("eval", "test-split metrics against naive and linear baselines");
  eval_flags.attach(eval);
  eval->add_option("--model", eval_model, "directory written by train")->required();
  eval->add_option("--out", eval_out, "output directory")->required();

  auto* exporter = app.add_subcommand("export", "plot data for a library or a prediction");
  std::string export_kind, export_input, export_out;
  std::size_t trace_channel = 0, trace_window = 0;
  exporter->add_option("kind", export_kind, "spans or trace")->required();
  exporter->add_option("--input", export_input, "library JSON (spans) or model directory (trace)")
      ->required();
  exporter->add_option("--out", export_out, "output file; .json or .csv")->required();
  exporter->add_option("--channel", trace_channel, "trace: channel index")->capture_default_str();
  exporter->add_option("--window", trace_window, "trace: test window index")->capture_default_str();
  trace_flags.attach(exporter);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*synth) {
      cmd_synth(synth_kind == "motifs" ? SynthKind::motifs : SynthKind::forecasting, synth_length,
                synth_seed, synth_noise, synth_out);
      std::cerr << "wrote " << synth_out << '\n';
    } else if (*extract) {
      const auto summary = cmd_extract(extract_flags.resolve(), ensure_dir(extract_out), std::cerr);
      std::cerr << "wrote " << summary.libraries.size() << " libraries to " << extract_out << '\n';
    } else if (*train) {
      cmd_train(train_flags.resolve(), train_library, ensure_dir(train_out), std::cerr);
    } else if (*eval) {
      cmd_eval(eval_flags.resolve(), eval_model, ensure_dir(eval_out), std::cerr);
    } else if (*exporter) {
      const fs::path out = export_out;
      const bool csv = out.extension() == ".csv";
      if (export_kind == "spans") {
        if (!fs::exists(export_input)) throw ConfigError("library not found: " + export_input);
        const auto spans = library_spans(MotifLibrary::load(export_input));
        atomic_write(out, csv ? spans_csv(spans) : dump_json(spans));
      } else if (export_kind == "trace") {
        const auto trace =
            prediction_trace(trace_flags.resolve(), export_input, trace_channel, trace_window);
        atomic_write(out, csv ? trace_csv(trace) : dump_json(trace));
      } else {
        throw ConfigError("unknown artifact type '" + export_kind + "' (expected spans or trace)");
      }
      std::cerr << "wrote " << export_out << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return 0;
}
