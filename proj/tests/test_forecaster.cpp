#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <sstream>

#include "cometnet/error.hpp"
#include "cometnet/forecaster.hpp"
#include "cometnet/synth.hpp"
#include "gradcheck.hpp"

using namespace cometnet;

namespace {

ForecasterConfig micro_config(bool separate = false) {
  ForecasterConfig c;
  c.lookback = 12;
  c.horizon = 4;
  c.embed_dim = 8;
  c.experts = 2;
  c.separate_fusion = separate;
  c.seed = 17;
  return c;
}

// Perturbs every parameter so biases and layer-norm terms are not trivial.
void jitter(ForecasterModel& m, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 0.1);
  for (auto p : m.params.parameters())
    for (double& v : p) v += n(rng);
}

// Brute-force reference for occurrence-based labelling: every (motif,
// occurrence) pair covering t_end, best score wins, first pair on ties.
std::optional<Annotation> reference_annotation(std::span<const double> window, std::size_t t_end,
                                               const MotifLibrary& lib) {
  const auto sim = lib.similarity();
  double best = -1.0;
  Annotation out;
  for (std::size_t k = 0; k < lib.motifs.size(); ++k) {
    const auto& m = lib.motifs[k];
    for (auto o : m.occurrences) {
      if (!(o <= t_end && t_end < o + m.scale)) continue;
      const std::size_t phase = t_end - o;
      const std::size_t len = std::min(phase + 1, window.size());
      const double score =
          static_cast<double>(len) / static_cast<double>(m.scale) *
          shape_similarity(window.subspan(window.size() - len),
                           std::span<const double>(m.values).subspan(phase + 1 - len, len), sim,
                           lib.config.max_motif_points);
      if (score > best) {
        best = score;
        out.y_class = k;
        out.y_pos = static_cast<double>(phase) / static_cast<double>(m.scale - 1);
        out.match_similarity = score;
      }
    }
  }
  if (best < 0.0) return std::nullopt;
  return out;
}

const MotifLibrary& fixture_library() {
  static const MotifLibrary lib = [] {
    const auto planted = synth::two_regime_motifs(2000, 4, 0.05);
    ExtractionConfig c;
    c.seed = 4;
    return extract_motifs(planted.values, c, 0, "value");
  }();
  return lib;
}

WindowSet toy_set(std::size_t rows, std::size_t L, std::size_t H, std::size_t K, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<WindowSample> samples;
  for (std::size_t i = 0; i < rows; ++i) {
    WindowSample s;
    const std::size_t cls = i % K;
    std::normal_distribution<double> n(0.0, 0.1);
    for (std::size_t t = 0; t < L + H; ++t) {
      const double v = std::sin(0.3 * static_cast<double>(t + i) * static_cast<double>(cls + 1)) + n(rng);
      (t < L ? s.window : s.target).push_back(v);
    }
    s.annotation = Annotation{cls, static_cast<double>(i % 5) / 4.0, 1.0, false};
    samples.push_back(std::move(s));
  }
  return WindowSet::from_samples(samples);
}

}  // namespace

TEST_CASE("architecture and parameter count of the micro model") {
  const ForecasterModel m(micro_config());
  std::mt19937_64 rng(0);
  const auto expected =
      DenseStack::make({12, 8, 8}, {Activation::leaky_relu, Activation::identity}, true, rng);
  CHECK(m.params.embedder.architecture() == expected.architecture());
  CHECK(m.params.fusions.size() == 1);
  CHECK(m.params.heads.size() == 2);
  CHECK(ForecasterModel(micro_config(true)).params.fusions.size() == 2);
  CHECK(m.params.route_head.output_width() == 2);
  CHECK(m.params.pos_head.output_width() == 1);
  CHECK(m.params.heads[0].output_width() == 4);
}

TEST_CASE("end-to-end gradients of the micro model") {
  for (bool separate : {false, true}) {
    std::mt19937_64 rng(separate ? 2 : 1);
    ForecasterModel m(micro_config(separate));
    jitter(m, rng);
    const auto batch = gradcheck::micro_batch(rng, m.config, 5);
    const auto r = gradcheck::check_model(m, batch);
    CHECK(r.checked > 500);
    CHECK(r.max_rel_error < 1e-3);
  }
}

TEST_CASE("gate outputs a distribution and a position in [0, 1]") {
  std::mt19937_64 rng(3);
  ForecasterModel m(micro_config());
  m.config.experts = 2;
  jitter(m, rng);
  for (int i = 0; i < 500; ++i) {
    const Matrix e = gradcheck::random_matrix(rng, 1, 8, 5.0);
    const auto g = gate(m, std::vector<double>(e.data(), e.data() + 8));
    double sum = 0.0;
    for (double p : g.p) {
      CHECK(p >= 0.0);
      sum += p;
    }
    CHECK(std::abs(sum - 1.0) <= 1e-9);
    CHECK(g.s >= 0.0);
    CHECK(g.s <= 1.0);
  }
}

TEST_CASE("combine is the probability-weighted sum of expert forecasts") {
  const auto out = combine(std::vector<double>{0.25, 0.75}, {{4.0, 0.0}, {0.0, 8.0}});
  CHECK(out[0] == doctest::Approx(1.0));
  CHECK(out[1] == doctest::Approx(6.0));
  CHECK_THROWS_AS(combine(std::vector<double>{1.0}, {{1.0}, {2.0}}), ConfigError);
}

TEST_CASE("batched and single-window forward paths agree") {
  std::mt19937_64 rng(6);
  ForecasterModel m(micro_config());
  jitter(m, rng);
  const Matrix x = gradcheck::random_matrix(rng, 3, 12);
  const auto pass = forward_model(m, x);
  for (long r = 0; r < 3; ++r) {
    std::vector<double> window(12);
    for (long c = 0; c < 12; ++c) window[static_cast<std::size_t>(c)] = x(r, c);
    const auto e = embed_window(m, window);
    const auto g = gate(m, e);
    const auto y = combine(g.p, expert_forward(m, e, g.s));
    for (long h = 0; h < 4; ++h)
      CHECK(y[static_cast<std::size_t>(h)] == doctest::Approx(pass.output(r, h)).epsilon(1e-12));
  }
}

TEST_CASE("gate loss value and gradient") {
  const GateOutput g{{0.25, 0.75}, 0.5};
  CHECK(loss_gate(g, Annotation{1, 0.2, 1.0, false}, 1.0) == doctest::Approx(-std::log(0.75) + 0.09));
  CHECK(loss_gate({{1.0, 0.0}, 0.0}, Annotation{1, 0.0, 1.0, false}, 1.0) ==
        doctest::Approx(-std::log(1e-12)));
  Matrix probs(1, 2), pos(1, 1), dl, dp;
  probs << 0.25, 0.75;
  pos << 0.5;
  const double l = gate_loss_batch(probs, pos, {1}, {0.2}, 2.0, &dl, &dp);
  CHECK(l == doctest::Approx(-std::log(0.75) + 2.0 * 0.09));
  CHECK(dl(0, 0) == doctest::Approx(0.25));
  CHECK(dl(0, 1) == doctest::Approx(-0.25));
  CHECK(dp(0, 0) == doctest::Approx(2.0 * 2.0 * 0.3));
}

TEST_CASE("load balance is 1 when routing is uniform and K when collapsed") {
  Matrix uniform = Matrix::Constant(4, 2, 0.5);
  CHECK(load_balance(uniform) == doctest::Approx(1.0));
  Matrix collapsed(4, 2);
  collapsed << 1, 0, 1, 0, 1, 0, 1, 0;
  CHECK(load_balance(collapsed) == doctest::Approx(2.0));
  Matrix balanced(2, 2);
  balanced << 0.9, 0.1, 0.1, 0.9;
  Matrix d;
  CHECK(load_balance(balanced, &d) == doctest::Approx(1.0));
  CHECK(d(0, 0) == doctest::Approx(2.0 * 0.5 / 2.0));
  Matrix pred = Matrix::Zero(2, 3), target = Matrix::Ones(2, 3);
  CHECK(loss_final(pred, target, balanced, 0.1) == doctest::Approx(1.0 + 0.1));
}

TEST_CASE("annotation matches an exhaustive occurrence scan") {
  const auto& lib = fixture_library();
  const auto planted = synth::two_regime_motifs(2000, 4, 0.05);
  const auto windows = channel_windows(planted.values, 0, 96, 8, 7);
  std::size_t compared = 0;
  for (const auto& w : windows) {
    const auto got = annotate_window(w.window, w.t_end, lib, lib.similarity());
    const auto want = reference_annotation(w.window, w.t_end, lib);
    if (!want) {
      CHECK(got.fallback);
      continue;
    }
    CHECK_FALSE(got.fallback);
    CHECK(got.y_class == want->y_class);
    CHECK(got.y_pos == doctest::Approx(want->y_pos));
    CHECK(got.match_similarity == doctest::Approx(want->match_similarity));
    ++compared;
  }
  CHECK(compared > windows.size() / 2);
}

TEST_CASE("window ending on the last motif point has position 1") {
  MotifLibrary lib;
  lib.config.max_motif_points = 48;
  lib.sigma = 1.0;
  Motif m;
  m.values = {0, 1, 3, 1, 0, -1};
  m.scale = 6;
  m.occurrences = {10};
  lib.motifs = {m};
  lib.series_length = 40;
  std::vector<double> window{0, 0, 0, 0, 1, 3, 1, 0, -1};
  const auto a = annotate_window(window, 15, lib, lib.similarity());
  CHECK(a.y_pos == 1.0);
  CHECK(a.y_class == 0);
  CHECK_FALSE(a.fallback);
  const auto far = annotate_window(window, 30, lib, lib.similarity());
  CHECK(far.fallback);
  CHECK(far.y_pos == 1.0);  // the window tail is the full motif
}

TEST_CASE("early stopping stops after patience stale epochs") {
  EarlyStopping stop(7);
  std::size_t epoch = 0;
  bool stopped = false;
  while (!stopped && epoch < 30) {
    ++epoch;
    stopped = stop.update(1.0);
  }
  CHECK(epoch == 8);
  CHECK(stop.best_epoch() == 1);

  EarlyStopping improving(2);
  CHECK_FALSE(improving.update(3.0));
  CHECK_FALSE(improving.update(2.0));
  CHECK(improving.improved());
  CHECK_FALSE(improving.update(2.5));
  CHECK(improving.update(2.1));
  CHECK(improving.best() == 2.0);
}

TEST_CASE("a training phase fits a linear map and restores the best weights") {
  std::mt19937_64 rng(9);
  auto net = DenseStack::make({3, 1}, {Activation::identity}, false, rng);
  auto grads = net.zeros_like();
  const Matrix x = gradcheck::random_matrix(rng, 200, 3);
  Matrix w(3, 1);
  w << 1.0, -2.0, 0.5;
  const Matrix y = x * w;
  auto step = [&](const std::vector<std::size_t>& idx) {
    Matrix xb(static_cast<long>(idx.size()), 3), yb(static_cast<long>(idx.size()), 1);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      xb.row(static_cast<long>(i)) = x.row(static_cast<long>(idx[i]));
      yb.row(static_cast<long>(i)) = y.row(static_cast<long>(idx[i]));
    }
    StackCache cache;
    Matrix d;
    const double l = mse_loss(forward(net, xb, &cache), yb, &d);
    backward(net, cache, d, grads);
    return l;
  };
  auto validate = [&] { return mse_loss(forward(net, x), y); };
  TrainConfig tc;
  tc.lr = 0.05;
  tc.batch = 20;
  tc.max_epochs = 40;
  const auto report = train_phase("fit", {&net}, {&grads}, 200, step, validate, tc, 1);
  CHECK(report.val_loss.size() == report.train_loss.size());
  CHECK(report.best_val < 1e-3);
  CHECK(validate() == doctest::Approx(report.best_val));
}

TEST_CASE("a diverging phase raises a numeric error naming the phase") {
  std::mt19937_64 rng(9);
  auto net = DenseStack::make({1, 1}, {Activation::identity}, false, rng);
  auto grads = net.zeros_like();
  auto step = [&](const std::vector<std::size_t>&) { return std::nan(""); };
  auto validate = [] { return 0.0; };
  try {
    train_phase("joint", {&net}, {&grads}, 4, step, validate, TrainConfig{}, 1);
    FAIL("expected a numeric error");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("joint") != std::string::npos);
  }
}

TEST_CASE("three-phase training is reproducible and reports every phase") {
  auto c = micro_config();
  c.lookback = 16;
  c.horizon = 4;
  const auto train = toy_set(120, 16, 4, 2, 1);
  const auto val = toy_set(40, 16, 4, 2, 2);
  TrainConfig tc;
  tc.max_epochs = 3;
  tc.batch = 32;
  const auto a = train_three_phase(train, val, c, tc);
  const auto b = train_three_phase(train, val, c, tc);
  CHECK(a.model.to_checkpoint().serialize() == b.model.to_checkpoint().serialize());
  CHECK(a.model.trained);
  const auto j = a.report.to_json();
  CHECK(j.at("phases").size() == 3);
  CHECK(a.report.pretrain.val_loss.size() >= 1);
  CHECK(a.report.gating.val_loss.size() >= 1);
  CHECK(a.report.joint.val_loss.size() >= 1);
  CHECK(a.report.utilization.size() == 2);
  CHECK(a.report.gate_accuracy >= 0.0);
  CHECK(a.report.gate_accuracy <= 1.0);
}

TEST_CASE("model checkpoint round trip preserves predictions") {
  std::mt19937_64 rng(12);
  ForecasterModel m(micro_config());
  jitter(m, rng);
  const std::vector<double> window(12, 0.3);
  CHECK_THROWS_AS(predict(m, window), ConfigError);
  m.trained = true;
  m.scaling = std::make_pair(10.0, 2.0);
  const auto path = std::filesystem::temp_directory_path() / "cometnet_test_model.ckpt";
  m.save(path);
  const auto back = ForecasterModel::load(path);
  CHECK(back.config == m.config);
  CHECK(back.scaling == m.scaling);
  CHECK(predict(back, window) == predict(m, window));

  std::vector<double> raw(12);
  for (std::size_t i = 0; i < 12; ++i) raw[i] = 10.0 + 2.0 * window[i];
  const auto scaled = predict(back, raw, true);
  const auto plain = predict(back, window);
  for (std::size_t h = 0; h < 4; ++h) CHECK(scaled[h] == doctest::Approx(10.0 + 2.0 * plain[h]));
}

TEST_CASE("baselines") {
  Matrix w(2, 3);
  w << 1, 2, 3, 4, 5, 6;
  const Matrix naive = naive_forecast(w, 2);
  CHECK(naive(0, 0) == 3.0);
  CHECK(naive(1, 1) == 6.0);
  CHECK(mse_loss(naive_forecast(Matrix::Constant(3, 4, 2.0), 5), Matrix::Constant(3, 5, 2.0)) == 0.0);

  std::mt19937_64 rng(13);
  const Matrix x = gradcheck::random_matrix(rng, 50, 4);
  const Matrix map = gradcheck::random_matrix(rng, 4, 2);
  const Matrix y = (x * map).rowwise() + RowVector::Constant(2, 0.7);
  const auto fit = LinearBaseline::fit(x, y);
  CHECK((fit.predict(x) - y).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(fit.bias(0) == doctest::Approx(0.7));
}

TEST_CASE("config validation") {
  auto c = micro_config();
  CHECK(ForecasterConfig::from_json(c.to_json()) == c);
  c.experts = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = micro_config();
  c.gamma = -1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  const ForecasterModel m(micro_config());
  CHECK_THROWS_AS(forward_model(m, Matrix::Zero(1, 5)), ConfigError);
}
