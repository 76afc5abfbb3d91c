#include "cometnet/forecaster.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>

#include "cometnet/error.hpp"

namespace cometnet {

void ForecasterConfig::validate() const {
  if (lookback < 2) throw ConfigError("lookback must be >= 2");
  if (horizon < 1) throw ConfigError("horizon must be >= 1");
  if (embed_dim < 2) throw ConfigError("embed_dim must be >= 2");
  if (experts < 1) throw ConfigError("experts must be >= 1");
  if (!(alpha_pos >= 0.0)) throw ConfigError("alpha_pos must be >= 0");
  if (!(gamma >= 0.0)) throw ConfigError("gamma must be >= 0");
}

nlohmann::json ForecasterConfig::to_json() const {
  return {{"lookback", lookback}, {"horizon", horizon},   {"embed_dim", embed_dim},
          {"experts", experts},   {"separate_fusion", separate_fusion},
          {"alpha_pos", alpha_pos}, {"gamma", gamma},     {"seed", seed}};
}

ForecasterConfig ForecasterConfig::from_json(const nlohmann::json& j) {
  ForecasterConfig c;
  c.lookback = j.value("lookback", c.lookback);
  c.horizon = j.value("horizon", c.horizon);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.experts = j.value("experts", c.experts);
  c.separate_fusion = j.value("separate_fusion", c.separate_fusion);
  c.alpha_pos = j.value("alpha_pos", c.alpha_pos);
  c.gamma = j.value("gamma", c.gamma);
  c.seed = j.value("seed", c.seed);
  return c;
}

ModelParameters ModelParameters::zeros_like() const {
  ModelParameters z = *this;
  z.set_zero();
  return z;
}

void ModelParameters::set_zero() {
  for (auto* s : stacks()) s->set_zero();
}

std::vector<DenseStack*> ModelParameters::stacks() {
  std::vector<DenseStack*> out{&embedder, &route_head, &pos_head, &pos_encoder};
  for (auto& f : fusions) out.push_back(&f);
  for (auto& h : heads) out.push_back(&h);
  return out;
}

std::vector<const DenseStack*> ModelParameters::stacks() const {
  std::vector<const DenseStack*> out;
  for (auto* s : const_cast<ModelParameters*>(this)->stacks()) out.push_back(s);
  return out;
}

std::vector<std::span<double>> ModelParameters::parameters() {
  std::vector<std::span<double>> out;
  for (auto* s : stacks())
    for (auto p : s->parameters()) out.push_back(p);
  return out;
}

std::vector<std::span<const double>> ModelParameters::parameters() const {
  std::vector<std::span<const double>> out;
  for (auto p : const_cast<ModelParameters*>(this)->parameters()) out.emplace_back(p);
  return out;
}

ForecasterModel::ForecasterModel(const ForecasterConfig& cfg) : config(cfg) {
  config.validate();
  const std::size_t L = config.lookback, H = config.horizon, d = config.embed_dim,
                    K = config.experts;
  using A = Activation;
  std::mt19937_64 rng(config.seed);
  params.embedder = DenseStack::make({L, d, d}, {A::leaky_relu, A::identity}, true, rng);
  params.route_head = DenseStack::make({d, K}, {A::identity}, false, rng);
  params.pos_head = DenseStack::make({d, 1}, {A::sigmoid}, false, rng);
  params.pos_encoder = DenseStack::make({1, d, d}, {A::leaky_relu, A::identity}, false, rng);
  const std::size_t trunks = config.separate_fusion ? K : 1;
  for (std::size_t f = 0; f < trunks; ++f)
    params.fusions.push_back(
        DenseStack::make({2 * d, d, d}, {A::leaky_relu, A::identity}, false, rng));
  for (std::size_t k = 0; k < K; ++k)
    params.heads.push_back(
        DenseStack::make({d, d, d, H}, {A::leaky_relu, A::leaky_relu, A::identity}, false, rng));
}

namespace {

std::vector<std::pair<std::string, const DenseStack*>> named_stacks(const ModelParameters& p) {
  std::vector<std::pair<std::string, const DenseStack*>> out{{"embedder", &p.embedder},
                                                            {"route_head", &p.route_head},
                                                            {"pos_head", &p.pos_head},
                                                            {"pos_encoder", &p.pos_encoder}};
  for (std::size_t f = 0; f < p.fusions.size(); ++f)
    out.emplace_back("fusion" + std::to_string(f), &p.fusions[f]);
  for (std::size_t k = 0; k < p.heads.size(); ++k)
    out.emplace_back("head" + std::to_string(k), &p.heads[k]);
  return out;
}

std::size_t trunk_of(const ForecasterModel& model, std::size_t k) {
  return model.config.separate_fusion ? k : 0;
}

Matrix row_matrix(std::span<const double> v) {
  Matrix m(1, static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) m(0, static_cast<Eigen::Index>(i)) = v[i];
  return m;
}

std::vector<double> row_vector(const Matrix& m, Eigen::Index r = 0) {
  std::vector<double> v(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index c = 0; c < m.cols(); ++c) v[static_cast<std::size_t>(c)] = m(r, c);
  return v;
}

bool present(const Matrix& m) { return m.size() > 0; }

}  // namespace

Checkpoint ForecasterModel::to_checkpoint() const {
  Checkpoint ck;
  nlohmann::json arch = nlohmann::json::object();
  for (const auto& [name, stack] : named_stacks(params)) {
    arch[name] = stack->architecture();
    ck.add_stack(name, *stack);
  }
  ck.manifest = {{"format", "cometnet.checkpoint"},
                 {"config", config.to_json()},
                 {"architecture", arch},
                 {"trained", trained},
                 {"scaling", nullptr}};
  if (scaling) ck.manifest["scaling"] = {{"mean", scaling->first}, {"std", scaling->second}};
  return ck;
}

ForecasterModel ForecasterModel::from_checkpoint(const Checkpoint& ck) {
  const auto& m = ck.manifest;
  if (m.value("format", std::string()) != "cometnet.checkpoint")
    throw DataError("checkpoint manifest has the wrong format tag");
  ForecasterModel model;
  try {
    model.config = ForecasterConfig::from_json(m.at("config"));
    model.config.validate();
    const auto& arch = m.at("architecture");
    model.params.embedder = stack_from_architecture(arch.at("embedder"));
    model.params.route_head = stack_from_architecture(arch.at("route_head"));
    model.params.pos_head = stack_from_architecture(arch.at("pos_head"));
    model.params.pos_encoder = stack_from_architecture(arch.at("pos_encoder"));
    const std::size_t trunks = model.config.separate_fusion ? model.config.experts : 1;
    for (std::size_t f = 0; f < trunks; ++f)
      model.params.fusions.push_back(stack_from_architecture(arch.at("fusion" + std::to_string(f))));
    for (std::size_t k = 0; k < model.config.experts; ++k)
      model.params.heads.push_back(stack_from_architecture(arch.at("head" + std::to_string(k))));
    model.trained = m.at("trained").get<bool>();
    if (!m.at("scaling").is_null())
      model.scaling = {m["scaling"].at("mean").get<double>(), m["scaling"].at("std").get<double>()};
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad checkpoint manifest: ") + e.what());
  }
  for (const auto& [name, stack] : named_stacks(model.params))
    ck.load_stack(name, *const_cast<DenseStack*>(stack));
  if (model.params.embedder.input_width() != model.config.lookback ||
      model.params.heads.front().output_width() != model.config.horizon)
    throw DataError("checkpoint architecture disagrees with its config");
  return model;
}

void ForecasterModel::save(const std::filesystem::path& path) const { to_checkpoint().save(path); }

ForecasterModel ForecasterModel::load(const std::filesystem::path& path) {
  return from_checkpoint(Checkpoint::load(path));
}

Matrix softmax_rows(const Matrix& logits) {
  const Eigen::VectorXd mx = logits.rowwise().maxCoeff();
  Matrix e = (logits.colwise() - mx).array().exp();
  const Eigen::VectorXd sum = e.rowwise().sum();
  return e.array().colwise() / sum.array();
}

Matrix embed_batch(const ForecasterModel& model, const Matrix& windows, StackCache* cache) {
  if (static_cast<std::size_t>(windows.cols()) != model.config.lookback)
    throw ConfigError("window length " + std::to_string(windows.cols()) +
                      " does not match lookback " + std::to_string(model.config.lookback));
  return forward(model.params.embedder, windows, cache);
}

std::vector<double> embed_window(const ForecasterModel& model, std::span<const double> window) {
  return row_vector(embed_batch(model, row_matrix(window)));
}

GateOutput gate(const ForecasterModel& model, std::span<const double> embedding) {
  const auto pass = forward_gate(model, row_matrix(embedding));
  return {row_vector(pass.probs), pass.position(0, 0)};
}

std::vector<std::vector<double>> expert_forward(const ForecasterModel& model,
                                                std::span<const double> embedding, double s) {
  const Matrix e = row_matrix(embedding);
  Matrix pos(1, 1);
  pos(0, 0) = s;
  const Matrix feat = forward(model.params.pos_encoder, pos);
  Matrix joined(1, e.cols() + feat.cols());
  joined << e, feat;
  std::vector<Matrix> fused;
  for (const auto& f : model.params.fusions) fused.push_back(forward(f, joined));
  std::vector<std::vector<double>> out;
  for (std::size_t k = 0; k < model.params.heads.size(); ++k)
    out.push_back(row_vector(forward(model.params.heads[k], fused[trunk_of(model, k)])));
  return out;
}

std::vector<double> combine(std::span<const double> p,
                            const std::vector<std::vector<double>>& forecasts) {
  if (p.size() != forecasts.size() || forecasts.empty())
    throw ConfigError("combine needs one probability per forecast");
  std::vector<double> out(forecasts.front().size(), 0.0);
  for (std::size_t k = 0; k < forecasts.size(); ++k) {
    if (forecasts[k].size() != out.size()) throw ConfigError("forecast lengths differ");
    for (std::size_t h = 0; h < out.size(); ++h) out[h] += p[k] * forecasts[k][h];
  }
  return out;
}

ForwardPass forward_gate(const ForecasterModel& model, const Matrix& embedding) {
  ForwardPass pass;
  pass.embedding = embedding;
  pass.probs = softmax_rows(forward(model.params.route_head, embedding, &pass.route_cache));
  pass.position = forward(model.params.pos_head, embedding, &pass.pos_cache);
  return pass;
}

ForwardPass forward_model(const ForecasterModel& model, const Matrix& windows) {
  StackCache embed_cache;
  const Matrix e = embed_batch(model, windows, &embed_cache);
  ForwardPass pass = forward_gate(model, e);
  pass.embed_cache = std::move(embed_cache);
  pass.pos_features = forward(model.params.pos_encoder, pass.position, &pass.posenc_cache);
  Matrix joined(e.rows(), e.cols() + pass.pos_features.cols());
  joined << e, pass.pos_features;
  pass.fusion_caches.resize(model.params.fusions.size());
  for (std::size_t f = 0; f < model.params.fusions.size(); ++f)
    pass.fused.push_back(forward(model.params.fusions[f], joined, &pass.fusion_caches[f]));
  const std::size_t K = model.params.heads.size();
  pass.head_caches.resize(K);
  pass.output = Matrix::Zero(e.rows(), static_cast<Eigen::Index>(model.config.horizon));
  for (std::size_t k = 0; k < K; ++k) {
    pass.forecasts.push_back(
        forward(model.params.heads[k], pass.fused[trunk_of(model, k)], &pass.head_caches[k]));
    pass.output.array() +=
        pass.forecasts.back().array().colwise() * pass.probs.col(static_cast<Eigen::Index>(k)).array();
  }
  return pass;
}

void backward_model(const ForecasterModel& model, const ForwardPass& pass, const OutputGrads& d,
                    ModelParameters& grads, Matrix* embedding_grad) {
  const auto B = pass.embedding.rows();
  const auto de_width = pass.embedding.cols();
  const auto K = pass.probs.cols();
  Matrix de = Matrix::Zero(B, de_width);
  Matrix dprobs = present(d.probs) ? d.probs : Matrix::Zero(B, K);
  Matrix dposition = present(d.position) ? d.position : Matrix::Zero(B, 1);

  if (present(d.output)) {
    if (pass.forecasts.empty()) throw ConfigError("output gradient needs a full forward pass");
    std::vector<Matrix> dfused(pass.fused.size(), Matrix::Zero(B, de_width));
    for (Eigen::Index k = 0; k < K; ++k) {
      const auto ku = static_cast<std::size_t>(k);
      const Matrix& f = pass.forecasts[ku];
      dprobs.col(k) += d.output.cwiseProduct(f).rowwise().sum();
      const Matrix dforecast = d.output.array().colwise() * pass.probs.col(k).array();
      dfused[trunk_of(model, ku)] +=
          backward(model.params.heads[ku], pass.head_caches[ku], dforecast, grads.heads[ku]);
    }
    Matrix dfeat = Matrix::Zero(B, pass.pos_features.cols());
    for (std::size_t f = 0; f < pass.fused.size(); ++f) {
      const Matrix dj =
          backward(model.params.fusions[f], pass.fusion_caches[f], dfused[f], grads.fusions[f]);
      de += dj.leftCols(de_width);
      dfeat += dj.rightCols(pass.pos_features.cols());
    }
    dposition += backward(model.params.pos_encoder, pass.posenc_cache, dfeat, grads.pos_encoder);
  }

  de += backward(model.params.pos_head, pass.pos_cache, dposition, grads.pos_head);

  const Eigen::VectorXd inner = pass.probs.cwiseProduct(dprobs).rowwise().sum();
  Matrix dlogits = pass.probs.array() * (dprobs.colwise() - inner).array();
  if (present(d.logits)) dlogits += d.logits;
  de += backward(model.params.route_head, pass.route_cache, dlogits, grads.route_head);

  if (embedding_grad)
    *embedding_grad = std::move(de);
  else
    backward(model.params.embedder, pass.embed_cache, de, grads.embedder);
}

double mse_loss(const Matrix& pred, const Matrix& target, Matrix* grad) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    throw ConfigError("prediction and target shapes differ");
  if (pred.size() == 0) throw ConfigError("mse of an empty batch");
  const Matrix diff = pred - target;
  const double n = static_cast<double>(diff.size());
  if (grad) *grad = (2.0 / n) * diff;
  return diff.squaredNorm() / n;
}

double loss_pretrain(const Matrix& probe_output, const Matrix& target) {
  return mse_loss(probe_output, target);
}

double loss_gate(const GateOutput& g, const Annotation& a, double alpha_pos) {
  if (a.y_class >= g.p.size()) throw ConfigError("annotation class outside the gate");
  const double ce = -std::log(std::max(g.p[a.y_class], 1e-12));
  const double dp = g.s - a.y_pos;
  return ce + alpha_pos * dp * dp;
}

double gate_loss_batch(const Matrix& probs, const Matrix& position,
                       const std::vector<std::size_t>& labels, const std::vector<double>& targets,
                       double alpha_pos, Matrix* d_logits, Matrix* d_position) {
  const auto B = probs.rows();
  if (static_cast<std::size_t>(B) != labels.size() || labels.size() != targets.size() ||
      position.rows() != B)
    throw ConfigError("gate loss batch sizes differ");
  if (B == 0) throw ConfigError("gate loss of an empty batch");
  const double inv = 1.0 / static_cast<double>(B);
  if (d_logits) *d_logits = probs * inv;
  if (d_position) *d_position = Matrix::Zero(B, 1);
  double total = 0.0;
  for (Eigen::Index b = 0; b < B; ++b) {
    const auto y = static_cast<Eigen::Index>(labels[static_cast<std::size_t>(b)]);
    if (y >= probs.cols()) throw ConfigError("annotation class outside the gate");
    const double diff = position(b, 0) - targets[static_cast<std::size_t>(b)];
    total += -std::log(std::max(probs(b, y), 1e-12)) + alpha_pos * diff * diff;
    if (d_logits) (*d_logits)(b, y) -= inv;
    if (d_position) (*d_position)(b, 0) = 2.0 * alpha_pos * diff * inv;
  }
  return total * inv;
}

double load_balance(const Matrix& probs, Matrix* d_probs) {
  const auto B = probs.rows();
  const auto K = probs.cols();
  if (B == 0) throw ConfigError("load balance of an empty batch");
  Eigen::RowVectorXd share = Eigen::RowVectorXd::Zero(K);
  for (Eigen::Index b = 0; b < B; ++b) {
    Eigen::Index arg = 0;
    probs.row(b).maxCoeff(&arg);
    share(arg) += 1.0;
  }
  share /= static_cast<double>(B);
  const Eigen::RowVectorXd mean_p = probs.colwise().mean();
  const double k = static_cast<double>(K);
  if (d_probs) *d_probs = (share * (k / static_cast<double>(B))).replicate(B, 1);
  return k * share.dot(mean_p);
}

double loss_final(const Matrix& pred, const Matrix& target, const Matrix& probs, double gamma,
                  Matrix* d_pred, Matrix* d_probs) {
  const double m = mse_loss(pred, target, d_pred);
  const double lb = load_balance(probs, d_probs);
  if (d_probs) *d_probs *= gamma;
  return m + gamma * lb;
}

namespace {

struct Match {
  double score = -1.0;
  std::size_t motif = 0;
  std::size_t phase = 0;
};

// Score of the window ending at motif position `phase`: overlap share times
// shape similarity of the overlapping stretch.
double phase_score(std::span<const double> window, const Motif& m, std::size_t phase,
                   const SimilarityConfig& similarity, std::size_t max_points) {
  const std::size_t len = std::min(phase + 1, window.size());
  const auto tail = window.subspan(window.size() - len);
  const auto part = std::span<const double>(m.values).subspan(phase + 1 - len, len);
  return static_cast<double>(len) / static_cast<double>(m.scale) *
         shape_similarity(tail, part, similarity, max_points);
}

Annotation to_annotation(const Match& best, const MotifLibrary& library, bool fallback) {
  const auto& m = library.motifs[best.motif];
  Annotation a;
  a.y_class = best.motif;
  a.y_pos = m.scale > 1 ? std::clamp(static_cast<double>(best.phase) /
                                         static_cast<double>(m.scale - 1),
                                     0.0, 1.0)
                        : 1.0;
  a.match_similarity = best.score;
  a.fallback = fallback;
  return a;
}

}  // namespace

Annotation annotate_window(std::span<const double> window, std::size_t t_end,
                           const MotifLibrary& library, const SimilarityConfig& similarity) {
  if (library.motifs.empty()) throw DataError("annotation needs a non-empty motif library");
  if (window.empty()) throw DataError("annotation of an empty window");
  const std::size_t max_points = library.config.max_motif_points;
  Match best;
  for (std::size_t k = 0; k < library.motifs.size(); ++k) {
    const auto& m = library.motifs[k];
    // Occurrences o with o <= t_end < o + scale.
    const std::size_t lo = t_end + 1 > m.scale ? t_end + 1 - m.scale : 0;
    auto it = std::lower_bound(m.occurrences.begin(), m.occurrences.end(), lo);
    for (; it != m.occurrences.end() && *it <= t_end; ++it) {
      const std::size_t phase = t_end - *it;
      const double s = phase_score(window, m, phase, similarity, max_points);
      if (s > best.score) best = {s, k, phase};
    }
  }
  if (best.score >= 0.0) return to_annotation(best, library, false);

  for (std::size_t k = 0; k < library.motifs.size(); ++k) {
    const auto& m = library.motifs[k];
    const std::size_t step = std::max<std::size_t>(1, m.scale / max_points);
    for (std::size_t phase = m.scale - 1;; phase -= std::min(step, phase)) {
      const double s = phase_score(window, m, phase, similarity, max_points);
      if (s > best.score || (s == best.score && k == best.motif && phase < best.phase))
        best = {s, k, phase};
      if (phase == 0) break;
    }
  }
  return to_annotation(best, library, true);
}

std::vector<WindowSample> annotate_windows(std::vector<WindowSample> samples,
                                           const MotifLibrary& library,
                                           const SimilarityConfig& similarity) {
  for (auto& s : samples) s.annotation = annotate_window(s.window, s.t_end, library, similarity);
  return samples;
}

WindowSet WindowSet::from_samples(const std::vector<WindowSample>& samples) {
  WindowSet w;
  if (samples.empty()) return w;
  const auto L = static_cast<Eigen::Index>(samples.front().window.size());
  const auto H = static_cast<Eigen::Index>(samples.front().target.size());
  const auto N = static_cast<Eigen::Index>(samples.size());
  w.x.resize(N, L);
  w.y.resize(N, H);
  const bool labelled = samples.front().annotation.has_value();
  for (Eigen::Index i = 0; i < N; ++i) {
    const auto& s = samples[static_cast<std::size_t>(i)];
    if (static_cast<Eigen::Index>(s.window.size()) != L ||
        static_cast<Eigen::Index>(s.target.size()) != H)
      throw DataError("window samples have inconsistent lengths");
    if (s.annotation.has_value() != labelled)
      throw DataError("either every window or none must be annotated");
    for (Eigen::Index c = 0; c < L; ++c) w.x(i, c) = s.window[static_cast<std::size_t>(c)];
    for (Eigen::Index c = 0; c < H; ++c) w.y(i, c) = s.target[static_cast<std::size_t>(c)];
    if (labelled) {
      w.labels.push_back(s.annotation->y_class);
      w.positions.push_back(s.annotation->y_pos);
    }
  }
  return w;
}

WindowSet WindowSet::rows(const std::vector<std::size_t>& index) const {
  WindowSet w;
  const auto n = static_cast<Eigen::Index>(index.size());
  w.x.resize(n, x.cols());
  w.y.resize(n, y.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto r = index[static_cast<std::size_t>(i)];
    w.x.row(i) = x.row(static_cast<Eigen::Index>(r));
    w.y.row(i) = y.row(static_cast<Eigen::Index>(r));
    if (!labels.empty()) {
      w.labels.push_back(labels[r]);
      w.positions.push_back(positions[r]);
    }
  }
  return w;
}

nlohmann::json PhaseReport::to_json() const {
  return {{"name", name},
          {"train_loss", train_loss},
          {"val_loss", val_loss},
          {"epochs", val_loss.size()},
          {"best_epoch", best_epoch},
          {"best_val", best_val},
          {"early_stopped", early_stopped}};
}

bool EarlyStopping::update(double value) {
  ++epoch_;
  if (epoch_ == 1 || value < best_) {
    best_ = value;
    best_epoch_ = epoch_;
    stale_ = 0;
    improved_ = true;
  } else {
    ++stale_;
    improved_ = false;
  }
  return stale_ >= patience_;
}

PhaseReport train_phase(const std::string& name, const std::vector<DenseStack*>& trainable,
                        const std::vector<DenseStack*>& grads, std::size_t rows,
                        const std::function<double(const std::vector<std::size_t>&)>& step,
                        const std::function<double()>& validate, const TrainConfig& config,
                        std::uint64_t seed, std::ostream* log) {
  config.validate();
  if (trainable.size() != grads.size()) throw ConfigError("gradient stacks do not match");
  if (rows == 0) throw DataError(name + " phase has no training rows");
  PhaseReport report;
  report.name = name;

  std::vector<std::span<double>> params, grad_views;
  for (auto* s : trainable)
    for (auto p : s->parameters()) params.push_back(p);
  for (auto* g : grads)
    for (auto p : g->parameters()) grad_views.push_back(p);
  std::vector<std::span<const double>> grad_const(grad_views.begin(), grad_views.end());

  OptimizerState opt;
  opt.lr = config.lr;
  opt.weight_decay = config.weight_decay;
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(rows);
  std::iota(order.begin(), order.end(), 0);
  const std::size_t per_epoch = (rows + config.batch - 1) / config.batch;
  const std::uint64_t total = static_cast<std::uint64_t>(per_epoch) * config.max_epochs;
  std::uint64_t step_count = 0;

  EarlyStopping stopper(config.patience);
  std::vector<DenseStack> best;
  for (auto* s : trainable) best.push_back(*s);

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    for (std::size_t b = 0; b < per_epoch; ++b) {
      const std::vector<std::size_t> idx(
          order.begin() + static_cast<std::ptrdiff_t>(b * config.batch),
          order.begin() + static_cast<std::ptrdiff_t>(std::min(rows, (b + 1) * config.batch)));
      for (auto* g : grads) g->set_zero();
      const double loss = step(idx);
      if (!std::isfinite(loss))
        throw NumericError(name + " phase diverged: non-finite loss at epoch " +
                           std::to_string(epoch) + ", step " + std::to_string(step_count + 1));
      clip_global_norm(grad_views, config.clip_norm);
      try {
        adamw_step(opt, params, grad_const, cosine_lr(step_count, total, config.lr));
      } catch (const NumericError& e) {
        throw NumericError(name + " phase: " + e.what());
      }
      ++step_count;
      sum += loss * static_cast<double>(idx.size());
    }
    const double train_loss = sum / static_cast<double>(rows);
    const double val = validate();
    if (!std::isfinite(val))
      throw NumericError(name + " phase diverged: non-finite validation loss at epoch " +
                         std::to_string(epoch));
    report.train_loss.push_back(train_loss);
    report.val_loss.push_back(val);
    const bool stop = stopper.update(val);
    if (stopper.improved())
      for (std::size_t i = 0; i < trainable.size(); ++i) best[i] = *trainable[i];
    if (log)
      *log << name << " epoch " << epoch << " train " << train_loss << " val " << val
           << (stopper.improved() ? " *" : "") << '\n';
    if (stop) {
      report.early_stopped = true;
      break;
    }
  }
  for (std::size_t i = 0; i < trainable.size(); ++i) *trainable[i] = best[i];
  report.best_epoch = stopper.best_epoch();
  report.best_val = stopper.best();
  return report;
}

nlohmann::json TrainingReport::to_json() const {
  return {{"phases", {pretrain.to_json(), gating.to_json(), joint.to_json()}},
          {"probe_val_mse", probe_val_mse},
          {"gate_accuracy", gate_accuracy},
          {"final_val_mse", final_val_mse},
          {"utilization", utilization},
          {"mean_probability", mean_probability},
          {"config", config}};
}

double gate_accuracy(const Matrix& probs, const std::vector<std::size_t>& labels) {
  if (static_cast<std::size_t>(probs.rows()) != labels.size() || labels.empty())
    throw ConfigError("gate accuracy needs one label per row");
  std::size_t hit = 0;
  for (Eigen::Index b = 0; b < probs.rows(); ++b) {
    Eigen::Index arg = 0;
    probs.row(b).maxCoeff(&arg);
    hit += static_cast<std::size_t>(arg) == labels[static_cast<std::size_t>(b)];
  }
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

TrainResult train_three_phase(const WindowSet& train, const WindowSet& val,
                              const ForecasterConfig& config, const TrainConfig& train_config,
                              std::ostream* log) {
  config.validate();
  train_config.validate();
  for (const auto* set : {&train, &val}) {
    if (set->size() == 0) throw DataError("training needs non-empty train and validation sets");
    if (static_cast<std::size_t>(set->x.cols()) != config.lookback ||
        static_cast<std::size_t>(set->y.cols()) != config.horizon)
      throw DataError("window shapes do not match lookback/horizon");
    if (set->labels.size() != set->size()) throw DataError("training windows must be annotated");
    for (auto y : set->labels)
      if (y >= config.experts)
        throw DataError("annotation class " + std::to_string(y) + " exceeds expert count");
  }

  TrainResult result{ForecasterModel(config), {}};
  ForecasterModel& model = result.model;
  auto& P = model.params;
  ModelParameters G = P.zeros_like();
  const std::uint64_t seed = config.seed;

  // Phase 1: embedder and a disposable linear probe.
  std::mt19937_64 probe_rng(seed ^ 0x9E3779B97F4A7C15ULL);
  DenseStack probe = DenseStack::make({config.embed_dim, config.horizon}, {Activation::identity},
                                      false, probe_rng);
  DenseStack probe_grad = probe.zeros_like();
  result.report.pretrain = train_phase(
      "pretrain", {&P.embedder, &probe}, {&G.embedder, &probe_grad}, train.size(),
      [&](const std::vector<std::size_t>& idx) {
        const WindowSet b = train.rows(idx);
        StackCache ec, pc;
        const Matrix e = forward(P.embedder, b.x, &ec);
        const Matrix out = forward(probe, e, &pc);
        Matrix g;
        const double loss = mse_loss(out, b.y, &g);
        backward(P.embedder, ec, backward(probe, pc, g, probe_grad), G.embedder);
        return loss;
      },
      [&] { return loss_pretrain(forward(probe, forward(P.embedder, val.x)), val.y); },
      train_config, seed + 1, log);
  result.report.probe_val_mse = result.report.pretrain.best_val;

  // Phase 2: gate heads on frozen embeddings.
  const Matrix train_emb = embed_batch(model, train.x);
  const Matrix val_emb = embed_batch(model, val.x);
  result.report.gating = train_phase(
      "gating", {&P.route_head, &P.pos_head}, {&G.route_head, &G.pos_head}, train.size(),
      [&](const std::vector<std::size_t>& idx) {
        Matrix e(static_cast<Eigen::Index>(idx.size()), train_emb.cols());
        std::vector<std::size_t> labels;
        std::vector<double> targets;
        for (std::size_t i = 0; i < idx.size(); ++i) {
          e.row(static_cast<Eigen::Index>(i)) = train_emb.row(static_cast<Eigen::Index>(idx[i]));
          labels.push_back(train.labels[idx[i]]);
          targets.push_back(train.positions[idx[i]]);
        }
        const ForwardPass pass = forward_gate(model, e);
        OutputGrads d;
        const double loss = gate_loss_batch(pass.probs, pass.position, labels, targets,
                                            config.alpha_pos, &d.logits, &d.position);
        Matrix unused;
        backward_model(model, pass, d, G, &unused);
        return loss;
      },
      [&] {
        const ForwardPass pass = forward_gate(model, val_emb);
        return gate_loss_batch(pass.probs, pass.position, val.labels, val.positions,
                               config.alpha_pos);
      },
      train_config, seed + 2, log);
  result.report.gate_accuracy = gate_accuracy(forward_gate(model, val_emb).probs, val.labels);

  // Phase 3: everything on forecast error plus load balancing.
  result.report.joint = train_phase(
      "joint", P.stacks(), G.stacks(), train.size(),
      [&](const std::vector<std::size_t>& idx) {
        const WindowSet b = train.rows(idx);
        const ForwardPass pass = forward_model(model, b.x);
        OutputGrads d;
        const double loss =
            loss_final(pass.output, b.y, pass.probs, config.gamma, &d.output, &d.probs);
        backward_model(model, pass, d, G);
        return loss;
      },
      [&] {
        const ForwardPass pass = forward_model(model, val.x);
        return loss_final(pass.output, val.y, pass.probs, config.gamma);
      },
      train_config, seed + 3, log);

  const ForwardPass final_pass = forward_model(model, val.x);
  result.report.final_val_mse = mse_loss(final_pass.output, val.y);
  result.report.utilization.assign(config.experts, 0);
  for (Eigen::Index b = 0; b < final_pass.probs.rows(); ++b) {
    Eigen::Index arg = 0;
    final_pass.probs.row(b).maxCoeff(&arg);
    ++result.report.utilization[static_cast<std::size_t>(arg)];
  }
  const Eigen::RowVectorXd mean_p = final_pass.probs.colwise().mean();
  result.report.mean_probability.assign(mean_p.data(), mean_p.data() + mean_p.size());
  result.report.config = {{"forecaster", config.to_json()}, {"training", train_config.to_json()}};
  model.trained = true;
  return result;
}

Matrix predict_batch(const ForecasterModel& model, const Matrix& windows) {
  if (!model.trained) throw ConfigError("model is untrained");
  return forward_model(model, windows).output;
}

std::vector<double> predict(const ForecasterModel& model, std::span<const double> window,
                            bool destandardize) {
  if (!model.trained) throw ConfigError("model is untrained");
  Matrix x = row_matrix(window);
  if (destandardize) {
    if (!model.scaling) throw ConfigError("model has no stored scaling statistics");
    x = (x.array() - model.scaling->first) / model.scaling->second;
  }
  Matrix out = predict_batch(model, x);
  if (destandardize) out = out.array() * model.scaling->second + model.scaling->first;
  return row_vector(out);
}

Matrix naive_forecast(const Matrix& windows, std::size_t horizon) {
  if (windows.cols() == 0) throw ConfigError("naive forecast of empty windows");
  return windows.col(windows.cols() - 1).replicate(1, static_cast<Eigen::Index>(horizon));
}

LinearBaseline LinearBaseline::fit(const Matrix& x, const Matrix& y) {
  if (x.rows() != y.rows() || x.rows() == 0) throw DataError("linear baseline needs paired rows");
  Matrix a(x.rows(), x.cols() + 1);
  a << x, Matrix::Ones(x.rows(), 1);
  const Matrix w = a.colPivHouseholderQr().solve(y);
  LinearBaseline lb;
  lb.weight = w.topRows(x.cols());
  lb.bias = w.row(x.cols());
  return lb;
}

Matrix LinearBaseline::predict(const Matrix& x) const {
  if (x.cols() != weight.rows()) throw ConfigError("linear baseline input width mismatch");
  return (x * weight).rowwise() + bias;
}

}  // namespace cometnet
