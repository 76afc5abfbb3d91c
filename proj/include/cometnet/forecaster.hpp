#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cometnet/dtw.hpp"
#include "cometnet/motif.hpp"
#include "cometnet/neural.hpp"
#include "cometnet/series.hpp"

namespace cometnet {

struct ForecasterConfig {
  std::size_t lookback = 96;
  std::size_t horizon = 96;
  std::size_t embed_dim = 256;
  std::size_t experts = 10;
  /// One fusion trunk per expert instead of a shared trunk.
  bool separate_fusion = false;
  double alpha_pos = 1.0;
  double gamma = 0.1;
  std::uint64_t seed = 2025;

  void validate() const;
  nlohmann::json to_json() const;
  static ForecasterConfig from_json(const nlohmann::json& j);
  bool operator==(const ForecasterConfig&) const = default;
};

/// Every trainable block of the model. Also used as the gradient container.
struct ModelParameters {
  DenseStack embedder;     // L -> d_e -> d_e, terminal layer norm
  DenseStack route_head;   // d_e -> K
  DenseStack pos_head;     // d_e -> 1, sigmoid
  DenseStack pos_encoder;  // 1 -> d_e -> d_e
  std::vector<DenseStack> fusions;  // 2 d_e -> d_e -> d_e, one or K
  std::vector<DenseStack> heads;    // K times d_e -> d_e -> d_e -> H

  ModelParameters zeros_like() const;
  void set_zero();
  std::vector<DenseStack*> stacks();
  std::vector<const DenseStack*> stacks() const;
  std::vector<std::span<double>> parameters();
  std::vector<std::span<const double>> parameters() const;
};

struct GateOutput {
  std::vector<double> p;  // expert probabilities
  double s = 0.0;         // position within the motif life cycle
};

struct ForecasterModel {
  ForecasterConfig config;
  ModelParameters params;
  bool trained = false;
  /// Channel statistics of the standardized training data.
  std::optional<std::pair<double, double>> scaling;  // mean, std

  ForecasterModel() = default;
  explicit ForecasterModel(const ForecasterConfig& config);

  Checkpoint to_checkpoint() const;
  static ForecasterModel from_checkpoint(const Checkpoint& ck);
  void save(const std::filesystem::path& path) const;
  static ForecasterModel load(const std::filesystem::path& path);
};

/// Activations of one batched forward pass, sufficient for backward.
struct ForwardPass {
  StackCache embed_cache, route_cache, pos_cache, posenc_cache;
  std::vector<StackCache> fusion_caches, head_caches;
  Matrix embedding;             // B x d_e
  Matrix probs;                 // B x K
  Matrix position;              // B x 1
  Matrix pos_features;          // B x d_e
  std::vector<Matrix> fused;    // one per fusion trunk, B x d_e
  std::vector<Matrix> forecasts;  // K of B x H
  Matrix output;                // B x H
};

/// Row-wise softmax with max subtraction.
Matrix softmax_rows(const Matrix& logits);

Matrix embed_batch(const ForecasterModel& model, const Matrix& windows,
                   StackCache* cache = nullptr);
std::vector<double> embed_window(const ForecasterModel& model, std::span<const double> window);

GateOutput gate(const ForecasterModel& model, std::span<const double> embedding);
std::vector<std::vector<double>> expert_forward(const ForecasterModel& model,
                                                std::span<const double> embedding, double s);
std::vector<double> combine(std::span<const double> p,
                            const std::vector<std::vector<double>>& forecasts);

/// Full embed, gate, experts and combine for a batch.
ForwardPass forward_model(const ForecasterModel& model, const Matrix& windows);
/// Gate heads only, on precomputed embeddings.
ForwardPass forward_gate(const ForecasterModel& model, const Matrix& embedding);

/// Partials of a loss with respect to the pass outputs. Empty means zero.
struct OutputGrads {
  Matrix output;    // B x H
  Matrix probs;     // B x K
  Matrix logits;    // B x K, added after the softmax backward
  Matrix position;  // B x 1
};

/// Accumulates parameter gradients into `grads`. When `embedding_grad` is
/// non-null it receives dLoss/dEmbedding and the embedder is skipped.
void backward_model(const ForecasterModel& model, const ForwardPass& pass, const OutputGrads& d,
                    ModelParameters& grads, Matrix* embedding_grad = nullptr);

/// Mean squared error over every entry; optional gradient.
double mse_loss(const Matrix& pred, const Matrix& target, Matrix* grad = nullptr);

/// -ln p[y] (clamped at 1e-12) + alpha_pos (s - y_pos)^2 for one sample.
double loss_gate(const GateOutput& gate, const Annotation& annotation, double alpha_pos);
/// Batch mean of loss_gate with gradients w.r.t. the route logits and s.
double gate_loss_batch(const Matrix& probs, const Matrix& position,
                       const std::vector<std::size_t>& labels, const std::vector<double>& targets,
                       double alpha_pos, Matrix* d_logits = nullptr, Matrix* d_position = nullptr);

/// K * sum_k f_k * mean_k(p), f_k = share of rows whose argmax is k.
double load_balance(const Matrix& probs, Matrix* d_probs = nullptr);
/// MSE + gamma * load_balance.
double loss_final(const Matrix& pred, const Matrix& target, const Matrix& probs, double gamma,
                  Matrix* d_pred = nullptr, Matrix* d_probs = nullptr);

/// Probe MSE of a linear map on the embedding.
double loss_pretrain(const Matrix& probe_output, const Matrix& target);

/// Labels one window whose last point sits at `t_end` in library coordinates.
Annotation annotate_window(std::span<const double> window, std::size_t t_end,
                           const MotifLibrary& library, const SimilarityConfig& similarity);
std::vector<WindowSample> annotate_windows(std::vector<WindowSample> samples,
                                           const MotifLibrary& library,
                                           const SimilarityConfig& similarity);

/// Windows, targets and labels as dense matrices.
struct WindowSet {
  Matrix x;  // N x L
  Matrix y;  // N x H
  std::vector<std::size_t> labels;
  std::vector<double> positions;

  std::size_t size() const { return static_cast<std::size_t>(x.rows()); }
  static WindowSet from_samples(const std::vector<WindowSample>& samples);
  WindowSet rows(const std::vector<std::size_t>& index) const;
};

struct PhaseReport {
  std::string name;
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  std::size_t best_epoch = 0;  // 1-based
  double best_val = 0.0;
  bool early_stopped = false;

  nlohmann::json to_json() const;
};

/// Counts epochs without improvement of a monitored value.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}
  /// Records one epoch's value; returns true when training should stop.
  bool update(double value);
  bool improved() const { return improved_; }
  double best() const { return best_; }
  std::size_t best_epoch() const { return best_epoch_; }

 private:
  std::size_t patience_;
  std::size_t epoch_ = 0;
  std::size_t best_epoch_ = 0;
  std::size_t stale_ = 0;
  double best_ = 0.0;
  bool improved_ = false;
};

/// One phase of minibatch AdamW with cosine decay and early stopping.
/// Before each call of `step` the stacks in `grads` (parallel to
/// `trainable`) are zeroed; `step` accumulates gradients for the given rows
/// and returns the batch loss. `validate` returns the validation loss. The
/// best parameters of `trainable` are restored at the end.
PhaseReport train_phase(const std::string& name, const std::vector<DenseStack*>& trainable,
                        const std::vector<DenseStack*>& grads, std::size_t rows,
                        const std::function<double(const std::vector<std::size_t>&)>& step,
                        const std::function<double()>& validate, const TrainConfig& config,
                        std::uint64_t seed, std::ostream* log = nullptr);

struct TrainingReport {
  PhaseReport pretrain, gating, joint;
  double probe_val_mse = 0.0;
  double gate_accuracy = 0.0;   // validation, after the gating phase
  double final_val_mse = 0.0;
  std::vector<std::size_t> utilization;  // validation argmax counts per expert
  std::vector<double> mean_probability;  // validation mean p per expert
  nlohmann::json config;

  nlohmann::json to_json() const;
};

struct TrainResult {
  ForecasterModel model;
  TrainingReport report;
};

TrainResult train_three_phase(const WindowSet& train, const WindowSet& val,
                              const ForecasterConfig& config, const TrainConfig& train_config,
                              std::ostream* log = nullptr);

/// Share of rows whose argmax probability matches the label.
double gate_accuracy(const Matrix& probs, const std::vector<std::size_t>& labels);

/// Forecast for one window. With `destandardize`, the window is taken in
/// original units and the output is returned in original units.
std::vector<double> predict(const ForecasterModel& model, std::span<const double> window,
                            bool destandardize = false);
Matrix predict_batch(const ForecasterModel& model, const Matrix& windows);

/// Repeats the last observed value across the horizon.
Matrix naive_forecast(const Matrix& windows, std::size_t horizon);

/// Affine least-squares map from window to horizon.
struct LinearBaseline {
  Matrix weight;  // L x H
  RowVector bias;

  static LinearBaseline fit(const Matrix& x, const Matrix& y);
  Matrix predict(const Matrix& x) const;
};

}  // namespace cometnet
