#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace cometnet {

/// Batches are matrices with one sample per row.
using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

inline constexpr double kLeakySlope = 0.01;
inline constexpr double kLayerNormEps = 1e-5;

enum class Activation { leaky_relu, gelu, sigmoid, identity };

std::string activation_name(Activation a);
Activation parse_activation(const std::string& name);

/// Elementwise activation and its derivative evaluated at the pre-activation.
Matrix activate(const Matrix& pre, Activation a);
Matrix activation_derivative(const Matrix& pre, Activation a);

struct DenseLayer {
  Matrix weight;  // fan_in x fan_out
  RowVector bias;
  Activation activation = Activation::identity;
};

struct LayerNormParams {
  RowVector gain;
  RowVector shift;
};

struct DenseStack {
  std::vector<DenseLayer> layers;
  std::optional<LayerNormParams> norm;

  /// widths has one more entry than activations. Weights use uniform fan-in
  /// scaling (He for rectifiers, Xavier otherwise); biases start at zero.
  static DenseStack make(const std::vector<std::size_t>& widths,
                         const std::vector<Activation>& activations, bool layer_norm,
                         std::mt19937_64& rng);

  std::size_t input_width() const;
  std::size_t output_width() const;
  std::size_t parameter_count() const;
  /// Same shapes, every parameter zero. Used as a gradient accumulator.
  DenseStack zeros_like() const;
  void set_zero();
  void validate() const;
  bool all_finite() const;

  /// Views of every parameter block in a fixed order.
  std::vector<std::span<double>> parameters();
  std::vector<std::span<const double>> parameters() const;

  nlohmann::json architecture() const;
};

struct LayerNormCache {
  Matrix normalized;  // before gain and shift
  Eigen::VectorXd inv_std;
};

struct StackCache {
  std::vector<Matrix> inputs;  // input to each layer
  std::vector<Matrix> pre;     // pre-activation of each layer
  std::optional<LayerNormCache> norm;
};

Matrix forward(const DenseStack& stack, const Matrix& x, StackCache* cache = nullptr);

/// Accumulates parameter gradients into `grads` (same shapes as `stack`) and
/// returns the gradient with respect to the input batch.
Matrix backward(const DenseStack& stack, const StackCache& cache, const Matrix& grad_out,
                DenseStack& grads);

/// Row-wise normalization over the feature dimension.
Matrix layer_norm(const Matrix& x, const RowVector& gain, const RowVector& shift,
                  LayerNormCache* cache = nullptr);
/// Returns the input gradient; adds into grad_gain and grad_shift.
Matrix layer_norm_backward(const LayerNormCache& cache, const RowVector& gain,
                           const Matrix& grad_out, RowVector& grad_gain, RowVector& grad_shift);

struct OptimizerState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

/// One decoupled-decay AdamW update with bias correction at learning rate
/// `lr`. Moments are created on first use. Throws NumericError when a
/// gradient is not finite.
void adamw_step(OptimizerState& state, const std::vector<std::span<double>>& params,
                const std::vector<std::span<const double>>& grads, double lr);

double cosine_lr(std::uint64_t step, std::uint64_t total_steps, double base_lr);

double global_norm(const std::vector<std::span<const double>>& grads);
/// Rescales the gradients so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_global_norm(const std::vector<std::span<double>>& grads, double max_norm);

struct TrainConfig {
  double lr = 1e-3;
  std::size_t batch = 256;
  std::size_t patience = 7;
  std::size_t max_epochs = 30;
  double weight_decay = 1e-4;
  double clip_norm = 5.0;
  std::uint64_t seed = 2025;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
  bool operator==(const TrainConfig&) const = default;
};

/// Named tensors plus a JSON manifest in one binary file.
struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  nlohmann::json manifest;
  std::vector<std::pair<std::string, Matrix>> tensors;

  void add(const std::string& name, const Matrix& m);
  void add_stack(const std::string& prefix, const DenseStack& stack);
  const Matrix& get(const std::string& name) const;
  /// Fills the parameters of `stack` (whose shapes must already match).
  void load_stack(const std::string& prefix, DenseStack& stack) const;

  std::string serialize() const;
  static Checkpoint deserialize(const std::string& bytes);
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

/// Rebuilds an uninitialized stack from `DenseStack::architecture()`.
DenseStack stack_from_architecture(const nlohmann::json& arch);

}  // namespace cometnet
