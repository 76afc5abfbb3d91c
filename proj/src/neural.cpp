#include "cometnet/neural.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <numbers>

#include "cometnet/error.hpp"
#include "cometnet/io.hpp"

namespace cometnet {

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::leaky_relu: return "leaky_relu";
    case Activation::gelu: return "gelu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::identity: return "identity";
  }
  return "identity";
}

Activation parse_activation(const std::string& name) {
  if (name == "leaky_relu") return Activation::leaky_relu;
  if (name == "gelu") return Activation::gelu;
  if (name == "sigmoid") return Activation::sigmoid;
  if (name == "identity") return Activation::identity;
  throw ConfigError("unknown activation '" + name + "'");
}

namespace {

constexpr double kGeluCubic = 0.044715;
const double kGeluScale = std::sqrt(2.0 / std::numbers::pi);

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Matrix activate(const Matrix& pre, Activation a) {
  switch (a) {
    case Activation::leaky_relu:
      return pre.unaryExpr([](double x) { return x > 0 ? x : kLeakySlope * x; });
    case Activation::gelu:
      return pre.unaryExpr([](double x) {
        return 0.5 * x * (1.0 + std::tanh(kGeluScale * (x + kGeluCubic * x * x * x)));
      });
    case Activation::sigmoid:
      return pre.unaryExpr([](double x) { return sigmoid(x); });
    case Activation::identity:
      return pre;
  }
  return pre;
}

Matrix activation_derivative(const Matrix& pre, Activation a) {
  switch (a) {
    case Activation::leaky_relu:
      return pre.unaryExpr([](double x) { return x > 0 ? 1.0 : kLeakySlope; });
    case Activation::gelu:
      return pre.unaryExpr([](double x) {
        const double t = std::tanh(kGeluScale * (x + kGeluCubic * x * x * x));
        const double du = kGeluScale * (1.0 + 3.0 * kGeluCubic * x * x);
        return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
      });
    case Activation::sigmoid:
      return pre.unaryExpr([](double x) {
        const double s = sigmoid(x);
        return s * (1.0 - s);
      });
    case Activation::identity:
      return Matrix::Ones(pre.rows(), pre.cols());
  }
  return Matrix::Ones(pre.rows(), pre.cols());
}

DenseStack DenseStack::make(const std::vector<std::size_t>& widths,
                            const std::vector<Activation>& activations, bool layer_norm,
                            std::mt19937_64& rng) {
  if (widths.size() < 2 || activations.size() + 1 != widths.size())
    throw ConfigError("stack needs one activation per layer");
  DenseStack s;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const auto fan_in = static_cast<Eigen::Index>(widths[l]);
    const auto fan_out = static_cast<Eigen::Index>(widths[l + 1]);
    if (fan_in == 0 || fan_out == 0) throw ConfigError("layer widths must be positive");
    const Activation act = activations[l];
    double bound = 0.0;
    if (act == Activation::leaky_relu || act == Activation::gelu)
      bound = std::sqrt(6.0 / ((1.0 + kLeakySlope * kLeakySlope) * static_cast<double>(fan_in)));
    else
      bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    DenseLayer layer;
    layer.weight.resize(fan_in, fan_out);
    for (Eigen::Index r = 0; r < fan_in; ++r)
      for (Eigen::Index c = 0; c < fan_out; ++c) layer.weight(r, c) = dist(rng);
    layer.bias = RowVector::Zero(fan_out);
    layer.activation = act;
    s.layers.push_back(std::move(layer));
  }
  if (layer_norm) {
    const auto w = static_cast<Eigen::Index>(widths.back());
    if (w < 2) throw ConfigError("layer norm needs width >= 2");
    s.norm = LayerNormParams{RowVector::Ones(w), RowVector::Zero(w)};
  }
  return s;
}

std::size_t DenseStack::input_width() const {
  return layers.empty() ? 0 : static_cast<std::size_t>(layers.front().weight.rows());
}

std::size_t DenseStack::output_width() const {
  return layers.empty() ? 0 : static_cast<std::size_t>(layers.back().weight.cols());
}

std::size_t DenseStack::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.size();
  return n;
}

DenseStack DenseStack::zeros_like() const {
  DenseStack z = *this;
  z.set_zero();
  return z;
}

void DenseStack::set_zero() {
  for (auto& l : layers) {
    l.weight.setZero();
    l.bias.setZero();
  }
  if (norm) {
    norm->gain.setZero();
    norm->shift.setZero();
  }
}

void DenseStack::validate() const {
  if (layers.empty()) throw ConfigError("stack has no layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (layers[l].bias.size() != layers[l].weight.cols())
      throw ConfigError("layer " + std::to_string(l) + " bias width mismatch");
    if (l > 0 && layers[l].weight.rows() != layers[l - 1].weight.cols())
      throw ConfigError("layer " + std::to_string(l) + " does not chain");
  }
  if (norm && (norm->gain.size() != layers.back().weight.cols() ||
               norm->shift.size() != layers.back().weight.cols()))
    throw ConfigError("layer norm width mismatch");
  if (!all_finite()) throw NumericError("stack has non-finite parameters");
}

bool DenseStack::all_finite() const {
  for (const auto& p : parameters())
    for (double v : p)
      if (!std::isfinite(v)) return false;
  return true;
}

std::vector<std::span<double>> DenseStack::parameters() {
  std::vector<std::span<double>> out;
  for (auto& l : layers) {
    out.emplace_back(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
    out.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
  }
  if (norm) {
    out.emplace_back(norm->gain.data(), static_cast<std::size_t>(norm->gain.size()));
    out.emplace_back(norm->shift.data(), static_cast<std::size_t>(norm->shift.size()));
  }
  return out;
}

std::vector<std::span<const double>> DenseStack::parameters() const {
  std::vector<std::span<const double>> out;
  for (const auto& p : const_cast<DenseStack*>(this)->parameters()) out.emplace_back(p);
  return out;
}

nlohmann::json DenseStack::architecture() const {
  nlohmann::json widths = nlohmann::json::array();
  nlohmann::json acts = nlohmann::json::array();
  if (!layers.empty()) widths.push_back(input_width());
  for (const auto& l : layers) {
    widths.push_back(static_cast<std::size_t>(l.weight.cols()));
    acts.push_back(activation_name(l.activation));
  }
  return {{"widths", widths}, {"activations", acts}, {"layer_norm", norm.has_value()}};
}

DenseStack stack_from_architecture(const nlohmann::json& arch) {
  try {
    const auto widths = arch.at("widths").get<std::vector<std::size_t>>();
    std::vector<Activation> acts;
    for (const auto& a : arch.at("activations")) acts.push_back(parse_activation(a.get<std::string>()));
    std::mt19937_64 rng(0);
    auto s = DenseStack::make(widths, acts, arch.at("layer_norm").get<bool>(), rng);
    s.set_zero();
    if (s.norm) s.norm->gain.setOnes();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad stack architecture: ") + e.what());
  }
}

Matrix layer_norm(const Matrix& x, const RowVector& gain, const RowVector& shift,
                  LayerNormCache* cache) {
  const auto width = x.cols();
  if (width < 2) throw ConfigError("layer norm needs width >= 2");
  if (gain.size() != width || shift.size() != width)
    throw ConfigError("layer norm parameter width mismatch");
  const Eigen::VectorXd mean = x.rowwise().mean();
  const Matrix centered = x.colwise() - mean;
  const Eigen::VectorXd var = centered.array().square().rowwise().mean();
  const Eigen::VectorXd inv_std = (var.array() + kLayerNormEps).rsqrt();
  Matrix normalized = centered.array().colwise() * inv_std.array();
  Matrix out = (normalized.array().rowwise() * gain.array()).rowwise() + shift.array();
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->inv_std = inv_std;
  }
  return out;
}

Matrix layer_norm_backward(const LayerNormCache& cache, const RowVector& gain,
                           const Matrix& grad_out, RowVector& grad_gain, RowVector& grad_shift) {
  const Matrix& xhat = cache.normalized;
  if (grad_out.rows() != xhat.rows() || grad_out.cols() != xhat.cols())
    throw ConfigError("stale layer norm cache");
  grad_gain += (grad_out.array() * xhat.array()).colwise().sum().matrix();
  grad_shift += grad_out.colwise().sum();
  const Matrix dxhat = grad_out.array().rowwise() * gain.array();
  const double n = static_cast<double>(xhat.cols());
  const Eigen::VectorXd sum_d = dxhat.rowwise().sum();
  const Eigen::VectorXd sum_dx = (dxhat.array() * xhat.array()).rowwise().sum();
  Matrix dx = (n * dxhat.array()).colwise() - sum_d.array();
  dx -= (xhat.array().colwise() * sum_dx.array()).matrix();
  return dx.array().colwise() * (cache.inv_std.array() / n);
}

Matrix forward(const DenseStack& stack, const Matrix& x, StackCache* cache) {
  if (stack.layers.empty()) throw ConfigError("stack has no layers");
  if (static_cast<std::size_t>(x.cols()) != stack.input_width())
    throw ConfigError("input width " + std::to_string(x.cols()) + " does not match stack input " +
                      std::to_string(stack.input_width()));
  if (cache) {
    cache->inputs.clear();
    cache->pre.clear();
    cache->norm.reset();
  }
  Matrix h = x;
  for (const auto& l : stack.layers) {
    Matrix pre = (h * l.weight).rowwise() + l.bias;
    Matrix out = activate(pre, l.activation);
    if (cache) {
      cache->inputs.push_back(std::move(h));
      cache->pre.push_back(std::move(pre));
    }
    h = std::move(out);
  }
  if (stack.norm) {
    LayerNormCache nc;
    h = layer_norm(h, stack.norm->gain, stack.norm->shift, cache ? &nc : nullptr);
    if (cache) cache->norm = std::move(nc);
  }
  return h;
}

Matrix backward(const DenseStack& stack, const StackCache& cache, const Matrix& grad_out,
                DenseStack& grads) {
  if (cache.inputs.size() != stack.layers.size() || grads.layers.size() != stack.layers.size())
    throw ConfigError("stale cache for this stack");
  Matrix g = grad_out;
  if (stack.norm) {
    if (!cache.norm || !grads.norm) throw ConfigError("stale cache for this stack");
    g = layer_norm_backward(*cache.norm, stack.norm->gain, g, grads.norm->gain, grads.norm->shift);
  }
  for (std::size_t i = stack.layers.size(); i-- > 0;) {
    const auto& l = stack.layers[i];
    const Matrix& pre = cache.pre[i];
    if (g.rows() != pre.rows() || g.cols() != pre.cols())
      throw ConfigError("stale cache for this stack");
    Matrix dpre = g.cwiseProduct(activation_derivative(pre, l.activation));
    grads.layers[i].weight.noalias() += cache.inputs[i].transpose() * dpre;
    grads.layers[i].bias += dpre.colwise().sum();
    g = dpre * l.weight.transpose();
  }
  return g;
}

void adamw_step(OptimizerState& state, const std::vector<std::span<double>>& params,
                const std::vector<std::span<const double>>& grads, double lr) {
  if (params.size() != grads.size()) throw ConfigError("parameter and gradient counts differ");
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.size(), 0.0);
      state.v.emplace_back(p.size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ConfigError("optimizer state does not match parameters");
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (params[b].size() != grads[b].size() || state.m[b].size() != params[b].size())
      throw ConfigError("parameter block " + std::to_string(b) + " shape mismatch");
    for (double g : grads[b])
      if (!std::isfinite(g))
        throw NumericError("non-finite gradient in parameter block " + std::to_string(b) +
                           " at step " + std::to_string(state.step + 1));
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t b = 0; b < params.size(); ++b) {
    auto& m = state.m[b];
    auto& v = state.v[b];
    for (std::size_t i = 0; i < params[b].size(); ++i) {
      const double g = grads[b][i];
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      double& p = params[b][i];
      p -= lr * state.weight_decay * p;
      p -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + state.eps);
    }
  }
}

double cosine_lr(std::uint64_t step, std::uint64_t total_steps, double base_lr) {
  if (total_steps == 0) throw ConfigError("cosine schedule needs total_steps > 0");
  if (step > total_steps) throw ConfigError("cosine schedule step beyond total");
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

double global_norm(const std::vector<std::span<const double>>& grads) {
  double ss = 0.0;
  for (const auto& g : grads)
    for (double v : g) ss += v * v;
  return std::sqrt(ss);
}

double clip_global_norm(const std::vector<std::span<double>>& grads, double max_norm) {
  std::vector<std::span<const double>> view(grads.begin(), grads.end());
  const double norm = global_norm(view);
  if (std::isfinite(norm) && norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (const auto& g : grads)
      for (double& v : g) v *= scale;
  }
  return norm;
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (batch < 1) throw ConfigError("batch must be >= 1");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be > 0");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"lr", lr},           {"batch", batch},         {"patience", patience},
          {"max_epochs", max_epochs}, {"weight_decay", weight_decay}, {"clip_norm", clip_norm},
          {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.lr = j.value("lr", c.lr);
  c.batch = j.value("batch", c.batch);
  c.patience = j.value("patience", c.patience);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.seed = j.value("seed", c.seed);
  return c;
}

// Checkpoint layout: magic, u32 version, u64 manifest length, manifest JSON,
// u64 tensor count, shape table (u32 name length, name, u64 rows, u64 cols),
// then every tensor's values in row-major order as little-endian f64.
namespace {

constexpr char kMagic[8] = {'C', 'M', 'T', 'N', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::string& out, T value) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(value);
    std::reverse(bytes.begin(), bytes.end());
    out.append(bytes.data(), sizeof(T));
  } else {
    char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    out.append(bytes, sizeof(T));
  }
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    std::array<char, sizeof(T)> raw{};
    take(raw.data(), sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw.begin(), raw.end());
    return std::bit_cast<T>(raw);
  }

  std::string get_string(std::size_t n) {
    std::string s(n, '\0');
    take(s.data(), n);
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void take(char* dst, std::size_t n) {
    if (n > bytes_.size() - pos_) throw DataError("checkpoint is truncated");
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void Checkpoint::add(const std::string& name, const Matrix& m) {
  for (const auto& t : tensors)
    if (t.first == name) throw ConfigError("duplicate tensor '" + name + "'");
  tensors.emplace_back(name, m);
}

void Checkpoint::add_stack(const std::string& prefix, const DenseStack& stack) {
  for (std::size_t l = 0; l < stack.layers.size(); ++l) {
    const std::string base = prefix + ".layer" + std::to_string(l);
    add(base + ".weight", stack.layers[l].weight);
    add(base + ".bias", stack.layers[l].bias);
  }
  if (stack.norm) {
    add(prefix + ".norm.gain", stack.norm->gain);
    add(prefix + ".norm.shift", stack.norm->shift);
  }
}

const Matrix& Checkpoint::get(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.first == name) return t.second;
  throw DataError("checkpoint has no tensor '" + name + "'");
}

void Checkpoint::load_stack(const std::string& prefix, DenseStack& stack) const {
  auto fill = [&](const std::string& name, auto& dst) {
    const Matrix& src = get(name);
    if (src.rows() != dst.rows() || src.cols() != dst.cols())
      throw DataError("tensor '" + name + "' has shape " + std::to_string(src.rows()) + "x" +
                      std::to_string(src.cols()) + ", expected " + std::to_string(dst.rows()) +
                      "x" + std::to_string(dst.cols()));
    dst = src;
  };
  for (std::size_t l = 0; l < stack.layers.size(); ++l) {
    const std::string base = prefix + ".layer" + std::to_string(l);
    fill(base + ".weight", stack.layers[l].weight);
    fill(base + ".bias", stack.layers[l].bias);
  }
  if (stack.norm) {
    fill(prefix + ".norm.gain", stack.norm->gain);
    fill(prefix + ".norm.shift", stack.norm->shift);
  }
  if (!stack.all_finite()) throw DataError("stack '" + prefix + "' has non-finite parameters");
}

std::string Checkpoint::serialize() const {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kFormatVersion);
  const std::string m = manifest.dump();
  put<std::uint64_t>(out, m.size());
  out += m;
  put<std::uint64_t>(out, tensors.size());
  for (const auto& [name, t] : tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint64_t>(out, static_cast<std::uint64_t>(t.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(t.cols()));
  }
  for (const auto& entry : tensors) {
    const Matrix& t = entry.second;
    for (Eigen::Index r = 0; r < t.rows(); ++r)
      for (Eigen::Index c = 0; c < t.cols(); ++c) put<double>(out, t(r, c));
  }
  return out;
}

Checkpoint Checkpoint::deserialize(const std::string& bytes) {
  Reader in(bytes);
  if (in.get_string(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic)))
    throw DataError("not a checkpoint file (bad magic)");
  const auto version = in.get<std::uint32_t>();
  if (version != kFormatVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  const auto mlen = in.get<std::uint64_t>();
  try {
    ck.manifest = nlohmann::json::parse(in.get_string(mlen));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint manifest is not valid JSON: ") + e.what());
  }
  const auto count = in.get<std::uint64_t>();
  std::vector<std::pair<std::string, std::pair<std::uint64_t, std::uint64_t>>> table;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto nlen = in.get<std::uint32_t>();
    auto name = in.get_string(nlen);
    const auto rows = in.get<std::uint64_t>();
    const auto cols = in.get<std::uint64_t>();
    if (rows > bytes.size() || cols > bytes.size()) throw DataError("checkpoint shape is corrupt");
    table.emplace_back(std::move(name), std::make_pair(rows, cols));
  }
  for (const auto& [name, shape] : table) {
    Matrix t(static_cast<Eigen::Index>(shape.first), static_cast<Eigen::Index>(shape.second));
    for (Eigen::Index r = 0; r < t.rows(); ++r)
      for (Eigen::Index c = 0; c < t.cols(); ++c) t(r, c) = in.get<double>();
    ck.tensors.emplace_back(name, std::move(t));
  }
  if (!in.done()) throw DataError("checkpoint has trailing bytes");
  return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const { atomic_write(path, serialize()); }

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  return deserialize(read_file(path));
}

}  // namespace cometnet
