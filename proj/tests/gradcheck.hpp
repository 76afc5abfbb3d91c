#pragma once

// Central finite-difference checks of analytic gradients.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "cometnet/forecaster.hpp"
#include "cometnet/neural.hpp"

namespace gradcheck {

struct Result {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t kink_retries = 0;  // entries re-measured with a smaller step
};

// Relative error |a - n| / max(|a|, |n|); pairs where both magnitudes are
// below `floor` are compared absolutely against `floor` instead.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  const double scale = std::max(std::abs(analytic), std::abs(numeric));
  if (scale < floor) return std::abs(analytic - numeric) / floor;
  return std::abs(analytic - numeric) / scale;
}

// Perturbs every entry of `params` in place and compares the central
// difference of `loss` with `analytic`. When the one-sided differences
// disagree the step straddles a leaky-ReLU kink, so the step shrinks until
// they agree (down to 1e-7) before comparing.
inline void compare(const std::function<double()>& loss, std::span<double> params,
                    std::span<const double> analytic, Result& r, double eps = 1e-5) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double keep = params[i];
    const double base = loss();
    double numeric = 0.0;
    for (double step = eps;; step *= 0.1) {
      params[i] = keep + step;
      const double up = loss();
      params[i] = keep - step;
      const double down = loss();
      params[i] = keep;
      numeric = (up - down) / (2 * step);
      const double forward = (up - base) / step, backward = (base - down) / step;
      if (relative_error(forward, backward, 1e-4) < 1e-3 || step < 1e-7) break;
      if (step == eps) ++r.kink_retries;
    }
    r.max_rel_error = std::max(r.max_rel_error, relative_error(analytic[i], numeric));
    ++r.checked;
  }
}

inline cometnet::Matrix random_matrix(std::mt19937_64& rng, long rows, long cols, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  cometnet::Matrix m(rows, cols);
  for (long i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// Gradient of sum(forward(stack, x) .* weights) for parameters and input.
inline Result check_stack(cometnet::DenseStack stack, cometnet::Matrix x, std::mt19937_64& rng) {
  using namespace cometnet;
  const Matrix w = random_matrix(rng, x.rows(), static_cast<long>(stack.output_width()));
  auto loss = [&] { return forward(stack, x).cwiseProduct(w).sum(); };
  StackCache cache;
  forward(stack, x, &cache);
  DenseStack grads = stack.zeros_like();
  Matrix dx = backward(stack, cache, w, grads);
  Result r;
  auto params = stack.parameters();
  const auto analytic = std::as_const(grads).parameters();
  for (std::size_t p = 0; p < params.size(); ++p) compare(loss, params[p], analytic[p], r);
  compare(loss, std::span<double>(x.data(), static_cast<std::size_t>(x.size())),
          std::span<const double>(dx.data(), static_cast<std::size_t>(dx.size())), r);
  return r;
}

struct MicroBatch {
  cometnet::Matrix x, y;
  std::vector<std::size_t> labels;
  std::vector<double> positions;
};

inline MicroBatch micro_batch(std::mt19937_64& rng, const cometnet::ForecasterConfig& c,
                              std::size_t rows) {
  MicroBatch b;
  b.x = random_matrix(rng, static_cast<long>(rows), static_cast<long>(c.lookback));
  b.y = random_matrix(rng, static_cast<long>(rows), static_cast<long>(c.horizon));
  std::uniform_int_distribution<std::size_t> label(0, c.experts - 1);
  std::uniform_real_distribution<double> pos(0.0, 1.0);
  for (std::size_t i = 0; i < rows; ++i) {
    b.labels.push_back(label(rng));
    b.positions.push_back(pos(rng));
  }
  return b;
}

// Every parameter of the model against L_final plus the gate loss, so that
// routing, position, fusion, heads and embedder all receive gradient.
inline Result check_model(cometnet::ForecasterModel& model, const MicroBatch& b) {
  using namespace cometnet;
  const double gamma = model.config.gamma, alpha = model.config.alpha_pos;
  auto loss = [&] {
    const auto pass = forward_model(model, b.x);
    return loss_final(pass.output, b.y, pass.probs, gamma) +
           gate_loss_batch(pass.probs, pass.position, b.labels, b.positions, alpha);
  };
  const auto pass = forward_model(model, b.x);
  OutputGrads d;
  loss_final(pass.output, b.y, pass.probs, gamma, &d.output, &d.probs);
  gate_loss_batch(pass.probs, pass.position, b.labels, b.positions, alpha, &d.logits, &d.position);
  ModelParameters grads = model.params.zeros_like();
  backward_model(model, pass, d, grads);
  Result r;
  auto params = model.params.parameters();
  const auto analytic = std::as_const(grads).parameters();
  for (std::size_t p = 0; p < params.size(); ++p) compare(loss, params[p], analytic[p], r);
  return r;
}

}  // namespace gradcheck
