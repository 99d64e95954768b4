#include "shiftbench/optim.hpp"

#include <cmath>
#include <string>

#include "shiftbench/error.hpp"

namespace shiftbench {

double lr_at(double progress, double base_lr) {
  if (!(progress >= 0.0 && progress <= 1.0)) {
    throw ConfigError("lr_at: progress " + std::to_string(progress) + " outside [0, 1]");
  }
  return base_lr * std::pow(1.0 + 10.0 * progress, -0.75);
}

OptimizerState::OptimizerState(OptimizerConfig cfg, std::span<const Tensor> params) : config(cfg) {
  velocity.reserve(params.size());
  for (const Tensor& p : params) velocity.emplace_back(p.shape(), 0.0);
}

void OptimizerState::set_progress(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("optimizer progress outside [0, 1]");
  if (p < progress) throw ConfigError("optimizer progress must not decrease");
  progress = p;
}

void sgd_momentum_step(std::span<Tensor> params, std::span<const Tensor> grads, OptimizerState& state,
                       double lr, std::span<const double> lr_scale) {
  if (params.size() != grads.size() || params.size() != state.velocity.size()) {
    throw ShapeError("sgd_momentum_step: " + std::to_string(params.size()) + " params, " +
                     std::to_string(grads.size()) + " grads, " + std::to_string(state.velocity.size()) +
                     " velocity buffers");
  }
  if (!lr_scale.empty() && lr_scale.size() != params.size()) {
    throw ShapeError("sgd_momentum_step: lr_scale size mismatch");
  }
  const double mu = state.config.momentum;
  const double wd = state.config.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& theta = params[i];
    const Tensor& g = grads[i];
    Tensor& v = state.velocity[i];
    if (theta.shape() != g.shape() || theta.shape() != v.shape()) {
      throw ShapeError("sgd_momentum_step: parameter " + std::to_string(i) + " has shape " +
                       shape_string(theta.shape()) + " but gradient " + shape_string(g.shape()));
    }
    const double step = lr * (lr_scale.empty() ? 1.0 : lr_scale[i]);
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const double d = g[j] + wd * theta[j];
      v[j] = mu * v[j] + d;
      theta[j] -= step * (state.config.nesterov ? d + mu * v[j] : v[j]);
    }
  }
}

}  // namespace shiftbench
