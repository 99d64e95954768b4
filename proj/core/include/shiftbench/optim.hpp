#pragma once

#include <span>
#include <vector>

#include "shiftbench/tensor.hpp"

namespace shiftbench {

// Annealed step size 0.01 / (1 + 10p)^0.75 scaled by base_lr / 0.01.
// Throws ConfigError for p outside [0, 1].
double lr_at(double progress, double base_lr = 0.01);

struct OptimizerConfig {
  double momentum = 0.9;
  double base_lr = 0.01;
  // Applied to classifier (h) parameters only.
  double classifier_lr_multiplier = 1.0;
  double weight_decay = 0.0;
  bool nesterov = false;
};

struct OptimizerState {
  OptimizerConfig config;
  std::vector<Tensor> velocity;
  double progress = 0.0;

  OptimizerState() = default;
  OptimizerState(OptimizerConfig cfg, std::span<const Tensor> params);

  // Progress is monotone over a run; moving it backwards throws.
  void set_progress(double p);
  double learning_rate() const { return lr_at(progress, config.base_lr); }
};

// v <- mu * v + (grad + wd * theta);  theta <- theta - lr * scale_i * v
// (Nesterov: theta <- theta - lr * scale_i * (grad + mu * v)).
// `lr_scale` is empty (all 1) or one multiplier per parameter.
void sgd_momentum_step(std::span<Tensor> params, std::span<const Tensor> grads, OptimizerState& state,
                       double lr, std::span<const double> lr_scale = {});

}  // namespace shiftbench
