#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "shiftbench/autodiff.hpp"
#include "shiftbench/tensor.hpp"

namespace shiftbench {

// Builds the scalar loss on `tape` from the parameter leaves. Must be
// deterministic: it is re-run for every finite-difference probe.
using LossBuilder = std::function<ad::Var(ad::Tape& tape, std::span<const ad::Var> params)>;

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Coordinates probed per parameter tensor; 0 checks every coordinate.
  std::size_t max_coords_per_param = 0;
  // Denominator floor so exactly-zero gradients compare as absolute error. Central
  // differences carry roundoff near eps * |loss| / step (about 2e-11 for unit losses),
  // which has to sit below tolerance * abs_floor.
  double abs_floor = 1e-6;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  std::size_t worst_param = 0;
  std::size_t worst_coord = 0;
  bool passed = true;
};

// Central differences against the tape's analytic gradients.
// rel = |analytic - numeric| / max(|analytic|, |numeric|, abs_floor).
GradCheckReport gradient_check(std::span<const Tensor> params, const LossBuilder& loss_fn,
                               const GradCheckOptions& options = {});

// Analytic gradients of loss_fn at params, one tensor per parameter.
std::vector<Tensor> analytic_gradients(std::span<const Tensor> params, const LossBuilder& loss_fn);

}  // namespace shiftbench
