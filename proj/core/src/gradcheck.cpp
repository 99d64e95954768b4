#include "shiftbench/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "shiftbench/random.hpp"

namespace shiftbench {

namespace {

double evaluate(std::span<const Tensor> params, const LossBuilder& loss_fn) {
  ad::Tape tape;
  std::vector<ad::Var> leaves;
  leaves.reserve(params.size());
  for (const Tensor& p : params) leaves.push_back(tape.constant(p));
  return loss_fn(tape, leaves).value().item();
}

}  // namespace

std::vector<Tensor> analytic_gradients(std::span<const Tensor> params, const LossBuilder& loss_fn) {
  ad::Tape tape;
  std::vector<ad::Var> leaves;
  leaves.reserve(params.size());
  for (const Tensor& p : params) leaves.push_back(tape.variable(p));
  ad::Var loss = loss_fn(tape, leaves);
  tape.backward(loss);
  std::vector<Tensor> grads;
  grads.reserve(leaves.size());
  for (const ad::Var& v : leaves) grads.push_back(v.grad());
  return grads;
}

GradCheckReport gradient_check(std::span<const Tensor> params, const LossBuilder& loss_fn,
                               const GradCheckOptions& options) {
  const std::vector<Tensor> analytic = analytic_gradients(params, loss_fn);
  std::vector<Tensor> probe(params.begin(), params.end());
  Rng rng(options.seed);
  GradCheckReport report;

  for (std::size_t pi = 0; pi < probe.size(); ++pi) {
    std::vector<std::size_t> coords(probe[pi].size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (options.max_coords_per_param && coords.size() > options.max_coords_per_param) {
      rng.shuffle(coords);
      coords.resize(options.max_coords_per_param);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t c : coords) {
      const double original = probe[pi][c];
      probe[pi][c] = original + options.step;
      const double plus = evaluate(probe, loss_fn);
      probe[pi][c] = original - options.step;
      const double minus = evaluate(probe, loss_fn);
      probe[pi][c] = original;

      const double numeric = (plus - minus) / (2.0 * options.step);
      const double a = analytic[pi][c];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.abs_floor});
      const double rel = std::abs(a - numeric) / denom;
      ++report.coords_checked;
      if (rel > report.max_rel_error || !std::isfinite(rel)) {
        report.max_rel_error = std::isfinite(rel) ? rel : INFINITY;
        report.worst_param = pi;
        report.worst_coord = c;
      }
    }
  }
  report.passed = report.max_rel_error < options.tolerance;
  return report;
}

}  // namespace shiftbench
