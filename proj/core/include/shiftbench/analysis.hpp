#pragma once

// Divergence and bound diagnostics over finite hypothesis classes, with
// empirical samples standing in for the domain distributions.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "shiftbench/domains.hpp"
#include "shiftbench/error.hpp"
#include "shiftbench/tensor.hpp"

namespace shiftbench {

using Hypothesis = std::function<int(std::span<const double>)>;

struct FiniteHypothesisClass {
  std::vector<Hypothesis> hypotheses;
  std::vector<std::string> names;

  std::size_t size() const { return hypotheses.size(); }
  void add(std::string name, Hypothesis h);
  // Throws ConfigError for an empty class or a names/hypotheses mismatch.
  void validate() const;
};

// x[dim] > t -> 1 (and the flipped orientation when both_orientations).
FiniteHypothesisClass threshold_class(std::span<const double> thresholds, std::size_t dim = 0,
                                      bool both_orientations = true);
// Axis-aligned stumps: for every dimension, `per_dim` thresholds at evenly
// spaced empirical quantiles of `x`, both orientations.
FiniteHypothesisClass stump_class(const Tensor& x, std::size_t per_dim);

// (|H|, n) matrix of 0/1 predictions, row per hypothesis.
std::vector<std::vector<std::uint8_t>> prediction_table(const FiniteHypothesisClass& h, const Tensor& x);

// 2 * max over ordered pairs (h, h') of |dis_S(h, h') - dis_T(h, h')|, the
// disagreement rates being counts divided by sample size.
double hdh_divergence(const FiniteHypothesisClass& h, const Tensor& s, const Tensor& t);

// 0-1 risk: errors / n.
double empirical_risk(const Hypothesis& h, const LabeledSet& data);
// min over h of R_s(h) + R_t(h).
double lambda_h(const FiniteHypothesisClass& h, const LabeledSet& s, const LabeledSet& t);

struct BoundReport {
  std::size_t hypothesis = 0;
  std::string name;
  double target_risk = 0.0;
  double source_risk = 0.0;
  double divergence = 0.0;
  double lambda = 0.0;
  double rhs = 0.0;
  bool holds = true;
};

class BoundViolation : public Error {
 public:
  BoundViolation(const BoundReport& r)
      : Error("bound violated for hypothesis " + std::to_string(r.hypothesis) + " (" + r.name + ")"), report_(r) {}
  const BoundReport& report() const { return report_; }

 private:
  BoundReport report_;
};

// R_t(h) <= R_s(h) + d/2 + lambda for each h. Throws BoundViolation naming
// the first h for which it fails (which would mean an estimator bug).
std::vector<BoundReport> verify_bound(const FiniteHypothesisClass& h, const LabeledSet& s, const LabeledSet& t);

// Proxy A-distance 2 (1 - 2 eps), clamped to [0, 2]. Both feature sets are
// subsampled to the same size, split 50/50, standardized with train
// statistics, and separated by a logistic regression (500 full-batch
// momentum SGD steps); eps is its test error. Needs >= 20 rows per domain.
double proxy_a_distance(const Tensor& features_s, const Tensor& features_t, std::uint64_t seed);
// 2 (1 - 2 eps) clamped to [0, 2].
double a_distance_from_error(double error);

}  // namespace shiftbench
