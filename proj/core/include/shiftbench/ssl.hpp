#pragma once

// Semi-supervised regularizers. Each one builds a scalar loss on the tape of
// the given ModelGraph from an unlabeled batch (MixMatch also takes the
// labeled batch). Student predictions go through ModelGraph::classify_reg, so
// the graph's route decides whether h's parameters see these gradients.

#include <optional>
#include <string>
#include <vector>

#include "shiftbench/autodiff.hpp"
#include "shiftbench/domains.hpp"
#include "shiftbench/models.hpp"
#include "shiftbench/random.hpp"

namespace shiftbench {

enum class SslMethod { entropy_min, self_training, pi_model, mean_teacher, vat, mixmatch, uda_consistency, fixmatch };

const char* to_string(SslMethod method);
std::optional<SslMethod> parse_ssl_method(const std::string& name);
const std::vector<SslMethod>& all_ssl_methods();

struct SslConfig {
  SslMethod method = SslMethod::fixmatch;
  double weight = 1.0;
  // Linear ramp 0 -> weight over this fraction of training.
  double ramp_up_fraction = 0.1;
  double confidence_threshold = 0.95;
  double sharpen_temperature = 0.5;
  double mixup_alpha = 0.75;
  std::size_t mixmatch_augmentations = 2;
  double vat_epsilon = 1.0;
  double vat_xi = 1e-6;
  int vat_power_iters = 1;
  double ema_alpha = 0.99;
  AugmentationSpec weak = AugmentationSpec::weak();
  AugmentationSpec strong = AugmentationSpec::strong();

  void validate() const;
  // weight * min(1, progress / ramp_up_fraction)
  double effective_weight(double progress) const;
  friend bool operator==(const SslConfig&, const SslConfig&) = default;
};

struct LossTerm {
  std::string name;
  ad::Var value;
  double weight = 1.0;
  Route route = Route::full_model;
  // Fraction of the batch contributing; 1 for unmasked losses.
  double mask_rate = 1.0;
};

// p_k^(1/T) / sum_j p_j^(1/T), rowwise. T == 1 returns p unchanged.
Tensor sharpen(const Tensor& p, double temperature);
// lambda * a + (1 - lambda) * b
Tensor mixup(const Tensor& a, const Tensor& b, double lambda);

LossTerm entropy_min(const ModelGraph& graph, const Tensor& x_u);
LossTerm self_training(const ModelGraph& graph, const Tensor& x_u, double threshold);
LossTerm pi_model(const ModelGraph& graph, const Tensor& x_u, const AugmentationSpec& aug, Rng& rng);
LossTerm mean_teacher(const ModelGraph& graph, const Tensor& x_u, const AugmentationSpec& aug, Rng& rng);
LossTerm vat(const ModelGraph& graph, const Tensor& x_u, double epsilon, double xi, int power_iters, Rng& rng);

// Unit-norm adversarial directions found by power iteration, one per row.
Tensor vat_direction(const ModelGraph& graph, const Tensor& x_u, double xi, int power_iters, Rng& rng);

struct MixMatchParts {
  LossTerm supervised;    // cross-entropy on mixed labeled rows
  LossTerm unsupervised;  // squared error on mixed unlabeled rows, divided by K
  double lambda = 1.0;    // the max(l, 1 - l) mixing coefficient used
};

MixMatchParts mixmatch_parts(const ModelGraph& graph, const Tensor& x_l, const std::vector<int>& y_l,
                             const Tensor& x_u, const SslConfig& config, Rng& rng);
// supervised + unsupervised_weight * unsupervised as one term.
LossTerm mixmatch(const ModelGraph& graph, const Tensor& x_l, const std::vector<int>& y_l, const Tensor& x_u,
                  const SslConfig& config, double unsupervised_weight, Rng& rng);

LossTerm uda_consistency(const ModelGraph& graph, const Tensor& x_u, double temperature, double threshold,
                         const AugmentationSpec& strong, Rng& rng);
LossTerm fixmatch(const ModelGraph& graph, const Tensor& x_u, double threshold, const AugmentationSpec& weak,
                  const AugmentationSpec& strong, Rng& rng);

// Dispatches on config.method for every method except MixMatch, whose
// labeled half the trainer handles (see mixmatch_parts).
LossTerm ssl_regularizer(const ModelGraph& graph, const SslConfig& config, const Tensor& x_u, Rng& rng);

}  // namespace shiftbench
