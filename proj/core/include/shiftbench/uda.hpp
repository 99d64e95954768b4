#pragma once

// Domain-adaptation loss terms under the same LossTerm contract as the SSL
// regularizers.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "shiftbench/models.hpp"
#include "shiftbench/ssl.hpp"

namespace shiftbench {

enum class UdaMethod { dann, cdan, mcc, importance_weighting };

const char* to_string(UdaMethod method);
std::optional<UdaMethod> parse_uda_method(const std::string& name);

struct UdaConfig {
  UdaMethod method = UdaMethod::dann;
  double weight = 1.0;
  GrlSchedule grl;
  double mcc_temperature = 2.5;
  std::optional<SslConfig> combine_with_consistency;

  void validate() const;
  friend bool operator==(const UdaConfig& a, const UdaConfig& b) {
    return a.method == b.method && a.weight == b.weight && a.grl.lambda_max == b.grl.lambda_max &&
           a.mcc_temperature == b.mcc_temperature && a.combine_with_consistency == b.combine_with_consistency;
  }
};

// 0.5 * (BCE(D(z_s), 1) + BCE(D(z_t), 0)), each averaged over its batch; the
// discriminator input passes through gradient reversal with coefficient lambda.
LossTerm dann_loss(const ModelGraph& graph, ad::Var z_s, ad::Var z_t, double lambda);
// Same with the discriminator fed flatten(z outer p).
LossTerm cdan_loss(const ModelGraph& graph, ad::Var z_s, ad::Var p_s, ad::Var z_t, ad::Var p_t, double lambda);

// Minimum class confusion on target logits. Per-sample weights
// 1 + exp(-H_i) are computed from detached predictions and rescaled to sum to
// B. Confusion rows that are identically zero normalize to zero.
LossTerm mcc_loss(ad::Var target_logits, double temperature);

// mean_i w_i * CE(f(x_i), y_i). Throws DataError for a negative weight.
LossTerm importance_weighted_sup(const ModelGraph& graph, const Tensor& x, const std::vector<int>& y,
                                 std::span<const double> weights);

// Both terms, unchanged; the trainer sums weight * value over the list.
std::vector<LossTerm> combine_uda_ssl(LossTerm uda_term, LossTerm ssl_term);

// Density ratio p_t/p_s estimated from discriminator odds, (1 - D) / D scaled
// by n_s / n_t. Diagnostic only.
std::vector<double> discriminator_density_ratio(const ModelBundle& bundle, const Tensor& x, double n_source,
                                                double n_target);

}  // namespace shiftbench
