#include "shiftbench/uda.hpp"

#include <cmath>

#include "shiftbench/error.hpp"

namespace shiftbench {

const char* to_string(UdaMethod method) {
  switch (method) {
    case UdaMethod::dann: return "dann";
    case UdaMethod::cdan: return "cdan";
    case UdaMethod::mcc: return "mcc";
    case UdaMethod::importance_weighting: return "importance_weighting";
  }
  return "?";
}

std::optional<UdaMethod> parse_uda_method(const std::string& name) {
  if (name == "dann") return UdaMethod::dann;
  if (name == "cdan") return UdaMethod::cdan;
  if (name == "mcc") return UdaMethod::mcc;
  if (name == "importance_weighting") return UdaMethod::importance_weighting;
  return std::nullopt;
}

void UdaConfig::validate() const {
  if (!(weight >= 0.0)) throw ConfigError("uda weight must be >= 0");
  if (!(mcc_temperature > 0.0)) throw ConfigError("mcc temperature must be > 0");
  if (combine_with_consistency) combine_with_consistency->validate();
}

namespace {

ad::Var domain_bce(ad::Var prob_s, ad::Var prob_t) {
  const Tensor ones(prob_s.shape(), 1.0);
  const Tensor zeros(prob_t.shape(), 0.0);
  ad::Var ls = ad::mean(ad::binary_cross_entropy(prob_s, ones));
  ad::Var lt = ad::mean(ad::binary_cross_entropy(prob_t, zeros));
  return ad::scale(ad::add(ls, lt), 0.5);
}

}  // namespace

LossTerm dann_loss(const ModelGraph& graph, ad::Var z_s, ad::Var z_t, double lambda) {
  if (z_s.value().rows() == 0 || z_t.value().rows() == 0) throw ShapeError("dann_loss: empty feature batch");
  ad::Var ds = graph.discriminate(z_s, std::nullopt, lambda);
  ad::Var dt = graph.discriminate(z_t, std::nullopt, lambda);
  return {"dann", domain_bce(ds, dt), 1.0, graph.route(), 1.0};
}

LossTerm cdan_loss(const ModelGraph& graph, ad::Var z_s, ad::Var p_s, ad::Var z_t, ad::Var p_t, double lambda) {
  if (z_s.value().rows() != p_s.value().rows() || z_t.value().rows() != p_t.value().rows()) {
    throw ShapeError("cdan_loss: features and predictions disagree on batch size");
  }
  ad::Var ds = graph.discriminate(z_s, p_s, lambda);
  ad::Var dt = graph.discriminate(z_t, p_t, lambda);
  return {"cdan", domain_bce(ds, dt), 1.0, graph.route(), 1.0};
}

LossTerm mcc_loss(ad::Var target_logits, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("mcc_loss: temperature must be > 0");
  const Tensor& lv = target_logits.value();
  if (lv.rank() != 2 || lv.rows() == 0 || lv.cols() < 2) throw ShapeError("mcc_loss: expected (B >= 1, K >= 2) logits");
  ad::Tape& tape = *target_logits.tape();
  const std::size_t b = lv.rows(), k = lv.cols();

  ad::Var y = ad::softmax(target_logits, temperature);
  const Tensor& yv = y.value();
  Tensor w(Shape{b, 1});
  double wsum = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    double h = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double p = yv.at(i, j);
      if (p > 0.0) h -= p * std::log(p);
    }
    w[i] = 1.0 + std::exp(-h);
    wsum += w[i];
  }
  for (std::size_t i = 0; i < b; ++i) w[i] = static_cast<double>(b) * w[i] / wsum;

  ad::Var weighted = ad::mul(y, tape.constant(std::move(w)));
  ad::Var confusion = ad::matmul(ad::transpose(weighted), y);  // (K, K)
  // Rows that are exactly zero stay zero instead of 0/0.
  ad::Var row_sums = ad::add_scalar(ad::reshape(ad::sum_rows(confusion), Shape{k, 1}), 1e-300);
  ad::Var normalized = ad::div(confusion, row_sums);
  Tensor off_diag(Shape{k, k}, 1.0);
  for (std::size_t j = 0; j < k; ++j) off_diag.at(j, j) = 0.0;
  ad::Var loss = ad::scale(ad::sum(ad::mul(normalized, tape.constant(std::move(off_diag)))), 1.0 / static_cast<double>(k));
  return {"mcc", loss, 1.0, Route::full_model, 1.0};
}

LossTerm importance_weighted_sup(const ModelGraph& graph, const Tensor& x, const std::vector<int>& y,
                                 std::span<const double> weights) {
  if (weights.size() != y.size() || x.rows() != y.size()) {
    throw ShapeError("importance_weighted_sup: need one weight and one label per sample");
  }
  for (double w : weights) {
    if (!(w >= 0.0)) throw DataError("importance_weighted_sup: weights must be non-negative");
  }
  ad::Var ce = ad::cross_entropy(graph.logits(x), one_hot(y, graph.bundle().config.num_classes));
  ad::Var wv = graph.tape().constant(Tensor::vector(std::vector<double>(weights.begin(), weights.end())));
  return {"importance_weighting", ad::mean(ad::mul(ce, wv)), 1.0, Route::full_model, 1.0};
}

std::vector<LossTerm> combine_uda_ssl(LossTerm uda_term, LossTerm ssl_term) {
  if (!uda_term.value.value().all_finite() || !ssl_term.value.value().all_finite()) {
    throw Error("combine_uda_ssl: terms must be finite");
  }
  return {std::move(uda_term), std::move(ssl_term)};
}

std::vector<double> discriminator_density_ratio(const ModelBundle& bundle, const Tensor& x, double n_source,
                                                double n_target) {
  ad::Tape tape;
  ModelGraph graph(tape, bundle, Route::full_model, false);
  ad::Var z = graph.features(graph.input(x));
  std::optional<ad::Var> cond;
  if (bundle.config.discriminator == DiscriminatorInput::conditioned) cond = ad::softmax(graph.classify(z));
  const Tensor& d = graph.discriminate(z, cond, 0.0).value();
  std::vector<double> out(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double p = std::min(std::max(d[i], 1e-12), 1.0 - 1e-12);
    out[i] = (1.0 - p) / p * (n_source / n_target);
  }
  return out;
}

}  // namespace shiftbench
