#include "shiftbench/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "shiftbench/error.hpp"

namespace shiftbench {

// --- method strings ------------------------------------------------------------

const std::vector<std::string>& method_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v{"source_only", "oracle"};
    for (SslMethod m : all_ssl_methods()) v.emplace_back(to_string(m));
    for (UdaMethod m : {UdaMethod::dann, UdaMethod::cdan, UdaMethod::mcc, UdaMethod::importance_weighting}) {
      v.emplace_back(to_string(m));
    }
    return v;
  }();
  return names;
}

namespace {

[[noreturn]] void unknown_method(const std::string& text) {
  std::string msg = "unknown method '" + text + "'; valid names:";
  for (const auto& n : method_names()) msg += " " + n;
  msg += " (hybrids as <uda>+<ssl>, route suffix @full or @g)";
  throw ConfigError(msg);
}

SslConfig ssl_config_for(SslMethod m) {
  SslConfig c;
  c.method = m;
  return c;
}

}  // namespace

MethodSpec MethodSpec::parse(const std::string& text) {
  MethodSpec spec;
  std::string body = text;
  if (auto at = body.find('@'); at != std::string::npos) {
    try {
      spec.route = parse_route(body.substr(at + 1));
    } catch (const Error&) {
      throw ConfigError("bad route suffix in method '" + text + "' (use @full or @g)");
    }
    body = body.substr(0, at);
  }
  if (body == "source_only" || body == "oracle") {
    spec.baseline = body == "oracle" ? Baseline::oracle : Baseline::source_only;
    return spec;
  }
  spec.baseline = Baseline::none;
  std::string first = body, second;
  if (auto plus = body.find('+'); plus != std::string::npos) {
    first = body.substr(0, plus);
    second = body.substr(plus + 1);
    if (second.empty() || second.find('+') != std::string::npos) unknown_method(text);
  }
  if (second.empty()) {
    if (auto s = parse_ssl_method(first)) {
      spec.ssl = ssl_config_for(*s);
    } else if (auto u = parse_uda_method(first)) {
      spec.uda = UdaConfig{};
      spec.uda->method = *u;
    } else {
      unknown_method(text);
    }
    return spec;
  }
  auto u = parse_uda_method(first);
  auto s = parse_ssl_method(second);
  if (!u || !s) unknown_method(text);
  if (*u == UdaMethod::importance_weighting || *s == SslMethod::mixmatch) {
    throw ConfigError("hybrid '" + text + "' is not supported");
  }
  spec.uda = UdaConfig{};
  spec.uda->method = *u;
  spec.ssl = ssl_config_for(*s);
  return spec;
}

std::string MethodSpec::name() const {
  std::string out;
  if (baseline == Baseline::source_only) out = "source_only";
  else if (baseline == Baseline::oracle) out = "oracle";
  else {
    if (uda) out = to_string(uda->method);
    if (ssl) out += (out.empty() ? "" : "+") + std::string(to_string(ssl->method));
  }
  if (route) out += route == Route::full_model ? "@full" : "@g";
  return out;
}

void TrainConfig::validate() const {
  if (total_steps == 0) throw ConfigError("total_steps must be > 0");
  if (batch_labeled == 0 || batch_unlabeled == 0) throw ConfigError("batch sizes must be >= 1");
  if (eval_every == 0) throw ConfigError("eval_every must be >= 1");
  if (!(uda_ramp_up_fraction >= 0.0)) throw ConfigError("uda ramp-up fraction must be >= 0");
  if (!(optimizer.base_lr > 0.0)) throw ConfigError("learning rate must be > 0");
  if (!(optimizer.momentum >= 0.0 && optimizer.momentum < 1.0)) throw ConfigError("momentum must be in [0,1)");
  if (!(optimizer.classifier_lr_multiplier > 0.0)) throw ConfigError("classifier lr multiplier must be > 0");
  if (method.baseline != Baseline::none && (method.ssl || method.uda)) {
    throw ConfigError("baselines take no regularizer");
  }
  if (method.baseline == Baseline::none && !method.ssl && !method.uda) throw ConfigError("method has no loss term");
  if (method.ssl) method.ssl->validate();
  if (method.uda) method.uda->validate();
}

double HistoryRecord::mask_rate() const {
  double r = 1.0;
  for (const auto& t : terms) r = std::min(r, t.mask_rate);
  return r;
}

const char* to_string(Split split) { return split == Split::transductive ? "transductive" : "inductive"; }

// --- evaluation ------------------------------------------------------------------

std::vector<int> argmax_rows(const Tensor& p) {
  std::vector<int> out(p.rows());
  for (std::size_t i = 0; i < p.rows(); ++i) {
    auto row = p.row(i);
    out[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

Metrics score_predictions(const std::vector<int>& truth, const std::vector<int>& predicted, std::size_t k) {
  if (truth.empty()) throw DataError("evaluate: empty split");
  if (truth.size() != predicted.size()) throw ShapeError("evaluate: prediction count mismatch");
  std::vector<std::size_t> seen(k, 0), hit(k, 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto c = static_cast<std::size_t>(truth[i]);
    if (c >= k) throw DataError("evaluate: label out of range");
    ++seen[c];
    if (truth[i] == predicted[i]) {
      ++hit[c];
      ++correct;
    }
  }
  Metrics m;
  m.accuracy = static_cast<double>(correct) / static_cast<double>(truth.size());
  double recall = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < k; ++c) {
    if (seen[c] == 0) continue;
    recall += static_cast<double>(hit[c]) / static_cast<double>(seen[c]);
    ++present;
  }
  m.category_accuracy = recall / static_cast<double>(present);
  return m;
}

Metrics evaluate(const ModelBundle& bundle, const DomainDataset& dataset, Split split) {
  const Tensor& x = split == Split::transductive ? dataset.target_unlabeled() : dataset.target_test().x;
  const std::vector<int>& y = split == Split::transductive ? dataset.hidden_target_labels(LabelAccess::evaluation())
                                                            : dataset.target_test().y;
  if (y.empty()) throw DataError(std::string("evaluate: empty ") + to_string(split) + " split");
  return score_predictions(y, argmax_rows(predict(bundle, x)), dataset.metadata().num_classes);
}

// --- routing -----------------------------------------------------------------------

std::vector<Tensor> route_gradients(const ModelBundle& bundle, const TermBuilder& build, Route route) {
  ad::Tape tape;
  ModelGraph graph(tape, bundle, route);
  std::vector<LossTerm> terms = build(graph);
  if (terms.empty()) throw Error("route_gradients: no loss terms");
  ad::Var total = terms[0].value;
  for (std::size_t i = 1; i < terms.size(); ++i) total = ad::add(total, ad::scale(terms[i].value, terms[i].weight));
  tape.backward(total);
  return graph.gradients();
}

// --- training loop -------------------------------------------------------------------

namespace {

// Cycles through n indices, reshuffling at the start of every pass.
class BatchCycler {
 public:
  BatchCycler(std::size_t n, Rng rng) : order_(n), rng_(std::move(rng)) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    pos_ = n;
  }

  std::vector<std::size_t> next(std::size_t batch) {
    std::vector<std::size_t> out;
    out.reserve(batch);
    while (out.size() < batch) {
      if (pos_ == order_.size()) {
        rng_.shuffle(order_);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  std::vector<std::size_t> order_;
  Rng rng_;
  std::size_t pos_ = 0;
};

void check_finite(const ad::Var& v, std::size_t step, const std::string& term) {
  if (!v.value().all_finite()) throw DivergenceError(static_cast<long>(step), term);
}

}  // namespace

TrainResult train(const DomainDataset& dataset, const TrainConfig& config) {
  config.validate();
  const MethodSpec& method = config.method;
  const DatasetMetadata& meta = dataset.metadata();

  ModelConfig mc = config.model;
  mc.input_dim = meta.input_dim;
  mc.num_classes = meta.num_classes;
  mc.discriminator = DiscriminatorInput::none;
  if (method.uda && method.uda->method == UdaMethod::dann) mc.discriminator = DiscriminatorInput::features;
  if (method.uda && method.uda->method == UdaMethod::cdan) mc.discriminator = DiscriminatorInput::conditioned;
  mc.with_teacher = method.ssl && method.ssl->method == SslMethod::mean_teacher;
  mc.validate();

  // Labeled pool: source, or the revealed target-train set for the oracle.
  const bool oracle = method.baseline == Baseline::oracle;
  const Tensor& xl_all = oracle ? dataset.target_unlabeled() : dataset.source().x;
  const std::vector<int>& yl_all =
      oracle ? dataset.hidden_target_labels(LabelAccess::evaluation()) : dataset.source().y;
  const Tensor& xu_all = dataset.target_unlabeled();
  if (yl_all.empty()) throw DataError("train: empty labeled set");
  if (method.needs_unlabeled() && xu_all.rows() == 0) throw DataError("train: empty unlabeled target set");
  if (xl_all.cols() != mc.input_dim) throw ShapeError("train: input dimension mismatch");

  std::vector<double> iw;
  const bool importance = method.uda && method.uda->method == UdaMethod::importance_weighting;
  if (importance) {
    if (!dataset.density_oracle()) throw ConfigError("importance_weighting needs a dataset with a density oracle");
    iw.resize(yl_all.size());
    for (std::size_t i = 0; i < iw.size(); ++i) iw[i] = importance_weight(xl_all.row(i), *dataset.density_oracle());
  }

  TrainResult result{init_model(mc, mix_seed(config.seed, 0)), {}};
  ModelBundle& bundle = result.model;
  if (bundle.has_teacher()) bundle.sync_teacher();

  Rng master(mix_seed(config.seed, 1));
  BatchCycler labeled(yl_all.size(), master.fork(1));
  BatchCycler unlabeled(std::max<std::size_t>(xu_all.rows(), 1), master.fork(2));
  Rng reg_rng = master.fork(3);

  OptimizerState opt(config.optimizer, bundle.params);
  std::vector<double> lr_scale(bundle.params.size(), 1.0);
  lr_scale[bundle.h_weight_index()] = config.optimizer.classifier_lr_multiplier;
  lr_scale[bundle.h_bias_index()] = config.optimizer.classifier_lr_multiplier;

  const Route route = config.effective_route();
  const std::size_t total = config.total_steps;
  const double uda_w = method.uda ? method.uda->weight : 0.0;

  for (std::size_t step = 0; step < total; ++step) {
    const double p = static_cast<double>(step) / static_cast<double>(total);
    const double lr = lr_at(p, config.optimizer.base_lr);

    const auto li = labeled.next(config.batch_labeled);
    const Tensor xl = xl_all.gather_rows(li);
    std::vector<int> yl(li.size());
    std::vector<double> wl(li.size());
    for (std::size_t i = 0; i < li.size(); ++i) {
      yl[i] = yl_all[li[i]];
      if (importance) wl[i] = iw[li[i]];
    }
    Tensor xu;
    if (method.needs_unlabeled()) xu = xu_all.gather_rows(unlabeled.next(config.batch_unlabeled));

    ad::Tape tape;
    ModelGraph graph(tape, bundle, route);
    std::vector<LossTerm> terms;

    ad::Var z_s = graph.features(graph.input(xl));
    ad::Var sup;
    if (method.ssl && method.ssl->method == SslMethod::mixmatch) {
      MixMatchParts parts = mixmatch_parts(graph, xl, yl, xu, *method.ssl, reg_rng);
      sup = parts.supervised.value;
      parts.unsupervised.weight = method.ssl->effective_weight(p);
      terms.push_back(std::move(parts.unsupervised));
    } else if (importance) {
      sup = importance_weighted_sup(graph, xl, yl, wl).value;
    } else {
      sup = ad::mean(ad::cross_entropy(graph.classify(z_s), one_hot(yl, mc.num_classes)));
    }
    check_finite(sup, step, "supervised");

    if (method.uda && !importance) {
      const double ramp = config.uda_ramp_up_fraction > 0.0 ? std::min(1.0, p / config.uda_ramp_up_fraction) : 1.0;
      ad::Var z_t = graph.features(graph.input(xu));
      LossTerm t;
      switch (method.uda->method) {
        case UdaMethod::dann: t = dann_loss(graph, z_s, z_t, method.uda->grl.at(p)); break;
        case UdaMethod::cdan:
          t = cdan_loss(graph, z_s, ad::softmax(graph.classify_reg(z_s)), z_t, ad::softmax(graph.classify_reg(z_t)),
                        method.uda->grl.at(p));
          break;
        case UdaMethod::mcc: t = mcc_loss(graph.classify_reg(z_t), method.uda->mcc_temperature); break;
        case UdaMethod::importance_weighting: break;
      }
      t.weight = uda_w * ramp;
      t.route = route;
      terms.push_back(std::move(t));
    }
    if (method.ssl && method.ssl->method != SslMethod::mixmatch) {
      LossTerm t = ssl_regularizer(graph, *method.ssl, xu, reg_rng);
      t.weight = method.ssl->effective_weight(p);
      terms.push_back(std::move(t));
    }

    ad::Var objective = sup;
    for (const LossTerm& t : terms) {
      check_finite(t.value, step, t.name);
      objective = ad::add(objective, ad::scale(t.value, t.weight));
    }
    check_finite(objective, step, "total");

    tape.backward(objective);
    std::vector<Tensor> grads = graph.gradients();
    for (const Tensor& g : grads) {
      if (!g.all_finite()) throw DivergenceError(static_cast<long>(step), "gradient");
    }

    opt.set_progress(p);
    sgd_momentum_step(bundle.params, grads, opt, lr, lr_scale);
    if (bundle.has_teacher()) ema_update(bundle, method.ssl->ema_alpha);

    if (step % config.eval_every == 0 || step + 1 == total) {
      HistoryRecord rec;
      rec.step = step;
      rec.supervised_loss = sup.value().item();
      for (const LossTerm& t : terms) rec.terms.push_back({t.name, t.value.value().item(), t.weight, t.mask_rate});
      rec.total_loss = objective.value().item();
      rec.transductive_accuracy = evaluate(bundle, dataset, Split::transductive).accuracy;
      rec.inductive_accuracy = evaluate(bundle, dataset, Split::inductive).accuracy;
      rec.learning_rate = lr;
      result.history.records.push_back(std::move(rec));
    }
  }
  return result;
}

}  // namespace shiftbench
