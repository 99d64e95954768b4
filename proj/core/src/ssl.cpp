#include "shiftbench/ssl.hpp"

#include <algorithm>
#include <cmath>

#include "shiftbench/error.hpp"

namespace shiftbench {

namespace {

struct MethodName {
  SslMethod method;
  const char* name;
};

constexpr MethodName kSslNames[] = {
    {SslMethod::entropy_min, "entropy_min"},   {SslMethod::self_training, "self_training"},
    {SslMethod::pi_model, "pi_model"},         {SslMethod::mean_teacher, "mean_teacher"},
    {SslMethod::vat, "vat"},                   {SslMethod::mixmatch, "mixmatch"},
    {SslMethod::uda_consistency, "uda_consistency"}, {SslMethod::fixmatch, "fixmatch"},
};

void require_batch(const Tensor& x, const char* who) {
  if (x.rank() != 2 || x.rows() == 0) throw ShapeError(std::string(who) + ": batch must be a non-empty matrix");
}

// Per-row max probability and argmax.
void confidence(const Tensor& p, std::vector<double>& max_p, std::vector<int>& arg) {
  const std::size_t b = p.rows(), k = p.cols();
  max_p.assign(b, 0.0);
  arg.assign(b, 0);
  for (std::size_t i = 0; i < b; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (p.at(i, j) > p.at(i, best)) best = j;
    }
    max_p[i] = p.at(i, best);
    arg[i] = static_cast<int>(best);
  }
}

// Masked mean over the full batch: masked rows contribute zero.
ad::Var masked_mean(ad::Tape& tape, ad::Var per_row, const std::vector<double>& mask) {
  return ad::mean(ad::mul(per_row, tape.constant(Tensor::vector(mask))));
}

double rate(const std::vector<double>& mask) {
  double s = 0.0;
  for (double m : mask) s += m;
  return mask.empty() ? 0.0 : s / static_cast<double>(mask.size());
}

}  // namespace

const char* to_string(SslMethod method) {
  for (const auto& m : kSslNames) {
    if (m.method == method) return m.name;
  }
  return "?";
}

std::optional<SslMethod> parse_ssl_method(const std::string& name) {
  for (const auto& m : kSslNames) {
    if (name == m.name) return m.method;
  }
  return std::nullopt;
}

const std::vector<SslMethod>& all_ssl_methods() {
  static const std::vector<SslMethod> all = [] {
    std::vector<SslMethod> v;
    for (const auto& m : kSslNames) v.push_back(m.method);
    return v;
  }();
  return all;
}

void SslConfig::validate() const {
  if (!(weight >= 0.0)) throw ConfigError("ssl weight must be >= 0");
  if (!(confidence_threshold > 0.0 && confidence_threshold <= 1.0)) throw ConfigError("tau must be in (0,1]");
  if (!(sharpen_temperature > 0.0)) throw ConfigError("sharpen temperature must be > 0");
  if (!(vat_epsilon >= 0.0)) throw ConfigError("vat epsilon must be >= 0");
  if (!(vat_xi > 0.0)) throw ConfigError("vat xi must be > 0");
  if (vat_power_iters < 0) throw ConfigError("vat power iterations must be >= 0");
  if (!(mixup_alpha > 0.0)) throw ConfigError("mixup alpha must be > 0");
  if (mixmatch_augmentations == 0) throw ConfigError("mixmatch needs at least one augmentation");
  if (!(ema_alpha >= 0.0 && ema_alpha <= 1.0)) throw ConfigError("ema alpha must be in [0,1]");
  if (!(ramp_up_fraction >= 0.0 && ramp_up_fraction <= 1.0)) throw ConfigError("ramp-up fraction must be in [0,1]");
  weak.validate();
  strong.validate();
}

double SslConfig::effective_weight(double progress) const {
  if (ramp_up_fraction <= 0.0) return weight;
  return weight * std::min(1.0, progress / ramp_up_fraction);
}

Tensor sharpen(const Tensor& p, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("sharpen: temperature must be > 0");
  if (temperature == 1.0) return p;
  Tensor out(p.shape());
  const std::size_t b = p.rows(), k = p.cols();
  for (std::size_t i = 0; i < b; ++i) {
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      out.at(i, j) = std::pow(p.at(i, j), 1.0 / temperature);
      z += out.at(i, j);
    }
    for (std::size_t j = 0; j < k; ++j) out.at(i, j) /= z;
  }
  return out;
}

Tensor mixup(const Tensor& a, const Tensor& b, double lambda) {
  if (a.shape() != b.shape()) throw ShapeError("mixup: shape mismatch");
  if (lambda == 1.0) return a;
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = lambda * a[i] + (1.0 - lambda) * b[i];
  return out;
}

LossTerm entropy_min(const ModelGraph& graph, const Tensor& x_u) {
  require_batch(x_u, "entropy_min");
  ad::Var logits = graph.reg_logits(x_u);
  ad::Var p = ad::softmax(logits);
  ad::Var logp = ad::log_softmax(logits);
  ad::Var h = ad::scale(ad::sum_rows(ad::mul(p, logp)), -1.0);
  return {"entropy_min", ad::mean(h), 1.0, graph.route(), 1.0};
}

LossTerm self_training(const ModelGraph& graph, const Tensor& x_u, double threshold) {
  require_batch(x_u, "self_training");
  ad::Var logits = graph.reg_logits(x_u);
  const Tensor p = ad::softmax_values(logits.value());
  std::vector<double> max_p, mask(x_u.rows());
  std::vector<int> pseudo;
  confidence(p, max_p, pseudo);
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = max_p[i] >= threshold ? 1.0 : 0.0;
  ad::Var ce = ad::cross_entropy(logits, one_hot(pseudo, p.cols()));
  return {"self_training", masked_mean(graph.tape(), ce, mask), 1.0, graph.route(), rate(mask)};
}

LossTerm pi_model(const ModelGraph& graph, const Tensor& x_u, const AugmentationSpec& aug, Rng& rng) {
  require_batch(x_u, "pi_model");
  const Tensor view1 = augment_batch(x_u, aug, rng);
  const Tensor view2 = augment_batch(x_u, aug, rng);
  ad::Var p1 = ad::softmax(graph.reg_logits(view1));
  ad::Var p2 = ad::softmax(graph.reg_logits(view2));
  return {"pi_model", ad::mean(ad::squared_error(p1, p2)), 1.0, graph.route(), 1.0};
}

LossTerm mean_teacher(const ModelGraph& graph, const Tensor& x_u, const AugmentationSpec& aug, Rng& rng) {
  require_batch(x_u, "mean_teacher");
  if (!graph.bundle().has_teacher()) throw Error("mean_teacher: model has no EMA teacher");
  const Tensor student_view = augment_batch(x_u, aug, rng);
  const Tensor teacher_view = augment_batch(x_u, aug, rng);
  ad::Var student = ad::softmax(graph.reg_logits(student_view));
  ad::Var teacher = ad::stop_gradient(ad::softmax(graph.teacher_logits(teacher_view)));
  return {"mean_teacher", ad::mean(ad::squared_error(student, teacher)), 1.0, graph.route(), 1.0};
}

Tensor vat_direction(const ModelGraph& graph, const Tensor& x_u, double xi, int power_iters, Rng& rng) {
  require_batch(x_u, "vat");
  const std::size_t b = x_u.rows(), dim = x_u.cols();
  Tensor d(x_u.shape());
  for (double& v : d.values()) v = rng.normal();
  auto normalize_rows = [&](Tensor& t, const Tensor* fallback) {
    for (std::size_t i = 0; i < b; ++i) {
      double n = 0.0;
      for (std::size_t j = 0; j < dim; ++j) n += t.at(i, j) * t.at(i, j);
      n = std::sqrt(n);
      if (n > 0.0 && std::isfinite(n)) {
        for (std::size_t j = 0; j < dim; ++j) t.at(i, j) /= n;
      } else if (fallback) {
        for (std::size_t j = 0; j < dim; ++j) t.at(i, j) = fallback->at(i, j);
      } else {
        t.at(i, 0) = 1.0;
      }
    }
  };
  normalize_rows(d, nullptr);

  // Clean predictions are constants for every inner tape.
  Tensor clean;
  {
    ad::Tape tape;
    ModelGraph frozen(tape, graph.bundle(), Route::full_model, false);
    clean = ad::softmax_values(frozen.reg_logits(x_u).value());
  }
  for (int it = 0; it < power_iters; ++it) {
    ad::Tape tape;
    ModelGraph frozen(tape, graph.bundle(), Route::full_model, false);
    Tensor r(d.shape());
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = xi * d[i];
    ad::Var rv = tape.variable(std::move(r));
    ad::Var q = ad::softmax(frozen.reg_logits(ad::add(frozen.input(x_u), rv)));
    ad::Var kl = ad::sum(ad::kl_div(tape.constant(clean), q));
    tape.backward(kl);
    Tensor g = rv.grad();
    normalize_rows(g, &d);
    d = std::move(g);
  }
  return d;
}

LossTerm vat(const ModelGraph& graph, const Tensor& x_u, double epsilon, double xi, int power_iters, Rng& rng) {
  require_batch(x_u, "vat");
  const Tensor d = vat_direction(graph, x_u, xi, power_iters, rng);
  Tensor x_adv(x_u.shape());
  for (std::size_t i = 0; i < x_adv.size(); ++i) x_adv[i] = x_u[i] + epsilon * d[i];
  ad::Var clean = ad::stop_gradient(ad::softmax(graph.reg_logits(x_u)));
  ad::Var adv = ad::softmax(graph.reg_logits(x_adv));
  return {"vat", ad::mean(ad::kl_div(clean, adv)), 1.0, graph.route(), 1.0};
}

MixMatchParts mixmatch_parts(const ModelGraph& graph, const Tensor& x_l, const std::vector<int>& y_l,
                             const Tensor& x_u, const SslConfig& config, Rng& rng) {
  require_batch(x_l, "mixmatch");
  require_batch(x_u, "mixmatch");
  const std::size_t k = graph.bundle().config.num_classes;
  const std::size_t bl = x_l.rows(), bu = x_u.rows(), n_aug = config.mixmatch_augmentations;

  const Tensor xl_aug = augment_batch(x_l, config.weak, rng);
  std::vector<Tensor> xu_aug;
  Tensor guess(Shape{bu, k});
  for (std::size_t a = 0; a < n_aug; ++a) {
    xu_aug.push_back(augment_batch(x_u, config.weak, rng));
    const Tensor p = ad::softmax_values(graph.reg_logits(xu_aug.back()).value());
    for (std::size_t i = 0; i < guess.size(); ++i) guess[i] += p[i] / static_cast<double>(n_aug);
  }
  guess = sharpen(guess, config.sharpen_temperature);

  // Pool all rows with their targets, then mix each row with a shuffled partner.
  const std::size_t total = bl + bu * n_aug;
  const std::size_t dim = x_l.cols();
  Tensor pool_x(Shape{total, dim}), pool_p(Shape{total, k});
  const Tensor yl = one_hot(y_l, k);
  for (std::size_t i = 0; i < bl; ++i) {
    std::copy(xl_aug.row(i).begin(), xl_aug.row(i).end(), pool_x.row(i).begin());
    std::copy(yl.row(i).begin(), yl.row(i).end(), pool_p.row(i).begin());
  }
  for (std::size_t a = 0; a < n_aug; ++a) {
    for (std::size_t i = 0; i < bu; ++i) {
      const std::size_t r = bl + a * bu + i;
      std::copy(xu_aug[a].row(i).begin(), xu_aug[a].row(i).end(), pool_x.row(r).begin());
      std::copy(guess.row(i).begin(), guess.row(i).end(), pool_p.row(r).begin());
    }
  }
  std::vector<std::size_t> perm(total);
  for (std::size_t i = 0; i < total; ++i) perm[i] = i;
  rng.shuffle(perm);
  const double l = rng.beta(config.mixup_alpha, config.mixup_alpha);
  const double lam = std::max(l, 1.0 - l);
  const Tensor mixed_x = mixup(pool_x, pool_x.gather_rows(perm), lam);
  const Tensor mixed_p = mixup(pool_p, pool_p.gather_rows(perm), lam);

  std::vector<std::size_t> lab_rows(bl), unl_rows(total - bl);
  for (std::size_t i = 0; i < bl; ++i) lab_rows[i] = i;
  for (std::size_t i = bl; i < total; ++i) unl_rows[i - bl] = i;

  ad::Var sup = ad::mean(ad::cross_entropy(graph.logits(mixed_x.gather_rows(lab_rows)), mixed_p.gather_rows(lab_rows)));
  ad::Var pu = ad::softmax(graph.reg_logits(mixed_x.gather_rows(unl_rows)));
  ad::Var target = graph.tape().constant(mixed_p.gather_rows(unl_rows));
  ad::Var unsup = ad::scale(ad::mean(ad::squared_error(pu, target)), 1.0 / static_cast<double>(k));

  MixMatchParts parts;
  parts.supervised = {"mixmatch_sup", sup, 1.0, Route::full_model, 1.0};
  parts.unsupervised = {"mixmatch", unsup, 1.0, graph.route(), 1.0};
  parts.lambda = lam;
  return parts;
}

LossTerm mixmatch(const ModelGraph& graph, const Tensor& x_l, const std::vector<int>& y_l, const Tensor& x_u,
                  const SslConfig& config, double unsupervised_weight, Rng& rng) {
  MixMatchParts parts = mixmatch_parts(graph, x_l, y_l, x_u, config, rng);
  ad::Var total = ad::add(parts.supervised.value, ad::scale(parts.unsupervised.value, unsupervised_weight));
  return {"mixmatch", total, 1.0, graph.route(), 1.0};
}

LossTerm uda_consistency(const ModelGraph& graph, const Tensor& x_u, double temperature, double threshold,
                         const AugmentationSpec& strong, Rng& rng) {
  require_batch(x_u, "uda_consistency");
  const Tensor p = ad::softmax_values(graph.reg_logits(x_u).value());
  std::vector<double> max_p, mask(x_u.rows());
  std::vector<int> arg;
  confidence(p, max_p, arg);
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = max_p[i] >= threshold ? 1.0 : 0.0;
  const Tensor target = sharpen(p, temperature);
  const Tensor strong_view = augment_batch(x_u, strong, rng);
  ad::Var q = ad::softmax(graph.reg_logits(strong_view));
  ad::Var kl = ad::kl_div(graph.tape().constant(target), q);
  return {"uda_consistency", masked_mean(graph.tape(), kl, mask), 1.0, graph.route(), rate(mask)};
}

LossTerm fixmatch(const ModelGraph& graph, const Tensor& x_u, double threshold, const AugmentationSpec& weak,
                  const AugmentationSpec& strong, Rng& rng) {
  require_batch(x_u, "fixmatch");
  const Tensor weak_view = augment_batch(x_u, weak, rng);
  const Tensor strong_view = augment_batch(x_u, strong, rng);
  const Tensor q = ad::softmax_values(graph.reg_logits(weak_view).value());
  std::vector<double> max_q, mask(x_u.rows());
  std::vector<int> pseudo;
  confidence(q, max_q, pseudo);
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = max_q[i] >= threshold ? 1.0 : 0.0;
  ad::Var ce = ad::cross_entropy(graph.reg_logits(strong_view), one_hot(pseudo, q.cols()));
  return {"fixmatch", masked_mean(graph.tape(), ce, mask), 1.0, graph.route(), rate(mask)};
}

LossTerm ssl_regularizer(const ModelGraph& graph, const SslConfig& config, const Tensor& x_u, Rng& rng) {
  switch (config.method) {
    case SslMethod::entropy_min: return entropy_min(graph, x_u);
    case SslMethod::self_training: return self_training(graph, x_u, config.confidence_threshold);
    case SslMethod::pi_model: return pi_model(graph, x_u, config.weak, rng);
    case SslMethod::mean_teacher: return mean_teacher(graph, x_u, config.weak, rng);
    case SslMethod::vat: return vat(graph, x_u, config.vat_epsilon, config.vat_xi, config.vat_power_iters, rng);
    case SslMethod::uda_consistency:
      return uda_consistency(graph, x_u, config.sharpen_temperature, config.confidence_threshold, config.strong, rng);
    case SslMethod::fixmatch:
      return fixmatch(graph, x_u, config.confidence_threshold, config.weak, config.strong, rng);
    case SslMethod::mixmatch: break;
  }
  throw ConfigError("ssl_regularizer: mixmatch needs the labeled batch; use mixmatch_parts");
}

}  // namespace shiftbench
