#include "shiftbench/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "shiftbench/optim.hpp"
#include "shiftbench/random.hpp"

namespace shiftbench {

void FiniteHypothesisClass::add(std::string name, Hypothesis h) {
  names.push_back(std::move(name));
  hypotheses.push_back(std::move(h));
}

void FiniteHypothesisClass::validate() const {
  if (hypotheses.empty()) throw ConfigError("hypothesis class is empty");
  if (names.size() != hypotheses.size()) throw ConfigError("hypothesis class: one name per hypothesis");
}

FiniteHypothesisClass threshold_class(std::span<const double> thresholds, std::size_t dim, bool both) {
  FiniteHypothesisClass h;
  char buf[96];
  for (double t : thresholds) {
    std::snprintf(buf, sizeof buf, "x%zu>%g", dim, t);
    h.add(buf, [dim, t](std::span<const double> x) { return x[dim] > t ? 1 : 0; });
    if (both) {
      std::snprintf(buf, sizeof buf, "x%zu<=%g", dim, t);
      h.add(buf, [dim, t](std::span<const double> x) { return x[dim] > t ? 0 : 1; });
    }
  }
  return h;
}

FiniteHypothesisClass stump_class(const Tensor& x, std::size_t per_dim) {
  if (x.rows() == 0 || per_dim == 0) throw ConfigError("stump_class: need samples and at least one threshold");
  FiniteHypothesisClass h;
  std::vector<double> col(x.rows());
  for (std::size_t d = 0; d < x.cols(); ++d) {
    for (std::size_t i = 0; i < x.rows(); ++i) col[i] = x.at(i, d);
    std::sort(col.begin(), col.end());
    std::vector<double> thr;
    for (std::size_t q = 1; q <= per_dim; ++q) {
      const std::size_t idx = std::min(col.size() - 1, q * col.size() / (per_dim + 1));
      if (thr.empty() || thr.back() != col[idx]) thr.push_back(col[idx]);
    }
    FiniteHypothesisClass part = threshold_class(thr, d, true);
    for (std::size_t k = 0; k < part.size(); ++k) h.add(part.names[k], part.hypotheses[k]);
  }
  return h;
}

std::vector<std::vector<std::uint8_t>> prediction_table(const FiniteHypothesisClass& h, const Tensor& x) {
  std::vector<std::vector<std::uint8_t>> out(h.size(), std::vector<std::uint8_t>(x.rows()));
  for (std::size_t k = 0; k < h.size(); ++k) {
    for (std::size_t i = 0; i < x.rows(); ++i) {
      const int v = h.hypotheses[k](x.row(i));
      if (v != 0 && v != 1) throw DataError("hypothesis " + h.names[k] + " returned a non-binary label");
      out[k][i] = static_cast<std::uint8_t>(v);
    }
  }
  return out;
}

double hdh_divergence(const FiniteHypothesisClass& h, const Tensor& s, const Tensor& t) {
  h.validate();
  if (s.rows() == 0 || t.rows() == 0) throw DataError("hdh_divergence: empty sample");
  const auto ps = prediction_table(h, s);
  const auto pt = prediction_table(h, t);
  const double ns = static_cast<double>(s.rows()), nt = static_cast<double>(t.rows());
  double best = 0.0;
  for (std::size_t a = 0; a < h.size(); ++a) {
    for (std::size_t b = 0; b < h.size(); ++b) {
      std::size_t cs = 0, ct = 0;
      for (std::size_t i = 0; i < ps[a].size(); ++i) cs += ps[a][i] != ps[b][i];
      for (std::size_t i = 0; i < pt[a].size(); ++i) ct += pt[a][i] != pt[b][i];
      best = std::max(best, std::abs(static_cast<double>(cs) / ns - static_cast<double>(ct) / nt));
    }
  }
  return 2.0 * best;
}

double empirical_risk(const Hypothesis& h, const LabeledSet& data) {
  if (data.size() == 0) throw DataError("empirical_risk: empty sample");
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < data.size(); ++i) wrong += h(data.x.row(i)) != data.y[i];
  return static_cast<double>(wrong) / static_cast<double>(data.size());
}

double lambda_h(const FiniteHypothesisClass& h, const LabeledSet& s, const LabeledSet& t) {
  h.validate();
  double best = INFINITY;
  for (const auto& fn : h.hypotheses) best = std::min(best, empirical_risk(fn, s) + empirical_risk(fn, t));
  return best;
}

std::vector<BoundReport> verify_bound(const FiniteHypothesisClass& h, const LabeledSet& s, const LabeledSet& t) {
  const double d = hdh_divergence(h, s.x, t.x);
  const double lam = lambda_h(h, s, t);
  std::vector<BoundReport> out;
  out.reserve(h.size());
  for (std::size_t k = 0; k < h.size(); ++k) {
    BoundReport r;
    r.hypothesis = k;
    r.name = h.names[k];
    r.target_risk = empirical_risk(h.hypotheses[k], t);
    r.source_risk = empirical_risk(h.hypotheses[k], s);
    r.divergence = d;
    r.lambda = lam;
    r.rhs = r.source_risk + 0.5 * d + lam;
    r.holds = r.target_risk <= r.rhs + 1e-12;
    if (!r.holds) throw BoundViolation(r);
    out.push_back(std::move(r));
  }
  return out;
}

double a_distance_from_error(double error) { return std::clamp(2.0 * (1.0 - 2.0 * error), 0.0, 2.0); }

double proxy_a_distance(const Tensor& fs, const Tensor& ft, std::uint64_t seed) {
  if (fs.rank() != 2 || ft.rank() != 2 || fs.cols() != ft.cols()) {
    throw ShapeError("proxy_a_distance: feature matrices must share a width");
  }
  if (fs.rows() < 20 || ft.rows() < 20) throw DataError("proxy_a_distance: need at least 20 samples per domain");
  const std::size_t m = std::min(fs.rows(), ft.rows());
  const std::size_t half = m / 2;
  const std::size_t f = fs.cols();
  Rng rng(mix_seed(seed, 0x5eed));

  auto pick = [&](const Tensor& x) {
    std::vector<std::size_t> idx(x.rows());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    rng.shuffle(idx);
    idx.resize(m);
    return idx;
  };
  const auto is = pick(fs), it = pick(ft);

  // Rows [0, 2*half) train, the rest test; label 1 = source.
  Tensor train(Shape{2 * half, f}), test(Shape{2 * (m - half), f});
  std::vector<double> ytr, yte;
  for (std::size_t i = 0; i < m; ++i) {
    const bool tr = i < half;
    Tensor& dst = tr ? train : test;
    const std::size_t r = tr ? 2 * i : 2 * (i - half);
    std::copy_n(fs.row(is[i]).begin(), f, dst.row(r).begin());
    std::copy_n(ft.row(it[i]).begin(), f, dst.row(r + 1).begin());
    (tr ? ytr : yte).insert((tr ? ytr : yte).end(), {1.0, 0.0});
  }

  std::vector<double> mean(f, 0.0), sd(f, 0.0);
  for (std::size_t i = 0; i < train.rows(); ++i)
    for (std::size_t j = 0; j < f; ++j) mean[j] += train.at(i, j);
  for (double& v : mean) v /= static_cast<double>(train.rows());
  for (std::size_t i = 0; i < train.rows(); ++i)
    for (std::size_t j = 0; j < f; ++j) sd[j] += (train.at(i, j) - mean[j]) * (train.at(i, j) - mean[j]);
  for (double& v : sd) v = std::sqrt(v / static_cast<double>(train.rows()));
  for (double& v : sd) v = v > 1e-12 ? v : 1.0;
  auto standardize = [&](Tensor& x) {
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < f; ++j) x.at(i, j) = (x.at(i, j) - mean[j]) / sd[j];
  };
  standardize(train);
  standardize(test);

  std::vector<Tensor> params{Tensor(Shape{f}, 0.0), Tensor::scalar(0.0)};
  OptimizerConfig oc;
  oc.base_lr = 0.1;
  OptimizerState state(oc, params);
  std::vector<Tensor> grads{Tensor(Shape{f}), Tensor::scalar(0.0)};
  const double n = static_cast<double>(train.rows());
  for (int step = 0; step < 500; ++step) {
    grads[0].fill(0.0);
    grads[1].fill(0.0);
    for (std::size_t i = 0; i < train.rows(); ++i) {
      double z = params[1][0];
      for (std::size_t j = 0; j < f; ++j) z += params[0][j] * train.at(i, j);
      const double err = 1.0 / (1.0 + std::exp(-z)) - ytr[i];
      for (std::size_t j = 0; j < f; ++j) grads[0][j] += err * train.at(i, j) / n;
      grads[1][0] += err / n;
    }
    sgd_momentum_step(params, grads, state, oc.base_lr);
  }

  std::size_t wrong = 0;
  for (std::size_t i = 0; i < test.rows(); ++i) {
    double z = params[1][0];
    for (std::size_t j = 0; j < f; ++j) z += params[0][j] * test.at(i, j);
    wrong += (z > 0.0 ? 1.0 : 0.0) != yte[i];
  }
  return a_distance_from_error(static_cast<double>(wrong) / static_cast<double>(test.rows()));
}

}  // namespace shiftbench
