#include <cmath>

#include "doctest.h"
#include "shiftbench/error.hpp"
#include "shiftbench/ssl.hpp"

using namespace shiftbench;
namespace ad = shiftbench::ad;

namespace {

// 1-D model with z = x and logits = x * slope + bias, so probabilities can be
// set exactly per input value.
ModelBundle linear_model(std::vector<double> slope, std::vector<double> bias, bool teacher = false) {
  ModelConfig c;
  c.input_dim = 1;
  c.hidden_dims = {};
  c.feature_dim = 1;
  c.num_classes = bias.size();
  c.with_teacher = teacher;
  auto m = init_model(c, 0);
  m.params[0] = Tensor::matrix(1, 1, {1.0});
  m.params[1] = Tensor::vector({0.0});
  m.params[2] = Tensor::matrix(1, bias.size(), slope);
  m.params[3] = Tensor::vector(bias);
  if (teacher) m.sync_teacher();
  return m;
}

// Constant predictor with class probabilities p.
ModelBundle constant_model(const std::vector<double>& p, bool teacher = false) {
  std::vector<double> bias;
  for (double v : p) bias.push_back(std::log(v));
  return linear_model(std::vector<double>(p.size(), 0.0), bias, teacher);
}

Tensor column(std::vector<double> v) { return Tensor::matrix(v.size(), 1, v); }

AugmentationSpec zero_weak() {
  auto s = AugmentationSpec::weak();
  s.weak_noise_sigma = 0.0;
  return s;
}

// Strong view that maps every input to 0.
AugmentationSpec zeroing_strong() {
  auto s = AugmentationSpec::strong();
  s.strong_noise_sigma = 0.0;
  s.dropout_prob = 1.0;
  return s;
}

double value(const LossTerm& t) { return t.value.value().item(); }

}  // namespace

TEST_SUITE("ssl") {
  TEST_CASE("entropy_min examples") {
    ad::Tape t1;
    auto hot = linear_model({0, 0}, {0.0, -800.0});
    CHECK(value(entropy_min(ModelGraph(t1, hot), column({0.1, 0.7}))) == 0.0);

    ad::Tape t2;
    auto uni = constant_model({0.25, 0.25, 0.25, 0.25});
    CHECK(value(entropy_min(ModelGraph(t2, uni), column({0.3, -2}))) == doctest::Approx(std::log(4.0)).epsilon(1e-14));

    ad::Tape t3;
    auto m = constant_model({0.9, 0.1});
    double expect = -0.9 * std::log(0.9) - 0.1 * std::log(0.1);
    CHECK(value(entropy_min(ModelGraph(t3, m), column({1.0}))) == doctest::Approx(expect).epsilon(1e-12));
    CHECK(expect == doctest::Approx(0.32508).epsilon(1e-4));
  }

  TEST_CASE("self_training examples") {
    ad::Tape t1;
    auto m = constant_model({0.6, 0.4});
    auto term = self_training(ModelGraph(t1, m), column({0.0, 1.0}), 0.95);
    CHECK(value(term) == 0.0);
    CHECK(term.mask_rate == 0.0);

    ad::Tape t2;
    auto hot = linear_model({0, 0}, {-800.0, 0.0});
    auto t0 = self_training(ModelGraph(t2, hot), column({0.5}), 0.0);
    CHECK(value(t0) == 0.0);

    ad::Tape t3;
    auto m2 = constant_model({0.96, 0.04});
    auto t = self_training(ModelGraph(t3, m2), column({0.2}), 0.95);
    CHECK(value(t) == doctest::Approx(-std::log(0.96)).epsilon(1e-12));
    CHECK(value(t) == doctest::Approx(0.04082).epsilon(1e-3));
    CHECK(t.mask_rate == 1.0);
  }

  TEST_CASE("pi_model examples") {
    auto m = linear_model({1.0, -2.0}, {0.1, 0.0});
    Rng rng(1);
    ad::Tape t1;
    CHECK(value(pi_model(ModelGraph(t1, m), column({0.3, 1.0}), AugmentationSpec::identity(), rng)) == 0.0);

    // The pi-model distance on orthogonal one-hots.
    ad::Tape t2;
    auto a = t2.constant(Tensor::matrix(1, 2, {1.0, 0.0}));
    auto b = t2.constant(Tensor::matrix(1, 2, {0.0, 1.0}));
    CHECK(ad::squared_error(a, b).value()[0] == 2.0);

    auto run = [&](std::uint64_t seed) {
      Rng r(seed);
      ad::Tape t;
      return value(pi_model(ModelGraph(t, m), column({0.3, 1.0, -0.4}), AugmentationSpec::strong(), r));
    };
    CHECK(run(5) == run(5));
    CHECK(run(5) > 0.0);
  }

  TEST_CASE("mean_teacher examples") {
    auto m = linear_model({1.0, -2.0}, {0.1, 0.0}, true);
    Rng rng(1);
    ad::Tape t1;
    ModelGraph g(t1, m);
    auto term = mean_teacher(g, column({0.3, 1.0}), AugmentationSpec::identity(), rng);
    CHECK(value(term) == 0.0);

    // Perturb the student so the loss is non-zero, then check teacher gradients are absent.
    auto m2 = m;
    m2.params[2][0] = 3.0;
    ad::Tape t2;
    ModelGraph g2(t2, m2);
    auto term2 = mean_teacher(g2, column({0.3, 1.0}), AugmentationSpec::identity(), rng);
    CHECK(value(term2) > 0.0);
    t2.backward(term2.value);
    // Only student parameters are tape variables; the teacher is bound as constants.
    auto grads = g2.gradients();
    CHECK(grads.size() == m2.params.size());
    double gsum = 0;
    for (const auto& gr : grads)
      for (double v : gr.values()) gsum += std::abs(v);
    CHECK(gsum > 0.0);
    auto teacher_before = *m2.teacher;
    auto frozen = m2;
    ema_update(frozen, 1.0);
    CHECK(*frozen.teacher == teacher_before);

    auto none = linear_model({1.0, -2.0}, {0.1, 0.0}, false);
    ad::Tape t3;
    CHECK_THROWS(mean_teacher(ModelGraph(t3, none), column({0.3}), AugmentationSpec::identity(), rng));
  }

  TEST_CASE("vat examples") {
    auto m = linear_model({1.0, -2.0}, {0.1, 0.0});
    Rng rng(2);
    ad::Tape t1;
    CHECK(value(vat(ModelGraph(t1, m), column({0.3, 1.0}), 0.0, 1e-6, 1, rng)) == 0.0);

    auto c = linear_model({0.0, 0.0}, {0.0, 0.0});
    ad::Tape t2;
    CHECK(value(vat(ModelGraph(t2, c), column({0.3, 1.0}), 2.0, 1e-6, 1, rng)) == 0.0);
  }

  TEST_CASE("vat adversarial direction beats random") {
    ModelConfig cfg;
    cfg.input_dim = 2;
    cfg.hidden_dims = {16};
    cfg.feature_dim = 8;
    auto m = init_model(cfg, 4);
    Rng data(9);
    Tensor x({100, 2});
    for (auto& v : x.values()) v = data.normal();
    const double eps = 0.1;  // local regime where the second-order expansion holds
    ad::Tape tape;
    ModelGraph g(tape, m);
    Rng rng(3);
    Tensor d_adv = vat_direction(g, x, 1e-6, 1, rng);
    Tensor clean = predict(m, x);
    auto kl_at = [&](const Tensor& dir, std::size_t i) {
      Tensor xi = Tensor::matrix(1, 2, {x.at(i, 0) + eps * dir.at(i, 0), x.at(i, 1) + eps * dir.at(i, 1)});
      Tensor q = predict(m, xi);
      double kl = 0;
      for (std::size_t k = 0; k < 2; ++k) kl += clean.at(i, k) * std::log(clean.at(i, k) / q[k]);
      return kl;
    };
    Rng rnd(77);
    int wins = 0;
    for (std::size_t i = 0; i < 100; ++i) {
      double a = rnd.normal(), b = rnd.normal(), n = std::hypot(a, b);
      Tensor dr = Tensor::matrix(100, 2, std::vector<double>(200, 0.0));
      dr.at(i, 0) = a / n;
      dr.at(i, 1) = b / n;
      CHECK(std::hypot(d_adv.at(i, 0), d_adv.at(i, 1)) == doctest::Approx(1.0));
      wins += kl_at(d_adv, i) >= kl_at(dr, i);
    }
    CHECK(wins >= 90);
  }

  TEST_CASE("sharpen and mixup") {
    Tensor p = Tensor::matrix(1, 2, {0.6, 0.4});
    CHECK(sharpen(p, 1.0) == p);
    Tensor s = sharpen(p, 0.5);
    CHECK(s[0] == doctest::Approx(0.36 / 0.52).epsilon(1e-14));
    CHECK(s[0] == doctest::Approx(0.69231).epsilon(1e-5));
    CHECK(s[1] == doctest::Approx(0.30769).epsilon(1e-5));
    Tensor a = Tensor::matrix(1, 2, {0.3, 0.7}), b = Tensor::matrix(1, 2, {1.0, -1.0});
    CHECK(mixup(a, b, 1.0) == a);
    CHECK(mixup(a, b, 0.25)[0] == doctest::Approx(0.25 * 0.3 + 0.75));
  }

  TEST_CASE("mixmatch produces a finite term with lambda >= 0.5") {
    ModelConfig cfg;
    cfg.input_dim = 2;
    cfg.hidden_dims = {8};
    cfg.feature_dim = 4;
    auto m = init_model(cfg, 5);
    Tensor xl = Tensor::matrix({{0.1, 0.2}, {-0.5, 0.3}});
    Tensor xu = Tensor::matrix({{1.0, 0.0}, {0.0, 1.0}, {0.5, 0.5}});
    SslConfig sc;
    sc.method = SslMethod::mixmatch;
    Rng rng(1);
    ad::Tape tape;
    ModelGraph g(tape, m);
    auto parts = mixmatch_parts(g, xl, {0, 1}, xu, sc, rng);
    CHECK(parts.lambda >= 0.5);
    CHECK(parts.lambda <= 1.0);
    CHECK(std::isfinite(value(parts.supervised)));
    CHECK(value(parts.unsupervised) >= 0.0);
  }

  TEST_CASE("uda_consistency examples") {
    auto m = linear_model({1.0, -2.0}, {0.1, 0.0});
    Rng rng(2);
    ad::Tape t1;
    auto term = uda_consistency(ModelGraph(t1, m), column({0.3, 1.0, 2.0}), 1.0, 0.0, AugmentationSpec::identity(), rng);
    CHECK(std::abs(value(term)) <= 1e-15);

    ad::Tape t2;
    auto low = uda_consistency(ModelGraph(t2, constant_model({0.6, 0.4})), column({0.3}), 0.5, 0.95,
                               AugmentationSpec::strong(), rng);
    CHECK(value(low) == 0.0);
    CHECK(low.mask_rate == 0.0);
  }

  TEST_CASE("uda_consistency is invariant to class permutation") {
    auto m = linear_model({1.0, -2.0, 0.5}, {0.1, 0.0, -0.3});
    auto perm = linear_model({0.5, 1.0, -2.0}, {-0.3, 0.1, 0.0});
    Tensor x = column({0.3, 1.0, 2.0, -1.5});
    Rng r1(4), r2(4);
    ad::Tape t1, t2;
    double a = value(uda_consistency(ModelGraph(t1, m), x, 0.5, 0.0, AugmentationSpec::strong(), r1));
    double b = value(uda_consistency(ModelGraph(t2, perm), x, 0.5, 0.0, AugmentationSpec::strong(), r2));
    CHECK(a == doctest::Approx(b).epsilon(1e-12));
  }

  TEST_CASE("fixmatch examples") {
    Rng rng(3);
    ad::Tape t1;
    auto low = fixmatch(ModelGraph(t1, constant_model({0.6, 0.4})), column({0.1, 0.9}), 0.95, zero_weak(),
                        AugmentationSpec::strong(), rng);
    CHECK(value(low) == 0.0);
    CHECK(low.mask_rate == 0.0);

    ad::Tape t2;
    auto hot = linear_model({0, 0}, {0.0, -800.0});
    CHECK(value(fixmatch(ModelGraph(t2, hot), column({0.1}), 0.95, zero_weak(), zero_weak(), rng)) == 0.0);

    // Weak view x = 1 gives q = (0.97, 0.03); strong view x = 0 gives p = (0.80, 0.20).
    const double b1 = std::log(0.2 / 0.8);
    const double slope = std::log(0.03 / 0.97) - b1;
    auto m = linear_model({0.0, slope}, {0.0, b1});
    CHECK(predict(m, column({1.0}))[0] == doctest::Approx(0.97).epsilon(1e-12));
    ad::Tape t3;
    auto term = fixmatch(ModelGraph(t3, m), column({1.0}), 0.95, zero_weak(), zeroing_strong(), rng);
    CHECK(value(term) == doctest::Approx(-std::log(0.8)).epsilon(1e-12));
    CHECK(value(term) == doctest::Approx(0.22314).epsilon(1e-4));
    CHECK(term.mask_rate == 1.0);
  }

  TEST_CASE("effective weight ramp and config validation") {
    SslConfig c;
    c.weight = 2.0;
    c.ramp_up_fraction = 0.2;
    CHECK(c.effective_weight(0.0) == 0.0);
    CHECK(c.effective_weight(0.1) == doctest::Approx(1.0));
    CHECK(c.effective_weight(0.5) == 2.0);
    c.confidence_threshold = 1.5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK(parse_ssl_method("fixmatch") == SslMethod::fixmatch);
    CHECK_FALSE(parse_ssl_method("nope").has_value());
    CHECK(all_ssl_methods().size() == 8);
  }
}
