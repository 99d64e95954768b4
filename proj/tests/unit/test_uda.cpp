#include <algorithm>
#include <cmath>
#include <numbers>

#include "doctest.h"
#include "shiftbench/error.hpp"
#include "shiftbench/optim.hpp"
#include "shiftbench/uda.hpp"

using namespace shiftbench;
namespace ad = shiftbench::ad;

namespace {

ModelConfig disc_config(DiscriminatorInput kind, std::size_t feature_dim = 4) {
  ModelConfig c;
  c.input_dim = 2;
  c.hidden_dims = {6};
  c.feature_dim = feature_dim;
  c.num_classes = 3;
  c.discriminator = kind;
  return c;
}

// Discriminator output layer set to zero: D = 0.5 everywhere.
void neutral_discriminator(ModelBundle& m) {
  m.params[m.params.size() - 2].fill(0.0);
  m.params[m.params.size() - 1].fill(0.0);
}

Tensor random_input(std::size_t n, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  Tensor x({n, d});
  for (auto& v : x.values()) v = rng.normal();
  return x;
}

double g_grad_norm(const ModelBundle& m, const std::vector<Tensor>& grads) {
  double s = 0;
  for (std::size_t i = 0; i < 2 * m.g_layer_count(); ++i)
    for (double v : grads[i].values()) s += std::abs(v);
  return s;
}

}  // namespace

TEST_SUITE("uda") {
  TEST_CASE("dann at D = 0.5 is ln 2; lambda 0 blocks g") {
    auto m = init_model(disc_config(DiscriminatorInput::features), 1);
    neutral_discriminator(m);
    ad::Tape tape;
    ModelGraph g(tape, m);
    auto term = dann_loss(g, g.features(g.input(random_input(5, 2, 1))), g.features(g.input(random_input(7, 2, 2))), 1.0);
    CHECK(term.value.value().item() == doctest::Approx(std::numbers::ln2).epsilon(1e-14));

    auto m2 = init_model(disc_config(DiscriminatorInput::features), 2);
    ad::Tape t2;
    ModelGraph g2(t2, m2);
    auto t0 = dann_loss(g2, g2.features(g2.input(random_input(5, 2, 1))), g2.features(g2.input(random_input(7, 2, 2))), 0.0);
    t2.backward(t0.value);
    CHECK(g_grad_norm(m2, g2.gradients()) == 0.0);

    auto plain = init_model(disc_config(DiscriminatorInput::none), 1);
    ad::Tape t3;
    ModelGraph g3(t3, plain);
    auto z = g3.features(g3.input(random_input(2, 2, 1)));
    CHECK_THROWS(dann_loss(g3, z, z, 1.0));
  }

  TEST_CASE("trained discriminator on identical batches stays near ln 2") {
    auto m = init_model(disc_config(DiscriminatorInput::features), 3);
    Tensor x = random_input(64, 2, 5);
    std::vector<Tensor> params(m.params.begin() + m.student_param_count(), m.params.end());
    OptimizerConfig oc;
    oc.base_lr = 0.1;
    OptimizerState st(oc, params);
    double loss = 0;
    for (int step = 0; step < 300; ++step) {
      ad::Tape tape;
      ModelGraph g(tape, m);
      auto z = g.features(g.input(x));
      auto term = dann_loss(g, z, z, 1.0);
      loss = term.value.value().item();
      CHECK(loss >= std::numbers::ln2 - 1e-12);
      tape.backward(term.value);
      auto grads = g.gradients();
      std::vector<Tensor> dg(grads.begin() + m.student_param_count(), grads.end());
      sgd_momentum_step(params, dg, st, 0.1);
      std::copy(params.begin(), params.end(), m.params.begin() + m.student_param_count());
    }
    CHECK(loss <= std::numbers::ln2 + 0.05);
  }

  TEST_CASE("cdan with uniform p equals dann on replicated z / K") {
    auto cd = init_model(disc_config(DiscriminatorInput::conditioned), 4);
    auto dn = init_model(disc_config(DiscriminatorInput::features, 12), 4);
    // Same discriminator weights: both take 12 inputs.
    for (std::size_t i = 0; i < 4; ++i) dn.params[dn.student_param_count() + i] = cd.params[cd.student_param_count() + i];
    Tensor zs = random_input(5, 4, 1), zt = random_input(6, 4, 2);
    auto replicate = [](const Tensor& z) {
      Tensor out({z.rows(), 12});
      for (std::size_t b = 0; b < z.rows(); ++b)
        for (std::size_t f = 0; f < 4; ++f)
          for (std::size_t k = 0; k < 3; ++k) out.at(b, f * 3 + k) = z.at(b, f) / 3.0;
      return out;
    };
    ad::Tape t1;
    ModelGraph g1(t1, cd);
    double c = cdan_loss(g1, t1.constant(zs), t1.constant(Tensor({5, 3}, 1.0 / 3)), t1.constant(zt),
                         t1.constant(Tensor({6, 3}, 1.0 / 3)), 1.0)
                   .value.value()
                   .item();
    ad::Tape t2;
    ModelGraph g2(t2, dn);
    double d = dann_loss(g2, t2.constant(replicate(zs)), t2.constant(replicate(zt)), 1.0).value.value().item();
    CHECK(std::abs(c - d) <= 1e-12);

    ad::Tape t3;
    ModelGraph g3(t3, cd);
    CHECK_THROWS_AS(cdan_loss(g3, t3.constant(zs), t3.constant(Tensor({4, 3}, 1.0 / 3)), t3.constant(zt),
                              t3.constant(Tensor({6, 3}, 1.0 / 3)), 1.0),
                    ShapeError);
  }

  TEST_CASE("cdan at D = 0.5 is ln 2; lambda 0 blocks g and h") {
    auto m = init_model(disc_config(DiscriminatorInput::conditioned), 6);
    Tensor xs = random_input(5, 2, 1), xt = random_input(4, 2, 2);
    {
      auto n = m;
      neutral_discriminator(n);
      ad::Tape tape;
      ModelGraph g(tape, n);
      auto zs = g.features(g.input(xs)), zt = g.features(g.input(xt));
      auto term = cdan_loss(g, zs, ad::softmax(g.classify(zs)), zt, ad::softmax(g.classify(zt)), 1.0);
      CHECK(term.value.value().item() == doctest::Approx(std::numbers::ln2).epsilon(1e-14));
    }
    ad::Tape tape;
    ModelGraph g(tape, m);
    auto zs = g.features(g.input(xs)), zt = g.features(g.input(xt));
    auto term = cdan_loss(g, zs, ad::softmax(g.classify(zs)), zt, ad::softmax(g.classify(zt)), 0.0);
    tape.backward(term.value);
    auto grads = g.gradients();
    for (std::size_t i = 0; i < m.student_param_count(); ++i)
      for (double v : grads[i].values()) CHECK(v == 0.0);
  }

  TEST_CASE("mcc examples") {
    ad::Tape t1;
    auto hot = t1.constant(Tensor::matrix({{0.0, -900.0}, {0.0, -900.0}, {0.0, -900.0}}));
    CHECK(mcc_loss(hot, 1.0).value.value().item() == 0.0);

    ad::Tape t2;
    auto uni = t2.constant(Tensor({4, 2}, 0.3));
    CHECK(mcc_loss(uni, 2.5).value.value().item() == doctest::Approx(0.5).epsilon(1e-14));

    Tensor logits = random_input(6, 3, 9);
    std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
    ad::Tape t3;
    double a = mcc_loss(t3.constant(logits), 2.5).value.value().item();
    double b = mcc_loss(t3.constant(logits.gather_rows(perm)), 2.5).value.value().item();
    CHECK(a == doctest::Approx(b).epsilon(1e-13));
  }

  TEST_CASE("mcc gradient is finite and non-zero") {
    Tensor logits = random_input(5, 3, 4);
    ad::Tape tape;
    auto v = tape.variable(logits);
    auto term = mcc_loss(v, 2.5);
    tape.backward(term.value);
    const Tensor gv = v.grad();
    CHECK(gv.all_finite());
    double s = 0;
    for (double g : gv.values()) s += std::abs(g);
    CHECK(s > 0.0);
  }

  TEST_CASE("importance weighted loss") {
    ModelConfig c;
    c.input_dim = 2;
    c.hidden_dims = {4};
    c.feature_dim = 3;
    auto m = init_model(c, 8);
    Tensor x = random_input(6, 2, 3);
    std::vector<int> y{0, 1, 1, 0, 1, 0};
    ad::Tape t1;
    ModelGraph g1(t1, m);
    std::vector<double> ones(6, 1.0);
    double weighted = importance_weighted_sup(g1, x, y, ones).value.value().item();
    double plain = ad::mean(ad::cross_entropy(g1.logits(x), one_hot(y, 2))).value().item();
    CHECK(weighted == plain);

    // A zero-weight sample contributes nothing but still counts in 1/n.
    std::vector<double> w{0.5, 2.0, 0.0, 1.0, 1.5, 0.7};
    double with_zero = importance_weighted_sup(g1, x, y, w).value.value().item();
    std::vector<std::size_t> keep{0, 1, 3, 4, 5};
    std::vector<int> yk{0, 1, 0, 1, 0};
    std::vector<double> wk{0.5, 2.0, 1.0, 1.5, 0.7};
    double without = importance_weighted_sup(g1, x.gather_rows(keep), yk, wk).value.value().item();
    CHECK(with_zero * 6 == doctest::Approx(without * 5).epsilon(1e-14));

    w[2] = -0.1;
    CHECK_THROWS_AS(importance_weighted_sup(g1, x, y, w), DataError);
  }

  TEST_CASE("combine keeps both terms and rejects non-finite ones") {
    ad::Tape tape;
    LossTerm a{"dann", tape.constant(Tensor::scalar(0.5)), 2.0};
    LossTerm b{"fixmatch", tape.constant(Tensor::scalar(0.25)), 3.0};
    auto both = combine_uda_ssl(a, b);
    REQUIRE(both.size() == 2);
    CHECK(both[0].name == "dann");
    CHECK(both[1].weight == 3.0);
    LossTerm bad{"vat", tape.constant(Tensor::scalar(std::nan(""))), 1.0};
    CHECK_THROWS(combine_uda_ssl(a, bad));
  }

  TEST_CASE("discriminator density ratio is positive and finite") {
    auto m = init_model(disc_config(DiscriminatorInput::features), 2);
    auto r = discriminator_density_ratio(m, random_input(10, 2, 1), 100, 50);
    for (double v : r) {
      CHECK(v > 0.0);
      CHECK(std::isfinite(v));
    }
    neutral_discriminator(m);
    for (double v : discriminator_density_ratio(m, random_input(3, 2, 1), 100, 50)) CHECK(v == doctest::Approx(2.0));
  }
}
