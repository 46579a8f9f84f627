#include <cmath>

#include <doctest.h>

#include "arcl/autodiff.hpp"
#include "arcl/errors.hpp"
#include "arcl/model.hpp"
#include "helpers.hpp"

using namespace arcl;
using testing::mat;

TEST_SUITE("autodiff") {

TEST_CASE("elementwise and matrix ops") {
  CHECK(ad::relu(Var::constant(mat({{-1, 0, 2}}))).value() == mat({{0, 0, 2}}));
  CHECK(ad::add(Var::constant(mat({{1, 2}})), Var::constant(mat({{3, 4}}))).value() == mat({{4, 6}}));
  CHECK(ad::matmul(Var::constant(mat({{1, 2}})), Var::constant(mat({{3}, {4}}))).item() == 11.0);
}

TEST_CASE("a one-row operand broadcasts over the batch") {
  const Var sum = ad::add(Var::constant(mat({{1, 2}, {3, 4}})), Var::constant(mat({{10, 20}})));
  CHECK(sum.value() == mat({{11, 22}, {13, 24}}));
}

TEST_CASE("shape mismatches name the op and both shapes") {
  const Var a = Var::constant(mat({{1, 2, 3}}));
  const Var b = Var::constant(mat({{1, 2}}));
  CHECK_THROWS_AS(ad::add(a, b), DimensionError);
  try {
    ad::matmul(a, b);
    FAIL("expected a dimension error");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("1x3") != std::string::npos);
    CHECK(msg.find("1x2") != std::string::npos);
  }
  CHECK_THROWS_AS(ad::kl_divergence(a, b), DimensionError);
}

TEST_CASE("cross-entropy values") {
  const int zero = 0;
  std::span<const int> y(&zero, 1);
  CHECK(ad::softmax_cross_entropy(Var::constant(mat({{0, 0}})), y).item() == doctest::Approx(std::log(2.0)));
  // -log(sigmoid(20)) = log(1 + e^-20)
  const double expected = std::log1p(std::exp(-20.0));
  const double got = ad::softmax_cross_entropy(Var::constant(mat({{10, -10}})), y).item();
  CHECK(std::abs(got - expected) < 1e-15);
  CHECK(got == doctest::Approx(2.06e-9).epsilon(0.01));
}

TEST_CASE("cross-entropy rejects labels outside the head") {
  const std::vector<int> y{2};
  CHECK_THROWS_AS(ad::softmax_cross_entropy(Var::constant(mat({{0, 0}})), y), InputError);
  const std::vector<int> negative{-1};
  CHECK_THROWS_AS(ad::softmax_cross_entropy(Var::constant(mat({{0, 0}})), negative), InputError);
}

TEST_CASE("cross-entropy gradient is (softmax - onehot) / n") {
  Rng rng(3);
  const Matrix z = testing::uniform(rng, 4, 5, -3, 3);
  const std::vector<int> y{0, 4, 2, 2};
  Var logits = Var::leaf(z);
  ad::backward(ad::softmax_cross_entropy(logits, y));
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    double norm = 0;
    for (Eigen::Index c = 0; c < z.cols(); ++c) norm += std::exp(z(r, c));
    for (Eigen::Index c = 0; c < z.cols(); ++c) {
      const double expected = (std::exp(z(r, c)) / norm - (c == y[r] ? 1.0 : 0.0)) / 4.0;
      CHECK(std::abs(logits.grad()(r, c) - expected) < 1e-12);
    }
  }
}

TEST_CASE("kl divergence") {
  const Matrix p = mat({{0, 0}});
  CHECK(ad::kl_divergence(Var::constant(p), Var::constant(p)).item() == doctest::Approx(0.0));
  const double expected = 0.5 * std::log(0.5 / 0.75) + 0.5 * std::log(0.5 / 0.25);
  const double got = ad::kl_divergence(Var::constant(p), Var::constant(mat({{std::log(3.0), 0}}))).item();
  CHECK(std::abs(got - expected) < 1e-12);
  CHECK(got == doctest::Approx(0.143841).epsilon(1e-5));
}

TEST_CASE("kl divergence is non-negative on random pairs") {
  Rng rng(11);
  for (int i = 0; i < 500; ++i) {
    const Matrix p = testing::uniform(rng, 3, 6, -8, 8);
    const Matrix q = testing::uniform(rng, 3, 6, -8, 8);
    CHECK(ad::kl_divergence(Var::constant(p), Var::constant(q)).item() >= -1e-12);
  }
}

TEST_CASE("backward basics") {
  Var x = Var::leaf(mat({{3}}));
  ad::backward(ad::mul(x, x));
  CHECK(x.grad()(0, 0) == 6.0);

  Var r = Var::leaf(mat({{-1, 2}}));
  ad::backward(ad::sum(ad::relu(r)));
  CHECK(r.grad() == mat({{0, 1}}));

  Var kink = Var::leaf(mat({{0}}));
  ad::backward(ad::sum(ad::relu(kink)));
  CHECK(kink.grad()(0, 0) == 0.0);
}

TEST_CASE("backward needs a scalar root") {
  Var x = Var::leaf(mat({{1, 2}}));
  CHECK_THROWS_AS(ad::backward(ad::relu(x)), UsageError);
}

TEST_CASE("a second backward without zeroing doubles leaf gradients exactly") {
  Rng rng(5);
  Var w = Var::leaf(testing::uniform(rng, 3, 2, -1, 1));
  const Var x = Var::constant(testing::uniform(rng, 4, 3, -1, 1));
  const std::vector<int> y{0, 1, 1, 0};
  const Var loss = ad::softmax_cross_entropy(ad::matmul(x, w), y);
  ad::backward(loss);
  const Matrix once = w.grad();
  ad::backward(loss);
  CHECK(w.grad() == (2.0 * once).eval());
  w.zero_grad();
  CHECK(w.grad().isZero(0.0));
}

TEST_CASE("finite differences on a quadratic are exact up to roundoff") {
  Rng rng(7);
  const Matrix a = testing::uniform(rng, 1, 5, -2, 2);
  auto quad = [&](const Var& x) { return ad::sum(ad::mul(ad::mul(x, x), Var::constant(a))); };
  CHECK(ad::finite_difference_check(quad, testing::uniform(rng, 1, 5, -1, 1), 1e-4) < 1e-8);
}

TEST_CASE("finite differences on an 8-16-4 MLP, parameters and inputs") {
  Rng rng(13);
  Mlp model = Mlp::init({8, 16, 4}, 21);
  const Matrix x = testing::uniform(rng, 4, 8, 0, 1);
  const std::vector<int> y{0, 3, 1, 2};

  // Input gradient.
  auto by_input = [&](const Var& in) { return ad::softmax_cross_entropy(forward(parameter_leaves(model, false), in), y); };
  CHECK(ad::finite_difference_check(by_input, x, 1e-4) < 1e-5);

  // Every parameter block.
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    auto by_weight = [&](const Var& w) {
      Parameters p = parameter_leaves(model, false);
      p.weights[l] = w;
      return ad::softmax_cross_entropy(forward(p, Var::constant(x)), y);
    };
    CHECK(ad::finite_difference_check(by_weight, model.weight(l), 1e-4) < 1e-5);
    auto by_bias = [&](const Var& b) {
      Parameters p = parameter_leaves(model, false);
      p.biases[l] = b;
      return ad::softmax_cross_entropy(forward(p, Var::constant(x)), y);
    };
    CHECK(ad::finite_difference_check(by_bias, Matrix(model.bias(l)), 1e-4) < 1e-5);
  }
}

TEST_CASE("mse, log, exp and mean gradients") {
  Rng rng(17);
  const Matrix target = testing::uniform(rng, 3, 4, -1, 1);
  auto loss = [&](const Var& x) {
    return ad::mean(ad::exp(ad::scale(x, 0.5))) + ad::mse(x, target) + ad::sum(ad::log(ad::exp(x)));
  };
  CHECK(ad::finite_difference_check(loss, testing::uniform(rng, 3, 4, -1, 1), 1e-4) < 1e-7);
}

TEST_CASE("mse with matching target is zero and rejects other shapes") {
  const Matrix t = mat({{1, 2}, {3, 4}});
  CHECK(ad::mse(Var::constant(t), t).item() == 0.0);
  CHECK_THROWS_AS(ad::mse(Var::constant(t), mat({{1, 2}})), DimensionError);
}

TEST_CASE("row_max picks the first maximum and routes the gradient there") {
  std::vector<Eigen::Index> where;
  Var x = Var::leaf(mat({{1, 5, 5}, {7, 2, 3}}));
  const Var m = ad::row_max(x, &where);
  CHECK(m.value() == mat({{5}, {7}}));
  CHECK(where == std::vector<Eigen::Index>{1, 0});
  ad::backward(ad::sum(m));
  CHECK(x.grad() == mat({{0, 1, 0}, {1, 0, 0}}));
}

TEST_CASE("single precision instantiation") {
  using VarF = ad::Var<float>;
  MatrixX<float> v(1, 2);
  v << 1.0f, -2.0f;
  VarF x = VarF::leaf(v);
  ad::backward(ad::sum(ad::relu(x)));
  CHECK(x.grad()(0, 0) == 1.0f);
  CHECK(x.grad()(0, 1) == 0.0f);
}

}
