// Copyright (c) 2026, The PromptMix Authors
// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <random>

#include "promptmix/numerics/finite_difference.hpp"
#include "promptmix/numerics/tape.hpp"
#include "support.hpp"

using namespace promptmix;
using Catch::Approx;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {
constexpr int kCases = 1000;
// Same bound as the full-objective gradient check.
constexpr double kTol = 1e-4;
}

TEST_CASE("softmax examples", "[numerics]") {
  const std::vector<double> zero = {0.0, 0.0};
  auto p = softmax(zero, 1.0);
  CHECK(p[0] == 0.5);
  CHECK(p[1] == 0.5);

  const std::vector<double> ln2 = {std::log(2.0), 0.0};
  p = softmax(ln2, 1.0);
  CHECK_THAT(p[0], WithinAbs(2.0 / 3.0, 1e-15));
  CHECK_THAT(p[1], WithinAbs(1.0 / 3.0, 1e-15));

  // tests/oracles/scalar_oracles.py
  const std::vector<double> logits = {0.9, 0.1, -0.3};
  p = softmax(logits, 0.07);
  CHECK_THAT(p[0], WithinRel(0.999989084090731264996173136437, 1e-14));
  CHECK_THAT(p[1], WithinRel(0.0000108800214553398246022717094921, 1e-12));
  CHECK_THAT(p[2], WithinRel(0.0000000358878133951792245918538657965, 1e-12));
}

TEST_CASE("softmax errors", "[numerics]") {
  const std::vector<double> v = {1.0, 2.0};
  CHECK_THROWS_AS(softmax(v, 0.0), InvalidHyperparameterError);
  CHECK_THROWS_AS(softmax(v, -1.0), InvalidHyperparameterError);
  CHECK_THROWS_AS(softmax(std::vector<double>{}, 1.0), InvalidInputError);
  const std::vector<double> huge = {1000.0, 0.0};
  auto p = softmax(huge, 0.07);
  CHECK(p[0] == 1.0);
  CHECK(std::isfinite(p[1]));
}

TEST_CASE("softmax property: normalized and shift invariant", "[numerics][property]") {
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<int> len(1, 12);
  std::uniform_real_distribution<double> tau(0.05, 5.0), shift(-50.0, 50.0);
  for (int i = 0; i < kCases; ++i) {
    const Matrix l = test::random_matrix(rng, 1, static_cast<std::size_t>(len(rng)), 3.0);
    const double t = tau(rng), s = shift(rng);
    const auto p = softmax(l.values(), t);
    double sum = 0.0;
    for (double x : p) {
      CHECK(x > 0.0);
      CHECK(x <= 1.0);
      sum += x;
    }
    CHECK_THAT(sum, WithinAbs(1.0, 1e-12));
    std::vector<double> shifted(l.data());
    for (double& x : shifted) x += s;
    const auto q = softmax(shifted, t);
    for (std::size_t j = 0; j < p.size(); ++j) CHECK_THAT(q[j], WithinAbs(p[j], 1e-12));
  }
}

TEST_CASE("cosine similarity examples", "[numerics]") {
  const std::vector<double> v = {0.3, -1.2, 2.0};
  const std::vector<double> neg = {-0.3, 1.2, -2.0};
  CHECK(cosine_similarity(v, v) == Approx(1.0).margin(1e-15));
  CHECK(cosine_similarity(v, neg) == Approx(-1.0).margin(1e-15));
  CHECK(cosine_similarity(std::vector<double>{1, 0}, std::vector<double>{0, 1}) == 0.0);
  CHECK_THROWS_AS(cosine_similarity(v, std::vector<double>{0, 0, 0}), DegenerateVectorError);
  CHECK_THROWS_AS(cosine_similarity(v, std::vector<double>{1, 2}), ShapeError);
}

TEST_CASE("cosine property: symmetric, bounded, scale invariant", "[numerics][property]") {
  std::mt19937_64 rng(102);
  std::uniform_real_distribution<double> alpha(1e-3, 1e3);
  for (int i = 0; i < kCases; ++i) {
    const Matrix a = test::random_matrix(rng, 1, 8), b = test::random_matrix(rng, 1, 8);
    const double c = cosine_similarity(a.values(), b.values());
    CHECK(c >= -1.0);
    CHECK(c <= 1.0);
    CHECK(c == cosine_similarity(b.values(), a.values()));
    std::vector<double> scaled(a.data());
    const double k = alpha(rng);
    for (double& x : scaled) x *= k;
    CHECK_THAT(cosine_similarity(scaled, b.values()), WithinAbs(c, 1e-12));
  }
}

TEST_CASE("kl divergence examples", "[numerics]") {
  const std::vector<double> p = {0.2, 0.8};
  CHECK(kl_divergence(p, p) == 0.0);
  CHECK_THAT(kl_divergence(std::vector<double>{1.0, 0.0}, std::vector<double>{0.5, 0.5}),
             WithinAbs(std::numbers::ln2, 1e-15));
  // tests/oracles/scalar_oracles.py
  CHECK_THAT(kl_divergence(std::vector<double>{0.7, 0.3}, std::vector<double>{0.4, 0.6}),
             WithinRel(0.183786897386812287564452313931, 1e-14));
  CHECK_THROWS_AS(kl_divergence(p, std::vector<double>{1.0}), ShapeError);
  CHECK_THROWS_AS(kl_divergence(std::vector<double>{0.5, 0.6}, p), InvalidDistributionError);
}

TEST_CASE("kl property: nonnegative, zero on identical inputs", "[numerics][property]") {
  std::mt19937_64 rng(103);
  std::uniform_int_distribution<std::size_t> len(1, 20);
  for (int i = 0; i < kCases; ++i) {
    const std::size_t n = len(rng);
    const auto p = test::random_simplex(rng, n), q = test::random_simplex(rng, n);
    CHECK(kl_divergence(p, q) >= 0.0);
    CHECK(kl_divergence(p, p) == Approx(0.0).margin(1e-15));
  }
}

TEST_CASE("cross entropy examples", "[numerics]") {
  CHECK_THAT(cross_entropy(std::vector<double>{0.25, 0.75}, 0), WithinAbs(std::log(4.0), 1e-15));
  CHECK_THAT(cross_entropy(std::vector<double>{1.0 - 1e-15, 1e-15}, 0), WithinAbs(0.0, 1e-14));
  const std::vector<double> uniform(7, 1.0 / 7.0);
  CHECK_THAT(cross_entropy(uniform, 3), WithinAbs(std::log(7.0), 1e-14));
  CHECK_THROWS_AS(cross_entropy(uniform, 7), IndexError);
}

TEST_CASE("matrix shapes and finiteness", "[numerics]") {
  CHECK_THROWS_AS(Matrix(2, 2, std::vector<double>{1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(kernels::matmul(Matrix(2, 3), Matrix(2, 3)), ShapeError);
  Tape t;
  Var a = t.constant(Matrix::row({1.0, -1.0}));
  CHECK_THROWS_AS(ad::log(a), NumericError);
}

TEST_CASE("backward basics", "[numerics]") {
  SECTION("sum of entries gives all ones") {
    Parameter p("p", Matrix(3, 4, 0.5));
    Tape t;
    Var loss = ad::scale(ad::mean_all(t.parameter(p)), 12.0);
    CHECK(t.backward(loss) == 1);
    for (double g : p.grad.values()) CHECK_THAT(g, WithinAbs(1.0, 1e-15));
  }
  SECTION("frozen graph emits nothing") {
    Parameter u("u", Matrix::row({1.0, 2.0}), false), w("w", Matrix::row({-1.0, 0.5}), false);
    Tape t;
    Var loss = ad::cosine_similarity(t.parameter(u), t.parameter(w));
    CHECK(t.backward(loss) == 0);
    CHECK(checksum(u.grad) == checksum(Matrix(1, 2)));
    CHECK(checksum(w.grad) == checksum(Matrix(1, 2)));
  }
  SECTION("non-scalar loss is rejected") {
    Parameter p("p", Matrix(2, 2, 1.0));
    Tape t;
    CHECK_THROWS_AS(t.backward(t.parameter(p)), ShapeError);
  }
  SECTION("tape is reusable after reset") {
    Parameter p("p", Matrix::row({0.3, 0.7}));
    Tape t;
    t.backward(ad::mean_all(t.parameter(p)));
    t.reset();
    p.zero_grad();
    t.backward(ad::mean_all(t.parameter(p)));
    CHECK_THAT(p.grad[0], WithinAbs(0.5, 1e-15));
  }
}

TEST_CASE("finite difference oracle", "[numerics]") {
  auto sq = [](const Matrix& x) { return x[0] * x[0]; };
  CHECK_THAT(finite_difference_gradient(sq, Matrix::row({3.0}), 1e-5)[0], WithinAbs(6.0, 1e-8));

  std::mt19937_64 rng(104);
  SECTION("softmax then cross entropy matches p - onehot") {
    for (int i = 0; i < 20; ++i) {
      const Matrix l = test::random_matrix(rng, 1, 5);
      const std::size_t y = static_cast<std::size_t>(i % 5);
      auto f = [&](const Matrix& x) { return cross_entropy(softmax(x.values(), 1.0), y); };
      const Matrix num = finite_difference_gradient(f, l, 1e-5);
      auto p = softmax(l.values(), 1.0);
      p[y] -= 1.0;
      for (std::size_t j = 0; j < 5; ++j) CHECK_THAT(num[j], WithinAbs(p[j], 1e-6));
    }
  }
  SECTION("kl first argument matches ln(p/q) + 1") {
    for (int i = 0; i < 20; ++i) {
      const auto p = test::random_simplex(rng, 4), q = test::random_simplex(rng, 4);
      // The unconstrained sum p (ln p - ln q), differentiated entrywise.
      auto f = [&](const Matrix& x) {
        double s = 0.0;
        for (std::size_t j = 0; j < 4; ++j) s += x[j] * (std::log(x[j]) - std::log(q[j]));
        return s;
      };
      const Matrix num = finite_difference_gradient(f, Matrix::row(p), 1e-7);
      for (std::size_t j = 0; j < 4; ++j) CHECK_THAT(num[j], WithinAbs(std::log(p[j] / q[j]) + 1.0, 1e-6));
    }
  }
  CHECK_THROWS_AS(finite_difference_gradient(sq, Matrix::row({1.0}), 0.0), InvalidHyperparameterError);
}

namespace {

// Analytic vs numeric gradient of a scalar function of one parameter.
double op_gradcheck(Parameter& p, const std::function<Var(Tape&, Var)>& build) {
  Tape t;
  p.zero_grad();
  t.backward(build(t, t.parameter(p)));
  const Matrix analytic = p.grad;
  const Matrix saved = p.value;
  auto f = [&](const Matrix& x) {
    Tape tt;
    p.value = x;
    const double v = build(tt, tt.parameter(p)).scalar();
    p.value = saved;
    return v;
  };
  return max_relative_error(analytic, finite_difference_gradient(f, saved, 1e-5));
}

}  // namespace

TEST_CASE("per-op gradients match finite differences", "[numerics]") {
  std::mt19937_64 rng(105);
  const Matrix frozen = test::random_matrix(rng, 4, 3);
  const Matrix tall = test::random_matrix(rng, 4, 2);
  const Matrix target = Matrix::row({0.1, 0.2, 0.3, 0.4});
  for (int s = 0; s < 20; ++s) {
    Parameter a("a", test::random_matrix(rng, 2, 4));
    Parameter w("w", Matrix::row(test::random_simplex(rng, 4)));
    // A fixed random projection turns matrix outputs into a scalar.
    const Matrix proj = test::random_matrix(rng, 2, 3);
    auto reduce = [&](Tape& t, Var m) {
      Var prod = ad::mean_all(ad::matmul(ad::transpose(t.constant(proj)), m));
      return prod;
    };
    CHECK(op_gradcheck(a, [&](Tape& t, Var x) { return reduce(t, ad::matmul(x, t.constant(frozen))); }) < kTol);
    CHECK(op_gradcheck(a, [&](Tape& t, Var x) {
            return ad::mean_all(ad::matmul(ad::normalize_rows(x), t.constant(frozen)));
          }) < kTol);
    CHECK(op_gradcheck(a, [&](Tape& t, Var x) {
            return ad::mean_all(ad::cosine_matrix(x, t.constant(kernels::transpose(frozen))));
          }) < kTol);
    CHECK(op_gradcheck(a, [&](Tape&, Var x) {
            return ad::mean_all(ad::log(ad::softmax_rows(x, 0.3)));
          }) < kTol);
    CHECK(op_gradcheck(a, [&](Tape& t, Var x) {
            return ad::mean_all(ad::matmul(ad::mean_rows(x), t.constant(frozen)));
          }) < kTol);
    CHECK(op_gradcheck(a, [&](Tape&, Var x) {
            std::vector<Var> parts = {x, ad::scale(x, -0.5), x};
            return ad::pick(ad::softmax_rows(ad::concat_rows(parts), 1.0), 3, 1);
          }) < kTol);
    CHECK(op_gradcheck(w, [&](Tape&, Var x) {
            const std::vector<std::size_t> idx = {2, 0};
            return ad::cross_entropy(ad::normalize_sum(ad::gather(x, idx)), 1);
          }) < kTol);
    CHECK(op_gradcheck(w, [&](Tape&, Var x) { return ad::kl_divergence(x, target); }) < kTol);
    CHECK(op_gradcheck(w, [&](Tape& t, Var x) {
            std::vector<Var> mats = {t.constant(frozen), t.constant(kernels::normalize_rows(frozen)),
                                     t.constant(frozen), t.constant(frozen)};
            return ad::mean_all(ad::normalize_rows(ad::weighted_sum(mats, x)));
          }) < kTol);
    CHECK(op_gradcheck(a, [&](Tape& t, Var x) {
            std::vector<Var> xs = {x, ad::add(x, t.constant(Matrix(2, 4, 0.3)))};
            return ad::mean_all(ad::diagonal(ad::softmax_rows(ad::matmul(ad::average(xs), t.constant(tall)), 0.5)));
          }) < kTol);
  }
}
