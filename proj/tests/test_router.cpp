// Copyright (c) 2026, The PromptMix Authors
// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "promptmix/objective.hpp"
#include "promptmix/router.hpp"
#include "support.hpp"

using namespace promptmix;
using Catch::Matchers::WithinAbs;

namespace {
constexpr int kCases = 1000;
}

TEST_CASE("gate", "[router]") {
  RouterParameters zero(8, 4, 1, 0.0);
  std::mt19937_64 rng(301);
  const Matrix v = kernels::normalize_rows(test::random_matrix(rng, 1, 8));
  for (double p : gate(v, zero)) CHECK(p == 0.25);

  RouterParameters two(1, 2, 1, 0.0);
  two.bias.value = Matrix::row({std::log(3.0), 0.0});
  const auto p = gate(Matrix::row({1.0}), two);
  CHECK_THAT(p[0], WithinAbs(0.75, 1e-15));
  CHECK_THAT(p[1], WithinAbs(0.25, 1e-15));

  RouterParameters r(8, 3, 5, 0.5);
  const Matrix scaled = kernels::normalize_rows(Matrix::row({2.0, 0, 0, 0, 0, 0, 0, 0}));
  CHECK(gate(scaled, r) == gate(Matrix::row({1.0, 0, 0, 0, 0, 0, 0, 0}), r));
  CHECK_THROWS_AS(gate(Matrix(1, 7, 1.0), r), ShapeError);
  CHECK_THROWS_AS(RouterParameters(8, 0, 1), ConfigError);
}

TEST_CASE("select_topk examples", "[router]") {
  const std::vector<double> d = {0.5, 0.3, 0.15, 0.05};
  auto s = select_topk(d, 2);
  CHECK(s.indices == std::vector<std::size_t>{0, 1});
  CHECK_THAT(s.weights[0], WithinAbs(0.625, 1e-15));
  CHECK_THAT(s.weights[1], WithinAbs(0.375, 1e-15));

  s = select_topk(d, 4);
  CHECK(s.indices == std::vector<std::size_t>{0, 1, 2, 3});
  for (std::size_t i = 0; i < 4; ++i) CHECK_THAT(s.weights[i], WithinAbs(d[i], 1e-15));

  s = select_topk(std::vector<double>{0.4, 0.4, 0.2}, 1);
  CHECK(s.indices == std::vector<std::size_t>{0});
  s = select_topk(std::vector<double>{0.2, 0.4, 0.4}, 2);
  CHECK(s.indices == std::vector<std::size_t>{1, 2});

  s = select_topk(d, 2, false);
  CHECK(s.weights == std::vector<double>{0.5, 0.3});

  CHECK_THROWS_AS(select_topk(d, 5), InvalidHyperparameterError);
  CHECK_THROWS_AS(select_topk(d, 0), InvalidHyperparameterError);
}

TEST_CASE("select_topk property: normalized, bounded, sorted, pure", "[router][property]") {
  std::mt19937_64 rng(302);
  std::uniform_int_distribution<std::size_t> gdist(1, 20);
  for (int i = 0; i < kCases; ++i) {
    const std::size_t g = gdist(rng);
    const std::size_t k = std::uniform_int_distribution<std::size_t>(1, g)(rng);
    const auto d = test::random_simplex(rng, g);
    const auto s = select_topk(d, k);
    REQUIRE(s.indices.size() == k);
    double sum = 0.0, mass = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      sum += s.weights[j];
      mass += d[s.indices[j]];
      if (j > 0) CHECK(d[s.indices[j - 1]] >= d[s.indices[j]]);
    }
    CHECK_THAT(sum, WithinAbs(1.0, 1e-12));
    for (std::size_t j = 0; j < k; ++j) CHECK(s.weights[j] <= d[s.indices[j]] / mass + 1e-15);
    // Every unselected entry is no larger than the smallest selected one.
    const double floor = d[s.indices.back()];
    for (std::size_t x = 0; x < g; ++x) {
      if (std::find(s.indices.begin(), s.indices.end(), x) == s.indices.end()) CHECK(d[x] <= floor);
    }
    const auto again = select_topk(d, k);
    CHECK(again.indices == s.indices);
    CHECK(again.weights == s.weights);
  }
}

TEST_CASE("group hard features", "[router]") {
  const Encoders enc{EncoderSpec{}};
  TemplateGroup one;
  one.templates = {"a photo of a {}."};
  const std::vector<TemplateGroup> single = {one};
  const ClassCatalog dog({"dog"}, enc);
  const auto c1 = group_hard_features(single, dog, enc);
  const Matrix h = enc.encode_string("a photo of a dog.");
  for (std::size_t j = 0; j < 64; ++j) CHECK_THAT(c1.group_features(0, j), WithinAbs(h[j], 1e-15));

  SECTION("double mean equals joint mean") {
    const auto groups = take_groups(test::corpus_groups(), 10);
    const ClassCatalog cat(default_class_names(7), enc);
    const auto cache = group_hard_features(groups, cat, enc);
    for (std::size_t g = 0; g < groups.size(); ++g) {
      Matrix joint(1, 64);
      for (const std::string& t : groups[g].templates) {
        for (std::size_t c = 0; c < cat.size(); ++c) {
          joint += enc.encode_string(parse_template(t, cat.name(c)).filled);
        }
      }
      const Matrix expect = kernels::normalize_rows(joint);
      for (std::size_t j = 0; j < 64; ++j) CHECK_THAT(cache.group_features(g, j), WithinAbs(expect[j], 1e-14));
      CHECK_THAT(kernels::norm(cache.group_features.row_span(g)), WithinAbs(1.0, 1e-12));
    }
  }
  SECTION("adding a class changes every group feature") {
    const auto groups = take_groups(test::corpus_groups(), 4);
    const auto a = group_hard_features(groups, ClassCatalog(default_class_names(5), enc), enc);
    const auto b = group_hard_features(groups, ClassCatalog(default_class_names(6), enc), enc);
    for (std::size_t g = 0; g < 4; ++g) {
      bool differs = false;
      for (std::size_t j = 0; j < 64; ++j) differs = differs || a.group_features(g, j) != b.group_features(g, j);
      CHECK(differs);
    }
  }
  CHECK_THROWS_AS(group_hard_features(single, ClassCatalog(), enc), InvalidInputError);
}

TEST_CASE("hard gating distribution", "[router]") {
  GroupFeatureCache cache;
  cache.group_features = Matrix(3, 3);
  cache.group_features(0, 0) = cache.group_features(1, 1) = cache.group_features(2, 2) = 1.0;
  cache.per_template.resize(3);
  auto w = hard_gating_distribution(Matrix::row({0, 1, 0}), cache);
  CHECK(std::max_element(w.begin(), w.end()) - w.begin() == 1);

  GroupFeatureCache flat;
  flat.group_features = Matrix(2, 3);
  flat.group_features(0, 0) = flat.group_features(1, 1) = 1.0;
  flat.per_template.resize(2);
  w = hard_gating_distribution(Matrix::row({0, 0, 1}), flat);
  CHECK(w[0] == w[1]);
}

TEST_CASE("W_hard is invariant to positive rescaling of the raw image", "[router][property]") {
  const Encoders enc{EncoderSpec{}};
  const auto groups = take_groups(test::corpus_groups(), 6);
  const auto cache = group_hard_features(groups, ClassCatalog(default_class_names(10), enc), enc);
  std::mt19937_64 rng(303);
  std::uniform_real_distribution<double> alpha(1e-2, 1e2);
  for (int i = 0; i < kCases; ++i) {
    const Matrix x = test::random_matrix(rng, 1, 96);
    std::vector<double> scaled(x.data());
    const double a = alpha(rng);
    for (double& s : scaled) s *= a;
    const auto p = hard_gating_distribution(enc.image.encode(x.values()), cache);
    const auto q = hard_gating_distribution(enc.image.encode(scaled), cache);
    CHECK(std::max_element(p.begin(), p.end()) - p.begin() == std::max_element(q.begin(), q.end()) - q.begin());
    for (std::size_t g = 0; g < p.size(); ++g) CHECK_THAT(q[g], WithinAbs(p[g], 1e-14));
  }
}

TEST_CASE("L_router leaves the feature cache untouched", "[router]") {
  const Encoders enc{EncoderSpec{}};
  const auto groups = take_groups(test::corpus_groups(), 4);
  const ClassCatalog cat(default_class_names(5), enc);
  const auto cache = group_hard_features(groups, cat, enc);
  const std::uint64_t before = cache.checksum();
  RouterParameters r(64, 4, 9, 0.3);
  std::mt19937_64 rng(304);
  for (int i = 0; i < 10; ++i) {
    const Matrix v = kernels::normalize_rows(test::random_matrix(rng, 1, 64));
    Tape t;
    r.zero_grad();
    t.backward(router_loss(gate(t, t.constant(v), r), hard_gating_distribution(v, cache)));
  }
  CHECK(cache.checksum() == before);
}
