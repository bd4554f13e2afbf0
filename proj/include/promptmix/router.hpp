// Copyright (c) 2026, The PromptMix Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <numeric>
#include <span>
#include <vector>

#include "promptmix/encoders.hpp"
#include "promptmix/error.hpp"
#include "promptmix/numerics/tape.hpp"
#include "promptmix/prompt_bank.hpp"

namespace promptmix {

/// Linear gate over the unit image feature: logits = v W + b.
struct RouterParameters {
  RouterParameters() = default;
  RouterParameters(std::size_t feature_dim, std::size_t experts, std::uint64_t seed, double init_stddev = 0.01)
      : weight("router.weight", detail::gaussian_matrix(feature_dim, experts, init_stddev, derive_seed(seed, 11))),
        bias("router.bias", Matrix(1, experts)) {
    if (experts == 0) throw ConfigError("router needs at least one expert");
  }

  std::size_t experts() const noexcept { return weight.value.cols(); }
  std::size_t feature_dim() const noexcept { return weight.value.rows(); }
  void zero_grad() {
    weight.zero_grad();
    bias.zero_grad();
  }

  Parameter weight;
  Parameter bias;
};

using GatingDistribution = std::vector<double>;

struct TopKSelection {
  std::vector<std::size_t> indices;  // descending gate probability
  std::vector<double> weights;       // sums to 1 when renormalized
};

namespace detail {
inline void check_image_feature(const Matrix& v, std::size_t dim) {
  if (v.rows() != 1 || v.cols() != dim) {
    throw ShapeError("router input must be 1x" + std::to_string(dim) + ", got " + v.shape_string());
  }
}
}  // namespace detail

inline GatingDistribution gate(const Matrix& image_feature, const RouterParameters& params) {
  detail::check_image_feature(image_feature, params.feature_dim());
  Matrix logits = kernels::matmul(image_feature, params.weight.value);
  logits += params.bias.value;
  return kernels::softmax_rows(logits, 1.0).data();
}

inline Var gate(Tape& tape, const Var& image_feature, RouterParameters& params) {
  detail::check_image_feature(image_feature.value(), params.feature_dim());
  Var logits = ad::add(ad::matmul(image_feature, tape.parameter(params.weight)), tape.parameter(params.bias));
  return ad::softmax_rows(logits, 1.0);
}

/// Keeps the K most probable experts, ties broken toward the lower index.
inline TopKSelection select_topk(std::span<const double> dist, std::size_t k, bool renormalize = true) {
  if (k == 0 || k > dist.size()) {
    throw InvalidHyperparameterError("top-k needs 1 <= K <= G (K=" + std::to_string(k) +
                                     ", G=" + std::to_string(dist.size()) + ")");
  }
  std::vector<std::size_t> order(dist.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dist[a] > dist[b]; });
  TopKSelection sel;
  sel.indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  double mass = 0.0;
  for (std::size_t i : sel.indices) mass += dist[i];
  for (std::size_t i : sel.indices) sel.weights.push_back(renormalize ? dist[i] / mass : dist[i]);
  return sel;
}

/// Selection weights as a differentiable function of the gate output.
inline Var selection_weights(const Var& probs, const TopKSelection& sel, bool renormalize = true) {
  Var picked = ad::gather(probs, sel.indices);
  return renormalize ? ad::normalize_sum(picked) : picked;
}

/// Hard text features for every (group, template, class) plus the derived
/// per-group and per-(group, class) means.
struct GroupFeatureCache {
  // per_template[g][i] is |C| x d; row c = h_{i,c} for template i of group g.
  std::vector<std::vector<Matrix>> per_template;
  // group_features is G x d; row g = normalized mean over templates and classes.
  Matrix group_features;
  // style_class[g] is |C| x d; row c = normalized mean over the group's templates.
  std::vector<Matrix> style_class;

  std::size_t groups() const noexcept { return per_template.size(); }
  std::uint64_t checksum() const {
    std::uint64_t h = promptmix::checksum(group_features);
    for (const auto& g : per_template)
      for (const Matrix& m : g) h = splitmix64(h ^ promptmix::checksum(m));
    return h;
  }
};

inline Matrix hard_class_features(const std::string& tmpl, const ClassCatalog& catalog, const Encoders& enc) {
  Matrix out(catalog.size(), enc.spec.feature_dim);
  for (std::size_t c = 0; c < catalog.size(); ++c) {
    const Matrix f = enc.encode_string(parse_template(tmpl, catalog.name(c)).filled);
    std::copy(f.data().begin(), f.data().end(), out.row_span(c).begin());
  }
  return out;
}

inline GroupFeatureCache group_hard_features(std::span<const TemplateGroup> groups, const ClassCatalog& catalog,
                                             const Encoders& enc) {
  if (groups.empty() || catalog.empty()) throw InvalidInputError("group_hard_features needs groups and classes");
  const std::size_t d = enc.spec.feature_dim;
  GroupFeatureCache cache;
  cache.group_features = Matrix(groups.size(), d);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (groups[g].templates.empty()) throw InvalidInputError("template group is empty");
    std::vector<Matrix> feats;
    Matrix per_class(catalog.size(), d);
    for (const std::string& t : groups[g].templates) {
      feats.push_back(hard_class_features(t, catalog, enc));
      per_class += feats.back();
    }
    // Mean over templates, then over classes; both are equal-weight so the
    // double mean equals the joint mean over |I_g| * |C| features.
    Matrix mean = kernels::mean_rows(per_class);
    const Matrix unit = kernels::normalize_rows(mean);
    std::copy(unit.data().begin(), unit.data().end(), cache.group_features.row_span(g).begin());
    cache.style_class.push_back(kernels::normalize_rows(per_class));
    cache.per_template.push_back(std::move(feats));
  }
  return cache;
}

/// Softmax over cos(h_g, v) at the given temperature. A constant target.
inline GatingDistribution hard_gating_distribution(const Matrix& image_feature, const GroupFeatureCache& cache,
                                                   double temperature = 1.0) {
  detail::check_image_feature(image_feature, cache.group_features.cols());
  std::vector<double> cos(cache.groups());
  for (std::size_t g = 0; g < cache.groups(); ++g) {
    cos[g] = cosine_similarity(cache.group_features.row_span(g), image_feature.row_span(0));
  }
  return softmax(cos, temperature);
}

}  // namespace promptmix
