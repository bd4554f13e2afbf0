// Copyright (c) 2026, The PromptMix Authors
// SPDX-License-Identifier: Apache-2.0
//
// Full-objective gradient check on small random instances: analytic tape
// gradients of the total loss against central finite differences, reported
// per parameter group.
#pragma once

#include <algorithm>
#include <random>
#include <string>
#include <vector>

#include "promptmix/dataio.hpp"
#include "promptmix/encoders.hpp"
#include "promptmix/numerics/finite_difference.hpp"
#include "promptmix/objective.hpp"
#include "promptmix/prompt_bank.hpp"
#include "promptmix/router.hpp"

namespace promptmix {

struct GradCheckSpec {
  std::size_t seeds = 20;
  std::uint64_t first_seed = 1;
  std::size_t classes = 3;
  std::size_t experts = 2;
  std::size_t top_k = 2;
  std::size_t feature_dim = 8;
  std::size_t embed_dim = 8;
  std::size_t batch = 4;
  double eps = 1e-5;
  double tolerance = 1e-4;
};

inline const std::vector<std::string>& gradcheck_group_names() {
  static const std::vector<std::string> names = {"prompt contexts", "router weight", "router bias"};
  return names;
}

struct GradCheckResult {
  std::vector<double> worst;  // per gradcheck_group_names() entry
  std::size_t instances = 0;
  double tolerance = 0.0;
  bool passed() const {
    return std::all_of(worst.begin(), worst.end(), [&](double w) { return w <= tolerance; });
  }
};

namespace detail {

// Templates with a mix of prefix and suffix lengths; two per group so that the
// text loss average over templates is exercised.
inline std::vector<TemplateGroup> gradcheck_groups(std::size_t experts) {
  static const std::vector<std::vector<std::string>> pool = {
      {"itap of a {}.", "itap of the {}."},
      {"art of the {}.", "a rendering of a {}."},
      {"a {} in a video game.", "a photo of the large {}."},
      {"{} texture.", "a origami {}."},
  };
  if (experts == 0 || experts > pool.size()) throw ConfigError("gradcheck supports 1 to 4 experts");
  std::vector<TemplateGroup> out;
  for (std::size_t g = 0; g < experts; ++g) {
    TemplateGroup tg;
    tg.group_id = g;
    tg.name = "toy" + std::to_string(g);
    tg.templates = pool[g];
    out.push_back(std::move(tg));
  }
  return out;
}

}  // namespace detail

/// Worst relative error per parameter group for one random instance.
inline std::vector<double> gradcheck_instance(const GradCheckSpec& spec, std::uint64_t seed) {
  EncoderSpec es;
  es.seed = derive_seed(seed, 71);
  es.embed_dim = spec.embed_dim;
  es.feature_dim = spec.feature_dim;
  es.input_dim = spec.feature_dim;
  const Encoders enc(es);

  std::mt19937_64 rng(derive_seed(seed, 72));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::string> names = default_class_names(40);
  std::shuffle(names.begin(), names.end(), rng);
  names.resize(spec.classes);
  const ClassCatalog catalog(names, enc);
  const std::vector<TemplateGroup> groups = detail::gradcheck_groups(spec.experts);

  PromptBank bank(groups, enc);
  // Move away from the init point so no term sits exactly at a stationary value.
  for (SoftPrompt& p : bank.prompts()) {
    for (double& x : p.prefix.value.values()) x += 0.1 * normal(rng);
    for (double& x : p.suffix.value.values()) x += 0.1 * normal(rng);
  }
  RouterParameters router(spec.feature_dim, spec.experts, derive_seed(seed, 73), 0.5);
  for (double& b : router.bias.value.values()) b = 0.1 * normal(rng);
  const GroupFeatureCache cache = group_hard_features(groups, catalog, enc);

  std::vector<EncodedExample> batch;
  for (std::size_t i = 0; i < spec.batch; ++i) {
    Matrix v(1, spec.feature_dim);
    for (double& x : v.values()) x = normal(rng);
    batch.push_back({kernels::normalize_rows(v), i % spec.classes});
  }

  ObjectiveContext ctx;
  ctx.encoders = &enc;
  ctx.cls_catalog = &catalog;
  ctx.text_catalog = &catalog;
  ctx.route_cache = &cache;
  ctx.text_cache = &cache;
  ObjectiveConfig cfg;
  cfg.top_k = spec.top_k;

  std::vector<std::vector<Parameter*>> parts(3);
  for (SoftPrompt& p : bank.prompts()) {
    parts[0].push_back(&p.prefix);
    parts[0].push_back(&p.suffix);
  }
  parts[1].push_back(&router.weight);
  parts[2].push_back(&router.bias);

  bank.zero_grad();
  router.zero_grad();
  total_loss(batch, bank, router, ctx, cfg, true);

  std::vector<double> worst(parts.size(), 0.0);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    for (Parameter* p : parts[k]) {
      if (p->value.size() == 0) continue;
      const Matrix analytic = p->grad;
      const Matrix saved = p->value;
      auto f = [&](const Matrix& x) {
        p->value = x;
        const double v = total_loss(batch, bank, router, ctx, cfg, false).total;
        p->value = saved;
        return v;
      };
      const Matrix numeric = finite_difference_gradient(f, saved, spec.eps);
      worst[k] = std::max(worst[k], max_relative_error(analytic, numeric));
    }
  }
  return worst;
}

inline GradCheckResult run_gradcheck(const GradCheckSpec& spec = {}) {
  GradCheckResult r;
  r.tolerance = spec.tolerance;
  r.worst.assign(gradcheck_group_names().size(), 0.0);
  for (std::size_t s = 0; s < spec.seeds; ++s) {
    const std::vector<double> w = gradcheck_instance(spec, spec.first_seed + s);
    for (std::size_t k = 0; k < w.size(); ++k) r.worst[k] = std::max(r.worst[k], w[k]);
    ++r.instances;
  }
  return r;
}

}  // namespace promptmix
