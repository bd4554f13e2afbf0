// Copyright (c) 2026, The PromptMix Authors
// SPDX-License-Identifier: Apache-2.0
//
// The three-part training objective:
//   total = L_cls + lambda_router * L_router + lambda_text * L_text
// L_cls is cross-entropy over cosine logits against the top-k mixture of
// per-prompt class features. L_router is KL(W_router || W_hard) against the
// hard-template reference gate. L_text asks each soft prompt's class features
// to classify its own group's hard-template features.
#pragma once

#include <cmath>
#include <map>
#include <span>
#include <vector>

#include "promptmix/encoders.hpp"
#include "promptmix/error.hpp"
#include "promptmix/numerics/tape.hpp"
#include "promptmix/prompt_bank.hpp"
#include "promptmix/router.hpp"

namespace promptmix {

struct ObjectiveConfig {
  double temperature = 0.07;
  double lambda_router = 1.0;
  double lambda_text = 5.0;
  std::size_t top_k = 2;
  bool renormalize_topk = true;
  bool router_cls_grad = true;
  double hard_gate_temperature = 1.0;

  void validate(std::size_t experts) const {
    if (!(temperature > 0.0)) throw InvalidHyperparameterError("temperature must be positive");
    if (!(hard_gate_temperature > 0.0)) throw InvalidHyperparameterError("hard gate temperature must be positive");
    if (lambda_router < 0.0 || lambda_text < 0.0) throw InvalidHyperparameterError("loss weights must be >= 0");
    if (top_k == 0 || top_k > experts) throw InvalidHyperparameterError("top-k needs 1 <= K <= G");
  }
};

struct LossBreakdown {
  double cls = 0.0;
  double router = 0.0;
  double text = 0.0;
  double total = 0.0;
  double lambda_router = 0.0;
  double lambda_text = 0.0;
};

/// One training example after the image encoder.
struct EncodedExample {
  Matrix feature;  // 1 x d, unit norm
  std::size_t label = 0;
};

/// Frozen inputs of one loss evaluation.
struct ObjectiveContext {
  const Encoders* encoders = nullptr;
  const ClassCatalog* cls_catalog = nullptr;   // classes scored by L_cls
  const ClassCatalog* text_catalog = nullptr;  // classes supervised by L_text
  const GroupFeatureCache* route_cache = nullptr;  // W_hard reference, over cls_catalog
  const GroupFeatureCache* text_cache = nullptr;   // hard features over text_catalog
};

/// Row-wise weighted sum of the selected experts' class features. Not renormalized.
inline Var mixture_class_features(std::span<const Var> per_prompt, const Var& weights) {
  return ad::weighted_sum(per_prompt, weights);
}

inline Matrix mixture_class_features(std::span<const Matrix> per_prompt, std::span<const double> weights) {
  if (per_prompt.empty() || per_prompt.size() != weights.size()) throw ShapeError("mixture: K matrices need K weights");
  Matrix out(per_prompt[0].rows(), per_prompt[0].cols());
  for (std::size_t k = 0; k < per_prompt.size(); ++k) {
    per_prompt[k].require_same_shape(out, "mixture_class_features");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += weights[k] * per_prompt[k][i];
  }
  return out;
}

/// Cosine logits of the image against each class row (1 x |C|).
inline Matrix class_logits(const Matrix& image_feature, const Matrix& class_features) {
  Matrix out(1, class_features.rows());
  for (std::size_t c = 0; c < class_features.rows(); ++c) {
    out(0, c) = cosine_similarity(image_feature.row_span(0), class_features.row_span(c));
  }
  return out;
}

inline Var classification_loss(const Var& image_feature, const Var& class_features, std::size_t label,
                               double temperature) {
  if (!(temperature > 0.0)) throw InvalidHyperparameterError("temperature must be positive");
  if (label >= class_features.rows()) throw IndexError("label out of range");
  Var probs = ad::softmax_rows(ad::cosine_matrix(image_feature, class_features), temperature);
  return ad::cross_entropy(probs, label);
}

inline double classification_loss(const Matrix& image_feature, const Matrix& class_features, std::size_t label,
                                  double temperature) {
  if (!(temperature > 0.0)) throw InvalidHyperparameterError("temperature must be positive");
  if (label >= class_features.rows()) throw IndexError("label out of range");
  const Matrix logits = class_logits(image_feature, class_features);
  return cross_entropy(softmax(logits.values(), temperature), label);
}

inline Var router_loss(const Var& router_probs, const GatingDistribution& hard) {
  return ad::kl_divergence(router_probs, Matrix::row(hard));
}

/// Grouped text supervision. `soft_features[g]` is the |C| x d class feature
/// matrix of soft prompt g over the cache's class set. For each group and
/// template i, the hard feature h_{i,y} is classified by the soft class
/// features f_c = f([t_g, c]) acting as classifier weights, exactly as image
/// features are at inference. Probabilities of the true class are averaged
/// over the group's templates before taking the log.
inline Var text_supervision_loss(Tape& tape, std::span<const Var> soft_features, const GroupFeatureCache& cache,
                                 double temperature) {
  if (!(temperature > 0.0)) throw InvalidHyperparameterError("temperature must be positive");
  if (soft_features.size() != cache.groups()) throw ShapeError("text loss needs one soft prompt per group");
  std::vector<Var> per_group;
  for (std::size_t g = 0; g < cache.groups(); ++g) {
    if (cache.per_template[g].empty()) throw InvalidInputError("template group is empty");
    std::vector<Var> per_template;
    for (const Matrix& hard : cache.per_template[g]) {
      hard.require_same_shape(soft_features[g].value(), "text_supervision_loss");
      // sim(y, c) = cos(h_{i,y}, f([t_g, c]))
      Var sim = ad::cosine_matrix(tape.constant(hard), soft_features[g]);
      per_template.push_back(ad::diagonal(ad::softmax_rows(sim, temperature)));
    }
    per_group.push_back(ad::mean_all(ad::log(ad::average(per_template))));
  }
  return ad::scale(ad::average(per_group), -1.0);
}

/// Evaluates the objective on a batch and, when `backward` is set, accumulates
/// gradients into the soft prompts and router parameters. Gradients are added
/// to whatever the parameters already hold; callers zero them per step.
/// L_cls and L_router are batch means; L_text does not depend on the batch.
inline LossBreakdown total_loss(std::span<const EncodedExample> batch, PromptBank& bank, RouterParameters& router,
                                const ObjectiveContext& ctx, const ObjectiveConfig& cfg, bool backward = true) {
  const std::size_t experts = bank.size();
  cfg.validate(experts);
  if (batch.empty()) throw InvalidInputError("empty batch");
  if (router.experts() != experts) throw ShapeError("router/expert count mismatch");
  if (ctx.route_cache->groups() != experts || ctx.text_cache->groups() != experts) {
    throw ShapeError("feature caches must cover every expert");
  }
  const TextEncoder& text = ctx.encoders->text;
  const bool shared_catalog = ctx.cls_catalog == ctx.text_catalog;

  Tape tape;
  std::map<std::size_t, Var> cls_features;
  auto features_for = [&](std::size_t g) -> Var {
    auto it = cls_features.find(g);
    if (it != cls_features.end()) return it->second;
    Var f = bank.class_text_features(tape, g, *ctx.cls_catalog, text);
    cls_features.emplace(g, f);
    return f;
  };

  std::vector<Var> cls_terms, router_terms;
  for (const EncodedExample& ex : batch) {
    if (ex.label >= ctx.cls_catalog->size()) throw IndexError("example label outside the training catalog");
    Var v = tape.constant(ex.feature);
    Var probs = gate(tape, v, router);
    const TopKSelection sel = select_topk(probs.value().values(), cfg.top_k, cfg.renormalize_topk);
    Var weights = cfg.router_cls_grad ? selection_weights(probs, sel, cfg.renormalize_topk)
                                      : tape.constant(Matrix::row(sel.weights));
    std::vector<Var> selected;
    for (std::size_t g : sel.indices) selected.push_back(features_for(g));
    Var mixed = mixture_class_features(selected, weights);
    cls_terms.push_back(classification_loss(v, mixed, ex.label, cfg.temperature));
    const GatingDistribution hard = hard_gating_distribution(ex.feature, *ctx.route_cache, cfg.hard_gate_temperature);
    router_terms.push_back(router_loss(probs, hard));
  }

  std::vector<Var> soft;
  for (std::size_t g = 0; g < experts; ++g) {
    soft.push_back(shared_catalog ? features_for(g) : bank.class_text_features(tape, g, *ctx.text_catalog, text));
  }
  Var cls = ad::average(cls_terms);
  Var rout = ad::average(router_terms);
  Var txt = text_supervision_loss(tape, soft, *ctx.text_cache, cfg.temperature);

  Var total = cls;
  if (cfg.lambda_router > 0.0) total = ad::add(total, ad::scale(rout, cfg.lambda_router));
  if (cfg.lambda_text > 0.0) total = ad::add(total, ad::scale(txt, cfg.lambda_text));

  LossBreakdown out;
  out.cls = cls.scalar();
  out.router = rout.scalar();
  out.text = txt.scalar();
  out.total = total.scalar();
  out.lambda_router = cfg.lambda_router;
  out.lambda_text = cfg.lambda_text;
  if (!std::isfinite(out.total)) throw NumericError("non-finite loss");
  if (backward) tape.backward(total);
  return out;
}

/// Top-k inference for one image feature. Builds exactly K per-prompt class
/// feature matrices.
struct Prediction {
  std::size_t label = 0;
  TopKSelection selection;
  Matrix logits;
};

inline Prediction predict(const Matrix& image_feature, const PromptBank& bank, const RouterParameters& router,
                          const ClassCatalog& catalog, const TextEncoder& text, std::size_t top_k,
                          bool renormalize_topk = true) {
  const GatingDistribution dist = gate(image_feature, router);
  Prediction p;
  p.selection = select_topk(dist, top_k, renormalize_topk);
  std::vector<Matrix> feats;
  for (std::size_t g : p.selection.indices) feats.push_back(bank.class_text_features(g, catalog, text));
  const Matrix mixed = mixture_class_features(feats, p.selection.weights);
  p.logits = class_logits(image_feature, mixed);
  p.label = static_cast<std::size_t>(std::max_element(p.logits.data().begin(), p.logits.data().end()) -
                                     p.logits.data().begin());
  return p;
}

}  // namespace promptmix
