// Copyright (c) 2026, The PromptMix Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "promptmix/checkpoint.hpp"
#include "promptmix/config.hpp"
#include "promptmix/dataio.hpp"
#include "promptmix/error.hpp"
#include "promptmix/objective.hpp"
#include "promptmix/trainer.hpp"

namespace promptmix {

/// Harmonic mean of two accuracies given in percent.
inline double harmonic_mean(double base_acc, double new_acc) {
  if (!(base_acc > 0.0) || !(new_acc > 0.0)) {
    throw UndefinedMetricError("harmonic mean needs both accuracies > 0");
  }
  if (base_acc > 100.0 || new_acc > 100.0) throw InvalidInputError("accuracies are percentages in (0, 100]");
  return 2.0 * base_acc * new_acc / (base_acc + new_acc);
}

struct EvalReport {
  EvalMode mode = EvalMode::kFewShot;
  std::size_t top_k = 0;
  double accuracy = 0.0;       // few-shot: test split; base-to-new: base classes
  double base_accuracy = 0.0;  // fractions in [0, 1]
  double new_accuracy = 0.0;
  double harmonic = 0.0;       // percent; 0 when undefined
  std::size_t base_count = 0;
  std::size_t new_count = 0;
  std::size_t constructions = 0;
  std::size_t min_constructions_per_example = 0;
  std::size_t max_constructions_per_example = 0;
  double kl_initial = 0.0;
  double kl_final = 0.0;
  std::vector<MetricRow> history;
};

/// Top-1 over examples scored against `catalog`; labels index into the catalog.
/// Constructions are counted per example on the bank.
struct AccuracyResult {
  double accuracy = 0.0;
  std::size_t correct = 0;
  std::size_t total = 0;
  std::size_t constructions = 0;
  std::size_t min_per_example = 0;
  std::size_t max_per_example = 0;
};

inline AccuracyResult score_examples(std::span<const EncodedExample> examples, const Model& model,
                                     const ClassCatalog& catalog, std::size_t top_k, bool renormalize_topk) {
  AccuracyResult r;
  r.min_per_example = std::size_t(-1);
  for (const EncodedExample& ex : examples) {
    const std::size_t before = model.bank.construction_count();
    const Prediction p = predict(ex.feature, model.bank, model.router, catalog, model.encoders.text, top_k,
                                 renormalize_topk);
    const std::size_t used = model.bank.construction_count() - before;
    r.constructions += used;
    r.min_per_example = std::min(r.min_per_example, used);
    r.max_per_example = std::max(r.max_per_example, used);
    r.correct += p.label == ex.label ? 1 : 0;
    ++r.total;
  }
  if (r.total == 0) {
    r.min_per_example = 0;
    return r;
  }
  r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.total);
  return r;
}

/// Encodes dataset records whose class is in `classes`; labels become
/// positions within `classes`.
inline std::vector<EncodedExample> encode_records(const Dataset& ds, std::span<const std::size_t> indices,
                                                  std::span<const std::size_t> classes, const Encoders& enc) {
  std::vector<std::size_t> position(ds.classes(), std::size_t(-1));
  for (std::size_t i = 0; i < classes.size(); ++i) position[classes[i]] = i;
  std::vector<EncodedExample> out;
  for (std::size_t idx : indices) {
    if (idx >= ds.examples.size()) throw IndexError("example index out of range");
    const DatasetRecord& r = ds.examples[idx];
    if (position[r.class_index] == std::size_t(-1)) throw ConfigError("example class is not in the catalog");
    out.push_back({enc.image.encode(r.raw), position[r.class_index]});
  }
  return out;
}

inline void check_compatible(const Checkpoint& ck, const Dataset& ds) {
  if (!(ck.encoder == ds.encoder)) throw ConfigError("checkpoint and dataset use different encoder specs");
  if (ck.groups.size() != ck.config.G) throw ConfigError("checkpoint group count does not match its config");
}

inline void fill_accuracy(EvalReport& rep, const AccuracyResult& base, const AccuracyResult* novel) {
  rep.base_accuracy = base.accuracy;
  rep.base_count = base.total;
  rep.accuracy = base.accuracy;
  rep.constructions = base.constructions;
  rep.min_constructions_per_example = base.min_per_example;
  rep.max_constructions_per_example = base.max_per_example;
  if (novel) {
    rep.new_accuracy = novel->accuracy;
    rep.new_count = novel->total;
    rep.constructions += novel->constructions;
    if (novel->total > 0) {
      rep.min_constructions_per_example = std::min(rep.min_constructions_per_example, novel->min_per_example);
      rep.max_constructions_per_example = std::max(rep.max_constructions_per_example, novel->max_per_example);
    }
    if (base.accuracy > 0.0 && novel->accuracy > 0.0) {
      rep.harmonic = harmonic_mean(100.0 * base.accuracy, 100.0 * novel->accuracy);
    }
  }
}

/// Scores a checkpoint on the held-out part of its own split. Few-shot: the
/// test remainder over all classes. Base-to-new: base-class test examples
/// against base names, and every new-class example against new names, with
/// the same prompts and router.
inline EvalReport evaluate(const Checkpoint& ck, const Dataset& ds) {
  check_compatible(ck, ds);
  const RunSetup setup(ck.config, ds, ck.groups);
  const Model model = model_from_checkpoint(ck);

  EvalReport rep;
  rep.mode = ck.config.mode;
  rep.top_k = ck.config.K;
  rep.kl_initial = ck.kl_initial;
  rep.kl_final = ck.kl_final;
  rep.history = ck.history;

  const auto base_examples = encode_records(ds, setup.split.test, setup.train_classes, setup.encoders);
  const AccuracyResult base =
      score_examples(base_examples, model, setup.cls_catalog, ck.config.K, ck.config.renormalize_topk);
  if (ck.config.mode == EvalMode::kFewShot) {
    fill_accuracy(rep, base, nullptr);
    return rep;
  }
  std::vector<std::size_t> novel_ids;
  std::vector<bool> is_novel(ds.classes(), false);
  for (std::size_t c : setup.classes.novel) is_novel[c] = true;
  for (std::size_t i = 0; i < ds.examples.size(); ++i) {
    if (is_novel[ds.examples[i].class_index]) novel_ids.push_back(i);
  }
  const auto novel_examples = encode_records(ds, novel_ids, setup.classes.novel, setup.encoders);
  const AccuracyResult novel =
      score_examples(novel_examples, model, setup.new_catalog, ck.config.K, ck.config.renormalize_topk);
  fill_accuracy(rep, base, &novel);
  return rep;
}

/// Router whose gate equals W_hard at temperature 1: weight columns are the
/// group-mean hard features, bias zero.
inline RouterParameters hard_aligned_router(const GroupFeatureCache& cache) {
  RouterParameters r(cache.group_features.cols(), cache.groups(), 0, 0.0);
  r.weight.value = kernels::transpose(cache.group_features);
  return r;
}

/// Accuracy with no trained parameters: route by W_hard, keep the top-K
/// groups, and mix the hard features of each group's init template.
inline double zero_shot_accuracy(std::span<const EncodedExample> examples, std::span<const TemplateGroup> groups,
                                 const ClassCatalog& catalog, const Encoders& enc, std::size_t top_k,
                                 bool renormalize_topk = true) {
  if (examples.empty()) throw InvalidInputError("zero-shot accuracy needs examples");
  const GroupFeatureCache cache = group_hard_features(groups, catalog, enc);
  std::vector<Matrix> init_feats;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    init_feats.push_back(cache.per_template[g][groups[g].init_template_index]);
  }
  std::size_t correct = 0;
  for (const EncodedExample& ex : examples) {
    const TopKSelection sel = select_topk(hard_gating_distribution(ex.feature, cache), top_k, renormalize_topk);
    std::vector<Matrix> chosen;
    for (std::size_t g : sel.indices) chosen.push_back(init_feats[g]);
    const Matrix logits = class_logits(ex.feature, mixture_class_features(chosen, sel.weights));
    const auto best = std::max_element(logits.data().begin(), logits.data().end()) - logits.data().begin();
    correct += static_cast<std::size_t>(best) == ex.label ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(examples.size());
}

inline std::string eval_report_csv(const EvalReport& r) {
  std::string out = "mode,K,accuracy,base_accuracy,new_accuracy,harmonic,base_count,new_count,constructions,"
                    "kl_initial,kl_final\n";
  out += to_string(r.mode) + "," + std::to_string(r.top_k) + "," + format_double(r.accuracy) + "," +
         format_double(r.base_accuracy) + "," + format_double(r.new_accuracy) + "," + format_double(r.harmonic) +
         "," + std::to_string(r.base_count) + "," + std::to_string(r.new_count) + "," +
         std::to_string(r.constructions) + "," + format_double(r.kl_initial) + "," + format_double(r.kl_final) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Ablations

enum class AblationAxis { kComponents, kTopK };

inline AblationAxis parse_ablation_axis(const std::string& s) {
  if (s == "components") return AblationAxis::kComponents;
  if (s == "topk") return AblationAxis::kTopK;
  throw ConfigError("unknown ablation axis \"" + s + "\" (expected components or topk)");
}

struct AblationVariant {
  std::string name;
  TrainConfig config;
};

/// Configurations of one ablation, derived from a base config.
inline std::vector<AblationVariant> ablation_variants(const TrainConfig& base, AblationAxis axis) {
  std::vector<AblationVariant> out;
  if (axis == AblationAxis::kComponents) {
    TrainConfig coop = base;
    coop.G = 1;
    coop.K = 1;
    coop.lambda1 = 0.0;
    coop.lambda2 = 0.0;
    TrainConfig moe = base;
    moe.lambda1 = 0.0;
    moe.lambda2 = 0.0;
    TrainConfig router = base;
    router.lambda2 = 0.0;
    out.push_back({"baseline", coop});
    out.push_back({"+MoE", moe});
    out.push_back({"+L_router", router});
    out.push_back({"+L_text", base});
  } else {
    if (base.G < 4) throw ConfigError("top-k ablation runs K up to 4 and needs G >= 4");
    for (std::size_t k : {2, 3, 4}) {
      TrainConfig c = base;
      c.K = k;
      out.push_back({"top" + std::to_string(k), c});
    }
  }
  for (const AblationVariant& v : out) v.config.validate();
  return out;
}

/// Audit hash of a run's data split and class partition.
inline std::string split_hash(const RunSetup& setup) {
  std::uint64_t h = 0x5EED5EEDULL;
  auto mix = [&](std::span<const std::size_t> v) {
    h = splitmix64(h ^ v.size());
    for (std::size_t x : v) h = splitmix64(h ^ x);
  };
  mix(setup.split.train);
  mix(setup.split.test);
  mix(setup.classes.base);
  mix(setup.classes.novel);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

struct AblationRow {
  std::string variant;
  std::uint64_t seed = 0;
  TrainConfig config;
  std::string split_hash;
  EvalReport report;
};

/// Trains and evaluates every variant for every seed. Variants of one seed
/// share that seed, hence the same split and class partition.
inline std::vector<AblationRow> run_ablation(const TrainConfig& base, const Dataset& ds,
                                             std::span<const TemplateGroup> groups, AblationAxis axis,
                                             std::span<const std::uint64_t> seeds) {
  if (seeds.empty()) throw ConfigError("ablation needs at least one seed");
  std::vector<AblationRow> rows;
  for (std::uint64_t seed : seeds) {
    TrainConfig seeded = base;
    seeded.seed = seed;
    for (const AblationVariant& v : ablation_variants(seeded, axis)) {
      const RunSetup setup(v.config, ds, groups);
      const Checkpoint ck = train(setup);
      rows.push_back({v.name, seed, v.config, split_hash(setup), evaluate(ck, ds)});
    }
  }
  return rows;
}

inline std::vector<AblationRow> run_ablation(const TrainConfig& base, const Dataset& ds,
                                             std::span<const TemplateGroup> groups, AblationAxis axis) {
  const std::uint64_t seed = base.seed;
  return run_ablation(base, ds, groups, axis, std::span<const std::uint64_t>(&seed, 1));
}

inline std::string ablation_csv(std::span<const AblationRow> rows) {
  std::string out = "variant,seed,G,K,lambda1,lambda2,split_hash,accuracy,base_accuracy,new_accuracy,harmonic\n";
  for (const AblationRow& r : rows) {
    out += r.variant + "," + std::to_string(r.seed) + "," + std::to_string(r.config.G) + "," +
           std::to_string(r.config.K) + "," + format_double(r.config.lambda1) + "," +
           format_double(r.config.lambda2) + "," + r.split_hash + "," + format_double(r.report.accuracy) + "," +
           format_double(r.report.base_accuracy) + "," + format_double(r.report.new_accuracy) + "," +
           format_double(r.report.harmonic) + "\n";
  }
  return out;
}

struct AblationSummary {
  std::string variant;
  std::size_t runs = 0;
  double mean_accuracy = 0.0;
  double mean_new_accuracy = 0.0;
  double mean_harmonic = 0.0;
};

/// Seed-averaged accuracy per variant, in first-appearance order.
inline std::vector<AblationSummary> summarize_ablation(std::span<const AblationRow> rows) {
  std::vector<AblationSummary> out;
  for (const AblationRow& r : rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](const AblationSummary& s) { return s.variant == r.variant; });
    if (it == out.end()) {
      out.push_back({r.variant});
      it = out.end() - 1;
    }
    ++it->runs;
    it->mean_accuracy += r.report.accuracy;
    it->mean_new_accuracy += r.report.new_accuracy;
    it->mean_harmonic += r.report.harmonic;
  }
  for (AblationSummary& s : out) {
    s.mean_accuracy /= static_cast<double>(s.runs);
    s.mean_new_accuracy /= static_cast<double>(s.runs);
    s.mean_harmonic /= static_cast<double>(s.runs);
  }
  return out;
}

inline std::string ablation_summary_csv(std::span<const AblationSummary> rows) {
  std::string out = "variant,runs,mean_accuracy,mean_new_accuracy,mean_harmonic\n";
  for (const AblationSummary& s : rows) {
    out += s.variant + "," + std::to_string(s.runs) + "," + format_double(s.mean_accuracy) + "," +
           format_double(s.mean_new_accuracy) + "," + format_double(s.mean_harmonic) + "\n";
  }
  return out;
}

}  // namespace promptmix
