// Copyright (c) 2026, The PromptMix Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "promptmix/config.hpp"
#include "promptmix/dataio.hpp"
#include "promptmix/encoders.hpp"
#include "promptmix/objective.hpp"
#include "promptmix/prompt_bank.hpp"
#include "promptmix/router.hpp"

namespace promptmix {

/// Soft prompts plus router over frozen encoders.
struct Model {
  Model(const EncoderSpec& spec, std::vector<TemplateGroup> groups, std::uint64_t seed, double router_init_std)
      : encoders(spec),
        bank(std::move(groups), encoders),
        router(spec.feature_dim, bank.size(), seed, router_init_std) {}
  Model(const Model&) = default;

  /// Trainable parameters in a fixed order: prompt prefixes/suffixes by group, then router.
  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    for (SoftPrompt& p : bank.prompts()) {
      out.push_back(&p.prefix);
      out.push_back(&p.suffix);
    }
    out.push_back(&router.weight);
    out.push_back(&router.bias);
    return out;
  }
  void zero_grad() {
    bank.zero_grad();
    router.zero_grad();
  }

  Encoders encoders;
  PromptBank bank;
  RouterParameters router;
};

struct MetricRow {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  double cls = 0.0;
  double router = 0.0;  // batch mean KL(W_router || W_hard)
  double text = 0.0;
  double total = 0.0;

  friend bool operator==(const MetricRow&, const MetricRow&) = default;
};

/// Training state sufficient to resume bit-identically.
struct Checkpoint {
  TrainConfig config;
  EncoderSpec encoder;
  std::vector<TemplateGroup> groups;
  std::vector<Parameter> parameters;  // Model::parameters() order
  std::vector<Matrix> momentum;       // same order
  std::size_t step = 0;
  std::vector<MetricRow> history;
  double kl_initial = 0.0;  // mean KL over the training set before the first step
  double kl_final = 0.0;    // mean KL over the training set after the last step
};

/// The first `count` groups of a template document, renumbered.
inline std::vector<TemplateGroup> take_groups(std::span<const TemplateGroup> groups, std::size_t count) {
  if (count == 0 || count > groups.size()) {
    throw ConfigError("G=" + std::to_string(count) + " but the template document has " +
                      std::to_string(groups.size()) + " groups");
  }
  std::vector<TemplateGroup> out(groups.begin(), groups.begin() + static_cast<std::ptrdiff_t>(count));
  for (std::size_t g = 0; g < out.size(); ++g) out[g].group_id = g;
  return out;
}

/// Derived, frozen inputs of a run: splits, catalogs, hard-feature caches and
/// encoded training examples.
class RunSetup {
 public:
  RunSetup(const TrainConfig& cfg, const Dataset& ds, std::span<const TemplateGroup> all_groups)
      : config(cfg), encoders(ds.encoder), groups(take_groups(all_groups, cfg.G)) {
    cfg.validate();
    if (ds.dim != ds.encoder.input_dim) throw ConfigError("dataset dim does not match its encoder spec");
    if (cfg.mode == EvalMode::kBaseToNew) {
      classes = split_base_new(ds.classes(), cfg.seed);
      train_classes = classes.base;
    } else {
      for (std::size_t c = 0; c < ds.classes(); ++c) train_classes.push_back(c);
      classes.base = train_classes;
      classes.seed = cfg.seed;
    }
    split = sample_few_shot(ds, cfg.shots, cfg.seed, train_classes);

    const ClassCatalog all(ds.class_names, encoders);
    cls_catalog = all.subset(train_classes);
    new_catalog = all.subset(classes.novel);
    route_cache = group_hard_features(groups, cls_catalog, encoders);
    virtual_text = cfg.mode == EvalMode::kBaseToNew && cfg.virtual_classes && !classes.novel.empty();
    if (virtual_text) {
      std::vector<std::size_t> both = classes.base;
      both.insert(both.end(), classes.novel.begin(), classes.novel.end());
      text_catalog = all.subset(both);
      text_cache = group_hard_features(groups, text_catalog, encoders);
    }

    std::vector<std::size_t> position(ds.classes(), std::size_t(-1));
    for (std::size_t i = 0; i < train_classes.size(); ++i) position[train_classes[i]] = i;
    for (std::size_t idx : split.train) {
      const DatasetRecord& r = ds.examples[idx];
      train_examples.push_back({encoders.image.encode(r.raw), position[r.class_index]});
    }
  }
  RunSetup(const RunSetup&) = delete;
  RunSetup& operator=(const RunSetup&) = delete;

  ObjectiveContext context() const {
    ObjectiveContext ctx;
    ctx.encoders = &encoders;
    ctx.cls_catalog = &cls_catalog;
    ctx.text_catalog = virtual_text ? &text_catalog : &cls_catalog;
    ctx.route_cache = &route_cache;
    ctx.text_cache = virtual_text ? &text_cache : &route_cache;
    return ctx;
  }

  std::size_t steps_per_epoch() const {
    return (train_examples.size() + config.batch_size - 1) / config.batch_size;
  }

  TrainConfig config;
  Encoders encoders;
  std::vector<TemplateGroup> groups;
  SplitSpec classes;
  std::vector<std::size_t> train_classes;
  FewShotSplit split;
  ClassCatalog cls_catalog;
  ClassCatalog new_catalog;
  ClassCatalog text_catalog;
  GroupFeatureCache route_cache;
  GroupFeatureCache text_cache;
  bool virtual_text = false;
  std::vector<EncodedExample> train_examples;
};

/// Linear warmup over `warmup_epochs`, then cosine decay to zero.
inline double learning_rate_at(const TrainConfig& cfg, std::size_t step, std::size_t steps_per_epoch) {
  const std::size_t total = cfg.epochs * steps_per_epoch;
  const std::size_t warmup = std::min(cfg.warmup_epochs * steps_per_epoch, total);
  if (step < warmup) return cfg.learning_rate * static_cast<double>(step + 1) / static_cast<double>(warmup);
  if (total == warmup) return cfg.learning_rate;
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
  return cfg.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

/// Example order for one epoch; a pure function of (seed, epoch).
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(derive_seed(seed, 0xE90C0000ULL + epoch));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

/// Mean KL(W_router || W_hard) over a set of encoded examples.
inline double mean_router_kl(std::span<const EncodedExample> examples, const RouterParameters& router,
                             const GroupFeatureCache& cache) {
  if (examples.empty()) return 0.0;
  double s = 0.0;
  for (const EncodedExample& ex : examples) {
    s += kl_divergence(gate(ex.feature, router), hard_gating_distribution(ex.feature, cache));
  }
  return s / static_cast<double>(examples.size());
}

/// Raised when a step produces a non-finite loss or parameter.
class NumericAbort : public NumericError {
 public:
  NumericAbort(const std::string& what, std::size_t step, std::vector<std::size_t> batch)
      : NumericError(what), step_(step), batch_(std::move(batch)) {}
  std::size_t step() const noexcept { return step_; }
  const std::vector<std::size_t>& batch() const noexcept { return batch_; }

 private:
  std::size_t step_;
  std::vector<std::size_t> batch_;
};

struct TrainOptions {
  const Checkpoint* resume = nullptr;  // continue from this state
  std::optional<std::size_t> stop_after_step;  // stop once `step` reaches this value
};

inline void load_parameters(Model& model, const Checkpoint& ck) {
  auto params = model.parameters();
  if (params.size() != ck.parameters.size()) throw ConfigError("checkpoint parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->value.same_shape(ck.parameters[i].value)) {
      throw ShapeError("checkpoint parameter " + ck.parameters[i].name + " has shape " +
                       ck.parameters[i].value.shape_string());
    }
    params[i]->value = ck.parameters[i].value;
  }
}

inline Model model_from_checkpoint(const Checkpoint& ck) {
  Model model(ck.encoder, ck.groups, ck.config.seed, ck.config.router_init_std);
  load_parameters(model, ck);
  return model;
}

/// Minibatch SGD with momentum on the full objective. Deterministic given the config.
inline Checkpoint train(const RunSetup& setup, const TrainOptions& opts = {}) {
  const TrainConfig& cfg = setup.config;
  Model model(setup.encoders.spec, setup.groups, cfg.seed, cfg.router_init_std);
  std::vector<Parameter*> params = model.parameters();

  Checkpoint ck;
  ck.config = cfg;
  ck.encoder = setup.encoders.spec;
  ck.groups = setup.groups;
  for (Parameter* p : params) ck.momentum.emplace_back(p->value.rows(), p->value.cols());

  if (opts.resume) {
    if (opts.resume->config.serialize() != cfg.serialize()) throw ConfigError("resume checkpoint has a different config");
    load_parameters(model, *opts.resume);
    ck.momentum = opts.resume->momentum;
    ck.step = opts.resume->step;
    ck.history = opts.resume->history;
    ck.kl_initial = opts.resume->kl_initial;
  } else {
    ck.kl_initial = mean_router_kl(setup.train_examples, model.router, setup.route_cache);
  }

  const ObjectiveContext ctx = setup.context();
  const ObjectiveConfig obj = cfg.objective();
  const std::size_t spe = setup.steps_per_epoch();
  const std::size_t total_steps = cfg.epochs * spe;
  std::vector<std::size_t> order;
  std::size_t order_epoch = std::size_t(-1);
  std::vector<EncodedExample> batch;

  while (ck.step < total_steps) {
    if (opts.stop_after_step && ck.step >= *opts.stop_after_step) break;
    const std::size_t epoch = ck.step / spe;
    if (epoch != order_epoch) {
      order = epoch_order(setup.train_examples.size(), cfg.seed, epoch);
      order_epoch = epoch;
    }
    const std::size_t begin = (ck.step % spe) * cfg.batch_size;
    const std::size_t end = std::min(begin + cfg.batch_size, order.size());
    std::vector<std::size_t> batch_ids(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                       order.begin() + static_cast<std::ptrdiff_t>(end));
    batch.clear();
    for (std::size_t i : batch_ids) batch.push_back(setup.train_examples[i]);

    model.zero_grad();
    LossBreakdown loss;
    try {
      loss = total_loss(batch, model.bank, model.router, ctx, obj, true);
    } catch (const NumericError& e) {
      throw NumericAbort(std::string("step ") + std::to_string(ck.step) + ": " + e.what(), ck.step, batch_ids);
    } catch (const DegenerateVectorError& e) {
      throw NumericAbort(std::string("step ") + std::to_string(ck.step) + ": " + e.what(), ck.step, batch_ids);
    }

    const double lr = learning_rate_at(cfg, ck.step, spe);
    for (std::size_t i = 0; i < params.size(); ++i) {
      Matrix& buf = ck.momentum[i];
      Parameter& p = *params[i];
      for (std::size_t j = 0; j < buf.size(); ++j) {
        buf[j] = cfg.momentum * buf[j] + p.grad[j];
        p.value[j] -= lr * buf[j];
      }
      if (!p.value.all_finite()) {
        throw NumericAbort("step " + std::to_string(ck.step) + ": parameter " + p.name + " became non-finite",
                           ck.step, batch_ids);
      }
    }
    ck.history.push_back({ck.step, epoch, lr, loss.cls, loss.router, loss.text, loss.total});
    ++ck.step;
  }

  ck.parameters.clear();
  for (Parameter* p : params) ck.parameters.push_back(*p);
  ck.kl_final = mean_router_kl(setup.train_examples, model.router, setup.route_cache);
  return ck;
}

inline Checkpoint train(const TrainConfig& cfg, const Dataset& ds, std::span<const TemplateGroup> groups,
                        const TrainOptions& opts = {}) {
  const RunSetup setup(cfg, ds, groups);
  return train(setup, opts);
}

inline std::string metrics_csv(const Checkpoint& ck) {
  std::string out = "step,epoch,lr,cls,router,text,total\n";
  for (const MetricRow& r : ck.history) {
    out += std::to_string(r.step) + "," + std::to_string(r.epoch) + "," + format_double(r.lr) + "," +
           format_double(r.cls) + "," + format_double(r.router) + "," + format_double(r.text) + "," +
           format_double(r.total) + "\n";
  }
  return out;
}

}  // namespace promptmix
