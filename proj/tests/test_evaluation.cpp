// Copyright (c) 2026, The PromptMix Authors
// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <numeric>
#include <random>
#include <set>

#include "promptmix/evaluation.hpp"
#include "promptmix/report.hpp"
#include "support.hpp"

using namespace promptmix;
using Catch::Matchers::WithinAbs;

namespace {

struct PublishedRow {
  const char* dataset;
  double base, novel, h;
};

// MoCoOp base-to-new rows of the published comparison table.
constexpr PublishedRow kPublished[] = {
    {"ImageNet", 76.52, 69.2, 72.67},    {"Caltech101", 98.43, 94.87, 96.61}, {"OxfordPets", 95.59, 96.64, 96.11},
    {"StanfordCars", 76.34, 73.26, 74.77}, {"Flowers102", 97.18, 77.21, 86.05}, {"Food101", 90.25, 91.57, 90.90},
    {"FGVCAircraft", 38.78, 38.09, 38.43}, {"SUN397", 81.43, 77.45, 79.39},     {"DTD", 81.94, 60.99, 69.93},
    {"EuroSAT", 94.79, 85.18, 89.73},     {"UCF101", 85.28, 79.31, 82.17},
};

// SVG check: every tag closes in order, and the document is one <svg> element.
bool well_formed_svg(const std::string& s) {
  std::vector<std::string> stack;
  std::size_t pos = 0, roots = 0;
  while ((pos = s.find('<', pos)) != std::string::npos) {
    const std::size_t end = s.find('>', pos);
    if (end == std::string::npos) return false;
    std::string tag = s.substr(pos + 1, end - pos - 1);
    pos = end + 1;
    if (tag.empty() || tag[0] == '?' || tag[0] == '!') continue;
    if (tag[0] == '/') {
      if (stack.empty() || stack.back() != tag.substr(1)) return false;
      stack.pop_back();
      continue;
    }
    const bool self_closing = tag.back() == '/';
    const std::string name = tag.substr(0, tag.find_first_of(" /\n"));
    if (stack.empty()) {
      if (name != "svg") return false;
      ++roots;
    }
    if (!self_closing) stack.push_back(name);
  }
  return stack.empty() && roots == 1;
}

}  // namespace

TEST_CASE("harmonic mean", "[evaluation]") {
  for (const PublishedRow& r : kPublished) {
    INFO(r.dataset);
    CHECK_THAT(harmonic_mean(r.base, r.novel), WithinAbs(r.h, 0.02));
  }
  std::mt19937_64 rng(601);
  std::uniform_real_distribution<double> u(0.1, 100.0);
  for (int i = 0; i < 1000; ++i) {
    const double x = u(rng), y = u(rng);
    CHECK_THAT(harmonic_mean(x, x), WithinAbs(x, 1e-12));
    const double h = harmonic_mean(x, y);
    CHECK(h <= (x + y) / 2.0 + 1e-12);
    CHECK(h >= std::min(x, y) - 1e-12);
    CHECK(h == harmonic_mean(y, x));
  }
  CHECK_THROWS_AS(harmonic_mean(0.0, 50.0), UndefinedMetricError);
  CHECK_THROWS_AS(harmonic_mean(50.0, 0.0), UndefinedMetricError);
  CHECK_THROWS_AS(harmonic_mean(150.0, 50.0), InvalidInputError);
}

TEST_CASE("inference builds exactly K prompt constructions per example", "[evaluation]") {
  const Dataset ds = test::benchmark_dataset(0.3, 1, 3);
  const Encoders enc(ds.encoder);
  const auto groups = take_groups(test::corpus_groups(), 4);
  const ClassCatalog cat(ds.class_names, enc);
  std::vector<std::size_t> all(ds.examples.size()), classes(ds.classes());
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::iota(classes.begin(), classes.end(), std::size_t{0});
  const auto examples = encode_records(ds, all, classes, enc);
  for (std::size_t k : {1, 2, 4}) {
    const Model model(enc.spec, groups, 3, 0.5);
    const AccuracyResult r = score_examples(examples, model, cat, k, true);
    CHECK(r.min_per_example == k);
    CHECK(r.max_per_example == k);
    CHECK(r.constructions == k * examples.size());
  }
}

TEST_CASE("init prompts with a hard-aligned router score like zero-shot", "[evaluation]") {
  const Dataset ds = test::benchmark_dataset(0.0);
  const Encoders enc(ds.encoder);
  const auto groups = take_groups(test::corpus_groups(), 4);
  const ClassCatalog cat(ds.class_names, enc);
  std::vector<std::size_t> all(ds.examples.size()), classes(ds.classes());
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::iota(classes.begin(), classes.end(), std::size_t{0});
  const auto examples = encode_records(ds, all, classes, enc);

  Model model(enc.spec, groups, 1, 0.0);
  model.router = hard_aligned_router(group_hard_features(groups, cat, enc));

  for (std::size_t k : {1, 2}) {
    // Brute force straight from template strings: W_hard over group means,
    // top-k renormalized, mix the init template's hard class features.
    std::vector<std::vector<double>> gm(4, std::vector<double>(enc.spec.feature_dim, 0.0));
    std::vector<std::vector<Matrix>> init(4);
    for (std::size_t g = 0; g < 4; ++g) {
      for (std::size_t t = 0; t < groups[g].templates.size(); ++t) {
        for (std::size_t c = 0; c < cat.size(); ++c) {
          const Matrix h = enc.encode_string(parse_template(groups[g].templates[t], cat.name(c)).filled);
          for (std::size_t j = 0; j < gm[g].size(); ++j) gm[g][j] += h[j];
          if (t == 0) init[g].push_back(h);
        }
      }
    }
    std::size_t hit = 0;
    for (const EncodedExample& ex : examples) {
      std::vector<std::pair<double, std::size_t>> score;
      for (std::size_t g = 0; g < 4; ++g) {
        double dot = 0.0, n = 0.0;
        for (std::size_t j = 0; j < gm[g].size(); ++j) dot += gm[g][j] * ex.feature[j], n += gm[g][j] * gm[g][j];
        score.push_back({std::exp(dot / std::sqrt(n)), g});
      }
      std::stable_sort(score.begin(), score.end(), [](auto& a, auto& b) { return a.first > b.first; });
      double mass = 0.0;
      for (std::size_t i = 0; i < k; ++i) mass += score[i].first;
      std::size_t best = 0;
      double best_cos = -2.0;
      for (std::size_t c = 0; c < cat.size(); ++c) {
        std::vector<double> f(enc.spec.feature_dim, 0.0);
        for (std::size_t i = 0; i < k; ++i) {
          for (std::size_t j = 0; j < f.size(); ++j) f[j] += score[i].first / mass * init[score[i].second][c][j];
        }
        double dot = 0.0, n = 0.0;
        for (std::size_t j = 0; j < f.size(); ++j) dot += f[j] * ex.feature[j], n += f[j] * f[j];
        const double cs = dot / std::sqrt(n);
        if (cs > best_cos) best_cos = cs, best = c;
      }
      hit += best == ex.label;
    }
    const double brute = static_cast<double>(hit) / static_cast<double>(examples.size());
    INFO("K=" << k << " brute-force zero-shot " << brute);
    CHECK(score_examples(examples, model, cat, k, true).accuracy == brute);
    CHECK(zero_shot_accuracy(examples, groups, cat, enc, k) == brute);
  }
}

TEST_CASE("accuracy does not depend on example order", "[evaluation][property]") {
  const Dataset ds = test::benchmark_dataset(0.3, 1, 3);
  const Encoders enc(ds.encoder);
  const auto groups = take_groups(test::corpus_groups(), 4);
  const ClassCatalog cat(ds.class_names, enc);
  std::vector<std::size_t> all(ds.examples.size()), classes(ds.classes());
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::iota(classes.begin(), classes.end(), std::size_t{0});
  auto examples = encode_records(ds, all, classes, enc);
  const Model model(enc.spec, groups, 5, 1.0);
  const AccuracyResult ref = score_examples(examples, model, cat, 2, true);
  std::mt19937_64 rng(602);
  for (int i = 0; i < 20; ++i) {
    std::shuffle(examples.begin(), examples.end(), rng);
    const AccuracyResult r = score_examples(examples, model, cat, 2, true);
    CHECK(r.correct == ref.correct);
    CHECK(r.accuracy == ref.accuracy);
  }
  const std::vector<EncodedExample> one = {examples[0]};
  const Prediction p = predict(one[0].feature, model.bank, model.router, cat, enc.text, 2, true);
  std::vector<EncodedExample> single = {{one[0].feature, p.label}};
  CHECK(score_examples(single, model, cat, 2, true).accuracy == 1.0);
}

TEST_CASE("evaluate reports both splits in base-to-new mode", "[evaluation]") {
  const Dataset ds = test::benchmark_dataset(0.3, 1, 4);
  TrainConfig cfg;
  cfg.mode = EvalMode::kBaseToNew;
  cfg.shots = 4;
  cfg.epochs = 2;
  const Checkpoint ck = train(cfg, ds, test::corpus_groups());
  const EvalReport r = evaluate(ck, ds);
  CHECK(r.base_count == 5 * 16 - 5 * 4);
  CHECK(r.new_count == 5 * 16);
  CHECK(r.min_constructions_per_example == 2);
  CHECK(r.max_constructions_per_example == 2);
  if (r.base_accuracy > 0.0 && r.new_accuracy > 0.0) {
    CHECK_THAT(r.harmonic, WithinAbs(harmonic_mean(100 * r.base_accuracy, 100 * r.new_accuracy), 1e-12));
  }
  const std::string csv = eval_report_csv(r);
  const CsvTable t = parse_csv(csv);
  CHECK(t.rows.size() == 1);
  CHECK(t.rows[0][t.column("mode")] == "base-to-new");

  Checkpoint wrong = ck;
  wrong.encoder.seed = 99;
  CHECK_THROWS_AS(evaluate(wrong, ds), ConfigError);
}

TEST_CASE("ablation protocols", "[evaluation]") {
  const Dataset ds = test::benchmark_dataset(0.3, 1, 4);
  TrainConfig cfg;
  cfg.shots = 4;
  cfg.epochs = 1;
  const std::vector<std::uint64_t> seeds = {1, 2};
  const auto rows = run_ablation(cfg, ds, test::corpus_groups(), AblationAxis::kComponents, seeds);
  REQUIRE(rows.size() == 8);
  const std::vector<std::string> names = {"baseline", "+MoE", "+L_router", "+L_text"};
  for (std::size_t s = 0; s < 2; ++s) {
    for (std::size_t v = 0; v < 4; ++v) {
      const AblationRow& r = rows[4 * s + v];
      CHECK(r.variant == names[v]);
      CHECK(r.seed == seeds[s]);
      CHECK(r.split_hash == rows[4 * s].split_hash);
    }
  }
  CHECK(rows[0].split_hash != rows[4].split_hash);
  CHECK(rows[0].config.G == 1);
  CHECK(rows[0].config.lambda1 == 0.0);
  CHECK(rows[1].config.G == 4);
  CHECK(rows[1].config.lambda2 == 0.0);
  CHECK(rows[2].config.lambda1 == 1.0);
  CHECK(rows[2].config.lambda2 == 0.0);
  CHECK(rows[3].config.lambda2 == 5.0);

  const auto summary = summarize_ablation(rows);
  REQUIRE(summary.size() == 4);
  for (std::size_t v = 0; v < 4; ++v) {
    CHECK(summary[v].runs == 2);
    CHECK_THAT(summary[v].mean_accuracy,
               WithinAbs((rows[v].report.accuracy + rows[4 + v].report.accuracy) / 2.0, 1e-15));
  }
  CHECK(parse_csv(ablation_csv(rows)).rows.size() == 8);
  CHECK(parse_csv(ablation_summary_csv(summary)).rows.size() == 4);

  const auto topk = ablation_variants(cfg, AblationAxis::kTopK);
  REQUIRE(topk.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(topk[i].config.K == i + 2);
  TrainConfig small = cfg;
  small.G = 3;
  small.K = 2;
  CHECK_THROWS_AS(ablation_variants(small, AblationAxis::kTopK), ConfigError);
  CHECK_THROWS_AS(parse_ablation_axis("layers"), ConfigError);
}

TEST_CASE("report outputs", "[evaluation]") {
  const auto dir = test::scratch_dir("report");
  const Dataset ds = test::benchmark_dataset(0.3, 1, 4);
  std::vector<RunRecord> runs;
  for (std::size_t shots : {2, 4}) {
    TrainConfig cfg;
    cfg.shots = shots;
    cfg.epochs = 1;
    const Checkpoint ck = train(cfg, ds, test::corpus_groups());
    const auto run = dir / ("run" + std::to_string(shots));
    std::filesystem::create_directories(run);
    write_text_file((run / "config.txt").string(), cfg.serialize());
    write_text_file((run / "metrics.csv").string(), metrics_csv(ck));
    write_text_file((run / "eval.csv").string(), eval_report_csv(evaluate(ck, ds)));
    runs.push_back(load_run(run));
  }
  const ReportOutputs a = build_report(runs);
  std::vector<RunRecord> reversed(runs.rbegin(), runs.rend());
  const ReportOutputs b = build_report(reversed);
  CHECK(a.metrics_csv == b.metrics_csv);
  CHECK(a.accuracy_csv == b.accuracy_csv);
  CHECK(a.loss_svg == b.loss_svg);
  CHECK(a.shots_svg == b.shots_svg);

  const CsvTable m = parse_csv(a.metrics_csv);
  CHECK(m.header[0] == "run_id");
  std::set<std::string> ids;
  for (const auto& row : m.rows) ids.insert(row[0]);
  CHECK(ids == std::set<std::string>{"run2", "run4"});
  const CsvTable acc = parse_csv(a.accuracy_csv);
  CHECK(acc.rows.size() == 2);
  CHECK(well_formed_svg(a.loss_svg));
  CHECK(well_formed_svg(a.shots_svg));
  CHECK(!well_formed_svg("<svg><g></svg>"));

  CHECK_THROWS_AS(build_report({}), InvalidInputError);
  CHECK_THROWS_AS(load_run(dir / "missing"), DataError);
  CHECK_THROWS_AS(parse_csv("a,b\n1\n"), ParseError);
}
