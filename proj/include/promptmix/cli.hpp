// Copyright (c) 2026, The PromptMix Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line driver. Kept in a header so tests can call run_cli directly.
//
// Exit codes: 0 success, 1 check failure, 2 usage or input error, 3 numeric abort.
#pragma once

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "promptmix/checkpoint.hpp"
#include "promptmix/config.hpp"
#include "promptmix/dataio.hpp"
#include "promptmix/error.hpp"
#include "promptmix/evaluation.hpp"
#include "promptmix/gradcheck.hpp"
#include "promptmix/prompt_bank.hpp"
#include "promptmix/report.hpp"
#include "promptmix/trainer.hpp"

namespace promptmix::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumeric = 3;

inline constexpr const char* kDefaultTemplates = "templates/appendix_a.txt";
inline constexpr const char* kSeedEnv = "PROMPTMIX_SEED";

/// Raised for flag-level validation failures; the message names the flag.
class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error("UsageError: " + what) {}
};

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline std::string file_hash(const std::string& path) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : read_text_file(path)) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Written before work starts and rewritten when the command finishes.
class RunManifest {
 public:
  RunManifest(std::string command, std::string path) : path_(std::move(path)) {
    doc_["command"] = std::move(command);
    doc_["started_at"] = utc_timestamp();
    doc_["status"] = "running";
    doc_["inputs"] = json::object();
    doc_["outputs"] = json::object();
    doc_["artifact_hashes"] = json::object();
  }

  void set_config(const TrainConfig& cfg) {
    doc_["config"] = cfg.serialize();
    doc_["config_hash"] = cfg.hash();
    doc_["seed"] = cfg.seed;
  }
  void set(const std::string& key, json value) { doc_[key] = std::move(value); }
  void input(const std::string& name, const std::string& path) { doc_["inputs"][name] = path; }
  void output(const std::string& name, const std::string& path) { doc_["outputs"][name] = path; }

  void write() const {
    const fs::path p(path_);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    write_text_file(path_, doc_.dump(2) + "\n");
  }

  /// Records the exit status and hashes every output that exists.
  void finish(const std::string& status, int exit_code) {
    doc_["status"] = status;
    doc_["exit_code"] = exit_code;
    doc_["finished_at"] = utc_timestamp();
    for (auto& [name, path] : doc_["outputs"].items()) {
      const std::string p = path.get<std::string>();
      if (fs::is_regular_file(p)) doc_["artifact_hashes"][name] = file_hash(p);
    }
    write();
  }

  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
  json doc_;
};

// ---------------------------------------------------------------------------
// Config flags shared by train and ablate

struct ConfigFlags {
  std::string config_file;
  std::map<std::string, std::string> values;  // flag -> raw value
};

inline const std::vector<std::pair<std::string, std::string>>& config_flag_keys() {
  static const std::vector<std::pair<std::string, std::string>> keys = {
      {"--G", "G"},
      {"--K", "K"},
      {"--tau", "tau"},
      {"--lambda1", "lambda1"},
      {"--lambda2", "lambda2"},
      {"--learning-rate", "learning_rate"},
      {"--momentum", "momentum"},
      {"--warmup-epochs", "warmup_epochs"},
      {"--epochs", "epochs"},
      {"--batch-size", "batch_size"},
      {"--seed", "seed"},
      {"--shots", "shots"},
      {"--mode", "mode"},
      {"--virtual-classes", "virtual_classes"},
      {"--router-cls-grad", "router_cls_grad"},
      {"--renormalize-topk", "renormalize_topk"},
      {"--router-init-std", "router_init_std"},
  };
  return keys;
}

inline void add_config_flags(CLI::App& app, ConfigFlags& flags) {
  app.add_option("--config", flags.config_file, "key = value config file (flags override it)");
  for (const auto& [flag, key] : config_flag_keys()) {
    app.add_option(flag, flags.values[flag], "config key " + key);
  }
}

/// defaults < config file < PROMPTMIX_SEED < flags.
inline TrainConfig resolve_config(const CLI::App& app, const ConfigFlags& flags) {
  TrainConfig cfg;
  if (!flags.config_file.empty()) {
    if (!fs::is_regular_file(flags.config_file)) throw UsageError("--config: no such file " + flags.config_file);
    apply_config_file(cfg, flags.config_file);
  }
  if (const char* env = std::getenv(kSeedEnv); env && *env) {
    try {
      cfg.set("seed", env);
    } catch (const ConfigError& e) {
      throw UsageError(std::string(kSeedEnv) + ": " + e.what());
    }
  }
  for (const auto& [flag, key] : config_flag_keys()) {
    if (app.count(flag) == 0) continue;
    try {
      cfg.set(key, flags.values.at(flag));
    } catch (const ConfigError& e) {
      throw UsageError(flag + ": " + e.what());
    }
  }
  try {
    cfg.validate();
  } catch (const Error& e) {
    throw UsageError(std::string("invalid configuration: ") + e.what());
  }
  return cfg;
}

inline void require_file(const std::string& flag, const std::string& path) {
  if (path.empty()) throw UsageError(flag + " is required");
  if (!fs::is_regular_file(path)) throw UsageError(flag + ": no such file " + path);
}

inline TemplateDocument load_templates(const std::string& path, std::ostream& err) {
  require_file("--templates", path);
  TemplateDocument doc = load_template_file(path);
  for (const std::string& w : doc.warnings) err << "warning: " << w << "\n";
  return doc;
}

inline std::string percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * fraction);
  return buf;
}

// ---------------------------------------------------------------------------
// Commands. Each returns an exit code; the manifest records it.

struct GenDataArgs {
  SyntheticSpec spec;
  EncoderSpec encoder;
  std::string templates = kDefaultTemplates;
  std::string out;
};

inline int cmd_gen_data(const GenDataArgs& a, std::ostream& out, std::ostream& err) {
  RunManifest manifest("gen-data", a.out + ".manifest.json");
  manifest.input("templates", a.templates);
  manifest.output("dataset", a.out);
  json spec = {{"classes", a.spec.classes}, {"styles", a.spec.styles}, {"per_cell", a.spec.per_cell},
               {"sigma", a.spec.sigma},     {"seed", a.spec.seed},     {"encoder", encoder_to_json(a.encoder)}};
  manifest.set("dataset_spec", spec);
  manifest.set("seed", a.spec.seed);
  manifest.write();
  try {
    if (a.spec.classes < 1) throw UsageError("--classes must be >= 1");
    if (a.spec.styles < 1) throw UsageError("--styles must be >= 1");
    if (a.spec.per_cell < 1) throw UsageError("--per-cell must be >= 1");
    if (!(a.spec.sigma >= 0.0)) throw UsageError("--sigma must be >= 0");
    try {
      a.encoder.validate();
    } catch (const Error& e) {
      throw UsageError(std::string("encoder flags: ") + e.what());
    }
    const TemplateDocument doc = load_templates(a.templates, err);
    if (a.spec.styles > doc.groups.size()) {
      throw UsageError("--styles (" + std::to_string(a.spec.styles) + ") exceeds the " +
                       std::to_string(doc.groups.size()) + " template groups in " + a.templates);
    }
    const Encoders enc(a.encoder);
    if (const fs::path parent = fs::path(a.out).parent_path(); !parent.empty()) fs::create_directories(parent);
    const Dataset ds = generate_synthetic_dataset(a.spec, enc, doc.groups);
    save_dataset(ds, a.out);
    out << "wrote " << ds.examples.size() << " examples (" << ds.classes() << " classes x " << a.spec.styles
        << " styles x " << a.spec.per_cell << ") to " << a.out << "\n";
    manifest.finish("ok", kExitOk);
    return kExitOk;
  } catch (const Error& e) {
    err << "gen-data: " << e.what() << "\n";
    manifest.finish("error", kExitUsage);
    return kExitUsage;
  }
}

struct TrainArgs {
  std::string data;
  std::string templates = kDefaultTemplates;
  std::string out_dir = "runs";
  std::string resume;
  std::optional<std::size_t> stop_after_step;
};

inline std::string write_abort_diagnostic(const fs::path& run_dir, const NumericAbort& e, const Dataset& ds,
                                          const RunSetup& setup) {
  json diag;
  diag["error"] = e.what();
  diag["step"] = e.step();
  json batch = json::array();
  for (std::size_t i : e.batch()) {
    const std::size_t idx = setup.split.train.at(i);
    const DatasetRecord& r = ds.examples.at(idx);
    batch.push_back({{"train_position", i},
                     {"dataset_index", idx},
                     {"class_index", r.class_index},
                     {"style_index", r.style_index},
                     {"raw", r.raw}});
  }
  diag["batch"] = batch;
  const std::string path = (run_dir / "abort_diagnostic.json").string();
  write_text_file(path, diag.dump(2) + "\n");
  return path;
}

inline int cmd_train(const TrainArgs& a, const TrainConfig& cfg, std::ostream& out, std::ostream& err) {
  const fs::path run_dir = fs::path(a.out_dir) / cfg.hash();
  RunManifest manifest("train", (run_dir / "train.manifest.json").string());
  manifest.set_config(cfg);
  manifest.input("data", a.data);
  manifest.input("templates", a.templates);
  if (!a.resume.empty()) manifest.input("resume", a.resume);
  const std::string ck_path = (run_dir / "checkpoint.pmx").string();
  const std::string metrics_path = (run_dir / "metrics.csv").string();
  const std::string config_path = (run_dir / "config.txt").string();
  manifest.output("checkpoint", ck_path);
  manifest.output("metrics", metrics_path);
  manifest.output("config", config_path);
  manifest.write();

  std::optional<Dataset> ds;
  std::unique_ptr<RunSetup> setup;
  try {
    require_file("--data", a.data);
    const TemplateDocument doc = load_templates(a.templates, err);
    ds = load_dataset(a.data);
    if (ds->spec.styles > doc.groups.size()) {
      throw ConfigError("dataset has " + std::to_string(ds->spec.styles) + " styles but the template file has " +
                        std::to_string(doc.groups.size()) + " groups");
    }
    setup = std::make_unique<RunSetup>(cfg, *ds, doc.groups);
    std::optional<Checkpoint> resume;
    TrainOptions opts;
    if (!a.resume.empty()) {
      require_file("--resume", a.resume);
      resume = load_checkpoint(a.resume);
      opts.resume = &*resume;
    }
    opts.stop_after_step = a.stop_after_step;
    write_text_file(config_path, cfg.serialize());
    const Checkpoint ck = train(*setup, opts);
    save_checkpoint(ck, ck_path);
    write_text_file(metrics_path, metrics_csv(ck));
    const MetricRow last = ck.history.empty() ? MetricRow{} : ck.history.back();
    out << "run " << run_dir.string() << "\n"
        << "steps " << ck.step << "  final loss " << last.total << " (cls " << last.cls << ", router "
        << last.router << ", text " << last.text << ")\n"
        << "router KL " << ck.kl_initial << " -> " << ck.kl_final << "\n";
    manifest.finish("ok", kExitOk);
    return kExitOk;
  } catch (const NumericAbort& e) {
    const std::string diag = write_abort_diagnostic(run_dir, e, *ds, *setup);
    manifest.output("diagnostic", diag);
    err << "train: numeric abort: " << e.what() << "\ndiagnostic: " << diag << "\n";
    manifest.finish("numeric-abort", kExitNumeric);
    return kExitNumeric;
  } catch (const NumericError& e) {
    err << "train: " << e.what() << "\n";
    manifest.finish("numeric-abort", kExitNumeric);
    return kExitNumeric;
  } catch (const Error& e) {
    err << "train: " << e.what() << "\n";
    manifest.finish("error", kExitUsage);
    return kExitUsage;
  }
}

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string out_dir;  // defaults to the checkpoint's directory
  std::string mode;     // optional consistency check
};

inline int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
  const fs::path dir = a.out_dir.empty() ? fs::path(a.checkpoint).parent_path() : fs::path(a.out_dir);
  RunManifest manifest("eval", (dir / "eval.manifest.json").string());
  manifest.input("checkpoint", a.checkpoint);
  manifest.input("data", a.data);
  const std::string csv_path = (dir / "eval.csv").string();
  manifest.output("report", csv_path);
  manifest.write();
  try {
    require_file("--checkpoint", a.checkpoint);
    require_file("--data", a.data);
    const Checkpoint ck = load_checkpoint(a.checkpoint);
    manifest.set_config(ck.config);
    if (!a.mode.empty() && parse_eval_mode(a.mode) != ck.config.mode) {
      throw UsageError("--mode " + a.mode + " but the checkpoint was trained in " + to_string(ck.config.mode) +
                       " mode");
    }
    const Dataset ds = load_dataset(a.data);
    const EvalReport rep = evaluate(ck, ds);
    const RunSetup setup(ck.config, ds, ck.groups);
    const auto test = encode_records(ds, setup.split.test, setup.train_classes, setup.encoders);
    const double zs = test.empty() ? 0.0
                                   : zero_shot_accuracy(test, setup.groups, setup.cls_catalog, setup.encoders,
                                                        ck.config.K, ck.config.renormalize_topk);
    write_text_file(csv_path, eval_report_csv(rep));
    if (rep.mode == EvalMode::kFewShot) {
      out << "top-1 " << percent(rep.accuracy) << " (" << rep.base_count << " test examples)\n";
    } else {
      out << "base " << percent(rep.base_accuracy) << " new " << percent(rep.new_accuracy) << " H ";
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.2f", rep.harmonic);
      out << buf << "\n";
    }
    out << "zero-shot " << percent(zs) << "\n";
    manifest.finish("ok", kExitOk);
    return kExitOk;
  } catch (const Error& e) {
    err << "eval: " << e.what() << "\n";
    manifest.finish("error", kExitUsage);
    return kExitUsage;
  }
}

struct GradCheckArgs {
  GradCheckSpec spec;
  std::string out_dir = "runs/gradcheck";
  std::string fault;
};

inline int cmd_gradcheck(const GradCheckArgs& a, std::ostream& out, std::ostream& err) {
  RunManifest manifest("gradcheck", (fs::path(a.out_dir) / "gradcheck.manifest.json").string());
  const std::string csv_path = (fs::path(a.out_dir) / "gradcheck.csv").string();
  manifest.output("report", csv_path);
  manifest.set("seeds", a.spec.seeds);
  manifest.set("seed", a.spec.first_seed);
  manifest.set("eps", a.spec.eps);
  manifest.set("tolerance", a.spec.tolerance);
  if (!a.fault.empty()) manifest.set("fault", a.fault);
  manifest.write();
  try {
#ifdef PROMPTMIX_FAULT_INJECTION
    fault::flip_softmax_backward = a.fault == "softmax-backward";
#endif
    const GradCheckResult r = run_gradcheck(a.spec);
    std::string csv = "group,worst_relative_error,tolerance\n";
    for (std::size_t k = 0; k < r.worst.size(); ++k) {
      char line[128];
      std::snprintf(line, sizeof line, "%-16s worst relative error %.3e\n",
                    (gradcheck_group_names()[k] + ":").c_str(), r.worst[k]);
      out << line;
      csv += gradcheck_group_names()[k] + "," + format_double(r.worst[k]) + "," + format_double(r.tolerance) + "\n";
    }
    write_text_file(csv_path, csv);
    char summary[128];
    std::snprintf(summary, sizeof summary, "gradcheck %s (%zu instances, tolerance %.0e)\n",
                  r.passed() ? "PASS" : "FAIL", r.instances, r.tolerance);
    out << summary;
    const int code = r.passed() ? kExitOk : kExitCheckFailed;
    manifest.finish(r.passed() ? "ok" : "check-failed", code);
    return code;
  } catch (const Error& e) {
    err << "gradcheck: " << e.what() << "\n";
    manifest.finish("error", kExitUsage);
    return kExitUsage;
  }
}

struct AblateArgs {
  std::string data;
  std::string templates = kDefaultTemplates;
  std::string out_dir = "runs";
  std::string axis;
  std::size_t num_seeds = 1;
};

inline int cmd_ablate(const AblateArgs& a, const TrainConfig& cfg, std::ostream& out, std::ostream& err) {
  const fs::path dir = fs::path(a.out_dir) / ("ablate-" + a.axis + "-" + cfg.hash());
  RunManifest manifest("ablate", (dir / "ablate.manifest.json").string());
  manifest.set_config(cfg);
  manifest.set("axis", a.axis);
  manifest.set("num_seeds", a.num_seeds);
  manifest.input("data", a.data);
  manifest.input("templates", a.templates);
  const std::string rows_path = (dir / "ablation.csv").string();
  const std::string summary_path = (dir / "ablation_summary.csv").string();
  manifest.output("rows", rows_path);
  manifest.output("summary", summary_path);
  manifest.write();
  try {
    const AblationAxis axis = parse_ablation_axis(a.axis);
    if (a.num_seeds == 0) throw UsageError("--num-seeds must be >= 1");
    require_file("--data", a.data);
    const TemplateDocument doc = load_templates(a.templates, err);
    const Dataset ds = load_dataset(a.data);
    std::vector<std::uint64_t> seeds;
    for (std::size_t i = 0; i < a.num_seeds; ++i) seeds.push_back(cfg.seed + i);
    const auto rows = run_ablation(cfg, ds, doc.groups, axis, seeds);
    const auto summary = summarize_ablation(rows);
    write_text_file(rows_path, ablation_csv(rows));
    write_text_file(summary_path, ablation_summary_csv(summary));
    for (const AblationSummary& s : summary) {
      char line[160];
      if (cfg.mode == EvalMode::kFewShot) {
        std::snprintf(line, sizeof line, "%-10s top-1 %6.2f  (%zu seeds)\n", s.variant.c_str(),
                      100.0 * s.mean_accuracy, s.runs);
      } else {
        std::snprintf(line, sizeof line, "%-10s base %6.2f  new %6.2f  H %6.2f  (%zu seeds)\n", s.variant.c_str(),
                      100.0 * s.mean_accuracy, 100.0 * s.mean_new_accuracy, s.mean_harmonic, s.runs);
      }
      out << line;
    }
    manifest.finish("ok", kExitOk);
    return kExitOk;
  } catch (const NumericError& e) {
    err << "ablate: " << e.what() << "\n";
    manifest.finish("numeric-abort", kExitNumeric);
    return kExitNumeric;
  } catch (const Error& e) {
    err << "ablate: " << e.what() << "\n";
    manifest.finish("error", kExitUsage);
    return kExitUsage;
  }
}

struct ReportArgs {
  std::vector<std::string> runs;
  std::string out_dir = "report";
};

/// A path is a run directory if it holds config.txt; otherwise its direct
/// subdirectories that do are used.
inline std::vector<fs::path> expand_run_dirs(const std::vector<std::string>& inputs) {
  std::vector<fs::path> out;
  for (const std::string& in : inputs) {
    const fs::path p(in);
    if (!fs::is_directory(p)) throw UsageError("run path is not a directory: " + in);
    if (fs::exists(p / "config.txt")) {
      out.push_back(p);
      continue;
    }
    std::vector<fs::path> children;
    for (const auto& e : fs::directory_iterator(p)) {
      if (e.is_directory() && fs::exists(e.path() / "config.txt") && fs::exists(e.path() / "metrics.csv")) {
        children.push_back(e.path());
      }
    }
    std::sort(children.begin(), children.end());
    out.insert(out.end(), children.begin(), children.end());
  }
  return out;
}

inline int cmd_report(const ReportArgs& a, std::ostream& out, std::ostream& err) {
  const fs::path dir(a.out_dir);
  RunManifest manifest("report", (dir / "report.manifest.json").string());
  json inputs = json::array();
  for (const std::string& r : a.runs) inputs.push_back(r);
  manifest.set("runs", inputs);
  const std::string metrics = (dir / "merged_metrics.csv").string();
  const std::string accuracy = (dir / "accuracy.csv").string();
  const std::string loss_svg = (dir / "loss_curves.svg").string();
  const std::string shots_svg = (dir / "shots_accuracy.svg").string();
  manifest.output("metrics", metrics);
  manifest.output("accuracy", accuracy);
  manifest.output("loss_svg", loss_svg);
  manifest.output("shots_svg", shots_svg);
  manifest.write();
  try {
    const auto dirs = expand_run_dirs(a.runs);
    if (dirs.empty()) throw UsageError("no run directories found");
    std::vector<RunRecord> records;
    for (const fs::path& d : dirs) records.push_back(load_run(d));
    const ReportOutputs rep = build_report(std::move(records));
    write_text_file(metrics, rep.metrics_csv);
    write_text_file(accuracy, rep.accuracy_csv);
    write_text_file(loss_svg, rep.loss_svg);
    write_text_file(shots_svg, rep.shots_svg);
    out << "aggregated " << dirs.size() << " runs into " << dir.string() << "\n";
    manifest.finish("ok", kExitOk);
    return kExitOk;
  } catch (const Error& e) {
    err << "report: " << e.what() << "\n";
    manifest.finish("error", kExitUsage);
    return kExitUsage;
  }
}

// ---------------------------------------------------------------------------

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"promptmix: mixture-of-prompts training on synthetic data"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Print help for every command");

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic dataset anchored to template groups");
  gen_cmd->add_option("--classes", gen.spec.classes, "number of classes")->capture_default_str();
  gen_cmd->add_option("--styles", gen.spec.styles, "number of styles (<= template groups)")->capture_default_str();
  gen_cmd->add_option("--per-cell", gen.spec.per_cell, "examples per (class, style)")->capture_default_str();
  gen_cmd->add_option("--sigma", gen.spec.sigma, "feature noise standard deviation")->capture_default_str();
  gen_cmd->add_option("--seed", gen.spec.seed, "generator seed")->capture_default_str();
  gen_cmd->add_option("--templates", gen.templates, "grouped template file")->capture_default_str();
  gen_cmd->add_option("--out", gen.out, "output dataset path")->required();
  gen_cmd->add_option("--encoder-seed", gen.encoder.seed, "frozen encoder seed")->capture_default_str();
  gen_cmd->add_option("--vocab-size", gen.encoder.vocab_size, "tokenizer vocabulary")->capture_default_str();
  gen_cmd->add_option("--embed-dim", gen.encoder.embed_dim, "token embedding dimension")->capture_default_str();
  gen_cmd->add_option("--feature-dim", gen.encoder.feature_dim, "shared feature dimension")->capture_default_str();
  gen_cmd->add_option("--input-dim", gen.encoder.input_dim, "raw image vector dimension")->capture_default_str();

  TrainArgs tr;
  ConfigFlags train_flags;
  std::size_t stop_after = 0;
  auto* train_cmd = app.add_subcommand("train", "Train soft prompts and router");
  train_cmd->add_option("--data", tr.data, "dataset file")->required();
  train_cmd->add_option("--templates", tr.templates, "grouped template file")->capture_default_str();
  train_cmd->add_option("--out-dir", tr.out_dir, "root for run directories")->capture_default_str();
  train_cmd->add_option("--resume", tr.resume, "continue from this checkpoint");
  train_cmd->add_option("--stop-after-step", stop_after, "stop once this many steps are done");
  add_config_flags(*train_cmd, train_flags);

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on its held-out split");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "checkpoint file")->required();
  eval_cmd->add_option("--data", ev.data, "dataset file")->required();
  eval_cmd->add_option("--out-dir", ev.out_dir, "where eval.csv goes (default: checkpoint directory)");
  eval_cmd->add_option("--mode", ev.mode, "few-shot or base-to-new; must match the checkpoint");

  GradCheckArgs gc;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of the full objective");
  gc_cmd->add_option("--seeds", gc.spec.seeds, "number of random instances")->capture_default_str();
  gc_cmd->add_option("--first-seed", gc.spec.first_seed, "seed of the first instance")->capture_default_str();
  gc_cmd->add_option("--eps", gc.spec.eps, "central difference step")->capture_default_str();
  gc_cmd->add_option("--tolerance", gc.spec.tolerance, "max relative error")->capture_default_str();
  gc_cmd->add_option("--out-dir", gc.out_dir, "where the report goes")->capture_default_str();
#ifdef PROMPTMIX_FAULT_INJECTION
  gc_cmd->add_option("--inject-fault", gc.fault, "test builds only: softmax-backward");
#endif

  AblateArgs ab;
  ConfigFlags ablate_flags;
  auto* ab_cmd = app.add_subcommand("ablate", "Component or top-k ablation");
  ab_cmd->add_option("--data", ab.data, "dataset file")->required();
  ab_cmd->add_option("--templates", ab.templates, "grouped template file")->capture_default_str();
  ab_cmd->add_option("--out-dir", ab.out_dir, "root for ablation directories")->capture_default_str();
  ab_cmd->add_option("--axis", ab.axis, "components or topk")->required();
  ab_cmd->add_option("--num-seeds", ab.num_seeds, "seeds seed, seed+1, ...")->capture_default_str();
  add_config_flags(*ab_cmd, ablate_flags);

  ReportArgs rp;
  auto* rp_cmd = app.add_subcommand("report", "Merge run metrics and draw SVG plots");
  rp_cmd->add_option("runs", rp.runs, "run directories, or directories containing them");
  rp_cmd->add_option("--out-dir", rp.out_dir, "output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen_cmd->parsed()) return cmd_gen_data(gen, out, err);
    if (gc_cmd->parsed()) return cmd_gradcheck(gc, out, err);
    if (eval_cmd->parsed()) return cmd_eval(ev, out, err);
    if (rp_cmd->parsed()) {
      if (rp.runs.empty()) {
        RunManifest manifest("report", (fs::path(rp.out_dir) / "report.manifest.json").string());
        manifest.write();
        err << "report: at least one run directory is required\n";
        manifest.finish("error", kExitUsage);
        return kExitUsage;
      }
      return cmd_report(rp, out, err);
    }
    if (train_cmd->parsed()) {
      if (train_cmd->count("--stop-after-step")) tr.stop_after_step = stop_after;
      return cmd_train(tr, resolve_config(*train_cmd, train_flags), out, err);
    }
    if (ab_cmd->parsed()) return cmd_ablate(ab, resolve_config(*ab_cmd, ablate_flags), out, err);
  } catch (const Error& e) {
    // Config resolution failures happen before a run directory is known.
    err << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace promptmix::cli
