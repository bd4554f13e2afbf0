// Copyright (c) 2026, The PromptMix Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "promptmix/dataio.hpp"
#include "promptmix/error.hpp"
#include "promptmix/objective.hpp"

namespace promptmix {

enum class EvalMode { kFewShot, kBaseToNew };

inline std::string to_string(EvalMode m) { return m == EvalMode::kFewShot ? "few-shot" : "base-to-new"; }
inline EvalMode parse_eval_mode(const std::string& s) {
  if (s == "few-shot") return EvalMode::kFewShot;
  if (s == "base-to-new") return EvalMode::kBaseToNew;
  throw ConfigError("unknown mode \"" + s + "\" (expected few-shot or base-to-new)");
}

/// Every knob of a training run. Serialized verbatim into checkpoints; the
/// text form is `key = value`, one per line, keys equal to the field names.
struct TrainConfig {
  std::size_t G = 4;
  std::size_t K = 2;
  double tau = 0.07;
  double lambda1 = 1.0;
  double lambda2 = 5.0;
  double learning_rate = 2e-3;
  double momentum = 0.9;
  std::size_t warmup_epochs = 1;
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;
  std::size_t shots = 16;
  EvalMode mode = EvalMode::kFewShot;
  bool virtual_classes = false;
  bool router_cls_grad = true;
  bool renormalize_topk = true;
  double router_init_std = 0.01;

  void validate() const {
    if (G == 0) throw ConfigError("G must be positive");
    if (K == 0 || K > G) throw InvalidHyperparameterError("K must satisfy 1 <= K <= G");
    if (!(tau > 0.0)) throw InvalidHyperparameterError("tau must be positive");
    if (lambda1 < 0.0 || lambda2 < 0.0) throw InvalidHyperparameterError("lambda1 and lambda2 must be >= 0");
    if (!(learning_rate > 0.0)) throw InvalidHyperparameterError("learning_rate must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw InvalidHyperparameterError("momentum must be in [0, 1)");
    if (epochs == 0 || batch_size == 0 || shots == 0) throw ConfigError("epochs, batch_size and shots must be positive");
    if (router_init_std < 0.0) throw ConfigError("router_init_std must be >= 0");
  }

  ObjectiveConfig objective() const {
    ObjectiveConfig o;
    o.temperature = tau;
    o.lambda_router = lambda1;
    o.lambda_text = lambda2;
    o.top_k = K;
    o.renormalize_topk = renormalize_topk;
    o.router_cls_grad = router_cls_grad;
    return o;
  }

  /// Applies one `key = value` assignment. Unknown keys are an error.
  void set(const std::string& key, const std::string& value) {
    auto as_size = [&](std::size_t& dst) {
      char* end = nullptr;
      const unsigned long long v = std::strtoull(value.c_str(), &end, 10);
      if (value.empty() || *end != '\0' || value[0] == '-') throw ConfigError("bad integer for " + key + ": " + value);
      dst = static_cast<std::size_t>(v);
    };
    auto as_double = [&](double& dst) {
      char* end = nullptr;
      const double v = std::strtod(value.c_str(), &end);
      if (value.empty() || *end != '\0') throw ConfigError("bad number for " + key + ": " + value);
      dst = v;
    };
    auto as_bool = [&](bool& dst) {
      if (value == "true" || value == "1") dst = true;
      else if (value == "false" || value == "0") dst = false;
      else throw ConfigError("bad boolean for " + key + ": " + value);
    };
    std::size_t tmp = 0;
    if (key == "G") as_size(G);
    else if (key == "K") as_size(K);
    else if (key == "tau") as_double(tau);
    else if (key == "lambda1") as_double(lambda1);
    else if (key == "lambda2") as_double(lambda2);
    else if (key == "learning_rate") as_double(learning_rate);
    else if (key == "momentum") as_double(momentum);
    else if (key == "warmup_epochs") as_size(warmup_epochs);
    else if (key == "epochs") as_size(epochs);
    else if (key == "batch_size") as_size(batch_size);
    else if (key == "seed") { as_size(tmp); seed = tmp; }
    else if (key == "shots") as_size(shots);
    else if (key == "mode") mode = parse_eval_mode(value);
    else if (key == "virtual_classes") as_bool(virtual_classes);
    else if (key == "router_cls_grad") as_bool(router_cls_grad);
    else if (key == "renormalize_topk") as_bool(renormalize_topk);
    else if (key == "router_init_std") as_double(router_init_std);
    else throw ConfigError("unknown config key \"" + key + "\"");
  }

  std::string serialize() const {
    std::ostringstream o;
    auto b = [](bool v) { return v ? "true" : "false"; };
    o << "G = " << G << "\n"
      << "K = " << K << "\n"
      << "tau = " << format_double(tau) << "\n"
      << "lambda1 = " << format_double(lambda1) << "\n"
      << "lambda2 = " << format_double(lambda2) << "\n"
      << "learning_rate = " << format_double(learning_rate) << "\n"
      << "momentum = " << format_double(momentum) << "\n"
      << "warmup_epochs = " << warmup_epochs << "\n"
      << "epochs = " << epochs << "\n"
      << "batch_size = " << batch_size << "\n"
      << "seed = " << seed << "\n"
      << "shots = " << shots << "\n"
      << "mode = " << to_string(mode) << "\n"
      << "virtual_classes = " << b(virtual_classes) << "\n"
      << "router_cls_grad = " << b(router_cls_grad) << "\n"
      << "renormalize_topk = " << b(renormalize_topk) << "\n"
      << "router_init_std = " << format_double(router_init_std) << "\n";
    return o.str();
  }

  /// Parses `key = value` lines; `#` starts a comment.
  void apply_text(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const std::string_view t = detail::trim(line);
      if (t.empty()) continue;
      const auto eq = t.find('=');
      if (eq == std::string_view::npos) throw ParseError("expected key = value", line_no);
      set(std::string(detail::trim(t.substr(0, eq))), std::string(detail::trim(t.substr(eq + 1))));
    }
  }

  static TrainConfig parse(const std::string& text) {
    TrainConfig c;
    c.apply_text(text);
    return c;
  }

  /// FNV-1a of the serialized form, as 16 hex digits; names run directories.
  std::string hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : serialize()) {
      h ^= ch;
      h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }
};

inline void apply_config_file(TrainConfig& cfg, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  cfg.apply_text(ss.str());
}

}  // namespace promptmix
