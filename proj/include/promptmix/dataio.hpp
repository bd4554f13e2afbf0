// Copyright (c) 2026, The PromptMix Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "promptmix/encoders.hpp"
#include "promptmix/error.hpp"
#include "promptmix/prompt_bank.hpp"
#include "promptmix/router.hpp"

namespace promptmix {

inline constexpr const char* kDatasetMagic = "PROMPTMIX-DS";
inline constexpr const char* kDatasetVersion = "v1";

struct DatasetRecord {
  std::size_t class_index = 0;
  std::size_t style_index = 0;
  std::vector<double> raw;

  friend bool operator==(const DatasetRecord&, const DatasetRecord&) = default;
};

struct SyntheticSpec {
  std::size_t classes = 10;
  std::size_t styles = 4;
  std::size_t per_cell = 20;
  double sigma = 0.3;
  std::uint64_t seed = 1;
};

struct Dataset {
  SyntheticSpec spec;
  EncoderSpec encoder;
  std::size_t dim = 0;
  std::vector<std::string> class_names;
  std::vector<DatasetRecord> examples;

  std::size_t classes() const noexcept { return class_names.size(); }
  friend bool operator==(const Dataset& a, const Dataset& b) {
    return a.spec.classes == b.spec.classes && a.spec.styles == b.spec.styles && a.spec.per_cell == b.spec.per_cell &&
           a.spec.sigma == b.spec.sigma && a.spec.seed == b.spec.seed && a.encoder == b.encoder && a.dim == b.dim &&
           a.class_names == b.class_names && a.examples == b.examples;
  }
};

/// Short single-token nouns used as synthetic class names.
inline std::vector<std::string> default_class_names(std::size_t n) {
  static const char* const kNames[] = {
      "dog",    "cat",    "horse",  "sparrow", "tulip",  "maple",   "truck",  "canoe",  "violin", "lantern",
      "falcon", "otter",  "cactus", "bridge",  "kettle", "anchor",  "wolf",   "lemon",  "tiger",  "piano",
      "rocket", "beetle", "orchid", "castle",  "shark",  "bicycle", "pepper", "glacier", "camel", "teapot",
      "parrot", "statue", "walnut", "lobster", "tractor", "daisy",  "cobra",  "barrel", "mango",  "harp"};
  constexpr std::size_t kCount = sizeof(kNames) / sizeof(kNames[0]);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.emplace_back(i < kCount ? std::string(kNames[i]) : "object" + std::to_string(i));
  }
  return out;
}

/// Fraction of style-s cells whose style-class anchor is closest to group s.
inline double anchor_separability(const GroupFeatureCache& cache, std::size_t styles) {
  std::size_t ok = 0, total = 0;
  for (std::size_t s = 0; s < styles; ++s) {
    const Matrix& anchors = cache.style_class[s];
    for (std::size_t c = 0; c < anchors.rows(); ++c) {
      std::size_t best = 0;
      double best_cos = -2.0;
      for (std::size_t g = 0; g < cache.groups(); ++g) {
        const double cs = cosine_similarity(cache.group_features.row_span(g), anchors.row_span(c));
        if (cs > best_cos) {
          best_cos = cs;
          best = g;
        }
      }
      ok += best == s;
      ++total;
    }
  }
  return total ? static_cast<double>(ok) / static_cast<double>(total) : 1.0;
}

/// Style-clustered synthetic images generated from the frozen encoders.
///
/// Cell (c, s) holds `per_cell` raw vectors x with encode_image(x) =
/// normalize(h*_{s,c} + eps), eps ~ N(0, sigma^2 I), where h*_{s,c} is the
/// normalized mean hard feature of group s for class c. Generation fails if
/// some anchor h*_{s,c} is not closest to its own group feature h_s, since
/// then the hard-template router target would not identify the style.
inline Dataset generate_synthetic_dataset(const SyntheticSpec& spec, const Encoders& enc,
                                          std::span<const TemplateGroup> groups) {
  if (spec.classes == 0 || spec.styles == 0 || spec.per_cell == 0) throw ConfigError("dataset counts must be positive");
  if (spec.styles > groups.size()) {
    throw ConfigError("styles (" + std::to_string(spec.styles) + ") exceed template groups (" +
                      std::to_string(groups.size()) + ")");
  }
  if (!(spec.sigma >= 0.0)) throw ConfigError("sigma must be >= 0");

  Dataset ds;
  ds.spec = spec;
  ds.encoder = enc.spec;
  ds.dim = enc.image.input_dim();
  ds.class_names = default_class_names(spec.classes);
  const ClassCatalog catalog(ds.class_names, enc);
  const GroupFeatureCache cache = group_hard_features(groups, catalog, enc);
  if (anchor_separability(cache, spec.styles) < 1.0) {
    throw DataError("some style anchors are closer to another group's hard feature; choose other templates");
  }

  const std::size_t d = enc.spec.feature_dim;
  ds.examples.reserve(spec.classes * spec.styles * spec.per_cell);
  for (std::size_t c = 0; c < spec.classes; ++c) {
    for (std::size_t s = 0; s < spec.styles; ++s) {
      std::mt19937_64 rng(derive_seed(spec.seed, 1000003ULL * c + s));
      std::normal_distribution<double> noise(0.0, 1.0);
      const auto anchor = cache.style_class[s].row_span(c);
      for (std::size_t j = 0; j < spec.per_cell; ++j) {
        Matrix target(1, d);
        for (std::size_t k = 0; k < d; ++k) target(0, k) = anchor[k] + spec.sigma * noise(rng);
        target = kernels::normalize_rows(target);
        ds.examples.push_back({c, s, enc.image.lift(target.row_span(0))});
      }
    }
  }
  return ds;
}

struct FewShotSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Draws `shots` training examples per class without replacement. When shots
/// divides evenly by the style count, each style contributes shots / S.
/// `classes` restricts sampling (and the test remainder) to a class subset.
inline FewShotSplit sample_few_shot(const Dataset& ds, std::size_t shots, std::uint64_t seed,
                                    std::span<const std::size_t> classes = {}) {
  if (shots == 0) throw ConfigError("shots must be positive");
  std::vector<std::size_t> cls(classes.begin(), classes.end());
  if (cls.empty()) {
    for (std::size_t c = 0; c < ds.classes(); ++c) cls.push_back(c);
  }
  std::vector<bool> in_scope(ds.classes(), false);
  for (std::size_t c : cls) {
    if (c >= ds.classes()) throw IndexError("class index out of range");
    in_scope[c] = true;
  }

  const std::size_t styles = ds.spec.styles;
  const bool stratified = styles > 0 && shots % styles == 0;
  std::vector<bool> is_train(ds.examples.size(), false);
  for (std::size_t c : cls) {
    std::mt19937_64 rng(derive_seed(seed, 7919ULL * c + 17));
    std::vector<std::vector<std::size_t>> pools(stratified ? styles : 1);
    for (std::size_t i = 0; i < ds.examples.size(); ++i) {
      if (ds.examples[i].class_index != c) continue;
      pools[stratified ? ds.examples[i].style_index : 0].push_back(i);
    }
    const std::size_t take = stratified ? shots / styles : shots;
    for (auto& pool : pools) {
      if (pool.size() < take) {
        throw DataError("class " + std::to_string(c) + " has " + std::to_string(pool.size()) +
                        " candidates, need " + std::to_string(take));
      }
      std::shuffle(pool.begin(), pool.end(), rng);
      for (std::size_t k = 0; k < take; ++k) is_train[pool[k]] = true;
    }
  }
  FewShotSplit split;
  for (std::size_t i = 0; i < ds.examples.size(); ++i) {
    if (!in_scope[ds.examples[i].class_index]) continue;
    (is_train[i] ? split.train : split.test).push_back(i);
  }
  return split;
}

struct SplitSpec {
  std::vector<std::size_t> base;
  std::vector<std::size_t> novel;
  std::uint64_t seed = 0;
};

/// Seeded shuffle of class indices; the first ceil(C/2) are base classes.
inline SplitSpec split_base_new(std::size_t num_classes, std::uint64_t seed) {
  if (num_classes < 2) throw ConfigError("base-to-new split needs at least 2 classes");
  std::vector<std::size_t> order(num_classes);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(derive_seed(seed, 0xBA5E));
  std::shuffle(order.begin(), order.end(), rng);
  SplitSpec out;
  out.seed = seed;
  const std::size_t nbase = (num_classes + 1) / 2;
  out.base.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(nbase));
  out.novel.assign(order.begin() + static_cast<std::ptrdiff_t>(nbase), order.end());
  std::sort(out.base.begin(), out.base.end());
  std::sort(out.novel.begin(), out.novel.end());
  return out;
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline nlohmann::json encoder_to_json(const EncoderSpec& e) {
  return {{"seed", e.seed}, {"V", e.vocab_size}, {"d_emb", e.embed_dim}, {"d", e.feature_dim},
          {"input_dim", e.input_dim}};
}

inline EncoderSpec encoder_from_json(const nlohmann::json& j) {
  EncoderSpec e;
  e.seed = j.at("seed").get<std::uint64_t>();
  e.vocab_size = j.at("V").get<std::size_t>();
  e.embed_dim = j.at("d_emb").get<std::size_t>();
  e.feature_dim = j.at("d").get<std::size_t>();
  e.input_dim = j.at("input_dim").get<std::size_t>();
  return e;
}

/// Header line, then one `class,style,x_1,...,x_dim` line per record.
inline std::string serialize_dataset(const Dataset& ds) {
  nlohmann::ordered_json header;
  header["classes"] = ds.classes();
  header["styles"] = ds.spec.styles;
  header["dim"] = ds.dim;
  header["seed"] = ds.spec.seed;
  header["sigma"] = ds.spec.sigma;
  header["per_cell"] = ds.spec.per_cell;
  header["records"] = ds.examples.size();
  header["class_names"] = ds.class_names;
  header["encoder"] = encoder_to_json(ds.encoder);
  std::string out = std::string(kDatasetMagic) + " " + kDatasetVersion + " " + header.dump() + "\n";
  for (const DatasetRecord& r : ds.examples) {
    out += std::to_string(r.class_index) + "," + std::to_string(r.style_index);
    for (double x : r.raw) {
      out += ",";
      out += format_double(x);
    }
    out += "\n";
  }
  return out;
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write dataset " + path);
  out << serialize_dataset(ds);
  if (!out) throw DataError("write failed for " + path);
}

inline Dataset parse_dataset(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty dataset file", 1);
  const std::string magic = std::string(kDatasetMagic) + " ";
  if (line.rfind(magic, 0) != 0) throw ParseError("missing PROMPTMIX-DS header", 1);
  const std::size_t sp = line.find(' ', magic.size());
  const std::string version = line.substr(magic.size(), sp == std::string::npos ? std::string::npos : sp - magic.size());
  if (version != kDatasetVersion) throw UnsupportedVersionError("dataset version " + version + " (expected v1)");
  if (sp == std::string::npos) throw ParseError("missing dataset header object", 1);

  Dataset ds;
  std::size_t records = 0;
  try {
    const auto header = nlohmann::json::parse(line.substr(sp + 1));
    ds.spec.classes = header.at("classes").get<std::size_t>();
    ds.spec.styles = header.at("styles").get<std::size_t>();
    ds.dim = header.at("dim").get<std::size_t>();
    ds.spec.seed = header.at("seed").get<std::uint64_t>();
    ds.spec.sigma = header.at("sigma").get<double>();
    ds.spec.per_cell = header.value("per_cell", std::size_t{0});
    records = header.at("records").get<std::size_t>();
    ds.class_names = header.at("class_names").get<std::vector<std::string>>();
    ds.encoder = encoder_from_json(header.at("encoder"));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad dataset header: ") + e.what(), 1);
  }
  if (ds.class_names.size() != ds.spec.classes) throw ParseError("class_names does not match classes", 1);

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    DatasetRecord r;
    const char* p = line.c_str();
    auto next_field = [&](auto parse) {
      char* end = nullptr;
      errno = 0;
      auto v = parse(p, &end);
      if (end == p || errno == ERANGE || (*end != ',' && *end != '\0')) throw ParseError("malformed record", line_no);
      p = *end == ',' ? end + 1 : end;
      return v;
    };
    auto as_index = [](const char* s, char** e) { return static_cast<std::size_t>(std::strtoull(s, e, 10)); };
    auto as_double = [](const char* s, char** e) { return std::strtod(s, e); };
    r.class_index = next_field(as_index);
    r.style_index = next_field(as_index);
    while (*p != '\0') r.raw.push_back(next_field(as_double));
    if (r.raw.size() != ds.dim) throw ParseError("record has " + std::to_string(r.raw.size()) + " values, expected " +
                                                 std::to_string(ds.dim), line_no);
    if (r.class_index >= ds.spec.classes || r.style_index >= ds.spec.styles) {
      throw ParseError("class or style index out of range", line_no);
    }
    ds.examples.push_back(std::move(r));
  }
  if (ds.examples.size() != records) {
    throw ParseError("expected " + std::to_string(records) + " records, found " + std::to_string(ds.examples.size()) +
                     " (truncated file?)", line_no);
  }
  return ds;
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_dataset(ss.str());
}

}  // namespace promptmix
