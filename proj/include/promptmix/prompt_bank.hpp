// Copyright (c) 2026, The PromptMix Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "promptmix/encoders.hpp"
#include "promptmix/error.hpp"
#include "promptmix/numerics/tape.hpp"

namespace promptmix {

inline constexpr std::string_view kPlaceholder = "{}";

struct TemplateGroup {
  std::size_t group_id = 0;
  std::string name;
  std::vector<std::string> templates;
  std::size_t init_template_index = 0;

  const std::string& init_template() const { return templates.at(init_template_index); }
};

struct FilledTemplate {
  std::string prefix;
  std::string suffix;
  std::string filled;
};

inline std::size_t count_placeholders(std::string_view s) {
  std::size_t n = 0;
  for (std::size_t pos = s.find(kPlaceholder); pos != std::string_view::npos; pos = s.find(kPlaceholder, pos + 2)) ++n;
  return n;
}

/// Splits a template around its single `{}` and substitutes `class_name`.
inline FilledTemplate parse_template(std::string_view tmpl, std::string_view class_name) {
  const std::size_t n = count_placeholders(tmpl);
  if (n != 1) {
    throw ParseError("template \"" + std::string(tmpl) + "\" must contain exactly one {} (found " +
                     std::to_string(n) + ")");
  }
  const std::size_t pos = tmpl.find(kPlaceholder);
  FilledTemplate out;
  out.prefix = std::string(tmpl.substr(0, pos));
  out.suffix = std::string(tmpl.substr(pos + kPlaceholder.size()));
  out.filled = out.prefix + std::string(class_name) + out.suffix;
  return out;
}

struct TemplateDocument {
  std::vector<TemplateGroup> groups;
  std::vector<std::string> warnings;
};

namespace detail {
inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}
}  // namespace detail

/// Parses a grouped-template document.
///
/// A `#` line opens a named group and every other non-empty line is one
/// template. Listing syntax is tolerated so that a Python-style list can be
/// pasted verbatim: lone `[` / `]` lines are skipped, and a template may be
/// wrapped in double quotes with a trailing comma. Consecutive `#` lines with
/// no template between them name a single group. Templates before any header
/// form an unnamed group.
inline TemplateDocument load_template_groups(std::string_view document) {
  TemplateDocument doc;
  std::vector<std::string> pending_names;
  std::size_t pending_line = 0;

  std::istringstream in{std::string(document)};
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = detail::trim(raw);
    if (line.empty() || line == "[" || line == "]") continue;
    if (line.front() == '#') {
      if (pending_names.empty()) pending_line = line_no;
      pending_names.emplace_back(detail::trim(line.substr(1)));
      continue;
    }

    if (line.back() == ',') line = detail::trim(line.substr(0, line.size() - 1));
    if (line.size() >= 2 && line.front() == '"' && line.back() == '"') line = line.substr(1, line.size() - 2);
    const std::size_t n = count_placeholders(line);
    if (n != 1) {
      throw ParseError("template \"" + std::string(line) + "\" must contain exactly one {} (found " +
                           std::to_string(n) + ")",
                       line_no);
    }
    if (!pending_names.empty() || doc.groups.empty()) {
      TemplateGroup g;
      g.group_id = doc.groups.size();
      for (std::size_t i = 0; i < pending_names.size(); ++i) g.name += (i ? " / " : "") + pending_names[i];
      doc.groups.push_back(std::move(g));
      pending_names.clear();
    }
    doc.groups.back().templates.emplace_back(line);
  }

  if (!pending_names.empty()) throw ParseError("group \"" + pending_names.front() + "\" has no templates", pending_line);
  if (doc.groups.empty()) throw ParseError("document contains no template groups");

  const std::size_t g = doc.groups.size();
  if (g < 4 || g > 20) {
    doc.warnings.push_back("document defines " + std::to_string(g) + " groups; 4 to 20 experts is the usual range");
  }
  return doc;
}

inline TemplateDocument load_template_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open template file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return load_template_groups(ss.str());
}

/// Ordered, unique class names with their frozen token embeddings.
class ClassCatalog {
 public:
  ClassCatalog() = default;
  ClassCatalog(std::vector<std::string> names, const Encoders& enc) : names_(std::move(names)) {
    std::unordered_set<std::string> seen;
    for (const std::string& n : names_) {
      if (!seen.insert(n).second) throw ConfigError("duplicate class name \"" + n + "\"");
      Matrix e = enc.embed(n);
      if (e.rows() == 0) throw ConfigError("class name \"" + n + "\" has no tokens");
      embeddings_.push_back(std::move(e));
    }
  }

  std::size_t size() const noexcept { return names_.size(); }
  bool empty() const noexcept { return names_.empty(); }
  const std::string& name(std::size_t c) const { return names_.at(c); }
  const std::vector<std::string>& names() const noexcept { return names_; }
  const Matrix& embedding(std::size_t c) const { return embeddings_.at(c); }

  std::size_t index_of(std::string_view name) const {
    for (std::size_t i = 0; i < names_.size(); ++i) {
      if (names_[i] == name) return i;
    }
    throw LookupError("unknown class \"" + std::string(name) + "\"");
  }

  /// Sub-catalog in the given index order.
  ClassCatalog subset(std::span<const std::size_t> indices) const {
    ClassCatalog out;
    for (std::size_t i : indices) {
      out.names_.push_back(name(i));
      out.embeddings_.push_back(embedding(i));
    }
    return out;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Matrix> embeddings_;
};

/// One expert: trainable context before and after the class token.
struct SoftPrompt {
  std::size_t group_id = 0;
  Parameter prefix;
  Parameter suffix;

  std::size_t context_length() const { return prefix.value.rows() + suffix.value.rows(); }
};

/// Builds a soft prompt from the token embeddings of the group's init template.
/// The context rows are copies of the embedding table rows.
inline SoftPrompt init_soft_prompt(const TemplateGroup& group, const Encoders& enc) {
  if (group.templates.empty()) throw InvalidInputError("template group is empty");
  const FilledTemplate parts = parse_template(group.init_template(), "");
  SoftPrompt p;
  p.group_id = group.group_id;
  p.prefix = Parameter("prompt" + std::to_string(group.group_id) + ".prefix", enc.embed(parts.prefix));
  p.suffix = Parameter("prompt" + std::to_string(group.group_id) + ".suffix", enc.embed(parts.suffix));
  if (p.context_length() == 0) {
    throw DegenerateVectorError("init template \"" + group.init_template() + "\" has no context tokens");
  }
  return p;
}

/// Plain embedding sequence [prefix; class tokens; suffix].
inline Matrix assemble_prompt(const SoftPrompt& prompt, const ClassCatalog& catalog, std::size_t class_index) {
  if (class_index >= catalog.size()) throw LookupError("class index out of range");
  const Matrix& cls = catalog.embedding(class_index);
  const std::size_t cols = cls.cols();
  const std::size_t rows = prompt.prefix.value.rows() + cls.rows() + prompt.suffix.value.rows();
  Matrix out(rows, cols);
  std::size_t r = 0;
  for (const Matrix* part : {&prompt.prefix.value, &cls, &prompt.suffix.value}) {
    if (part->rows() == 0) continue;
    if (part->cols() != cols) throw ShapeError("assemble_prompt: embedding width mismatch");
    std::copy(part->data().begin(), part->data().end(), out.values().begin() + static_cast<std::ptrdiff_t>(r * cols));
    r += part->rows();
  }
  return out;
}

/// Recorded variant: context rows are parameter leaves, class rows are constants.
inline Var assemble_prompt(Tape& tape, SoftPrompt& prompt, const ClassCatalog& catalog, std::size_t class_index) {
  if (class_index >= catalog.size()) throw LookupError("class index out of range");
  std::vector<Var> parts;
  if (prompt.prefix.value.rows() > 0) parts.push_back(tape.parameter(prompt.prefix));
  parts.push_back(tape.constant(catalog.embedding(class_index)));
  if (prompt.suffix.value.rows() > 0) parts.push_back(tape.parameter(prompt.suffix));
  return ad::concat_rows(parts);
}

/// The G template groups and their soft prompts. Counts per-prompt class
/// feature constructions so that inference sparsity can be audited.
class PromptBank {
 public:
  PromptBank() = default;
  PromptBank(std::vector<TemplateGroup> groups, const Encoders& enc) : groups_(std::move(groups)) {
    if (groups_.empty()) throw ConfigError("prompt bank needs at least one template group");
    for (std::size_t g = 0; g < groups_.size(); ++g) {
      groups_[g].group_id = g;
      prompts_.push_back(init_soft_prompt(groups_[g], enc));
    }
  }
  PromptBank(const PromptBank& o) : groups_(o.groups_), prompts_(o.prompts_), constructions_(o.constructions_.load()) {}
  PromptBank& operator=(const PromptBank& o) {
    groups_ = o.groups_;
    prompts_ = o.prompts_;
    constructions_ = o.constructions_.load();
    return *this;
  }

  std::size_t size() const noexcept { return prompts_.size(); }
  const std::vector<TemplateGroup>& groups() const noexcept { return groups_; }
  const TemplateGroup& group(std::size_t g) const { return groups_.at(g); }
  SoftPrompt& prompt(std::size_t g) { return prompts_.at(g); }
  const SoftPrompt& prompt(std::size_t g) const { return prompts_.at(g); }
  std::vector<SoftPrompt>& prompts() noexcept { return prompts_; }

  /// |C| x d unit-row matrix: row c encodes [context_g, class c].
  Matrix class_text_features(std::size_t g, const ClassCatalog& catalog, const TextEncoder& text) const {
    if (catalog.empty()) throw InvalidInputError("class catalog is empty");
    ++constructions_;
    Matrix out(catalog.size(), text.feature_dim());
    for (std::size_t c = 0; c < catalog.size(); ++c) {
      const Matrix f = text.encode(assemble_prompt(prompt(g), catalog, c));
      std::copy(f.data().begin(), f.data().end(), out.row_span(c).begin());
    }
    return out;
  }

  Var class_text_features(Tape& tape, std::size_t g, const ClassCatalog& catalog, const TextEncoder& text) {
    if (catalog.empty()) throw InvalidInputError("class catalog is empty");
    ++constructions_;
    std::vector<Var> rows;
    rows.reserve(catalog.size());
    for (std::size_t c = 0; c < catalog.size(); ++c) {
      rows.push_back(text.encode(tape, assemble_prompt(tape, prompt(g), catalog, c)));
    }
    return ad::concat_rows(rows);
  }

  std::size_t construction_count() const noexcept { return constructions_.load(); }
  void reset_construction_count() noexcept { constructions_ = 0; }

  void zero_grad() {
    for (SoftPrompt& p : prompts_) {
      p.prefix.zero_grad();
      p.suffix.zero_grad();
    }
  }

 private:
  std::vector<TemplateGroup> groups_;
  std::vector<SoftPrompt> prompts_;
  mutable std::atomic<std::size_t> constructions_{0};
};

}  // namespace promptmix
