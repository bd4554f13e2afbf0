// Copyright (c) 2026, The PromptMix Authors
// SPDX-License-Identifier: Apache-2.0
//
// Shared fixtures for the test executables.
#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "promptmix/dataio.hpp"
#include "promptmix/encoders.hpp"
#include "promptmix/numerics/matrix.hpp"
#include "promptmix/prompt_bank.hpp"
#include "promptmix/trainer.hpp"

#ifndef PROMPTMIX_SOURCE_DIR
#define PROMPTMIX_SOURCE_DIR "."
#endif

namespace promptmix::test {

inline std::string templates_path() { return std::string(PROMPTMIX_SOURCE_DIR) + "/templates/appendix_a.txt"; }

inline const std::vector<TemplateGroup>& corpus_groups() {
  static const std::vector<TemplateGroup> groups = load_template_file(templates_path()).groups;
  return groups;
}

/// Fresh empty directory under the system temp dir, unique per name.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("promptmix_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline Matrix random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double stddev = 1.0) {
  std::normal_distribution<double> normal(0.0, stddev);
  Matrix m(rows, cols);
  for (double& x : m.values()) x = normal(rng);
  return m;
}

inline std::vector<double> random_simplex(std::mt19937_64& rng, std::size_t n) {
  std::exponential_distribution<double> ex(1.0);
  std::vector<double> p(n);
  double s = 0.0;
  for (double& x : p) s += (x = ex(rng) + 1e-12);
  for (double& x : p) x /= s;
  return p;
}

/// Default synthetic benchmark: C=10, S=4, 20 per cell, default encoder.
inline Dataset benchmark_dataset(double sigma, std::uint64_t seed = 1, std::size_t per_cell = 20) {
  SyntheticSpec spec;
  spec.sigma = sigma;
  spec.seed = seed;
  spec.per_cell = per_cell;
  const Encoders enc{EncoderSpec{}};
  return generate_synthetic_dataset(spec, enc, corpus_groups());
}

}  // namespace promptmix::test
