// Copyright (c) 2026, The PromptMix Authors
// SPDX-License-Identifier: Apache-2.0
//
// Frozen toy encoders. The text encoder mean-pools token embeddings, applies a
// fixed projection and L2-normalizes; the image encoder is a fixed linear map
// with orthonormal columns followed by L2 normalization. Neither exposes
// trainable state, but the text encoder is differentiable in its inputs.
#pragma once

#include <cctype>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "promptmix/error.hpp"
#include "promptmix/numerics/matrix.hpp"
#include "promptmix/numerics/tape.hpp"

namespace promptmix {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Derives an independent stream seed from a base seed and a stream label.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  return splitmix64(base ^ splitmix64(stream + 0x632BE59BD9B4E019ULL));
}

inline std::uint32_t fnv1a32(std::string_view s) {
  std::uint32_t h = 2166136261u;
  for (unsigned char c : s) {
    h ^= c;
    h *= 16777619u;
  }
  return h;
}

struct EncoderSpec {
  std::uint64_t seed = 7;
  std::size_t vocab_size = 4096;
  std::size_t embed_dim = 32;
  std::size_t feature_dim = 64;
  std::size_t input_dim = 96;

  void validate() const {
    if (vocab_size == 0 || embed_dim == 0 || feature_dim == 0) throw ConfigError("encoder dimensions must be positive");
    if (input_dim < feature_dim) throw ConfigError("image input_dim must be >= feature_dim");
  }
  friend bool operator==(const EncoderSpec&, const EncoderSpec&) = default;
};

class Tokenizer {
 public:
  explicit Tokenizer(std::size_t vocab_size = 4096) : vocab_size_(vocab_size) {
    if (vocab_size_ == 0) throw ConfigError("vocabulary size must be positive");
  }

  /// Lowercases, splits on whitespace and punctuation, hashes each token with
  /// FNV-1a (32-bit) modulo the vocabulary size.
  std::vector<std::size_t> tokenize(std::string_view text) const {
    std::vector<std::size_t> ids;
    for (const std::string& w : words(text)) ids.push_back(fnv1a32(w) % vocab_size_);
    return ids;
  }

  static std::vector<std::string> words(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
      const auto c = static_cast<unsigned char>(ch);
      if (std::isspace(c) || std::ispunct(c)) {
        if (!cur.empty()) out.push_back(std::move(cur));
        cur.clear();
      } else {
        cur.push_back(static_cast<char>(std::tolower(c)));
      }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
  }

  std::size_t vocab_size() const noexcept { return vocab_size_; }

 private:
  std::size_t vocab_size_;
};

namespace detail {
inline Matrix gaussian_matrix(std::size_t rows, std::size_t cols, double stddev, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, stddev);
  Matrix m(rows, cols);
  for (double& x : m.values()) x = normal(rng);
  return m;
}
}  // namespace detail

/// Frozen V x d_emb token embedding table.
class EmbeddingTable {
 public:
  EmbeddingTable(std::uint64_t seed, std::size_t vocab_size, std::size_t embed_dim)
      : table_(detail::gaussian_matrix(vocab_size, embed_dim, 1.0 / std::sqrt(static_cast<double>(embed_dim)),
                                       derive_seed(seed, 1))) {}

  /// Copies the rows for `ids` into a fresh len x d_emb matrix.
  Matrix lookup(std::span<const std::size_t> ids) const {
    Matrix out(ids.size(), table_.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] >= table_.rows()) throw IndexError("token id out of range");
      auto src = table_.row_span(ids[i]);
      std::copy(src.begin(), src.end(), out.row_span(i).begin());
    }
    return out;
  }

  const Matrix& matrix() const noexcept { return table_; }
  std::size_t embed_dim() const noexcept { return table_.cols(); }
  std::uint64_t checksum() const { return promptmix::checksum(table_); }

 private:
  Matrix table_;
};

class TextEncoder {
 public:
  TextEncoder(std::uint64_t seed, std::size_t embed_dim, std::size_t feature_dim)
      : projection_(detail::gaussian_matrix(embed_dim, feature_dim, 1.0 / std::sqrt(static_cast<double>(embed_dim)),
                                            derive_seed(seed, 2))) {}

  /// Tape-free path: sequence (len x d_emb) to a 1 x d unit feature.
  Matrix encode(const Matrix& sequence) const {
    check(sequence);
    return kernels::normalize_rows(kernels::matmul(kernels::mean_rows(sequence), projection_));
  }

  /// Differentiable in `sequence` only; the projection is recorded as a constant.
  Var encode(Tape& tape, const Var& sequence) const {
    check(sequence.value());
    return ad::normalize_rows(ad::matmul(ad::mean_rows(sequence), tape.constant(projection_)));
  }

  const Matrix& projection() const noexcept { return projection_; }
  std::size_t feature_dim() const noexcept { return projection_.cols(); }

 private:
  void check(const Matrix& sequence) const {
    if (sequence.rows() == 0) throw InvalidInputError("encode_text: empty sequence");
    if (sequence.cols() != projection_.rows()) throw ShapeError("encode_text: embedding width mismatch");
  }

  Matrix projection_;
};

class ImageEncoder {
 public:
  ImageEncoder(std::uint64_t seed, std::size_t input_dim, std::size_t feature_dim)
      : map_(orthonormal_columns(input_dim, feature_dim, derive_seed(seed, 3))) {}

  Matrix encode(std::span<const double> raw) const {
    if (raw.size() != map_.rows()) {
      throw ShapeError("encode_image: expected " + std::to_string(map_.rows()) + " inputs, got " +
                       std::to_string(raw.size()));
    }
    return kernels::normalize_rows(kernels::matmul(Matrix::row(raw), map_));
  }

  /// A raw input whose linear image is exactly `feature` (up to rounding).
  /// The map has orthonormal columns, so its transpose is a left inverse.
  std::vector<double> lift(std::span<const double> feature) const {
    if (feature.size() != map_.cols()) throw ShapeError("lift: feature width mismatch");
    return kernels::matmul(Matrix::row(feature), kernels::transpose(map_)).data();
  }

  std::size_t input_dim() const noexcept { return map_.rows(); }
  std::size_t feature_dim() const noexcept { return map_.cols(); }
  const Matrix& matrix() const noexcept { return map_; }

 private:
  static Matrix orthonormal_columns(std::size_t rows, std::size_t cols, std::uint64_t seed) {
    Matrix m = detail::gaussian_matrix(rows, cols, 1.0, seed);
    // Modified Gram-Schmidt over columns.
    for (std::size_t j = 0; j < cols; ++j) {
      for (std::size_t k = 0; k < j; ++k) {
        double dot = 0.0;
        for (std::size_t i = 0; i < rows; ++i) dot += m(i, j) * m(i, k);
        for (std::size_t i = 0; i < rows; ++i) m(i, j) -= dot * m(i, k);
      }
      double n = 0.0;
      for (std::size_t i = 0; i < rows; ++i) n += m(i, j) * m(i, j);
      n = std::sqrt(n);
      if (!(n > 1e-10)) throw NumericError("image encoder map is rank deficient");
      for (std::size_t i = 0; i < rows; ++i) m(i, j) /= n;
    }
    return m;
  }

  Matrix map_;
};

/// Everything frozen, reproducible from an EncoderSpec.
struct Encoders {
  explicit Encoders(const EncoderSpec& s)
      : spec((s.validate(), s)),
        tokenizer(s.vocab_size),
        embeddings(s.seed, s.vocab_size, s.embed_dim),
        text(s.seed, s.embed_dim, s.feature_dim),
        image(s.seed, s.input_dim, s.feature_dim) {}

  /// Embedding sequence of a plain string.
  Matrix embed(std::string_view text_in) const { return embeddings.lookup(tokenizer.tokenize(text_in)); }
  /// Hard text feature of a plain string.
  Matrix encode_string(std::string_view text_in) const { return text.encode(embed(text_in)); }

  EncoderSpec spec;
  Tokenizer tokenizer;
  EmbeddingTable embeddings;
  TextEncoder text;
  ImageEncoder image;
};

}  // namespace promptmix
