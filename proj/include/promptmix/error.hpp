// Copyright (c) 2026, The PromptMix Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace promptmix {

// Every error raised by the library derives from Error so callers can catch
// one type; the subclasses name the failure category.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define PROMPTMIX_DEFINE_ERROR(Name)          \
  class Name : public Error {                 \
   public:                                    \
    explicit Name(const std::string& what)    \
        : Error(std::string(#Name ": ") + what) {} \
  };

PROMPTMIX_DEFINE_ERROR(InvalidHyperparameterError)
PROMPTMIX_DEFINE_ERROR(InvalidInputError)
PROMPTMIX_DEFINE_ERROR(ShapeError)
PROMPTMIX_DEFINE_ERROR(DegenerateVectorError)
PROMPTMIX_DEFINE_ERROR(InvalidDistributionError)
PROMPTMIX_DEFINE_ERROR(IndexError)
PROMPTMIX_DEFINE_ERROR(LookupError)
PROMPTMIX_DEFINE_ERROR(ConfigError)
PROMPTMIX_DEFINE_ERROR(DataError)
PROMPTMIX_DEFINE_ERROR(UnsupportedVersionError)
PROMPTMIX_DEFINE_ERROR(UndefinedMetricError)
PROMPTMIX_DEFINE_ERROR(NumericError)

#undef PROMPTMIX_DEFINE_ERROR

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : Error("ParseError: " + (line ? "line " + std::to_string(line) + ": " : std::string()) + what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace promptmix
