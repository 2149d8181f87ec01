// kasr/common.h

// Copyright 2026  The kasr Authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#ifndef KASR_COMMON_H_
#define KASR_COMMON_H_

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace kasr {

/// Base of every error raised by the library.  The CLI maps subclasses onto
/// exit codes (see cli.h).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define KASR_DEFINE_ERROR(Name)          \
  class Name : public Error {            \
   public:                               \
    using Error::Error;                  \
  }

KASR_DEFINE_ERROR(ArgumentError);
KASR_DEFINE_ERROR(ConfigError);
KASR_DEFINE_ERROR(FormatError);
KASR_DEFINE_ERROR(IoError);
KASR_DEFINE_ERROR(ShapeError);
KASR_DEFINE_ERROR(StateError);
KASR_DEFINE_ERROR(LengthError);
KASR_DEFINE_ERROR(ModeError);
KASR_DEFINE_ERROR(NoPitchError);
KASR_DEFINE_ERROR(ParseError);
KASR_DEFINE_ERROR(IntegrityError);
KASR_DEFINE_ERROR(SplitError);
KASR_DEFINE_ERROR(VocabularyError);
KASR_DEFINE_ERROR(InfeasibleAlignmentError);
KASR_DEFINE_ERROR(DivergedError);

#undef KASR_DEFINE_ERROR

/// Seeded pseudo-random source.  Wraps std::mt19937_64 (whose output stream
/// is fully specified by the standard) and derives every distribution by
/// hand, so a seed produces the same draws with any standard library.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0);

  uint64_t NextU64() { return engine_(); }
  /// Uniform integer in [lo, hi] (inclusive), unbiased via rejection.
  int64_t UniformInt(int64_t lo, int64_t hi);
  /// Uniform real in [0, 1) with 53 random bits.
  double Uniform();
  double Normal();
  bool Coin() { return (NextU64() >> 63) != 0; }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// 64-bit FNV-1a; used for seed derivation and config hashing.
uint64_t Fnv1a64(std::string_view bytes);

/// seed ⊕ hash(label): per-utterance and per-cell seeds that do not depend
/// on iteration order.
inline uint64_t DeriveSeed(uint64_t base, std::string_view label) {
  return base ^ Fnv1a64(label);
}

std::string HexU64(uint64_t v);

}  // namespace kasr

#endif  // KASR_COMMON_H_
