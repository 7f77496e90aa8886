/*
 * Copyright 2026 The Calciomics Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

namespace calciomics {

/// Library-wide error type. Messages are meant to be matched on by callers,
/// so keep the leading token stable ("separation", "truncated payload", ...).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

inline void require(bool cond, const std::string& msg) {
  if (!cond) fail(msg);
}

/// Dense row-major matrix of doubles. Small helper, not a linear-algebra type.
struct Matrix {
  std::size_t n_rows = 0;
  std::size_t n_cols = 0;
  std::vector<double> v;

  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : n_rows(rows), n_cols(cols), v(rows * cols, fill) {}

  double& at(std::size_t r, std::size_t c) { return v[r * n_cols + c]; }
  double at(std::size_t r, std::size_t c) const { return v[r * n_cols + c]; }
  const double* row(std::size_t r) const { return v.data() + r * n_cols; }
  double* row(std::size_t r) { return v.data() + r * n_cols; }
};

inline double sigmoid(double x) {
  if (x >= 0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// logit with clamping so that degenerate rates stay finite.
inline double logit_clamped(double p, double bound = 10.0) {
  const double lo = sigmoid(-bound);
  const double hi = sigmoid(bound);
  if (p < lo) return -bound;
  if (p > hi) return bound;
  return std::log(p / (1.0 - p));
}

/// 17-significant-digit decimal rendering; round-trips doubles exactly.
inline std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

inline std::uint64_t fnv1a64(const void* data, std::size_t len,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a64(s.data(), s.size(), h);
}

// Without this overload a (string literal, hash) call would bind the hash to
// the `len` parameter of the void* overload above.
inline std::uint64_t fnv1a64(const char* s,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a64(static_cast<const void*>(s), std::char_traits<char>::length(s), h);
}

inline std::string to_hex(std::uint64_t x) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

}  // namespace calciomics
