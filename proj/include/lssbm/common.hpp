#pragma once

// Shared error types, dyad representation, and scalar special functions.

#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <string_view>

namespace lssbm {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input text. Carries the 1-based line number when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  explicit ParseError(const std::string& what) : Error(what) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_ = 0;
};

/// Well-formed input violating a model or graph invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Warnings go through a replaceable sink so tests and the CLI can capture them.
inline std::function<void(std::string_view)>& warning_sink() {
  static std::function<void(std::string_view)> sink = [](std::string_view msg) {
    std::cerr << "warning: " << msg << '\n';
  };
  return sink;
}

inline void warn(std::string_view msg) {
  if (warning_sink()) warning_sink()(msg);
}

using NodeId = std::int32_t;

/// Unordered node pair stored with i < j (0-based).
struct Dyad {
  NodeId i = 0;
  NodeId j = 0;

  friend bool operator==(const Dyad&, const Dyad&) = default;
  friend auto operator<=>(const Dyad&, const Dyad&) = default;
};

inline Dyad make_dyad(NodeId a, NodeId b) { return a < b ? Dyad{a, b} : Dyad{b, a}; }

/// Index of dyad (i<j) in row-major enumeration of the strict upper triangle.
inline std::size_t dyad_index(Dyad d, std::size_t n) {
  const auto i = static_cast<std::size_t>(d.i);
  const auto j = static_cast<std::size_t>(d.j);
  return i * (2 * n - i - 1) / 2 + (j - i - 1);
}

inline std::size_t n_dyads(std::size_t n) { return n * (n - 1) / 2; }

// ---------------------------------------------------------------------------
// Logistic helpers. Branch forms keep exp() arguments non-positive.

inline double inv_logit(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p) - std::log1p(-p); }

/// log(1 + e^x)
inline double softplus(double x) {
  if (x > 0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

/// Bernoulli log-mass of y under success logit x.
inline double bernoulli_logit_lpmf(bool y, double x) { return (y ? x : 0.0) - softplus(x); }

inline double bernoulli_lpmf(bool y, double p) { return y ? std::log(p) : std::log1p(-p); }

// ---------------------------------------------------------------------------
// Polygamma functions: recurrence up to x >= 10, then the asymptotic series.

inline double digamma(double x) {
  if (!(x > 0)) {
    if (x == std::floor(x)) return std::numeric_limits<double>::quiet_NaN();
    // reflection for negative non-integers
    return digamma(1.0 - x) - std::numbers::pi / std::tan(std::numbers::pi * x);
  }
  double acc = 0.0;
  while (x < 10.0) {
    acc -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  // Bernoulli-number coefficients B_2k / (2k)
  const double series =
      inv2 * (1.0 / 12 -
              inv2 * (1.0 / 120 -
                      inv2 * (1.0 / 252 -
                              inv2 * (1.0 / 240 - inv2 * (1.0 / 132 - inv2 * (691.0 / 32760 - inv2 / 12))))));
  return acc + std::log(x) - 0.5 * inv - series;
}

inline double trigamma(double x) {
  if (!(x > 0)) return std::numeric_limits<double>::quiet_NaN();
  double acc = 0.0;
  while (x < 10.0) {
    acc += 1.0 / (x * x);
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  const double series =
      inv * (1.0 + inv * (0.5 + inv * (1.0 / 6 -
                                       inv2 * (1.0 / 30 -
                                               inv2 * (1.0 / 42 - inv2 * (1.0 / 30 - inv2 * (5.0 / 66 - inv2 * (691.0 / 2730 - inv2 * 7.0 / 6))))))));
  return acc + series;
}

inline double log_gamma(double x) { return std::lgamma(x); }

/// Gamma((D+1)/2) / Gamma(D/2)
inline double half_gamma_ratio(int dim) {
  return std::exp(std::lgamma(0.5 * (dim + 1)) - std::lgamma(0.5 * dim));
}

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kLog2Pi = 1.8378770664093454836;

}  // namespace lssbm
