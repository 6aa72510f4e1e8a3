#pragma once

// Seeded random streams and the non-standard samplers the model needs
// (truncated normal, Dirichlet, Beta, inverse Wishart) plus matching log-densities.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>

#include "lssbm/common.hpp"

namespace lssbm {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_name(std::string_view name) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

/// Seed of a named substream (e.g. "chain", 3) derived from a master seed.
inline std::uint64_t substream_seed(std::uint64_t master, std::string_view name, std::uint64_t index = 0) {
  return splitmix64(splitmix64(master ^ hash_name(name)) + splitmix64(index + 0x632be59bd9b4e019ULL));
}

inline Rng make_rng(std::uint64_t master, std::string_view name, std::uint64_t index = 0) {
  return Rng(substream_seed(master, name, index));
}

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

/// Uniform on the open interval (0, 1).
inline double uniform_open(Rng& rng) {
  double u;
  do u = uniform01(rng);
  while (u <= 0.0);
  return u;
}

inline double std_normal(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

/// log of a Gamma(shape, 1) draw; stays finite for tiny shapes where the draw underflows.
inline double log_gamma_draw(Rng& rng, double shape) {
  if (shape >= 1.0) return std::log(std::gamma_distribution<double>(shape, 1.0)(rng));
  // Gamma(a) = Gamma(a+1) * U^(1/a)
  const double g = std::gamma_distribution<double>(shape + 1.0, 1.0)(rng);
  return std::log(g) + std::log(uniform_open(rng)) / shape;
}

inline double gamma_draw(Rng& rng, double shape, double rate) {
  return std::gamma_distribution<double>(shape, 1.0 / rate)(rng);
}

inline double beta_draw(Rng& rng, double a, double b) {
  const double la = log_gamma_draw(rng, a);
  const double lb = log_gamma_draw(rng, b);
  const double m = std::max(la, lb);
  const double x = std::exp(la - m) / (std::exp(la - m) + std::exp(lb - m));
  // keep strictly inside (0,1) so log-likelihood terms stay finite
  constexpr double tiny = 1e-300;
  return std::clamp(x, tiny, 1.0 - 1e-16);
}

inline Eigen::VectorXd dirichlet_draw(Rng& rng, std::span<const double> alpha) {
  Eigen::VectorXd lg(static_cast<Eigen::Index>(alpha.size()));
  for (std::size_t k = 0; k < alpha.size(); ++k) lg[static_cast<Eigen::Index>(k)] = log_gamma_draw(rng, alpha[k]);
  const double m = lg.maxCoeff();
  Eigen::VectorXd out = (lg.array() - m).exp();
  return out / out.sum();
}

inline std::size_t categorical_draw(Rng& rng, std::span<const double> weights) {
  double total = 0.0;
  for (double w : weights) total += w;
  double u = uniform01(rng) * total;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    u -= weights[k];
    if (u < 0.0) return k;
  }
  // rounding: return the last positive weight
  for (std::size_t k = weights.size(); k-- > 0;)
    if (weights[k] > 0) return k;
  return 0;
}

// ---------------------------------------------------------------------------
// Truncated normal. Inverse-CDF for moderate truncation points; Robert's
// exponential rejection once the bound is more than 5 s.d. into the tail.

/// Standard normal restricted to [lower, inf).
inline double std_normal_lower_truncated(Rng& rng, double lower) {
  constexpr double tail_switch = 5.0;
  if (lower > tail_switch) {
    const double rate = 0.5 * (lower + std::sqrt(lower * lower + 4.0));
    for (;;) {
      const double x = lower - std::log(uniform_open(rng)) / rate;
      if (std::log(uniform_open(rng)) <= -0.5 * (x - rate) * (x - rate)) return x;
    }
  }
  static const boost::math::normal_distribution<double> unit;
  if (lower > 0.0) {
    // sample the upper tail through the complement for precision
    const double tail = boost::math::cdf(boost::math::complement(unit, lower));
    const double u = uniform_open(rng) * tail;
    return std::max(lower, boost::math::quantile(boost::math::complement(unit, u)));
  }
  const double lo = boost::math::cdf(unit, lower);
  const double u = lo + uniform_open(rng) * (1.0 - lo);
  if (u >= 1.0) return lower;
  return std::max(lower, boost::math::quantile(unit, u));
}

/// N(mean, sd^2) restricted to [lower, inf).
inline double normal_lower_truncated(Rng& rng, double mean, double sd, double lower) {
  return mean + sd * std_normal_lower_truncated(rng, (lower - mean) / sd);
}

/// N(mean, sd^2) restricted to (-inf, upper].
inline double normal_upper_truncated(Rng& rng, double mean, double sd, double upper) {
  return mean - sd * std_normal_lower_truncated(rng, (mean - upper) / sd);
}

// ---------------------------------------------------------------------------
// Wishart family (Bartlett decomposition).

inline Eigen::MatrixXd wishart_draw(Rng& rng, const Eigen::MatrixXd& scale, double df) {
  const Eigen::Index p = scale.rows();
  const Eigen::MatrixXd chol = scale.llt().matrixL();
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(p, p);
  for (Eigen::Index i = 0; i < p; ++i) {
    a(i, i) = std::sqrt(2.0 * gamma_draw(rng, 0.5 * (df - static_cast<double>(i)), 1.0));
    for (Eigen::Index j = 0; j < i; ++j) a(i, j) = std_normal(rng);
  }
  const Eigen::MatrixXd la = chol * a;
  return la * la.transpose();
}

/// InvWishart(scale, df): mean scale / (df - p - 1).
inline Eigen::MatrixXd inverse_wishart_draw(Rng& rng, const Eigen::MatrixXd& scale, double df) {
  const Eigen::MatrixXd w = wishart_draw(rng, scale.inverse(), df);
  Eigen::MatrixXd out = w.inverse();
  return 0.5 * (out + out.transpose());
}

// ---------------------------------------------------------------------------
// Log densities.

inline double log_multivariate_gamma(double a, int p) {
  double out = 0.25 * p * (p - 1) * std::log(std::numbers::pi);
  for (int j = 0; j < p; ++j) out += std::lgamma(a - 0.5 * j);
  return out;
}

inline double mvn_log_density(const Eigen::VectorXd& x, const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov) {
  const Eigen::LLT<Eigen::MatrixXd> llt(cov);
  const Eigen::VectorXd r = llt.matrixL().solve(x - mean);
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return -0.5 * (static_cast<double>(x.size()) * kLog2Pi + logdet + r.squaredNorm());
}

/// Log-density of N_D(0, sigma^2 I) at a point with squared norm `sq_norm`.
inline double isotropic_normal_log_density(double sq_norm, double log_sigma, int dim) {
  return -0.5 * dim * kLog2Pi - dim * log_sigma - 0.5 * sq_norm * std::exp(-2.0 * log_sigma);
}

inline double inverse_wishart_log_density(const Eigen::MatrixXd& x, const Eigen::MatrixXd& scale, double df) {
  const int p = static_cast<int>(x.rows());
  const Eigen::LLT<Eigen::MatrixXd> lx(x);
  const Eigen::LLT<Eigen::MatrixXd> ls(scale);
  const double logdet_x = 2.0 * lx.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const double logdet_s = 2.0 * ls.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const double tr = (scale * lx.solve(Eigen::MatrixXd::Identity(p, p))).trace();
  return 0.5 * df * logdet_s - 0.5 * df * p * std::log(2.0) - log_multivariate_gamma(0.5 * df, p) -
         0.5 * (df + p + 1) * logdet_x - 0.5 * tr;
}

inline double beta_log_density(double x, double a, double b) {
  return (a - 1) * std::log(x) + (b - 1) * std::log1p(-x) - (std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b));
}

inline double dirichlet_log_density(const Eigen::VectorXd& x, double concentration) {
  const auto k = static_cast<double>(x.size());
  if (x.size() <= 1) return 0.0;  // point mass on the single vertex
  double out = std::lgamma(k * concentration) - k * std::lgamma(concentration);
  for (Eigen::Index i = 0; i < x.size(); ++i) out += (concentration - 1) * std::log(x[i]);
  return out;
}

}  // namespace lssbm
