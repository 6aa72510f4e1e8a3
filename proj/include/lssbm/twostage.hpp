#pragma once

// Two-stage approximate fit: a point estimate of block memberships from graph
// clustering, then an independent variational latent space fit per block.

#include <algorithm>
#include <atomic>
#include <limits>
#include <numeric>
#include <cmath>
#include <deque>
#include <functional>
#include <optional>
#include <ostream>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "lssbm/clustering.hpp"
#include "lssbm/common.hpp"
#include "lssbm/graph.hpp"
#include "lssbm/random.hpp"

namespace lssbm {

/// q(tau) = Gamma(a, b) on the latent precision, q(beta) = N(m, 1/t),
/// q(Z_i) = N_D(ell_i, I / s_i).
struct VbState {
  double m = 0.0;
  double t = 1.0;
  double a = 1.0;
  double b = 1.0;
  Eigen::MatrixXd ell;  // n x D
  Eigen::VectorXd s;    // n

  std::size_t n_nodes() const { return static_cast<std::size_t>(s.size()); }
};

struct VbPriors {
  double a0 = 1.0;
  double b0 = 1.0;
  double m0 = 0.0;
  double t0 = 0.01;

  void validate() const {
    if (!(a0 > 0 && b0 > 0 && t0 > 0)) throw ValidationError("VB prior parameters must be positive");
  }
};

/// Dense 0/1 adjacency of one block with an optional observation mask.
struct BlockData {
  std::size_t n = 0;
  std::vector<std::uint8_t> y;
  std::vector<std::uint8_t> observed;

  BlockData() = default;
  explicit BlockData(const Graph& g, const DyadMask* mask = nullptr) : n(g.n_nodes()), y(n * n, 0), observed(n * n, 1) {
    for (auto d : g.edges()) y[idx(d.i, d.j)] = y[idx(d.j, d.i)] = 1;
    if (mask != nullptr)
      for (auto d : mask->held_out) observed[idx(d.i, d.j)] = observed[idx(d.j, d.i)] = 0;
  }
  std::size_t idx(NodeId i, NodeId j) const { return static_cast<std::size_t>(i) * n + static_cast<std::size_t>(j); }
  bool edge(std::size_t i, std::size_t j) const { return y[i * n + j] != 0; }
  bool seen(std::size_t i, std::size_t j) const { return observed[i * n + j] != 0; }
};

/// Taylor-approximated expected logit of a tie between i and j.
inline double vb_eta(const VbState& st, std::size_t i, std::size_t j, int dim) {
  const double sq = (st.ell.row(static_cast<Eigen::Index>(i)) - st.ell.row(static_cast<Eigen::Index>(j))).squaredNorm();
  return st.m + 0.5 / st.t - std::sqrt(sq + (1.0 / st.s[static_cast<Eigen::Index>(i)] + 1.0 / st.s[static_cast<Eigen::Index>(j)]) * dim);
}

/// Approximate ELBO: likelihood surrogate over observed pairs, the position
/// term and the divergence to the priors (additive constants dropped). The
/// position term scales the prior precision by 1/n.
inline double vb_elbo(const VbState& st, const BlockData& data, const VbPriors& pr, int dim) {
  const std::size_t n = data.n;
  const auto nn = static_cast<double>(n);
  double lik = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      if (!data.seen(i, j)) continue;
      const double e = vb_eta(st, i, j, dim);
      lik += (data.edge(i, j) ? e : 0.0) - softplus(e);
    }
  double zterm = 0.0;
  const double dig = digamma(st.a);
  const double logb = std::log(st.b);
  for (std::size_t i = 0; i < n; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    zterm += 0.5 * dig - 0.5 * logb - st.a / (2.0 * nn * st.b) * (dim / st.s[ii] + st.ell.row(ii).squaredNorm()) -
             0.5 * std::log(st.s[ii]);
  }
  const double kl = -st.a * logb + std::lgamma(st.a) + (pr.a0 - st.a) * (dig - logb) - (pr.b0 - st.b) * st.a / st.b -
                    0.5 * std::log(st.t) - 0.5 * pr.t0 * ((st.m - pr.m0) * (st.m - pr.m0) + 1.0 / st.t);
  return lik + zterm + kl;
}

struct VbGradient {
  double m = 0.0;
  double t = 0.0;
  double a = 0.0;
  double b = 0.0;
  Eigen::MatrixXd ell;
  Eigen::VectorXd s;
};

/// Analytic gradient of vb_elbo.
inline VbGradient vb_gradients(const VbState& st, const BlockData& data, const VbPriors& pr, int dim) {
  const std::size_t n = data.n;
  const auto nn = static_cast<double>(n);
  VbGradient g;
  g.ell = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), dim);
  g.s = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  double resid_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      if (!data.seen(i, j)) continue;
      const auto ii = static_cast<Eigen::Index>(i), jj = static_cast<Eigen::Index>(j);
      const Eigen::RowVectorXd diff = st.ell.row(ii) - st.ell.row(jj);
      const double root = std::sqrt(diff.squaredNorm() + (1.0 / st.s[ii] + 1.0 / st.s[jj]) * dim);
      const double e = st.m + 0.5 / st.t - root;
      const double resid = (data.edge(i, j) ? 1.0 : 0.0) - inv_logit(e);
      resid_sum += resid;
      g.ell.row(ii) -= resid / root * diff;
      g.ell.row(jj) += resid / root * diff;
      g.s[ii] += resid * 0.5 * dim / (st.s[ii] * st.s[ii] * root);
      g.s[jj] += resid * 0.5 * dim / (st.s[jj] * st.s[jj] * root);
    }
  double spread = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    spread += dim / st.s[ii] + st.ell.row(ii).squaredNorm();
  }
  const double shrink = n > 0 ? st.a / (nn * st.b) : 0.0;
  g.ell -= shrink * st.ell;
  for (std::size_t i = 0; i < n; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    g.s[ii] += 0.5 * shrink * dim / (st.s[ii] * st.s[ii]) - 0.5 / st.s[ii];
  }
  g.m = resid_sum - pr.t0 * (st.m - pr.m0);
  g.t = (pr.t0 - resid_sum) / (2.0 * st.t * st.t) - 0.5 / st.t;
  const double spread_term = n > 0 ? spread / (2.0 * nn) : 0.0;
  g.a = trigamma(st.a) * (pr.a0 + 0.5 * nn - st.a) - (pr.b0 + spread_term) / st.b + 1.0;
  g.b = -(pr.a0 + 0.5 * nn) / st.b + st.a * (pr.b0 + spread_term) / (st.b * st.b);
  return g;
}

inline double vb_optimal_a(const VbPriors& pr, std::size_t n) { return pr.a0 + 0.5 * static_cast<double>(n); }

// ---------------------------------------------------------------------------
// Limited-memory BFGS ascent with Armijo backtracking.

struct LbfgsOptions {
  int max_iter = 2000;
  double tol = 1e-9;  // relative objective improvement
  int memory = 10;
};

struct LbfgsResult {
  Eigen::VectorXd x;
  double value = 0.0;
  std::vector<double> trace;
  bool converged = false;
  bool line_search_failed = false;
};

using Objective = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>;

inline LbfgsResult lbfgs_maximize(const Objective& f, Eigen::VectorXd x, const LbfgsOptions& opt) {
  LbfgsResult out;
  Eigen::VectorXd g(x.size());
  double fx = f(x, g);
  if (!std::isfinite(fx)) throw Error("objective not finite at the starting point");
  out.trace.push_back(fx);
  std::deque<Eigen::VectorXd> s_hist, y_hist;
  std::deque<double> rho_hist;
  Eigen::VectorXd g_new(x.size());
  for (int it = 0; it < opt.max_iter; ++it) {
    // two-loop recursion on the negated objective
    Eigen::VectorXd q = -g;
    std::vector<double> alpha(s_hist.size());
    for (std::size_t k = s_hist.size(); k-- > 0;) {
      alpha[k] = rho_hist[k] * s_hist[k].dot(q);
      q -= alpha[k] * y_hist[k];
    }
    if (!s_hist.empty()) q *= s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
    for (std::size_t k = 0; k < s_hist.size(); ++k) {
      const double beta = rho_hist[k] * y_hist[k].dot(q);
      q += (alpha[k] - beta) * s_hist[k];
    }
    Eigen::VectorXd dir = -q;
    double slope = g.dot(dir);
    if (!(slope > 0)) {
      dir = g;
      slope = g.squaredNorm();
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
    }
    if (!(slope > 0)) {
      out.converged = true;
      break;
    }
    double step = s_hist.empty() ? std::min(1.0, 1.0 / std::sqrt(slope)) : 1.0;
    bool accepted = false;
    double f_new = fx;
    Eigen::VectorXd x_new;
    for (int bt = 0; bt < 60; ++bt) {
      x_new = x + step * dir;
      f_new = f(x_new, g_new);
      if (std::isfinite(f_new) && f_new >= fx + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      if (s_hist.empty()) {
        out.line_search_failed = true;
        break;
      }
      // retry along the gradient with a fresh curvature history
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      continue;
    }
    const Eigen::VectorXd sv = x_new - x;
    const Eigen::VectorXd yv = g - g_new;  // gradient change of the negated objective
    const double sy = sv.dot(yv);
    if (sy > 1e-12 * sv.norm() * yv.norm()) {
      s_hist.push_back(sv);
      y_hist.push_back(yv);
      rho_hist.push_back(1.0 / sy);
      if (static_cast<int>(s_hist.size()) > opt.memory) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }
    const double improvement = f_new - fx;
    x = std::move(x_new);
    g = g_new;
    fx = f_new;
    out.trace.push_back(fx);
    if (improvement < opt.tol * (1.0 + std::abs(fx))) {
      out.converged = true;
      break;
    }
  }
  out.x = std::move(x);
  out.value = fx;
  return out;
}

// ---------------------------------------------------------------------------

struct VbFitResult {
  VbState state;
  std::vector<double> elbo_trace;
  bool converged = false;
  bool flagged = false;  // line search kept failing; best point returned
  int restarts = 0;
};

/// Packs (m, log t, log b, ell, log s); a stays at its closed-form optimum.
inline Eigen::VectorXd vb_pack(const VbState& st) {
  const auto n = static_cast<Eigen::Index>(st.n_nodes());
  const auto dim = st.ell.cols();
  Eigen::VectorXd x(3 + n * dim + n);
  x[0] = st.m;
  x[1] = std::log(st.t);
  x[2] = std::log(st.b);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index d = 0; d < dim; ++d) x[3 + i * dim + d] = st.ell(i, d);
  for (Eigen::Index i = 0; i < n; ++i) x[3 + n * dim + i] = std::log(st.s[i]);
  return x;
}

inline VbState vb_unpack(const Eigen::VectorXd& x, std::size_t n_nodes, int dim, double a) {
  const auto n = static_cast<Eigen::Index>(n_nodes);
  VbState st;
  st.m = x[0];
  st.t = std::exp(x[1]);
  st.a = a;
  st.b = std::exp(x[2]);
  st.ell.resize(n, dim);
  st.s.resize(n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index d = 0; d < dim; ++d) st.ell(i, d) = x[3 + i * dim + d];
  for (Eigen::Index i = 0; i < n; ++i) st.s[i] = std::exp(x[3 + n * dim + i]);
  return st;
}

/// Starting point: classical scaling of hop distances, s = 1, t = 1,
/// m = logit of the observed density, b = a so the mean precision is one.
inline VbState vb_initial_state(const Graph& block, const BlockData& data, const VbPriors& pr, int dim, Rng& rng) {
  const std::size_t n = data.n;
  VbState st;
  st.a = vb_optimal_a(pr, n);
  st.b = st.a;
  st.t = 1.0;
  double edges = 0.0, dyads = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (data.seen(i, j)) {
        dyads += 1.0;
        edges += data.edge(i, j) ? 1.0 : 0.0;
      }
  st.m = logit(std::clamp(dyads > 0 ? edges / dyads : 0.5, 0.01, 0.99));
  st.ell = n >= 2 ? classical_mds(hop_distances(block), dim) : Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), dim);
  // small jitter separates coincident starting points
  for (Eigen::Index i = 0; i < st.ell.rows(); ++i)
    for (Eigen::Index d = 0; d < dim; ++d) st.ell(i, d) += 1e-3 * std_normal(rng);
  st.s = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n));
  return st;
}

inline VbFitResult vb_fit(const Graph& block, const VbPriors& pr, int dim, std::uint64_t seed,
                          const LbfgsOptions& opt = {}, const DyadMask* mask = nullptr) {
  pr.validate();
  if (block.n_nodes() == 0) throw ValidationError("VB fit needs at least one node");
  const BlockData data(block, mask);
  Rng rng = make_rng(seed, "vb");
  const std::size_t n = data.n;
  const double a_hat = vb_optimal_a(pr, n);
  const Objective objective = [&](const Eigen::VectorXd& x, Eigen::VectorXd& grad) {
    const VbState st = vb_unpack(x, n, dim, a_hat);
    const double value = vb_elbo(st, data, pr, dim);
    const VbGradient g = vb_gradients(st, data, pr, dim);
    grad.resize(x.size());
    grad[0] = g.m;
    grad[1] = g.t * st.t;
    grad[2] = g.b * st.b;
    const auto nn = static_cast<Eigen::Index>(n);
    for (Eigen::Index i = 0; i < nn; ++i)
      for (Eigen::Index d = 0; d < dim; ++d) grad[3 + i * dim + d] = g.ell(i, d);
    for (Eigen::Index i = 0; i < nn; ++i) grad[3 + nn * dim + i] = g.s[i] * st.s[i];
    return value;
  };
  VbFitResult out;
  Eigen::VectorXd x = vb_pack(vb_initial_state(block, data, pr, dim, rng));
  double best = -std::numeric_limits<double>::infinity();
  Eigen::VectorXd best_x = x;
  for (int attempt = 0; attempt <= 3; ++attempt) {
    LbfgsResult res = lbfgs_maximize(objective, x, opt);
    out.elbo_trace.insert(out.elbo_trace.end(), res.trace.begin() + (out.elbo_trace.empty() ? 0 : 1), res.trace.end());
    if (res.value > best) {
      best = res.value;
      best_x = res.x;
    }
    if (!res.line_search_failed) {
      out.converged = res.converged;
      break;
    }
    if (attempt == 3) {
      out.flagged = true;
      warn("VB line search failed repeatedly; returning the best point found");
      break;
    }
    ++out.restarts;
    x = best_x;
    for (Eigen::Index i = 0; i < x.size(); ++i) x[i] += 1e-3 * std_normal(rng);
    // a perturbed restart may start lower; keep the trace monotone by restarting
    // from the perturbed point only if it does not lose ground
    Eigen::VectorXd tmp(x.size());
    if (!(objective(x, tmp) >= best)) x = best_x;
  }
  out.state = vb_unpack(best_x, n, dim, a_hat);
  return out;
}

// ---------------------------------------------------------------------------
// Two-stage pipeline.

enum class ClusterMethod { Spectral, LabelPropagation };

struct TwoStageConfig {
  ClusterMethod method = ClusterMethod::Spectral;
  int k = 0;  // required for spectral clustering
  VbPriors priors;
  double tau_a0 = 1.0;  // Beta prior for between-block rates
  double tau_b0 = 1.0;
  int dim = 2;
  std::uint64_t seed = 1;
  int threads = 1;
  LbfgsOptions lbfgs;
};

struct BlockSummary {
  int block = 0;
  std::size_t n_nodes = 0;
  std::size_t n_edges = 0;
  double density = 0.0;
  double m = 0.0;
  double t = 0.0;
  double a = 0.0;
  double b = 0.0;
  // E[log sigma] under q(tau)
  double log_sigma() const { return -0.5 * (digamma(a) - std::log(b)); }
};

struct TwoStageResult {
  BlockAssignment gamma;
  std::vector<std::vector<NodeId>> members;
  std::vector<VbFitResult> fits;
  std::vector<BlockSummary> summary;
  Eigen::MatrixXd tau_hat;  // posterior-mean between-block rates, zero diagonal

  /// Plug-in tie probability.
  double predict(NodeId i, NodeId j, const std::vector<std::size_t>& local) const {
    const int a = gamma[static_cast<std::size_t>(i)];
    const int b = gamma[static_cast<std::size_t>(j)];
    if (a != b) return tau_hat(a, b);
    const auto& st = fits[static_cast<std::size_t>(a)].state;
    const double d = (st.ell.row(static_cast<Eigen::Index>(local[static_cast<std::size_t>(i)])) -
                      st.ell.row(static_cast<Eigen::Index>(local[static_cast<std::size_t>(j)])))
                         .norm();
    return inv_logit(st.m - d);
  }

  /// Position of each node inside its block's member list.
  std::vector<std::size_t> local_index() const {
    std::vector<std::size_t> local(gamma.size(), 0);
    for (const auto& m : members)
      for (std::size_t r = 0; r < m.size(); ++r) local[static_cast<std::size_t>(m[r])] = r;
    return local;
  }
};

/// Mask restricted to one block, in the block's local node indices.
inline DyadMask restrict_mask(const DyadMask& mask, const std::vector<NodeId>& nodes, std::size_t n_total) {
  std::vector<int> local(n_total, -1);
  for (std::size_t r = 0; r < nodes.size(); ++r) local[static_cast<std::size_t>(nodes[r])] = static_cast<int>(r);
  DyadMask out;
  out.fold_id = mask.fold_id;
  for (auto d : mask.held_out) {
    const int a = local[static_cast<std::size_t>(d.i)];
    const int b = local[static_cast<std::size_t>(d.j)];
    if (a >= 0 && b >= 0) out.held_out.push_back(make_dyad(a, b));
  }
  std::sort(out.held_out.begin(), out.held_out.end());
  return out;
}

inline TwoStageResult fit_twostage(const Graph& g, const TwoStageConfig& config, const DyadMask* mask = nullptr) {
  config.priors.validate();
  const std::size_t n = g.n_nodes();
  if (n == 0) throw ValidationError("cannot fit an empty graph");
  Graph observed = g;
  if (mask != nullptr && !mask->held_out.empty()) {
    std::vector<Dyad> kept;
    for (auto d : g.edges())
      if (!mask->contains(d)) kept.push_back(d);
    observed = Graph(n, kept);
  }
  TwoStageResult out;
  if (config.method == ClusterMethod::Spectral) {
    if (config.k < 1) throw ValidationError("spectral clustering needs K");
    out.gamma = bethe_hessian_cluster(observed, config.k, substream_seed(config.seed, "cluster"));
  } else {
    out.gamma = label_propagation(observed, substream_seed(config.seed, "cluster"));
  }
  out.members = out.gamma.members();
  const auto k_blocks = static_cast<std::size_t>(out.gamma.n_blocks);
  out.fits.resize(k_blocks);
  std::vector<Graph> blocks(k_blocks);
  auto fit_block = [&](std::size_t k) {
    const Graph sub = g.induced(out.members[k]);
    std::optional<DyadMask> local;
    if (mask != nullptr) local = restrict_mask(*mask, out.members[k], n);
    out.fits[k] = vb_fit(sub, config.priors, config.dim, substream_seed(config.seed, "block", k), config.lbfgs,
                         local ? &*local : nullptr);
  };
  const auto threads = static_cast<std::size_t>(std::max(1, config.threads));
  if (threads == 1) {
    for (std::size_t k = 0; k < k_blocks; ++k) fit_block(k);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(k_blocks);
    for (std::size_t t = 0; t < threads; ++t)
      pool.emplace_back([&] {
        for (std::size_t k; (k = next++) < k_blocks;) {
          try {
            fit_block(k);
          } catch (...) {
            errors[k] = std::current_exception();
          }
        }
      });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  std::vector<std::size_t> within_edges(k_blocks, 0);
  Eigen::MatrixXd between_edges = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k_blocks), static_cast<Eigen::Index>(k_blocks));
  for (auto d : observed.edges()) {
    const int a = out.gamma[static_cast<std::size_t>(d.i)];
    const int b = out.gamma[static_cast<std::size_t>(d.j)];
    if (a == b) {
      ++within_edges[static_cast<std::size_t>(a)];
    } else {
      between_edges(a, b) += 1.0;
      between_edges(b, a) += 1.0;
    }
  }
  for (std::size_t k = 0; k < k_blocks; ++k) {
    BlockSummary s;
    s.block = static_cast<int>(k);
    s.n_nodes = out.members[k].size();
    s.n_edges = within_edges[k];
    double dyads = static_cast<double>(n_dyads(s.n_nodes));
    if (mask != nullptr)
      for (auto d : mask->held_out)
        if (out.gamma[static_cast<std::size_t>(d.i)] == static_cast<int>(k) && out.gamma[static_cast<std::size_t>(d.j)] == static_cast<int>(k)) dyads -= 1.0;
    s.density = dyads > 0 ? static_cast<double>(s.n_edges) / dyads : 0.0;
    const auto& st = out.fits[k].state;
    s.m = st.m;
    s.t = st.t;
    s.a = st.a;
    s.b = st.b;
    out.summary.push_back(s);
  }
  out.tau_hat = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k_blocks), static_cast<Eigen::Index>(k_blocks));
  Eigen::MatrixXd between_dyads = Eigen::MatrixXd::Zero(out.tau_hat.rows(), out.tau_hat.cols());
  for (std::size_t a = 0; a < k_blocks; ++a)
    for (std::size_t b = 0; b < k_blocks; ++b)
      if (a != b)
        between_dyads(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
            static_cast<double>(out.members[a].size()) * static_cast<double>(out.members[b].size());
  if (mask != nullptr)
    for (auto d : mask->held_out) {
      const int a = out.gamma[static_cast<std::size_t>(d.i)];
      const int b = out.gamma[static_cast<std::size_t>(d.j)];
      if (a != b) {
        between_dyads(a, b) -= 1.0;
        between_dyads(b, a) -= 1.0;
      }
    }
  for (std::size_t a = 0; a < k_blocks; ++a)
    for (std::size_t b = a + 1; b < k_blocks; ++b) {
      const double s = between_edges(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
      const double nd = between_dyads(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
      const double mean = (config.tau_a0 + s) / (config.tau_a0 + config.tau_b0 + nd);
      out.tau_hat(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = mean;
      out.tau_hat(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(a)) = mean;
    }
  return out;
}

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  std::size_t n = 0;
};

/// Least-squares fit of log10(density) on log10(block size) over blocks with
/// at least two nodes and positive density.
inline std::optional<LineFit> density_size_regression(const std::vector<BlockSummary>& summary) {
  std::vector<double> x, y;
  for (const auto& s : summary)
    if (s.n_nodes >= 2 && s.density > 0) {
      x.push_back(std::log10(static_cast<double>(s.n_nodes)));
      y.push_back(std::log10(s.density));
    }
  if (x.size() < 2) return std::nullopt;
  const auto k = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / k;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / k;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (!(sxx > 0)) return std::nullopt;
  LineFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.n = x.size();
  return f;
}

inline void write_twostage_summary_csv(std::ostream& out, const TwoStageResult& r) {
  const auto prec = out.precision(17);
  out << "block,n_nodes,n_edges,density,m,t,a,b,log_sigma\n";
  for (const auto& s : r.summary)
    out << s.block + 1 << ',' << s.n_nodes << ',' << s.n_edges << ',' << s.density << ',' << s.m << ',' << s.t << ','
        << s.a << ',' << s.b << ',' << s.log_sigma() << '\n';
  out.precision(prec);
}

inline void write_twostage_nodes_csv(std::ostream& out, const TwoStageResult& r, const Graph& g) {
  const auto prec = out.precision(17);
  const int dim = r.fits.empty() ? 0 : static_cast<int>(r.fits.front().state.ell.cols());
  out << "node,block";
  for (int d = 0; d < dim; ++d) out << ",ell" << d + 1;
  out << ",s\n";
  const auto local = r.local_index();
  const auto& ids = g.original_ids();
  for (std::size_t i = 0; i < r.gamma.size(); ++i) {
    const auto& st = r.fits[static_cast<std::size_t>(r.gamma[i])].state;
    const auto row = static_cast<Eigen::Index>(local[i]);
    out << (ids.empty() ? static_cast<std::int64_t>(i + 1) : ids[i]) << ',' << r.gamma[i] + 1;
    for (int d = 0; d < dim; ++d) out << ',' << st.ell(row, d);
    out << ',' << st.s[row] << '\n';
  }
  out.precision(prec);
}

}  // namespace lssbm
