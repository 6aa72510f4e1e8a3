#pragma once

// Metropolis-within-Gibbs sampler for the latent space stochastic blockmodel.
// One iteration runs, in order: joint membership/position moves, position
// refreshes, pi, tau, eta, mu and Sigma updates.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "lssbm/clustering.hpp"
#include "lssbm/common.hpp"
#include "lssbm/graph.hpp"
#include "lssbm/model.hpp"
#include "lssbm/random.hpp"

namespace lssbm {

/// Which steps run each iteration; everything on by default.
struct UpdateSchedule {
  bool membership = true;  // step 1
  bool positions = true;   // step 2
  bool pi = true;
  bool tau = true;
  bool eta = true;
  bool mu = true;
  bool sigma_mat = true;
};

struct SamplerConfig {
  int n_iter = 20000;
  int thin = 20;
  double burn_in_fraction = 0.25;
  int n_chains = 4;
  double epsilon = 0.1;
  double r_z = 0.5;
  Eigen::Matrix2d a_alpha = Eigen::Vector2d(0.05, 0.05).asDiagonal();
  int n_extra_z_steps = 5;
  std::uint64_t seed = 1;
  int threads = 1;
  // false: plain SBM (within-block ties depend on beta only, positions unused)
  bool latent_positions = true;
  // false: sample from the prior
  bool use_likelihood = true;
  UpdateSchedule updates;

  void validate() const {
    if (n_iter <= 0) throw ValidationError("n_iter must be positive");
    if (thin < 1) throw ValidationError("thin must be >= 1");
    if (!(burn_in_fraction >= 0.0 && burn_in_fraction < 1.0)) throw ValidationError("burn_in_fraction must be in [0,1)");
    if (n_chains < 1) throw ValidationError("n_chains must be >= 1");
    if (!(epsilon > 0)) throw ValidationError("epsilon must be positive");
    if (!(r_z > 0)) throw ValidationError("r_z must be positive");
    if (n_extra_z_steps < 0) throw ValidationError("n_extra_z_steps must be >= 0");
    if (a_alpha.llt().info() != Eigen::Success) throw ValidationError("a_alpha must be positive definite");
  }
};

struct ChainState {
  BlockAssignment gamma;
  LatentPositions z;
  std::vector<BlockParams> eta;
  BetweenParams tau;
  Eigen::VectorXd pi;
  Eigen::Vector2d mu = Eigen::Vector2d::Zero();
  Eigen::Matrix2d sigma_mat = Eigen::Matrix2d::Identity();

  int n_blocks() const { return static_cast<int>(eta.size()); }
  GlobalParams global() const { return {pi, mu, sigma_mat}; }
};

struct AcceptanceRates {
  double membership = 0.0;
  double position = 0.0;
  double eta = 0.0;
};

struct PosteriorChain {
  std::vector<ChainState> samples;  // every thinned draw, burn-in included
  std::size_t burn_in = 0;          // number of leading samples to discard
  AcceptanceRates acceptance;
  std::uint64_t seed = 0;

  std::span<const ChainState> kept() const {
    return std::span<const ChainState>(samples).subspan(std::min(burn_in, samples.size()));
  }
};

// ---------------------------------------------------------------------------
// Conjugate updates as free functions.

inline Eigen::VectorXd gibbs_pi(const BlockAssignment& gamma, double upsilon0, Rng& rng) {
  if (gamma.n_blocks == 1) return Eigen::VectorXd::Ones(1);
  std::vector<double> alpha;
  for (int c : gamma.counts()) alpha.push_back(upsilon0 + c);
  return dirichlet_draw(rng, alpha);
}

/// Between-block edge counts s_kl and observed dyad counts.
struct BetweenCounts {
  Eigen::MatrixXd edges;
  Eigen::MatrixXd dyads;
};

inline BetweenCounts between_counts(const Graph& g, const BlockAssignment& gamma, const DyadMask* mask = nullptr) {
  const int k_blocks = gamma.n_blocks;
  BetweenCounts c{Eigen::MatrixXd::Zero(k_blocks, k_blocks), Eigen::MatrixXd::Zero(k_blocks, k_blocks)};
  const auto counts = gamma.counts();
  for (int k = 0; k < k_blocks; ++k)
    for (int l = 0; l < k_blocks; ++l)
      if (k != l) c.dyads(k, l) = static_cast<double>(counts[static_cast<std::size_t>(k)]) * counts[static_cast<std::size_t>(l)];
  const MaskIndex held(g.n_nodes(), mask);
  for (auto d : g.edges()) {
    const int a = gamma[static_cast<std::size_t>(d.i)];
    const int b = gamma[static_cast<std::size_t>(d.j)];
    if (a == b || (mask != nullptr && held.held_out(d.i, d.j))) continue;
    c.edges(a, b) += 1.0;
    c.edges(b, a) += 1.0;
  }
  if (mask != nullptr)
    for (auto d : mask->held_out) {
      const int a = gamma[static_cast<std::size_t>(d.i)];
      const int b = gamma[static_cast<std::size_t>(d.j)];
      if (a == b) continue;
      c.dyads(a, b) -= 1.0;
      c.dyads(b, a) -= 1.0;
    }
  return c;
}

inline BetweenParams gibbs_tau(const BetweenCounts& c, double a0, double b0, Rng& rng) {
  const auto k_blocks = c.edges.rows();
  BetweenParams tau{Eigen::MatrixXd::Zero(k_blocks, k_blocks)};
  for (Eigen::Index k = 0; k < k_blocks; ++k)
    for (Eigen::Index l = k + 1; l < k_blocks; ++l)
      tau.tau(k, l) = tau.tau(l, k) = beta_draw(rng, a0 + c.edges(k, l), b0 + c.dyads(k, l) - c.edges(k, l));
  return tau;
}

inline BetweenParams gibbs_tau(const Graph& g, const BlockAssignment& gamma, double a0, double b0, Rng& rng,
                               const DyadMask* mask = nullptr) {
  return gibbs_tau(between_counts(g, gamma, mask), a0, b0, rng);
}

/// Scale matrix and degrees of freedom of the Sigma update.
struct InverseWishartParams {
  Eigen::Matrix2d scale;
  double df = 0.0;
};

inline InverseWishartParams sigma_mat_conditional(const std::vector<BlockParams>& eta, const Hyperparams& hyper) {
  const auto k = static_cast<double>(eta.size());
  if (eta.empty()) throw ValidationError("Sigma update needs at least one block");
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  for (const auto& e : eta) mean += e.as_vector();
  mean /= k;
  Eigen::Matrix2d s_alpha = Eigen::Matrix2d::Zero();
  for (const auto& e : eta) {
    const Eigen::Vector2d r = e.as_vector() - mean;
    s_alpha += r * r.transpose();
  }
  const Eigen::Vector2d shift = mean - hyper.m0;
  return {hyper.psi0 + s_alpha + (k * hyper.s0 / (k + hyper.s0)) * shift * shift.transpose(), k + hyper.nu0};
}

inline Eigen::Matrix2d gibbs_sigma_mat(const std::vector<BlockParams>& eta, const Hyperparams& hyper, Rng& rng) {
  auto [scale, df] = sigma_mat_conditional(eta, hyper);
  scale = 0.5 * (scale + scale.transpose());
  if (scale.llt().info() != Eigen::Success) {
    warn("Sigma scale matrix not positive definite; adding diagonal jitter");
    scale.diagonal().array() += 1e-10 * std::max(1.0, scale.diagonal().cwiseAbs().maxCoeff());
  }
  return inverse_wishart_draw(rng, scale, df);
}

/// Mean and covariance of mu given eta and Sigma, before truncation.
inline std::pair<Eigen::Vector2d, Eigen::Matrix2d> mu_conditional(const std::vector<BlockParams>& eta,
                                                                   const Eigen::Matrix2d& sigma_mat,
                                                                   const Hyperparams& hyper) {
  const auto k = static_cast<double>(eta.size());
  Eigen::Vector2d sum = Eigen::Vector2d::Zero();
  for (const auto& e : eta) sum += e.as_vector();
  return {(sum + hyper.s0 * hyper.m0) / (k + hyper.s0), sigma_mat / (k + hyper.s0)};
}

/// Component-wise truncated-normal update of mu: mu_1 above its assortativity
/// bound given mu_2, then mu_2 below its bound given the new mu_1.
inline Eigen::Vector2d update_mu(const Eigen::Vector2d& mu, const std::vector<BlockParams>& eta,
                                 const Eigen::Matrix2d& sigma_mat, const Hyperparams& hyper, Rng& rng) {
  const auto [m, s] = mu_conditional(eta, sigma_mat, hyper);
  const double sd1 = std::sqrt(s(0, 0));
  const double sd2 = std::sqrt(s(1, 1));
  const double rho = s(0, 1) / (sd1 * sd2);
  const double cond_sd1 = sd1 * std::sqrt(1.0 - rho * rho);
  const double cond_sd2 = sd2 * std::sqrt(1.0 - rho * rho);
  Eigen::Vector2d out = mu;
  const double mean1 = m[0] + (sd1 / sd2) * rho * (out[1] - m[1]);
  out[0] = normal_lower_truncated(rng, mean1, cond_sd1, assortativity_bound(hyper.a0, hyper.b0, out[1], hyper.dim));
  const auto upper = assortativity_upper_mu2(hyper.a0, hyper.b0, out[0], hyper.dim);
  if (!upper) {
    warn("mu_2 update has an empty feasible set; keeping the current value");
    return mu;
  }
  const double mean2 = m[1] + (sd2 / sd1) * rho * (out[0] - m[0]);
  out[1] = normal_upper_truncated(rng, mean2, cond_sd2, *upper);
  return out;
}

// ---------------------------------------------------------------------------

/// Unnormalized membership proposal weights for `node`:
/// (epsilon + ties to block k) / (size of block k without the node + 1).
inline std::vector<double> membership_proposal_lambdas(const Graph& g, const BlockAssignment& gamma, NodeId node,
                                                       double epsilon, const DyadMask* mask = nullptr) {
  if (g.n_nodes() == 0) throw ValidationError("membership proposal on an empty graph");
  if (!(epsilon > 0)) throw ValidationError("epsilon must be positive");
  if (node < 0 || static_cast<std::size_t>(node) >= g.n_nodes()) throw ValidationError("node out of range");
  const auto k_blocks = static_cast<std::size_t>(gamma.n_blocks);
  std::vector<double> ties(k_blocks, 0.0);
  const MaskIndex held(g.n_nodes(), mask);
  for (NodeId j : g.neighbors(node))
    if (mask == nullptr || !held.held_out(node, j)) ties[static_cast<std::size_t>(gamma[static_cast<std::size_t>(j)])] += 1.0;
  auto sizes = gamma.counts();
  --sizes[static_cast<std::size_t>(gamma[static_cast<std::size_t>(node)])];
  std::vector<double> out(k_blocks);
  for (std::size_t k = 0; k < k_blocks; ++k) out[k] = (epsilon + ties[k]) / (sizes[k] + 1.0);
  return out;
}

inline std::vector<double> membership_proposal_weights(const Graph& g, const BlockAssignment& gamma, NodeId node,
                                                       double epsilon, const DyadMask* mask = nullptr) {
  auto w = membership_proposal_lambdas(g, gamma, node, epsilon, mask);
  double total = 0.0;
  for (double v : w) total += v;
  for (double& v : w) v /= total;
  return w;
}

// ---------------------------------------------------------------------------

/// Sampler bound to one graph, mask and block count. Holds the current state
/// with block membership lists kept in sync for O(block size) local updates.
class Sampler {
 public:
  Sampler(const Graph& g, int n_blocks, const Hyperparams& hyper, const SamplerConfig& config,
          const DyadMask* mask = nullptr)
      : g_(g), hyper_(hyper), config_(config), n_(g.n_nodes()), k_(n_blocks), dim_(hyper.dim) {
    hyper.validate();
    config.validate();
    if (n_ == 0) throw ValidationError("cannot sample on an empty graph");
    if (n_blocks < 1 || static_cast<std::size_t>(n_blocks) > n_)
      throw ValidationError("number of blocks must be between 1 and the number of nodes");
    if (n_ > Graph::kDenseLimit) throw ValidationError("graph too large for the sampler");
    adjacency_.assign(n_ * n_, 0);
    observed_.assign(n_ * n_, 1);
    for (std::size_t i = 0; i < n_; ++i) observed_[i * n_ + i] = 0;
    for (auto d : g.edges()) adjacency_[idx(d.i, d.j)] = adjacency_[idx(d.j, d.i)] = 1;
    if (mask != nullptr) {
      held_ = mask->held_out;
      for (auto d : held_) observed_[idx(d.i, d.j)] = observed_[idx(d.j, d.i)] = 0;
    }
    observed_neighbors_.resize(n_);
    held_partners_.resize(n_);
    for (auto d : g.edges())
      if (observed_[idx(d.i, d.j)]) {
        observed_neighbors_[static_cast<std::size_t>(d.i)].push_back(d.j);
        observed_neighbors_[static_cast<std::size_t>(d.j)].push_back(d.i);
      }
    for (auto d : held_) {
      held_partners_[static_cast<std::size_t>(d.i)].push_back(d.j);
      held_partners_[static_cast<std::size_t>(d.j)].push_back(d.i);
    }
    chol_a_ = config.a_alpha.llt().matrixL();
  }

  const ChainState& state() const { return state_; }
  const SamplerConfig& config() const { return config_; }
  const Hyperparams& hyper() const { return hyper_; }

  void set_state(ChainState s) {
    if (s.gamma.size() != n_ || s.gamma.n_blocks != k_ || s.eta.size() != static_cast<std::size_t>(k_))
      throw ValidationError("state does not match the sampler dimensions");
    if (s.z.rows() != static_cast<Eigen::Index>(n_) || s.z.cols() != dim_)
      throw ValidationError("latent positions have the wrong shape");
    if (s.tau.tau.rows() != k_ || s.tau.tau.cols() != k_) throw ValidationError("tau has the wrong shape");
    if (s.pi.size() != k_) throw ValidationError("pi has the wrong length");
    state_ = std::move(s);
    if (!config_.latent_positions) state_.z.setZero();
    members_.assign(static_cast<std::size_t>(k_), {});
    slot_.assign(n_, 0);
    for (std::size_t i = 0; i < n_; ++i) add_member(static_cast<NodeId>(i), state_.gamma[i]);
    refresh_log_tau();
    rebuild_pair_cache();
  }

  /// Largest absolute gap between the cached within-block pair terms and a
  /// fresh recomputation.
  double pair_cache_error() const {
    double worst = 0.0;
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = 0; j < n_; ++j)
        worst = std::max(worst, std::abs(pair_[i * n_ + j] - fresh_pair_term(static_cast<NodeId>(i), static_cast<NodeId>(j))));
    return worst;
  }

  /// Spectral memberships, MDS positions and moment-based parameter starts.
  static ChainState initial_state(const Graph& g, int n_blocks, const Hyperparams& hyper, std::uint64_t seed,
                                  const DyadMask* mask = nullptr) {
    const std::size_t n = g.n_nodes();
    Graph observed = g;
    if (mask != nullptr && !mask->held_out.empty()) {
      std::vector<Dyad> kept;
      for (auto d : g.edges())
        if (!mask->contains(d)) kept.push_back(d);
      observed = Graph(n, kept);
    }
    ChainState s;
    s.gamma = bethe_hessian_cluster(observed, n_blocks, seed);
    s.gamma.n_blocks = n_blocks;  // a degenerate clustering leaves trailing blocks empty
    s.z = LatentPositions::Zero(static_cast<Eigen::Index>(n), hyper.dim);
    const auto members = s.gamma.members();
    for (int k = 0; k < n_blocks; ++k) {
      const auto& m = members[static_cast<std::size_t>(k)];
      if (m.size() < 2) continue;
      const Eigen::MatrixXd pos = classical_mds(hop_distances(observed.induced(m)), hyper.dim);
      const double rms = std::sqrt(pos.squaredNorm() / static_cast<double>(m.size()));
      for (std::size_t r = 0; r < m.size(); ++r)
        s.z.row(m[r]) = rms > 0 ? Eigen::RowVectorXd(pos.row(static_cast<Eigen::Index>(r)) / rms)
                                : Eigen::RowVectorXd(pos.row(static_cast<Eigen::Index>(r)));
    }
    const BetweenCounts bc = between_counts(g, s.gamma, mask);
    const MaskIndex held(n, mask);
    std::vector<double> within_edges(static_cast<std::size_t>(n_blocks), 0.0);
    std::vector<double> within_dyads(static_cast<std::size_t>(n_blocks), 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        const auto a = static_cast<NodeId>(i), b = static_cast<NodeId>(j);
        if (s.gamma[i] != s.gamma[j] || (mask != nullptr && held.held_out(a, b))) continue;
        within_dyads[static_cast<std::size_t>(s.gamma[i])] += 1;
        if (g.has_edge(a, b)) within_edges[static_cast<std::size_t>(s.gamma[i])] += 1;
      }
    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    for (int k = 0; k < n_blocks; ++k) {
      const auto kk = static_cast<std::size_t>(k);
      const double dens = within_dyads[kk] > 0 ? within_edges[kk] / within_dyads[kk] : 0.5;
      s.eta.push_back({logit(std::clamp(dens, 0.01, 0.99)), std::log(0.5)});
      mean += s.eta.back().as_vector();
    }
    mean /= n_blocks;
    s.mu = mean;
    const double bound = assortativity_bound(hyper.a0, hyper.b0, s.mu[1], hyper.dim);
    if (s.mu[0] < bound) s.mu[0] = bound + 1e-6;
    s.sigma_mat = Eigen::Matrix2d::Identity();
    s.tau.tau = Eigen::MatrixXd::Zero(n_blocks, n_blocks);
    for (int k = 0; k < n_blocks; ++k)
      for (int l = k + 1; l < n_blocks; ++l) {
        const double d = bc.dyads(k, l) > 0 ? bc.edges(k, l) / bc.dyads(k, l) : 0.5;
        s.tau.tau(k, l) = s.tau.tau(l, k) = std::clamp(d, 1e-4, 1.0 - 1e-4);
      }
    const auto counts = s.gamma.counts();
    s.pi.resize(n_blocks);
    for (int k = 0; k < n_blocks; ++k)
      s.pi[k] = (counts[static_cast<std::size_t>(k)] + hyper.upsilon0) / (n + n_blocks * hyper.upsilon0);
    return s;
  }

  // -------------------------------------------------------------------------
  // Step 1.

  /// Per-node quantities that do not depend on the proposed move.
  struct NodeContext {
    std::vector<double> ties;      // observed ties to each block
    std::vector<double> observed;  // observed dyads to each block (node excluded)
    std::vector<double> lambda;
  };

  NodeContext node_context(NodeId i) const {
    const auto kb = static_cast<std::size_t>(k_);
    NodeContext c{std::vector<double>(kb, 0.0), std::vector<double>(kb, 0.0), std::vector<double>(kb, 0.0)};
    for (NodeId j : observed_neighbors_[static_cast<std::size_t>(i)]) c.ties[block(j)] += 1.0;
    for (std::size_t k = 0; k < kb; ++k) c.observed[k] = static_cast<double>(members_[k].size());
    c.observed[block(i)] -= 1.0;
    for (NodeId j : held_partners_[static_cast<std::size_t>(i)]) c.observed[block(j)] -= 1.0;
    for (std::size_t k = 0; k < kb; ++k) {
      const double size = static_cast<double>(members_[k].size()) - (k == block(i) ? 1.0 : 0.0);
      c.lambda[k] = (config_.epsilon + c.ties[k]) / (size + 1.0);
    }
    return c;
  }

  /// Log-likelihood of all observed dyads of node i if it sat in block k at z.
  double node_log_likelihood(NodeId i, int k, const double* z, const NodeContext& c) const {
    if (!config_.use_likelihood) return 0.0;
    return within_log_likelihood(i, k, z) + between_log_likelihood(k, c);
  }

  /// Sum over observed dyads (i, j) with j in block k, j != i.
  double within_log_likelihood(NodeId i, int k, const double* z) const {
    if (!config_.use_likelihood) return 0.0;
    const double beta = state_.eta[static_cast<std::size_t>(k)].beta;
    double out = 0.0;
    const std::size_t row = static_cast<std::size_t>(i) * n_;
    for (NodeId j : members_[static_cast<std::size_t>(k)]) {
      if (j == i || !observed_[row + static_cast<std::size_t>(j)]) continue;
      out += pair_log_term(row + static_cast<std::size_t>(j), beta, z, state_.z.row(j).data());
    }
    return out;
  }

  /// Mean position of the observed ties of i inside block k; origin when there are none.
  Eigen::VectorXd tie_mean(NodeId i, int k) const {
    Eigen::VectorXd m = Eigen::VectorXd::Zero(dim_);
    int count = 0;
    for (NodeId j : observed_neighbors_[static_cast<std::size_t>(i)])
      if (j != i && state_.gamma[static_cast<std::size_t>(j)] == k) {
        m += state_.z.row(j).transpose();
        ++count;
      }
    if (count > 0) m /= count;
    return m;
  }

  /// Log Metropolis-Hastings ratio of moving node i to (h, z_new).
  double membership_log_ratio(NodeId i, int h, const Eigen::VectorXd& z_new, const NodeContext& c) {
    const int g_old = state_.gamma[static_cast<std::size_t>(i)];
    const Eigen::VectorXd z_old = state_.z.row(i).transpose();
    const bool latent = config_.latent_positions;
    double out = 0.0;
    if (config_.use_likelihood)
      out += fill_within_terms(i, h, z_new.data()) + between_log_likelihood(h, c) - cached_within(i) -
             between_log_likelihood(g_old, c);
    out += std::log(state_.pi[h]) - std::log(state_.pi[g_old]);
    if (!latent) return out + std::log(c.lambda[static_cast<std::size_t>(g_old)]) - std::log(c.lambda[static_cast<std::size_t>(h)]);
    out += isotropic_normal_log_density(z_new.squaredNorm(), state_.eta[static_cast<std::size_t>(h)].log_sigma, dim_) -
           isotropic_normal_log_density(z_old.squaredNorm(), state_.eta[static_cast<std::size_t>(g_old)].log_sigma, dim_);
    if (h == g_old) return out;  // symmetric proposal
    out += std::log(c.lambda[static_cast<std::size_t>(g_old)]) - std::log(c.lambda[static_cast<std::size_t>(h)]);
    const Eigen::VectorXd fwd_mean = tie_mean(i, h);
    const Eigen::VectorXd rev_mean = tie_mean(i, g_old);
    const double inv2r2 = 0.5 / (config_.r_z * config_.r_z);
    out += -(z_old - rev_mean).squaredNorm() * inv2r2 + (z_new - fwd_mean).squaredNorm() * inv2r2;
    return out;
  }

  /// One pass of joint membership/position moves in node order; returns the
  /// number of accepted proposals.
  int joint_membership_position_step(Rng& rng) {
    int accepted = 0;
    const double r = config_.r_z;
    for (std::size_t ii = 0; ii < n_; ++ii) {
      const auto i = static_cast<NodeId>(ii);
      const NodeContext c = node_context(i);
      const int g_old = state_.gamma[ii];
      const int h = k_ == 1 ? 0 : static_cast<int>(categorical_draw(rng, c.lambda));
      Eigen::VectorXd z_new = Eigen::VectorXd::Zero(dim_);
      if (config_.latent_positions) {
        const Eigen::VectorXd mean = h == g_old ? Eigen::VectorXd(state_.z.row(i).transpose()) : tie_mean(i, h);
        for (int d = 0; d < dim_; ++d) z_new[d] = mean[d] + r * std_normal(rng);
      }
      const double log_ratio = membership_log_ratio(i, h, z_new, c);
      if (std::log(uniform_open(rng)) < log_ratio) {
        commit_within_terms(i, h);
        if (h != g_old) {
          remove_member(i);
          add_member(i, h);
        }
        state_.z.row(i) = z_new.transpose();
        ++accepted;
      }
    }
    return accepted;
  }

  // -------------------------------------------------------------------------
  // Step 2.

  /// Log acceptance ratio for a within-block random-walk move of node i.
  double position_log_ratio(NodeId i, const Eigen::VectorXd& z_new) {
    const int k = state_.gamma[static_cast<std::size_t>(i)];
    const double ls = state_.eta[static_cast<std::size_t>(k)].log_sigma;
    const Eigen::VectorXd z_old = state_.z.row(i).transpose();
    const double ll = config_.use_likelihood ? fill_within_terms(i, k, z_new.data()) - cached_within(i) : 0.0;
    return ll + isotropic_normal_log_density(z_new.squaredNorm(), ls, dim_) -
           isotropic_normal_log_density(z_old.squaredNorm(), ls, dim_);
  }

  int position_refresh_step(Rng& rng) {
    if (!config_.latent_positions) return 0;
    int accepted = 0;
    Eigen::VectorXd z_new(dim_);
    for (std::size_t ii = 0; ii < n_; ++ii) {
      const auto i = static_cast<NodeId>(ii);
      for (int d = 0; d < dim_; ++d) z_new[d] = state_.z(i, d) + config_.r_z * std_normal(rng);
      if (std::log(uniform_open(rng)) < position_log_ratio(i, z_new)) {
        commit_within_terms(i, block(i));
        state_.z.row(i) = z_new.transpose();
        ++accepted;
      }
    }
    return accepted;
  }

  // -------------------------------------------------------------------------
  // Steps 3 to 7.

  void gibbs_pi_step(Rng& rng) { state_.pi = gibbs_pi(state_.gamma, hyper_.upsilon0, rng); }

  void gibbs_tau_step(Rng& rng) {
    if (k_ < 2) return;
    BetweenCounts c = current_between_counts();
    if (!config_.use_likelihood) {
      c.edges.setZero();
      c.dyads.setZero();
    }
    state_.tau = gibbs_tau(c, hyper_.a0, hyper_.b0, rng);
    refresh_log_tau();
  }

  /// Within-block log-likelihood of block k at beta plus the log prior of its
  /// members' positions at log_sigma.
  double block_log_target(int k, const BlockParams& p) const {
    const auto& m = members_[static_cast<std::size_t>(k)];
    double out = 0.0;
    if (config_.use_likelihood)
      for (std::size_t a = 0; a < m.size(); ++a) {
        const std::size_t row = static_cast<std::size_t>(m[a]) * n_;
        for (std::size_t b = a + 1; b < m.size(); ++b) {
          const auto col = static_cast<std::size_t>(m[b]);
          if (!observed_[row + col]) continue;
          out += pair_log_term(row + col, p.beta, state_.z.row(m[a]).data(), state_.z.row(m[b]).data());
        }
      }
    out += block_position_prior(k, p);
    return out;
  }

  double block_position_prior(int k, const BlockParams& p) const {
    const auto& m = members_[static_cast<std::size_t>(k)];
    double out = 0.0;
    if (config_.latent_positions) {
      double sq = 0.0;
      for (NodeId j : m) sq += state_.z.row(j).squaredNorm();
      const double nk = static_cast<double>(m.size());
      out += -nk * dim_ * p.log_sigma - 0.5 * sq * std::exp(-2.0 * p.log_sigma);
    }
    return out;
  }

  double eta_log_ratio(int k, const BlockParams& proposal) const {
    const BlockParams& cur = state_.eta[static_cast<std::size_t>(k)];
    return block_log_target(k, proposal) - block_log_target(k, cur) + eta_prior_log_ratio(cur, proposal);
  }

  double eta_prior_log_ratio(const BlockParams& cur, const BlockParams& proposal) const {
    return mvn_log_density(proposal.as_vector(), state_.mu, state_.sigma_mat) -
           mvn_log_density(cur.as_vector(), state_.mu, state_.sigma_mat);
  }

  int mh_eta_step(Rng& rng) {
    int accepted = 0;
    for (int k = 0; k < k_; ++k) {
      const Eigen::Vector2d step = chol_a_ * Eigen::Vector2d(std_normal(rng), std_normal(rng));
      const BlockParams proposal = BlockParams::from_vector(state_.eta[static_cast<std::size_t>(k)].as_vector() + step);
      const BlockParams& cur = state_.eta[static_cast<std::size_t>(k)];
      double log_ratio = block_position_prior(k, proposal) - block_position_prior(k, cur) +
                         eta_prior_log_ratio(cur, proposal);
      if (config_.use_likelihood) log_ratio += fill_block_terms(k, proposal.beta) - cached_block(k);
      if (std::log(uniform_open(rng)) < log_ratio) {
        state_.eta[static_cast<std::size_t>(k)] = proposal;
        if (config_.use_likelihood) commit_block_terms(k);
        ++accepted;
      }
    }
    return accepted;
  }

  void update_mu_step(Rng& rng) { state_.mu = update_mu(state_.mu, state_.eta, state_.sigma_mat, hyper_, rng); }

  void gibbs_sigma_step(Rng& rng) { state_.sigma_mat = gibbs_sigma_mat(state_.eta, hyper_, rng); }

  /// Counters accumulated by `iterate`.
  struct Counts {
    long long membership_accepted = 0, membership_total = 0;
    long long position_accepted = 0, position_total = 0;
    long long eta_accepted = 0, eta_total = 0;
  };

  void iterate(Rng& rng, Counts& counts) {
    const auto& u = config_.updates;
    const auto n = static_cast<long long>(n_);
    if (u.membership) {
      counts.membership_accepted += joint_membership_position_step(rng);
      counts.membership_total += n;
    }
    if (u.positions && config_.latent_positions)
      for (int rep = 0; rep <= config_.n_extra_z_steps; ++rep) {
        counts.position_accepted += position_refresh_step(rng);
        counts.position_total += n;
      }
    if (u.pi) gibbs_pi_step(rng);
    if (u.tau) gibbs_tau_step(rng);
    if (u.eta) {
      counts.eta_accepted += mh_eta_step(rng);
      counts.eta_total += k_;
    }
    if (u.mu) update_mu_step(rng);
    if (u.sigma_mat) gibbs_sigma_step(rng);
  }

  BetweenCounts current_between_counts() const {
    const auto kb = static_cast<std::size_t>(k_);
    BetweenCounts c{Eigen::MatrixXd::Zero(k_, k_), Eigen::MatrixXd::Zero(k_, k_)};
    for (std::size_t k = 0; k < kb; ++k)
      for (std::size_t l = 0; l < kb; ++l)
        if (k != l)
          c.dyads(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(l)) =
              static_cast<double>(members_[k].size()) * static_cast<double>(members_[l].size());
    for (auto d : g_.edges()) {
      const auto a = static_cast<Eigen::Index>(block(d.i));
      const auto b = static_cast<Eigen::Index>(block(d.j));
      if (a == b || !observed_[idx(d.i, d.j)]) continue;
      c.edges(a, b) += 1.0;
      c.edges(b, a) += 1.0;
    }
    for (auto d : held_) {
      const auto a = static_cast<Eigen::Index>(block(d.i));
      const auto b = static_cast<Eigen::Index>(block(d.j));
      if (a == b) continue;
      c.dyads(a, b) -= 1.0;
      c.dyads(b, a) -= 1.0;
    }
    return c;
  }

 private:
  std::size_t idx(NodeId a, NodeId b) const { return static_cast<std::size_t>(a) * n_ + static_cast<std::size_t>(b); }
  std::size_t block(NodeId i) const { return static_cast<std::size_t>(state_.gamma[static_cast<std::size_t>(i)]); }

  double distance(const double* a, const double* b) const {
    double s = 0.0;
    for (int d = 0; d < dim_; ++d) {
      const double t = a[d] - b[d];
      s += t * t;
    }
    return std::sqrt(s);
  }

  void add_member(NodeId i, int k) {
    state_.gamma.labels[static_cast<std::size_t>(i)] = k;
    auto& m = members_[static_cast<std::size_t>(k)];
    slot_[static_cast<std::size_t>(i)] = m.size();
    m.push_back(i);
  }

  void remove_member(NodeId i) {
    auto& m = members_[block(i)];
    const std::size_t pos = slot_[static_cast<std::size_t>(i)];
    m[pos] = m.back();
    slot_[static_cast<std::size_t>(m[pos])] = pos;
    m.pop_back();
  }

  double pair_log_term(std::size_t cell, double beta, const double* za, const double* zb) const {
    const double x = beta - (config_.latent_positions ? distance(za, zb) : 0.0);
    return (adjacency_[cell] ? x : 0.0) - softplus(x);
  }

  double fresh_pair_term(NodeId i, NodeId j) const {
    const std::size_t cell = idx(i, j);
    if (!config_.use_likelihood || !observed_[cell] || block(i) != block(j)) return 0.0;
    return pair_log_term(cell, state_.eta[block(i)].beta, state_.z.row(i).data(), state_.z.row(j).data());
  }

  void rebuild_pair_cache() {
    pair_.assign(n_ * n_, 0.0);
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = 0; j < n_; ++j) pair_[i * n_ + j] = fresh_pair_term(static_cast<NodeId>(i), static_cast<NodeId>(j));
  }

  double between_log_likelihood(int k, const NodeContext& c) const {
    double out = 0.0;
    for (int l = 0; l < k_; ++l) {
      if (l == k) continue;
      const auto ll = static_cast<std::size_t>(l);
      out += c.ties[ll] * log_tau_(k, l) + (c.observed[ll] - c.ties[ll]) * log1m_tau_(k, l);
    }
    return out;
  }

  /// Current within-block log-likelihood of node i, from the cache.
  double cached_within(NodeId i) const {
    const std::size_t row = static_cast<std::size_t>(i) * n_;
    double out = 0.0;
    for (NodeId j : members_[block(i)]) out += pair_[row + static_cast<std::size_t>(j)];
    return out;
  }

  /// Pair terms of i placed in block k at z, stored in member order of block k.
  double fill_within_terms(NodeId i, int k, const double* z) {
    const auto& m = members_[static_cast<std::size_t>(k)];
    const double beta = state_.eta[static_cast<std::size_t>(k)].beta;
    const std::size_t row = static_cast<std::size_t>(i) * n_;
    node_terms_.resize(m.size());
    double out = 0.0;
    for (std::size_t r = 0; r < m.size(); ++r) {
      const auto j = static_cast<std::size_t>(m[r]);
      double v = 0.0;
      if (m[r] != i && observed_[row + j]) v = pair_log_term(row + j, beta, z, state_.z.row(m[r]).data());
      node_terms_[r] = v;
      out += v;
    }
    return out;
  }

  /// Writes the terms from the last fill_within_terms(i, k, .) into the cache.
  /// Must run before the membership lists change.
  void commit_within_terms(NodeId i, int k) {
    if (!config_.use_likelihood) return;
    const std::size_t row = static_cast<std::size_t>(i) * n_;
    for (NodeId j : members_[block(i)]) pair_[row + static_cast<std::size_t>(j)] = pair_[idx(j, i)] = 0.0;
    const auto& m = members_[static_cast<std::size_t>(k)];
    for (std::size_t r = 0; r < m.size(); ++r) pair_[row + static_cast<std::size_t>(m[r])] = pair_[idx(m[r], i)] = node_terms_[r];
  }

  double cached_block(int k) const {
    const auto& m = members_[static_cast<std::size_t>(k)];
    double out = 0.0;
    for (std::size_t a = 0; a < m.size(); ++a) {
      const std::size_t row = static_cast<std::size_t>(m[a]) * n_;
      for (std::size_t b = a + 1; b < m.size(); ++b) out += pair_[row + static_cast<std::size_t>(m[b])];
    }
    return out;
  }

  double fill_block_terms(int k, double beta) {
    const auto& m = members_[static_cast<std::size_t>(k)];
    block_terms_.clear();
    double out = 0.0;
    for (std::size_t a = 0; a < m.size(); ++a) {
      const std::size_t row = static_cast<std::size_t>(m[a]) * n_;
      for (std::size_t b = a + 1; b < m.size(); ++b) {
        const auto col = static_cast<std::size_t>(m[b]);
        double v = 0.0;
        if (observed_[row + col]) v = pair_log_term(row + col, beta, state_.z.row(m[a]).data(), state_.z.row(m[b]).data());
        block_terms_.push_back(v);
        out += v;
      }
    }
    return out;
  }

  void commit_block_terms(int k) {
    const auto& m = members_[static_cast<std::size_t>(k)];
    std::size_t p = 0;
    for (std::size_t a = 0; a < m.size(); ++a)
      for (std::size_t b = a + 1; b < m.size(); ++b, ++p) pair_[idx(m[a], m[b])] = pair_[idx(m[b], m[a])] = block_terms_[p];
  }

  void refresh_log_tau() {
    log_tau_ = state_.tau.tau.array().log();
    log1m_tau_ = (-state_.tau.tau.array()).log1p();
  }

  const Graph& g_;
  Hyperparams hyper_;
  SamplerConfig config_;
  std::size_t n_;
  int k_;
  int dim_;
  std::vector<std::uint8_t> adjacency_;
  std::vector<std::uint8_t> observed_;
  std::vector<Dyad> held_;
  std::vector<std::vector<NodeId>> observed_neighbors_;
  std::vector<std::vector<NodeId>> held_partners_;
  Eigen::Matrix2d chol_a_;
  ChainState state_;
  std::vector<std::vector<NodeId>> members_;
  std::vector<std::size_t> slot_;
  Eigen::MatrixXd log_tau_;
  Eigen::MatrixXd log1m_tau_;
  std::vector<double> pair_;  // within-block pair log-likelihood terms at the current state
  std::vector<double> node_terms_;
  std::vector<double> block_terms_;
};

// ---------------------------------------------------------------------------

/// Runs one chain. Starts from `init` when given, otherwise from the spectral
/// initialization seeded by `seed`.
inline PosteriorChain run_chain(const Graph& g, int n_blocks, const Hyperparams& hyper, const SamplerConfig& config,
                                std::uint64_t seed, const DyadMask* mask = nullptr,
                                std::optional<ChainState> init = std::nullopt) {
  Sampler sampler(g, n_blocks, hyper, config, mask);
  sampler.set_state(init ? std::move(*init) : Sampler::initial_state(g, n_blocks, hyper, substream_seed(seed, "init"), mask));
  Rng rng = make_rng(seed, "sampler");
  PosteriorChain chain;
  chain.seed = seed;
  chain.samples.reserve(static_cast<std::size_t>(config.n_iter / config.thin));
  Sampler::Counts counts;
  for (int t = 1; t <= config.n_iter; ++t) {
    sampler.iterate(rng, counts);
    if (t % config.thin == 0) chain.samples.push_back(sampler.state());
  }
  chain.burn_in = static_cast<std::size_t>(std::floor(config.burn_in_fraction * static_cast<double>(chain.samples.size())));
  auto rate = [](long long a, long long n) { return n > 0 ? static_cast<double>(a) / static_cast<double>(n) : 0.0; };
  chain.acceptance = {rate(counts.membership_accepted, counts.membership_total),
                      rate(counts.position_accepted, counts.position_total), rate(counts.eta_accepted, counts.eta_total)};
  return chain;
}

/// Independent chains on substreams of config.seed, run on up to
/// config.threads threads and returned in chain order.
inline std::vector<PosteriorChain> run_chains(const Graph& g, int n_blocks, const Hyperparams& hyper,
                                              const SamplerConfig& config, const DyadMask* mask = nullptr) {
  config.validate();
  std::vector<PosteriorChain> chains(static_cast<std::size_t>(config.n_chains));
  auto work = [&](std::size_t c) {
    chains[c] = run_chain(g, n_blocks, hyper, config, substream_seed(config.seed, "chain", c), mask);
  };
  const auto threads = static_cast<std::size_t>(std::max(1, config.threads));
  if (threads == 1) {
    for (std::size_t c = 0; c < chains.size(); ++c) work(c);
    return chains;
  }
  std::vector<std::exception_ptr> errors(chains.size());
  for (std::size_t start = 0; start < chains.size(); start += threads) {
    std::vector<std::thread> pool;
    for (std::size_t c = start; c < std::min(chains.size(), start + threads); ++c)
      pool.emplace_back([&, c] {
        try {
          work(c);
        } catch (...) {
          errors[c] = std::current_exception();
        }
      });
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return chains;
}

}  // namespace lssbm
