#pragma once

// Latent space stochastic blockmodel: within-block latent distance ties,
// between-block Bernoulli rates, and the hierarchical prior with the
// assortativity restriction on the population mean.

#include <cmath>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "lssbm/common.hpp"
#include "lssbm/graph.hpp"
#include "lssbm/random.hpp"

namespace lssbm {

/// Within-block random effect (beta_k, log sigma_k).
struct BlockParams {
  double beta = 0.0;
  double log_sigma = 0.0;

  double sigma() const { return std::exp(log_sigma); }
  Eigen::Vector2d as_vector() const { return {beta, log_sigma}; }
  static BlockParams from_vector(const Eigen::Vector2d& v) { return {v[0], v[1]}; }
  friend bool operator==(const BlockParams&, const BlockParams&) = default;
};

/// N x D matrix of latent positions, one row per node.
using LatentPositions = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Symmetric K x K between-block tie probabilities; the diagonal is unused.
struct BetweenParams {
  Eigen::MatrixXd tau;

  double operator()(int k, int l) const { return tau(k, l); }
  static BetweenParams constant(int k, double value) {
    BetweenParams p{Eigen::MatrixXd::Constant(k, k, value)};
    p.tau.diagonal().setZero();
    return p;
  }
};

struct GlobalParams {
  Eigen::VectorXd pi;
  Eigen::Vector2d mu = Eigen::Vector2d::Zero();
  Eigen::Matrix2d sigma_mat = Eigen::Matrix2d::Identity();
};

struct Hyperparams {
  double a0 = 1.0;  // Beta prior on tau
  double b0 = 1.0;
  Eigen::Vector2d m0 = Eigen::Vector2d::Zero();
  double s0 = 1.0;
  Eigen::Matrix2d psi0 = Eigen::Matrix2d::Identity();
  double nu0 = 4.0;
  double upsilon0 = 1.0;  // Dirichlet concentration
  int dim = 2;

  void validate() const {
    if (!(a0 > 0 && b0 > 0)) throw ValidationError("a0 and b0 must be positive");
    if (!(s0 > 0)) throw ValidationError("s0 must be positive");
    if (!(nu0 > 1)) throw ValidationError("nu0 must exceed 1");
    if (!(upsilon0 > 0)) throw ValidationError("upsilon0 must be positive");
    if (dim < 1) throw ValidationError("latent dimension must be >= 1");
    if (psi0.llt().info() != Eigen::Success || (psi0 - psi0.transpose()).norm() > 1e-12)
      throw ValidationError("psi0 must be symmetric positive definite");
  }
};

// ---------------------------------------------------------------------------

inline double edge_prob_within(double beta, const Eigen::Ref<const Eigen::VectorXd>& zi,
                               const Eigen::Ref<const Eigen::VectorXd>& zj) {
  return inv_logit(beta - (zi - zj).norm());
}

/// Mean distance between two independent N_D(0, sigma^2 I) points.
inline double expected_latent_distance(double sigma, int dim) { return 2.0 * sigma * half_gamma_ratio(dim); }

/// Smallest mu_1 satisfying the assortativity restriction given mu_2.
inline double assortativity_bound(double a0, double b0, double mu2, int dim) {
  return digamma(a0) - digamma(b0) + expected_latent_distance(std::exp(mu2), dim);
}

/// Largest mu_2 satisfying the restriction given mu_1; empty when no mu_2 works.
inline std::optional<double> assortativity_upper_mu2(double a0, double b0, double mu1, int dim) {
  const double slack = mu1 - (digamma(a0) - digamma(b0));
  if (!(slack > 0)) return std::nullopt;
  return std::log(slack / (2.0 * half_gamma_ratio(dim)));
}

inline bool is_assortative(const Eigen::Vector2d& mu, double a0, double b0, int dim) {
  return mu[0] >= assortativity_bound(a0, b0, mu[1], dim);
}

/// Beta(a0, 1) prior on tau whose mean is ten times the observed density.
/// The target mean is capped at 1/2 (the uniform prior) for dense graphs.
inline std::pair<double, double> default_beta_prior(double density) {
  const double mean = std::clamp(10.0 * density, 1e-6, 0.5);
  return {mean / (1.0 - mean), 1.0};
}

// ---------------------------------------------------------------------------
// Likelihood.

struct LikelihoodTerms {
  std::vector<double> within;       // per block
  Eigen::MatrixXd between;          // (k,l) with k < l filled
  double total() const {
    double s = 0.0;
    for (double w : within) s += w;
    for (Eigen::Index k = 0; k < between.rows(); ++k)
      for (Eigen::Index l = k + 1; l < between.cols(); ++l) s += between(k, l);
    return s;
  }
};

/// Per-block and per-block-pair log-likelihood over observed dyads. With
/// `latent` false, within-block ties ignore positions (sigma = 0).
inline LikelihoodTerms log_likelihood_terms(const Graph& g, const BlockAssignment& gamma, const LatentPositions& z,
                                            const std::vector<BlockParams>& eta, const BetweenParams& tau,
                                            const DyadMask* mask = nullptr, bool latent = true) {
  const auto n = static_cast<NodeId>(g.n_nodes());
  const int k_blocks = gamma.n_blocks;
  if (gamma.size() != g.n_nodes() || eta.size() != static_cast<std::size_t>(k_blocks))
    throw ValidationError("likelihood inputs have inconsistent shapes");
  if (latent && z.rows() != n) throw ValidationError("latent positions do not cover the graph");
  for (int k = 0; k < k_blocks; ++k)
    for (int l = k + 1; l < k_blocks; ++l)
      if (!(tau.tau(k, l) >= 0.0 && tau.tau(k, l) <= 1.0)) throw ValidationError("tau outside [0,1]");
  const MaskIndex held(g.n_nodes(), mask);
  LikelihoodTerms out;
  out.within.assign(static_cast<std::size_t>(k_blocks), 0.0);
  out.between = Eigen::MatrixXd::Zero(k_blocks, k_blocks);
  for (NodeId i = 0; i < n; ++i)
    for (NodeId j = i + 1; j < n; ++j) {
      if (mask != nullptr && held.held_out(i, j)) continue;
      const bool y = g.has_edge(i, j);
      const int a = gamma[static_cast<std::size_t>(i)];
      const int b = gamma[static_cast<std::size_t>(j)];
      if (a == b) {
        const double dist = latent ? (z.row(i) - z.row(j)).norm() : 0.0;
        out.within[static_cast<std::size_t>(a)] += bernoulli_logit_lpmf(y, eta[static_cast<std::size_t>(a)].beta - dist);
      } else {
        out.between(std::min(a, b), std::max(a, b)) += bernoulli_lpmf(y, tau.tau(a, b));
      }
    }
  return out;
}

inline double log_likelihood(const Graph& g, const BlockAssignment& gamma, const LatentPositions& z,
                             const std::vector<BlockParams>& eta, const BetweenParams& tau,
                             const DyadMask* mask = nullptr, bool latent = true) {
  return log_likelihood_terms(g, gamma, z, eta, tau, mask, latent).total();
}

// ---------------------------------------------------------------------------
// Prior.

/// Log prior of (pi, gamma, tau, eta, mu, Sigma); -inf when mu violates the
/// assortativity restriction. Up to the normalizing constant of the truncation.
inline double prior_log_density(const GlobalParams& global, const std::vector<BlockParams>& eta,
                                const BetweenParams& tau, const BlockAssignment& gamma, const Hyperparams& hyper) {
  if (!is_assortative(global.mu, hyper.a0, hyper.b0, hyper.dim)) return kNegInf;
  const int k_blocks = static_cast<int>(eta.size());
  double out = dirichlet_log_density(global.pi, hyper.upsilon0);
  if (k_blocks > 1)
    for (int v : gamma.labels) out += std::log(global.pi[v]);
  for (int k = 0; k < k_blocks; ++k)
    for (int l = k + 1; l < k_blocks; ++l) out += beta_log_density(tau.tau(k, l), hyper.a0, hyper.b0);
  for (const auto& e : eta) out += mvn_log_density(e.as_vector(), global.mu, global.sigma_mat);
  out += mvn_log_density(global.mu, hyper.m0, global.sigma_mat / hyper.s0);
  out += inverse_wishart_log_density(global.sigma_mat, hyper.psi0, hyper.nu0);
  return out;
}

// ---------------------------------------------------------------------------
// Simulation.

struct SimulatedNetwork {
  Graph graph;
  BlockAssignment gamma;
  LatentPositions z;
  std::vector<BlockParams> eta;
  BetweenParams tau;
};

/// Draws eta ~ N2(mu, Sigma) and tau ~ Beta(a0, b0) unless fixed values are
/// given, then positions and edges. log_sigma = -inf gives sigma = 0.
inline SimulatedNetwork sample_network(const BlockAssignment& gamma, const Hyperparams& hyper,
                                       const GlobalParams& global, std::uint64_t seed,
                                       std::optional<std::vector<BlockParams>> fixed_eta = std::nullopt,
                                       std::optional<BetweenParams> fixed_tau = std::nullopt) {
  Rng rng = make_rng(seed, "simulate");
  const int k_blocks = gamma.n_blocks;
  SimulatedNetwork sim;
  sim.gamma = gamma;
  if (fixed_eta) {
    if (fixed_eta->size() != static_cast<std::size_t>(k_blocks)) throw ValidationError("eta size mismatch");
    sim.eta = *fixed_eta;
  } else {
    const Eigen::Matrix2d chol = global.sigma_mat.llt().matrixL();
    for (int k = 0; k < k_blocks; ++k) {
      const Eigen::Vector2d e = global.mu + chol * Eigen::Vector2d(std_normal(rng), std_normal(rng));
      sim.eta.push_back(BlockParams::from_vector(e));
    }
  }
  if (fixed_tau) {
    sim.tau = *fixed_tau;
  } else {
    sim.tau.tau = Eigen::MatrixXd::Zero(k_blocks, k_blocks);
    for (int k = 0; k < k_blocks; ++k)
      for (int l = k + 1; l < k_blocks; ++l) sim.tau.tau(k, l) = sim.tau.tau(l, k) = beta_draw(rng, hyper.a0, hyper.b0);
  }
  const auto n = static_cast<NodeId>(gamma.size());
  sim.z = LatentPositions::Zero(n, hyper.dim);
  for (NodeId i = 0; i < n; ++i) {
    const double s = sim.eta[static_cast<std::size_t>(gamma[static_cast<std::size_t>(i)])].sigma();
    for (int d = 0; d < hyper.dim; ++d) sim.z(i, d) = s * std_normal(rng);
  }
  std::vector<std::pair<NodeId, NodeId>> edges;
  for (NodeId i = 0; i < n; ++i)
    for (NodeId j = i + 1; j < n; ++j) {
      const int a = gamma[static_cast<std::size_t>(i)];
      const int b = gamma[static_cast<std::size_t>(j)];
      const double p = a == b ? edge_prob_within(sim.eta[static_cast<std::size_t>(a)].beta, sim.z.row(i).transpose(),
                                                 sim.z.row(j).transpose())
                              : sim.tau.tau(a, b);
      if (uniform01(rng) < p) edges.emplace_back(i, j);
    }
  sim.graph = Graph(static_cast<std::size_t>(n), edges);
  return sim;
}

/// Five equal blocks, fixed (beta, sigma) vectors and tau = 0.3 between all blocks.
struct SimulationStudySetup {
  BlockAssignment gamma;
  std::vector<BlockParams> eta;
  BetweenParams tau;
  int dim = 2;
};

inline SimulationStudySetup simulation_study_setup(int nodes_per_block = 60,
                                                   std::vector<double> beta = {0.6, 2.0, 2.1, 4.0, 4.0},
                                                   std::vector<double> sigma = {0.4, 0.8, 1.2, 1.6, 2.0},
                                                   double between = 0.3) {
  if (beta.size() != sigma.size()) throw ValidationError("beta and sigma vectors differ in length");
  const int k_blocks = static_cast<int>(beta.size());
  SimulationStudySetup s;
  std::vector<int> labels;
  for (int k = 0; k < k_blocks; ++k) labels.insert(labels.end(), static_cast<std::size_t>(nodes_per_block), k);
  s.gamma = BlockAssignment(labels, k_blocks);
  for (int k = 0; k < k_blocks; ++k)
    s.eta.push_back({beta[static_cast<std::size_t>(k)], std::log(sigma[static_cast<std::size_t>(k)])});
  s.tau = BetweenParams::constant(k_blocks, between);
  return s;
}

inline SimulatedNetwork simulate_study_network(const SimulationStudySetup& setup, std::uint64_t seed) {
  Hyperparams hyper;
  hyper.dim = setup.dim;
  GlobalParams global;
  return sample_network(setup.gamma, hyper, global, seed, setup.eta, setup.tau);
}

}  // namespace lssbm
