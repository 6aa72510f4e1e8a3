#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "lssbm/model.hpp"
#include "test_util.hpp"

using namespace lssbm;

namespace {

const double kSqrtPi = std::sqrt(std::numbers::pi);

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

}  // namespace

TEST(EdgeProbability, Examples) {
  EXPECT_DOUBLE_EQ(edge_prob_within(0.0, vec({1.0, 2.0}), vec({1.0, 2.0})), 0.5);
  EXPECT_NEAR(edge_prob_within(2.0, vec({0.0, 0.0}), vec({0.0, 2.0})), 0.5, 1e-15);
  EXPECT_NEAR(edge_prob_within(logit(0.719), vec({0.3, 0.3}), vec({0.3, 0.3})), 0.719, 1e-12);
}

TEST(Likelihood, TwoNodeCases) {
  const Graph edge(2, std::vector<std::pair<NodeId, NodeId>>{{0, 1}});
  const Graph empty(2, std::vector<std::pair<NodeId, NodeId>>{});
  LatentPositions z = LatentPositions::Zero(2, 2);
  EXPECT_NEAR(log_likelihood(edge, BlockAssignment({0, 0}, 1), z, {{0.0, 0.0}}, BetweenParams::constant(1, 0.0)),
              std::log(0.5), 1e-15);
  auto tau = BetweenParams::constant(2, 0.25);
  EXPECT_NEAR(log_likelihood(empty, BlockAssignment({0, 1}, 2), z, {{0.0, 0.0}, {0.0, 0.0}}, tau), std::log(0.75), 1e-15);
}

TEST(Likelihood, MatchesPerDyadSum) {
  // N=5, two blocks, mixed ties and a held-out dyad
  const Graph g(5, std::vector<std::pair<NodeId, NodeId>>{{0, 1}, {0, 3}, {2, 4}, {3, 4}, {1, 2}});
  const BlockAssignment gamma({0, 0, 1, 1, 0}, 2);
  LatentPositions z(5, 2);
  z << 0.1, 0.2, -0.4, 0.5, 1.0, -1.0, 0.3, 0.3, -0.2, 0.9;
  const std::vector<BlockParams> eta{{1.2, 0.0}, {-0.3, 0.0}};
  BetweenParams tau = BetweenParams::constant(2, 0.35);
  DyadMask mask;
  mask.held_out = {{1, 4}};
  double ref = 0.0;
  for (int i = 0; i < 5; ++i)
    for (int j = i + 1; j < 5; ++j) {
      if (i == 1 && j == 4) continue;
      const bool y = g.has_edge(i, j);
      double p;
      if (gamma[i] == gamma[j]) {
        const double d = std::hypot(z(i, 0) - z(j, 0), z(i, 1) - z(j, 1));
        p = 1.0 / (1.0 + std::exp(-(eta[static_cast<std::size_t>(gamma[i])].beta - d)));
      } else {
        p = 0.35;
      }
      ref += y ? std::log(p) : std::log(1.0 - p);
    }
  EXPECT_NEAR(log_likelihood(g, gamma, z, eta, tau, &mask), ref, 1e-12);
  const auto terms = log_likelihood_terms(g, gamma, z, eta, tau, &mask);
  EXPECT_NEAR(terms.total(), ref, 1e-12);
  EXPECT_EQ(terms.within.size(), 2u);
}

TEST(Likelihood, SbmModeIgnoresPositions) {
  const Graph g(3, std::vector<std::pair<NodeId, NodeId>>{{0, 1}});
  LatentPositions z(3, 2);
  z << 0, 0, 5, 5, -3, 1;
  const BlockAssignment one({0, 0, 0}, 1);
  const double got = log_likelihood(g, one, z, {{0.4, 0.0}}, BetweenParams::constant(1, 0.0), nullptr, false);
  const double p = inv_logit(0.4);
  EXPECT_NEAR(got, std::log(p) + 2 * std::log(1 - p), 1e-14);
}

TEST(Likelihood, RejectsBadTau) {
  const Graph g(2, std::vector<std::pair<NodeId, NodeId>>{});
  LatentPositions z = LatentPositions::Zero(2, 2);
  BetweenParams tau = BetweenParams::constant(2, 1.5);
  EXPECT_THROW(log_likelihood(g, BlockAssignment({0, 1}, 2), z, {{0, 0}, {0, 0}}, tau), ValidationError);
}

TEST(ExpectedDistance, ClosedForms) {
  EXPECT_NEAR(expected_latent_distance(1.0, 2), kSqrtPi, 1e-14);
  EXPECT_NEAR(expected_latent_distance(1.0, 1), 2.0 / kSqrtPi, 1e-14);
  EXPECT_EQ(expected_latent_distance(0.0, 3), 0.0);
}

TEST(ExpectedDistance, MonteCarlo) {
  Rng rng = make_rng(7, "distance");
  for (int dim : {1, 2, 3}) {
    test::Moments m;
    for (int t = 0; t < 200000; ++t) {
      double sq = 0.0;
      for (int d = 0; d < dim; ++d) {
        const double diff = 0.7 * (std_normal(rng) - std_normal(rng));
        sq += diff * diff;
      }
      m.add(std::sqrt(sq));
    }
    EXPECT_TRUE(m.mean_within(expected_latent_distance(0.7, dim), 3.0)) << dim << " " << m.mean();
  }
}

TEST(Assortativity, BoundAndInverse) {
  EXPECT_NEAR(assortativity_bound(2.0, 2.0, 0.0, 2), kSqrtPi, 1e-14);
  EXPECT_NEAR(assortativity_bound(1.0, 3.0, 0.5, 2), digamma(1.0) - digamma(3.0) + std::exp(0.5) * kSqrtPi, 1e-14);
  for (double mu2 : {-1.0, 0.0, 0.8}) {
    const double mu1 = assortativity_bound(0.3, 1.0, mu2, 2);
    const auto back = assortativity_upper_mu2(0.3, 1.0, mu1, 2);
    ASSERT_TRUE(back);
    EXPECT_NEAR(*back, mu2, 1e-12);
  }
  EXPECT_FALSE(assortativity_upper_mu2(1.0, 1.0, -0.1, 2));
  EXPECT_TRUE(is_assortative(Eigen::Vector2d(2.0, 0.0), 1.0, 1.0, 2));
  EXPECT_FALSE(is_assortative(Eigen::Vector2d(1.7, 0.0), 1.0, 1.0, 2));
}

TEST(DefaultBetaPrior, MeanIsTenTimesDensityCapped) {
  auto [a, b] = default_beta_prior(0.02);
  EXPECT_NEAR(a / (a + b), 0.2, 1e-12);
  EXPECT_EQ(b, 1.0);
  std::tie(a, b) = default_beta_prior(0.3);
  EXPECT_NEAR(a, 1.0, 1e-12);
}

TEST(Prior, EdgeCases) {
  Hyperparams h;
  GlobalParams global;
  global.pi = Eigen::VectorXd::Ones(1);
  global.mu = Eigen::Vector2d(0.0, 0.0);  // violates the bound sqrt(pi) for a0 = b0
  const std::vector<BlockParams> eta{{0.0, 0.0}};
  const BlockAssignment gamma({0, 0}, 1);
  EXPECT_EQ(prior_log_density(global, eta, BetweenParams::constant(1, 0.0), gamma, h), kNegInf);
  global.mu = Eigen::Vector2d(3.0, 0.0);
  // K=1: no Dirichlet or tau terms, only the normal and inverse Wishart pieces
  const double expected = mvn_log_density(Eigen::Vector2d(0.0, 0.0), global.mu, global.sigma_mat) +
                          mvn_log_density(global.mu, h.m0, global.sigma_mat / h.s0) +
                          inverse_wishart_log_density(global.sigma_mat, h.psi0, h.nu0);
  EXPECT_NEAR(prior_log_density(global, eta, BetweenParams::constant(1, 0.0), gamma, h), expected, 1e-12);
  // a Beta(1,1) prior on tau contributes nothing
  GlobalParams g2 = global;
  g2.pi = Eigen::Vector2d(0.5, 0.5);
  const std::vector<BlockParams> eta2{{0.0, 0.0}, {1.0, 0.0}};
  const BlockAssignment gamma2({0, 1}, 2);
  const double at_low = prior_log_density(g2, eta2, BetweenParams::constant(2, 0.1), gamma2, h);
  const double at_high = prior_log_density(g2, eta2, BetweenParams::constant(2, 0.9), gamma2, h);
  EXPECT_NEAR(at_low, at_high, 1e-12);
}

TEST(Hyperparams, Validation) {
  Hyperparams h;
  EXPECT_NO_THROW(h.validate());
  h.nu0 = 1.0;
  EXPECT_THROW(h.validate(), ValidationError);
  h = Hyperparams{};
  h.psi0 << 1, 2, 2, 1;
  EXPECT_THROW(h.validate(), ValidationError);
}

TEST(Simulation, StudyConfiguration) {
  const auto setup = simulation_study_setup();
  EXPECT_EQ(setup.gamma.size(), 300u);
  EXPECT_EQ(setup.gamma.counts(), (std::vector<int>{60, 60, 60, 60, 60}));
  const auto sim = simulate_study_network(setup, 4);
  double edges = 0.0, dyads = 0.0;
  for (NodeId i = 0; i < 300; ++i)
    for (NodeId j = i + 1; j < 300; ++j)
      if (sim.gamma[static_cast<std::size_t>(i)] != sim.gamma[static_cast<std::size_t>(j)]) {
        dyads += 1.0;
        edges += sim.graph.has_edge(i, j) ? 1.0 : 0.0;
      }
  const double se = std::sqrt(0.3 * 0.7 / dyads);
  EXPECT_NEAR(edges / dyads, 0.3, 4 * se);
  EXPECT_EQ(simulate_study_network(setup, 4).graph, sim.graph);
  EXPECT_NE(simulate_study_network(setup, 5).graph, sim.graph);
}

TEST(Simulation, ZeroSigmaGivesBernoulliBlocks) {
  // sigma = 0: within-block ties are iid with probability inv_logit(beta)
  const auto setup = simulation_study_setup(150, {-0.5, 1.0}, {0.0, 0.0}, 0.0);
  const auto sim = simulate_study_network(setup, 8);
  for (int k = 0; k < 2; ++k) {
    const auto members = sim.gamma.members()[static_cast<std::size_t>(k)];
    double e = 0.0, d = 0.0;
    for (std::size_t a = 0; a < members.size(); ++a)
      for (std::size_t b = a + 1; b < members.size(); ++b) {
        d += 1.0;
        e += sim.graph.has_edge(members[a], members[b]) ? 1.0 : 0.0;
      }
    const double p = inv_logit(setup.eta[static_cast<std::size_t>(k)].beta);
    EXPECT_NEAR(e / d, p, 4 * std::sqrt(p * (1 - p) / d));
  }
  for (auto dy : sim.graph.edges()) EXPECT_EQ(sim.gamma[static_cast<std::size_t>(dy.i)], sim.gamma[static_cast<std::size_t>(dy.j)]);
}
