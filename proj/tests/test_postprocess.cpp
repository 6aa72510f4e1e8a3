#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include <gtest/gtest.h>

#include "lssbm/postprocess.hpp"
#include "test_util.hpp"

using namespace lssbm;

namespace {

double brute_force_assignment(const Eigen::MatrixXd& cost) {
  std::vector<int> p(static_cast<std::size_t>(cost.rows()));
  std::iota(p.begin(), p.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double c = 0.0;
    for (std::size_t r = 0; r < p.size(); ++r) c += cost(static_cast<Eigen::Index>(r), p[r]);
    best = std::min(best, c);
  } while (std::next_permutation(p.begin(), p.end()));
  return best;
}

Eigen::Matrix2d rotation(double angle) {
  Eigen::Matrix2d r;
  r << std::cos(angle), -std::sin(angle), std::sin(angle), std::cos(angle);
  return r;
}

ChainState state_with(const BlockAssignment& gamma, const LatentPositions& z) {
  ChainState s;
  const int k = gamma.n_blocks;
  s.gamma = gamma;
  s.z = z;
  for (int a = 0; a < k; ++a) s.eta.push_back({static_cast<double>(a), 0.1 * a});
  s.tau = BetweenParams::constant(k, 0.1);
  s.pi = Eigen::VectorXd::LinSpaced(k, 1.0, static_cast<double>(k));
  s.pi /= s.pi.sum();
  return s;
}

}  // namespace

TEST(Hungarian, MatchesBruteForce) {
  Rng rng = make_rng(1, "hungarian");
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + trial % 6;
    Eigen::MatrixXd c(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) c(i, j) = std::floor(10.0 * uniform01(rng)) - 3.0;
    const auto res = hungarian(c);
    EXPECT_NEAR(res.cost, brute_force_assignment(c), 1e-12);
    std::vector<int> cols = res.row_to_col;
    std::sort(cols.begin(), cols.end());
    for (int i = 0; i < n; ++i) EXPECT_EQ(cols[static_cast<std::size_t>(i)], i);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) EXPECT_LE(res.u[i] + res.v[j], c(i, j) + 1e-9);
  }
}

TEST(AlignLabels, RecoversSwap) {
  Rng rng = make_rng(2, "align");
  const BlockAssignment ref({0, 0, 1, 1, 2}, 3);
  const BlockAssignment sample({1, 1, 0, 0, 2}, 3);
  const auto relabel = align_labels(sample, ref, rng);
  EXPECT_EQ(relabel, (std::vector<int>{1, 0, 2}));
  EXPECT_EQ(agreement_count(sample, ref, relabel), 5u);
}

TEST(AlignLabels, TiesAreBrokenAtRandom) {
  // an empty sample block and an empty reference block leave two optimal maps
  const BlockAssignment ref({0, 0, 0}, 3);
  const BlockAssignment sample({0, 0, 0}, 3);
  Rng rng = make_rng(3, "ties");
  std::set<std::vector<int>> seen;
  for (int t = 0; t < 200; ++t) {
    const auto r = align_labels(sample, ref, rng);
    EXPECT_EQ(r[0], 0);
    seen.insert(r);
  }
  EXPECT_EQ(seen.size(), 2u);
}

TEST(AlignLabels, OptimalAgreementAgainstBruteForce) {
  Rng rng = make_rng(4, "align-bf");
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> a(12), b(12);
    for (auto& x : a) x = static_cast<int>(uniform01(rng) * 4);
    for (auto& x : b) x = static_cast<int>(uniform01(rng) * 4);
    const BlockAssignment s(a, 4), r(b, 4);
    const auto relabel = align_labels(s, r, rng);
    std::vector<int> p{0, 1, 2, 3};
    std::size_t best = 0;
    do best = std::max(best, agreement_count(s, r, p));
    while (std::next_permutation(p.begin(), p.end()));
    EXPECT_EQ(agreement_count(s, r, relabel), best);
  }
}

TEST(RelabelState, MovesEveryBlockField) {
  LatentPositions z = LatentPositions::Zero(3, 2);
  ChainState s = state_with(BlockAssignment({0, 1, 1}, 2), z);
  s.tau.tau(0, 1) = s.tau.tau(1, 0) = 0.3;
  const ChainState r = relabel_state(s, {1, 0});
  EXPECT_EQ(r.gamma.labels, (std::vector<int>{1, 0, 0}));
  EXPECT_EQ(r.eta[0].beta, s.eta[1].beta);
  EXPECT_EQ(r.pi[0], s.pi[1]);
  EXPECT_EQ(r.tau.tau(1, 0), 0.3);
}

TEST(Procrustes, UndoesRotationAndTranslation) {
  Rng rng = make_rng(5, "procrustes");
  Eigen::MatrixXd target(6, 2);
  for (Eigen::Index i = 0; i < target.size(); ++i) target.data()[i] = std_normal(rng);
  for (double angle : {0.3, 2.0, -1.1}) {
    Eigen::MatrixXd src = (target * rotation(angle)).rowwise() + Eigen::RowVector2d(4.0, -2.0);
    const auto res = procrustes_align(src, target);
    EXPECT_LT(res.residual, 1e-20);
    EXPECT_TRUE((res.rotation.transpose() * res.rotation).isIdentity(1e-12));
  }
  // reflections are allowed
  Eigen::MatrixXd mirrored = target;
  mirrored.col(0) *= -1.0;
  EXPECT_LT(procrustes_align(mirrored, target).residual, 1e-20);
}

TEST(Procrustes, BeatsEveryRotationOnAGrid) {
  Eigen::MatrixXd src(3, 2), tgt(3, 2);
  src << 0, 0, 1, 0, 0, 2;
  tgt << 0.1, 0.3, 0.2, 1.1, -1.5, -0.4;
  const auto res = procrustes_align(src, tgt);
  const Eigen::RowVector2d ct = tgt.colwise().mean(), cs = src.colwise().mean();
  const Eigen::MatrixXd a = src.rowwise() - cs;
  const Eigen::MatrixXd t = tgt.rowwise() - ct;
  double best = std::numeric_limits<double>::infinity();
  for (int step = 0; step < 3600; ++step) {
    const double th = 2 * std::numbers::pi * step / 3600.0;
    for (double flip : {1.0, -1.0}) {
      Eigen::Matrix2d f = Eigen::Matrix2d::Identity();
      f(0, 0) = flip;
      best = std::min(best, (a * f * rotation(th) - t).squaredNorm());
    }
  }
  EXPECT_LE(res.residual, best + 1e-12);
  EXPECT_GT(res.residual, best - 1e-4);
}

TEST(WeightedMds, StressIsMonotoneAndExactWhenEmbeddable) {
  Eigen::MatrixXd w = Eigen::MatrixXd::Ones(3, 3) - Eigen::MatrixXd::Identity(3, 3);
  Eigen::MatrixXd d = w;  // equilateral triangle with side 1
  const auto res = weighted_mds(w, d, 2);
  for (std::size_t t = 1; t < res.stress.size(); ++t) EXPECT_LE(res.stress[t], res.stress[t - 1] + 1e-12);
  EXPECT_LT(res.stress.back(), 1e-10);
  for (int i = 0; i < 3; ++i)
    for (int j = i + 1; j < 3; ++j) EXPECT_NEAR((res.coords.row(i) - res.coords.row(j)).norm(), 1.0, 1e-5);

  Eigen::MatrixXd w2 = Eigen::MatrixXd::Ones(2, 2) - Eigen::MatrixXd::Identity(2, 2);
  Eigen::MatrixXd d2 = 5.0 * w2;
  const auto two = weighted_mds(w2, d2, 2);
  EXPECT_NEAR((two.coords.row(0) - two.coords.row(1)).norm(), 5.0, 1e-6);
}

TEST(WeightedMds, IgnoresZeroWeights) {
  // the 0-2 distance is missing; the other two are consistent with a line
  Eigen::MatrixXd w(3, 3), d(3, 3);
  w << 0, 1, 0, 1, 0, 1, 0, 1, 0;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  d << 0, 1, nan, 1, 0, 2, nan, 2, 0;
  const auto res = weighted_mds(w, d, 2);
  EXPECT_LT(res.stress.back(), 1e-10);
  EXPECT_TRUE(std::isfinite(weighted_stress(res.coords, w, d)));
}

TEST(GelmanRubin, HandExample) {
  // means 2 and 4, within variances 1: W = 1, B = 6, Vhat = 2/3 + 2
  const auto r = gelman_rubin({{1, 2, 3}, {3, 4, 5}});
  ASSERT_TRUE(r);
  EXPECT_NEAR(*r, std::sqrt(8.0 / 3.0), 1e-14);
  EXPECT_FALSE(gelman_rubin({{1, 1}, {2, 2}}));
  EXPECT_THROW(gelman_rubin({{1, 2, 3}}), ValidationError);
  EXPECT_THROW(gelman_rubin({{1}, {2}}), ValidationError);
  EXPECT_THROW(gelman_rubin({{1, 2}, {1, 2, 3}}), ValidationError);
}

TEST(GelmanRubin, NearOneForIidChains) {
  Rng rng = make_rng(6, "rhat");
  std::vector<std::vector<double>> chains(4, std::vector<double>(5000));
  for (auto& c : chains)
    for (auto& x : c) x = std_normal(rng);
  const auto r = gelman_rubin(chains);
  ASSERT_TRUE(r);
  EXPECT_LT(std::abs(*r - 1.0), 0.01);
}

TEST(MembershipPosterior, FrequenciesAndMode) {
  LatentPositions z = LatentPositions::Zero(2, 2);
  const std::vector<ChainState> s{state_with(BlockAssignment({0, 1}, 2), z), state_with(BlockAssignment({0, 0}, 2), z),
                                  state_with(BlockAssignment({1, 0}, 2), z)};
  const auto mp = membership_posterior(s, 2, 2);
  EXPECT_NEAR(mp.probability(0, 0), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(mp.probability(1, 1), 1.0 / 3.0, 1e-15);
  EXPECT_EQ(mp.mode, (std::vector<int>{0, 0}));
  for (Eigen::Index i = 0; i < 2; ++i) EXPECT_NEAR(mp.probability.row(i).sum(), 1.0, 1e-15);
}

TEST(DistanceSummary, AveragesCoMemberships) {
  LatentPositions z1(3, 2), z2(3, 2);
  z1 << 0, 0, 3, 4, 9, 9;
  z2 << 0, 0, 1, 0, 0, 2;
  const std::vector<ChainState> s{state_with(BlockAssignment({0, 0, 1}, 2), z1),
                                  state_with(BlockAssignment({0, 0, 0}, 2), z2)};
  const auto ds = build_distance_summary(s, 2, 3);
  ASSERT_EQ(ds[0].nodes, (std::vector<NodeId>{0, 1, 2}));
  EXPECT_EQ(ds[0].weight(0, 1), 2.0);
  EXPECT_NEAR(ds[0].distance(0, 1), 3.0, 1e-15);  // (5 + 1) / 2
  EXPECT_EQ(ds[0].weight(0, 2), 1.0);
  EXPECT_NEAR(ds[0].distance(1, 2), std::sqrt(5.0), 1e-15);
  ASSERT_EQ(ds[1].nodes, (std::vector<NodeId>{2}));
  EXPECT_EQ(ds[1].weight(0, 0), 0.0);
  EXPECT_TRUE(std::isnan(ds[1].distance(0, 0)));
}

TEST(PostprocessChains, AlignsSwappedChains) {
  // the same configuration reported under swapped labels and a rotation
  LatentPositions z(4, 2);
  z << 0, 0, 1, 0, 5, 5, 5, 7;
  const ChainState a = state_with(BlockAssignment({0, 0, 1, 1}, 2), z);
  ChainState b = relabel_state(a, {1, 0});
  b.z = (z * rotation(1.0)).rowwise() + Eigen::RowVector2d(3, 3);
  PosteriorChain c1, c2;
  c1.samples = {a, a};
  c2.samples = {b, b};
  const auto res = postprocess_chains({c1, c2}, 9);
  for (const auto& chain : res.aligned)
    for (const auto& s : chain) {
      EXPECT_EQ(s.gamma, res.reference);
      EXPECT_NEAR((s.z.row(0) - s.z.row(1)).norm(), 1.0, 1e-9);
      EXPECT_NEAR((s.z.row(2) - s.z.row(3)).norm(), 2.0, 1e-9);
    }
  // after alignment both chains agree position-wise
  EXPECT_LT((res.aligned[0][0].z - res.aligned[1][0].z).norm(), 1e-6);
  for (const auto& d : res.diagnostics)
    if (d.rhat) EXPECT_NEAR(*d.rhat, 1.0, 1e-9) << d.name;
  EXPECT_EQ(res.membership.probability.maxCoeff(), 1.0);
}

TEST(PostprocessChains, RejectsEmptyInput) {
  EXPECT_THROW(postprocess_chains({}, 1), ValidationError);
  PosteriorChain c;
  c.samples = {state_with(BlockAssignment({0}, 1), LatentPositions::Zero(1, 2))};
  c.burn_in = 1;
  EXPECT_THROW(postprocess_chains({c}, 1), ValidationError);
}

TEST(ScalarParameters, FixedOrderAndNames) {
  const auto p = scalar_parameters(state_with(BlockAssignment({0, 1, 2}, 3), LatentPositions::Zero(3, 2)));
  ASSERT_EQ(p.size(), 3u * 3u + 3u + 5u);
  EXPECT_EQ(p[0].first, "beta[1]");
  EXPECT_EQ(p[9].first, "tau[1,2]");
  EXPECT_EQ(p.back().first, "Sigma[2,2]");
}
