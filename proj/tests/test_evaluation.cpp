#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include <gtest/gtest.h>

#include "lssbm/evaluation.hpp"
#include "test_util.hpp"

using namespace lssbm;

TEST(Auprc, HandCases) {
  EXPECT_NEAR(*auprc({1, 1, 0, 0}, {0.9, 0.8, 0.2, 0.1}), 1.0, 1e-15);
  // a constant score gives one point at recall 1 with precision equal to prevalence
  EXPECT_NEAR(*auprc({1, 0, 0, 0, 1}, {0.3, 0.3, 0.3, 0.3, 0.3}), 0.4, 1e-15);
  // thresholds 0.9, 0.8, 0.7: (0.5, 1), (0.5, 1/2), (1, 2/3)
  EXPECT_NEAR(*auprc({1, 0, 1, 0}, {0.9, 0.8, 0.7, 0.1}), 0.5 + 0.25 * (0.5 + 2.0 / 3.0), 1e-15);
  EXPECT_FALSE(auprc({0, 0}, {0.1, 0.2}));
  EXPECT_THROW(auprc({0}, {0.1, 0.2}), ValidationError);
}

TEST(Hpd, ShortestWindow) {
  // brute force over every window of ceil(0.5 * 7) = 4 points
  const std::vector<double> x{9.0, 1.0, 1.5, 2.0, 2.2, 7.0, 8.0};
  const auto [lo, hi] = hpd_interval(x, 0.5);
  EXPECT_EQ(lo, 1.0);
  EXPECT_EQ(hi, 2.2);
  Rng rng = make_rng(1, "hpd");
  std::vector<double> n;
  for (int i = 0; i < 20000; ++i) n.push_back(std_normal(rng));
  const auto [a, b] = hpd_interval(n);
  EXPECT_NEAR(a, -1.96, 0.06);
  EXPECT_NEAR(b, 1.96, 0.06);
  EXPECT_LT(a, 0.0);
  EXPECT_GT(b, 0.0);
  EXPECT_EQ(hpd_interval({4.0}), (std::pair<double, double>{4.0, 4.0}));
  EXPECT_THROW(hpd_interval({}), ValidationError);
}

TEST(Auprc, MatchesThresholdEnumeration) {
  Rng rng = make_rng(2, "auprc");
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::uint8_t> y;
    std::vector<double> p;
    for (int i = 0; i < 1000; ++i) {
      y.push_back(uniform01(rng) < 0.2);
      p.push_back(std::round(50.0 * uniform01(rng)) / 50.0);  // ties
    }
    if (std::find(y.begin(), y.end(), 1) == y.end()) continue;
    std::vector<double> cuts(p);
    std::sort(cuts.begin(), cuts.end(), std::greater<>());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
    double positives = 0.0;
    for (auto v : y) positives += v;
    double area = 0.0, prev_recall = 0.0, prev_precision = -1.0;
    for (double t : cuts) {
      double tp = 0.0, called = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i)
        if (p[i] >= t) {
          called += 1.0;
          tp += y[i];
        }
      const double recall = tp / positives, precision = tp / called;
      if (prev_precision < 0.0) prev_precision = precision;
      area += 0.5 * (recall - prev_recall) * (precision + prev_precision);
      prev_recall = recall;
      prev_precision = precision;
    }
    EXPECT_NEAR(*auprc(y, p), area, 1e-12);
  }
}

TEST(Hpd, MatchesExhaustiveIntervalSearch) {
  Rng rng = make_rng(3, "hpd-brute");
  std::vector<double> x;
  for (int i = 0; i < 1000; ++i) x.push_back(std::exp(std_normal(rng)));  // skewed
  // every interval between two sample points holding at least 95% of them
  double best = std::numeric_limits<double>::infinity(), lo = 0.0, hi = 0.0;
  for (double a : x)
    for (double b : x) {
      if (b < a || b - a >= best) continue;
      const auto inside = std::count_if(x.begin(), x.end(), [&](double v) { return v >= a && v <= b; });
      if (inside >= 950) {
        best = b - a;
        lo = a;
        hi = b;
      }
    }
  const auto [l, h] = hpd_interval(x);
  EXPECT_NEAR(h - l, best, 1e-12);
  EXPECT_EQ(l, lo);
  EXPECT_EQ(h, hi);
}

TEST(Prediction, StateProbabilityAndAverage) {
  ChainState s;
  s.gamma = BlockAssignment({0, 0, 1}, 2);
  s.z = LatentPositions::Zero(3, 2);
  s.z(1, 0) = 3.0;
  s.eta = {{0.0, 0.0}, {1.0, 0.0}};
  s.tau = BetweenParams::constant(2, 0.2);
  s.pi = Eigen::Vector2d(0.5, 0.5);
  EXPECT_NEAR(state_edge_probability(s, 0, 1), inv_logit(-3.0), 1e-15);
  EXPECT_NEAR(state_edge_probability(s, 0, 1, false), 0.5, 1e-15);
  EXPECT_NEAR(state_edge_probability(s, 1, 2), 0.2, 1e-15);
  ChainState t = s;
  t.tau = BetweenParams::constant(2, 0.6);
  const std::vector<ChainState> draws{s, t};
  const auto p = posterior_predictive(draws, {{0, 2}, {0, 1}});
  EXPECT_NEAR(p[0], 0.4, 1e-15);
  EXPECT_NEAR(p[1], inv_logit(-3.0), 1e-15);
}

TEST(Prediction, ReportSplitsCategories) {
  const Graph g(4, std::vector<std::pair<NodeId, NodeId>>{{0, 1}, {2, 3}, {1, 2}});
  DyadMask m;
  m.held_out = {{0, 1}, {0, 2}, {1, 2}, {2, 3}};
  const auto r = prediction_report(g, m, {0.9, 0.1, 0.4, 0.8}, {0, 0, 1, 1});
  EXPECT_EQ(r.within_block.n, 2u);
  EXPECT_EQ(r.between_block.n, 2u);
  EXPECT_EQ(r.between_block.n_positive, 1u);
  EXPECT_NEAR(*r.all.auc, 1.0, 1e-15);
  EXPECT_NEAR(*r.within_block.auprc, 1.0, 1e-15);
  EXPECT_FALSE(r.within_block.auc);
  std::ostringstream out;
  write_predictions_csv(out, r, g);
  EXPECT_NE(out.str().find("1,2,1,0.9"), std::string::npos);
  EXPECT_NE(out.str().find("between"), std::string::npos);
  test::WarningCapture w;
  prediction_report(g, m, {0.9, 0.1, 0.4, 0.8}, {0, 0, 0, 0});
  EXPECT_TRUE(w.contains("between"));
}
