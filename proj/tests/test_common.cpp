#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "lssbm/common.hpp"
#include "lssbm/random.hpp"
#include "test_util.hpp"

using namespace lssbm;

namespace {

// digamma and trigamma from mpmath at 30 digits
struct PolygammaRow {
  double x, psi, psi1;
};
const PolygammaRow kPolygamma[] = {
    {0.01, -100.56088545786867242, 10001.621213528312804},
    {0.1, -10.423754940411076232, 101.4332991507927477},
    {0.5, -1.9635100260214234794, 4.9348022005446793094},
    {1, -0.57721566490153286061, 1.6449340668482264365},
    {1.5, 0.036489973978576520559, 0.93480220054467930942},
    {2.5, 0.70315664064524318723, 0.49035775610023486497},
    {7.3, 1.9178203356379860723, 0.14679576813142710199},
    {10, 2.2517525890667211076, 0.10516633568168574612},
    {55.5, 4.0073469585404439122, 0.018181317363221761045},
    {1000, 6.9072551956488120521, 0.0010005001666666333334},
};

}  // namespace

TEST(Polygamma, MatchesReferenceTable) {
  for (const auto& r : kPolygamma) {
    EXPECT_NEAR(digamma(r.x), r.psi, 1e-13 * std::max(1.0, std::abs(r.psi))) << r.x;
    EXPECT_NEAR(trigamma(r.x), r.psi1, 1e-12 * std::max(1.0, std::abs(r.psi1))) << r.x;
  }
}

TEST(Polygamma, Recurrence) {
  EXPECT_NEAR(digamma(1.0), -0.57721566490153286, 1e-15);
  for (double x : {0.3, 1.0, 2.7, 9.5, 10.5, 31.0}) {
    EXPECT_NEAR(digamma(x + 1.0), digamma(x) + 1.0 / x, 1e-13);
    EXPECT_NEAR(trigamma(x + 1.0), trigamma(x) - 1.0 / (x * x), 1e-12);
  }
}

TEST(Polygamma, NonPositiveIntegersAreUndefined) {
  EXPECT_TRUE(std::isnan(digamma(0.0)));
  EXPECT_TRUE(std::isnan(digamma(-2.0)));
  EXPECT_TRUE(std::isnan(trigamma(-0.5)));
}

TEST(HalfGammaRatio, ClosedForms) {
  const double sqrt_pi = std::sqrt(std::numbers::pi);
  EXPECT_NEAR(half_gamma_ratio(1), 1.0 / sqrt_pi, 1e-15);
  EXPECT_NEAR(half_gamma_ratio(2), sqrt_pi / 2.0, 1e-15);
  EXPECT_NEAR(half_gamma_ratio(3), 2.0 / sqrt_pi, 1e-15);
}

TEST(Logistic, StableAtExtremes) {
  EXPECT_DOUBLE_EQ(inv_logit(0.0), 0.5);
  EXPECT_NEAR(inv_logit(800.0), 1.0, 0.0);
  EXPECT_GE(inv_logit(-800.0), 0.0);
  EXPECT_LT(inv_logit(-800.0), 1e-300);
  EXPECT_NEAR(softplus(800.0), 800.0, 1e-12);
  EXPECT_NEAR(softplus(-50.0), std::exp(-50.0), 1e-30);
  EXPECT_NEAR(logit(inv_logit(1.7)), 1.7, 1e-12);
  EXPECT_NEAR(bernoulli_logit_lpmf(true, 0.0), std::log(0.5), 1e-15);
  EXPECT_NEAR(bernoulli_lpmf(false, 0.25), std::log(0.75), 1e-15);
}

TEST(Dyads, IndexIsABijection) {
  const std::size_t n = 7;
  std::vector<int> hit(n_dyads(n), 0);
  for (NodeId i = 0; i < 7; ++i)
    for (NodeId j = i + 1; j < 7; ++j) ++hit.at(dyad_index({i, j}, n));
  for (int h : hit) EXPECT_EQ(h, 1);
  EXPECT_EQ(make_dyad(3, 1), (Dyad{1, 3}));
}

TEST(Warnings, SinkReceivesMessages) {
  test::WarningCapture capture;
  warn("something odd");
  ASSERT_EQ(capture.messages.size(), 1u);
  EXPECT_EQ(capture.messages[0], "something odd");
}

TEST(Errors, ParseErrorCarriesLine) {
  const ParseError e("bad token", 7);
  EXPECT_EQ(e.line(), 7u);
  EXPECT_NE(std::string(e.what()).find("7"), std::string::npos);
}

// ---------------------------------------------------------------------------
// Random variates.

TEST(Rng, SubstreamsAreDeterministicAndDistinct) {
  Rng a = make_rng(5, "x", 0), b = make_rng(5, "x", 0), c = make_rng(5, "x", 1), d = make_rng(5, "y", 0);
  const auto va = a(), vb = b(), vc = c(), vd = d();
  EXPECT_EQ(va, vb);
  EXPECT_NE(va, vc);
  EXPECT_NE(va, vd);
  EXPECT_NE(substream_seed(1, "chain", 0), substream_seed(2, "chain", 0));
}

TEST(Variates, GammaAndBetaMoments) {
  Rng rng = make_rng(1, "moments");
  const int n = 100000;
  test::Moments g, b, small;
  for (int i = 0; i < n; ++i) {
    g.add(gamma_draw(rng, 3.0, 2.0));
    b.add(beta_draw(rng, 4.0, 8.0));
    small.add(beta_draw(rng, 0.05, 0.05));
  }
  EXPECT_TRUE(g.mean_within(1.5, 4.0)) << g.mean();
  EXPECT_TRUE(b.mean_within(1.0 / 3.0, 4.0)) << b.mean();
  EXPECT_TRUE(small.mean_within(0.5, 4.0)) << small.mean();
}

TEST(Variates, DirichletMean) {
  Rng rng = make_rng(2, "dirichlet");
  const std::vector<double> alpha{3.0, 4.0};
  test::Moments m;
  for (int i = 0; i < 100000; ++i) m.add(dirichlet_draw(rng, alpha)[0]);
  EXPECT_TRUE(m.mean_within(3.0 / 7.0, 4.0)) << m.mean();
}

TEST(Variates, CategoricalFrequencies) {
  Rng rng = make_rng(3, "cat");
  const std::vector<double> w{1.0, 0.0, 3.0};
  std::array<int, 3> hits{};
  const int n = 100000;
  for (int i = 0; i < n; ++i) ++hits[categorical_draw(rng, w)];
  EXPECT_EQ(hits[1], 0);
  const double p = 0.25, se = std::sqrt(p * (1 - p) / n);
  EXPECT_NEAR(hits[0] / static_cast<double>(n), p, 4 * se);
}

TEST(Variates, TruncatedNormalMeans) {
  Rng rng = make_rng(4, "trunc");
  const int n = 100000;
  // half-normal mean sqrt(2/pi); general lower bound a: phi(a) / (1 - Phi(a))
  auto tail_mean = [](double a) {
    const double phi = std::exp(-0.5 * a * a) / std::sqrt(2 * std::numbers::pi);
    return phi / (0.5 * std::erfc(a / std::sqrt(2.0)));
  };
  for (double a : {-1.0, 0.0, 2.0, 6.5}) {
    test::Moments m;
    for (int i = 0; i < n; ++i) {
      const double x = std_normal_lower_truncated(rng, a);
      ASSERT_GE(x, a);
      m.add(x);
    }
    EXPECT_TRUE(m.mean_within(tail_mean(a), 4.0)) << a << " " << m.mean();
  }
  EXPECT_NEAR(tail_mean(0.0), std::sqrt(2.0 / std::numbers::pi), 1e-15);
  for (int i = 0; i < 1000; ++i) {
    EXPECT_LE(normal_upper_truncated(rng, 1.0, 2.0, -3.0), -3.0);
    EXPECT_GE(normal_lower_truncated(rng, 1.0, 2.0, 4.0), 4.0);
  }
}

TEST(Variates, InverseWishartMean) {
  Rng rng = make_rng(5, "iw");
  Eigen::Matrix2d scale;
  scale << 2.0, 0.3, 0.3, 1.0;
  const double df = 8.0;
  const Eigen::Matrix2d expected = scale / (df - 3.0);
  std::array<test::Moments, 3> m;
  for (int i = 0; i < 100000; ++i) {
    const Eigen::MatrixXd x = inverse_wishart_draw(rng, scale, df);
    m[0].add(x(0, 0));
    m[1].add(x(0, 1));
    m[2].add(x(1, 1));
  }
  EXPECT_TRUE(m[0].mean_within(expected(0, 0), 4.0)) << m[0].mean();
  EXPECT_TRUE(m[1].mean_within(expected(0, 1), 4.0)) << m[1].mean();
  EXPECT_TRUE(m[2].mean_within(expected(1, 1), 4.0)) << m[2].mean();
}

TEST(Densities, AgreeWithClosedForms) {
  Eigen::Vector2d x(0.3, -1.2), mu(0.1, 0.4);
  Eigen::Matrix2d cov;
  cov << 1.5, 0.2, 0.2, 0.7;
  const Eigen::Vector2d r = x - mu;
  const double ref = -std::log(2 * std::numbers::pi) - 0.5 * std::log(cov.determinant()) -
                     0.5 * r.dot(cov.inverse() * r);
  EXPECT_NEAR(mvn_log_density(x, mu, cov), ref, 1e-12);
  EXPECT_NEAR(isotropic_normal_log_density(2.0, std::log(0.5), 2),
              mvn_log_density(Eigen::Vector2d(1.0, 1.0), Eigen::Vector2d::Zero(), 0.25 * Eigen::Matrix2d::Identity()),
              1e-12);
  EXPECT_NEAR(beta_log_density(0.37, 1.0, 1.0), 0.0, 1e-15);
  // inverse Wishart in one dimension is inverse gamma(df/2, scale/2)
  const double s = 1.7, df = 5.0, v = 0.8;
  const double ig = 0.5 * df * std::log(0.5 * s) - std::lgamma(0.5 * df) - (0.5 * df + 1) * std::log(v) - 0.5 * s / v;
  EXPECT_NEAR(inverse_wishart_log_density(Eigen::MatrixXd::Constant(1, 1, v), Eigen::MatrixXd::Constant(1, 1, s), df), ig,
              1e-12);
}
