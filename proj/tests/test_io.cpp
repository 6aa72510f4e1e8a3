#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "lssbm/io.hpp"
#include "test_util.hpp"

using namespace lssbm;

namespace {

ChainSet short_chains() {
  const auto sim = simulate_study_network(simulation_study_setup(3, {1.0, 2.0}, {0.5, 1.0}, 0.2), 3);
  SamplerConfig c;
  c.n_iter = 30;
  c.thin = 3;
  c.n_chains = 2;
  c.seed = 9;
  ChainSet cs;
  cs.n_nodes = sim.graph.n_nodes();
  cs.n_blocks = 2;
  cs.dim = 2;
  cs.chains = run_chains(sim.graph, 2, Hyperparams{}, c);
  return cs;
}

}  // namespace

TEST(ChainIo, FieldNames) {
  const auto f = chain_field_names(2, 3, 2);
  const std::vector<std::string> expected{"chain", "draw", "gamma[1]", "gamma[2]", "z[1,1]", "z[1,2]", "z[2,1]", "z[2,2]",
                                          "beta[1]", "beta[2]", "beta[3]", "log_sigma[1]", "log_sigma[2]", "log_sigma[3]",
                                          "tau[1,2]", "tau[1,3]", "tau[2,3]", "pi[1]", "pi[2]", "pi[3]", "mu[1]", "mu[2]",
                                          "Sigma[1,1]", "Sigma[1,2]", "Sigma[2,2]"};
  EXPECT_EQ(f, expected);
}

TEST(ChainIo, RoundTripIsExact) {
  const ChainSet cs = short_chains();
  test::TempDir dir("chains");
  const auto stream = (dir.path / "chains.tsv").string(), manifest = (dir.path / "chains.json").string();
  save_chains(stream, manifest, cs);
  const ChainSet back = load_chains(stream, manifest);
  ASSERT_EQ(back.chains.size(), cs.chains.size());
  for (std::size_t c = 0; c < cs.chains.size(); ++c) {
    const auto& a = cs.chains[c];
    const auto& b = back.chains[c];
    EXPECT_EQ(a.seed, b.seed);
    EXPECT_EQ(a.burn_in, b.burn_in);
    ASSERT_EQ(a.samples.size(), b.samples.size());
    for (std::size_t t = 0; t < a.samples.size(); ++t) {
      const auto& x = a.samples[t];
      const auto& y = b.samples[t];
      EXPECT_EQ(x.gamma.labels, y.gamma.labels);
      EXPECT_EQ(x.z, y.z);
      for (std::size_t k = 0; k < x.eta.size(); ++k) {
        EXPECT_EQ(x.eta[k].beta, y.eta[k].beta);
        EXPECT_EQ(x.eta[k].log_sigma, y.eta[k].log_sigma);
      }
      EXPECT_EQ(x.tau.tau, y.tau.tau);
      EXPECT_EQ(x.pi, y.pi);
      EXPECT_EQ(x.mu, y.mu);
      EXPECT_EQ(x.sigma_mat, y.sigma_mat);
    }
  }
}

TEST(ChainIo, RejectsMismatchedStreams) {
  const ChainSet cs = short_chains();
  std::ostringstream out;
  write_chain_stream(out, cs);
  Json manifest = chain_manifest(cs);
  {
    std::istringstream in(out.str());
    Json wrong = manifest;
    wrong["n_blocks"] = 3;
    EXPECT_THROW(read_chain_stream(in, wrong), ParseError);
  }
  {
    std::string text = out.str();
    text.erase(text.rfind('\n', text.size() - 2) + 1);  // drop the last draw
    std::istringstream in(text);
    EXPECT_THROW(read_chain_stream(in, manifest), ParseError);
  }
  {
    std::string text = out.str();
    text.insert(text.find('\n') + 3, "x");
    std::istringstream in(text);
    EXPECT_THROW(read_chain_stream(in, manifest), ParseError);
  }
}

TEST(TwoStageIo, RoundTrip) {
  std::vector<std::pair<NodeId, NodeId>> e;
  for (int c = 0; c < 2; ++c)
    for (int a = 0; a < 6; ++a)
      for (int b = a + 1; b < 6; ++b) e.emplace_back(c * 6 + a, c * 6 + b);
  e.emplace_back(0, 6);
  TwoStageConfig config;
  config.k = 2;
  const auto r = fit_twostage(Graph(12, e), config);
  const auto back = twostage_from_json(Json::parse(twostage_to_json(r).dump()));
  EXPECT_EQ(back.gamma.labels, r.gamma.labels);
  EXPECT_EQ(back.members, r.members);
  EXPECT_EQ(back.tau_hat, r.tau_hat);
  for (std::size_t k = 0; k < r.fits.size(); ++k) {
    EXPECT_EQ(back.fits[k].state.m, r.fits[k].state.m);
    EXPECT_EQ(back.fits[k].state.b, r.fits[k].state.b);
    EXPECT_EQ(back.fits[k].state.ell, r.fits[k].state.ell);
    EXPECT_EQ(back.fits[k].state.s, r.fits[k].state.s);
  }
  Json broken = twostage_to_json(r);
  broken["gamma"][0] = 7;
  EXPECT_THROW(twostage_from_json(broken), ParseError);
}

TEST(TruthIo, OneBasedLabelsAndParameters) {
  const auto sim = simulate_study_network(simulation_study_setup(2, {1.0, 2.0}, {0.5, 1.0}, 0.2), 4);
  const Json j = truth_to_json(sim);
  EXPECT_EQ(j["n_nodes"], 4);
  EXPECT_EQ(j["gamma"], Json({1, 1, 2, 2}));
  EXPECT_EQ(j["eta"][1]["beta"], 2.0);
  EXPECT_NEAR(j["eta"][0]["sigma"].get<double>(), 0.5, 1e-15);
  EXPECT_EQ(matrix_from_json(j["z"]), sim.z);
  EXPECT_EQ(j["tau"][0][1], 0.2);
}
