// Simulate a five-block network, fit it by MCMC with a held-out set of
// dyads, and score the held-out predictions.

#include <iostream>

#include "lssbm/lssbm.hpp"

int main() {
  using namespace lssbm;
  const auto setup = simulation_study_setup(30);
  const SimulatedNetwork sim = simulate_study_network(setup, 11);
  const DyadMask mask = make_holdout(sim.graph.n_nodes(), 0.1, 12);

  SamplerConfig config;
  config.n_iter = 3000;
  config.n_chains = 2;
  config.seed = 13;
  Hyperparams hyper;
  std::tie(hyper.a0, hyper.b0) = default_beta_prior(sim.graph.density());

  const auto chains = run_chains(sim.graph, 5, hyper, config, &mask);
  const PostprocessResult pp = postprocess_chains(chains, 14);
  const auto pooled = pp.pooled();
  const auto prob = posterior_predictive(pooled, mask.held_out);
  const PredictionReport rep = prediction_report(sim.graph, mask, prob, pp.membership.mode);

  std::cout << "nodes " << sim.graph.n_nodes() << ", edges " << sim.graph.n_edges() << '\n';
  std::cout << "held-out AUPRC " << rep.all.auprc.value_or(0.0) << '\n';
  for (const auto& d : pp.diagnostics)
    if (d.rhat) std::cout << d.name << " Rhat " << *d.rhat << '\n';
}
