// Two-stage fit of a larger simulated network: spectral clustering followed
// by a variational fit per block.

#include <iostream>

#include "lssbm/lssbm.hpp"

int main() {
  using namespace lssbm;
  const auto setup = simulation_study_setup(400);
  const SimulatedNetwork sim = simulate_study_network(setup, 21);

  TwoStageConfig config;
  config.k = 5;
  config.seed = 22;
  const TwoStageResult r = fit_twostage(sim.graph, config);

  std::cout << sim.graph.n_nodes() << " nodes, " << sim.graph.n_edges() << " edges\n";
  for (const auto& s : r.summary)
    std::cout << "block " << s.block + 1 << ": n " << s.n_nodes << ", density " << s.density << ", beta " << s.m
              << ", log sigma " << s.log_sigma() << '\n';
}
