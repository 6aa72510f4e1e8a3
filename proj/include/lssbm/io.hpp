#pragma once

// Serialization of posterior chains and model parameters.
//
// A chain file is tab-separated text: one header line naming every field,
// then one posterior draw per line. Labels and node indices are 1-based.
// A JSON manifest beside it records the dimensions, seeds, burn-in and
// acceptance rates needed to read it back.

#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "lssbm/common.hpp"
#include "lssbm/mcmc.hpp"
#include "lssbm/twostage.hpp"

namespace lssbm {

using Json = nlohmann::json;

inline std::vector<std::string> chain_field_names(std::size_t n, int k, int dim) {
  std::vector<std::string> f{"chain", "draw"};
  auto idx = [](std::size_t a) { return std::to_string(a + 1); };
  for (std::size_t i = 0; i < n; ++i) f.push_back("gamma[" + idx(i) + "]");
  for (std::size_t i = 0; i < n; ++i)
    for (int d = 0; d < dim; ++d) f.push_back("z[" + idx(i) + "," + idx(static_cast<std::size_t>(d)) + "]");
  for (int a = 0; a < k; ++a) f.push_back("beta[" + idx(static_cast<std::size_t>(a)) + "]");
  for (int a = 0; a < k; ++a) f.push_back("log_sigma[" + idx(static_cast<std::size_t>(a)) + "]");
  for (int a = 0; a < k; ++a)
    for (int b = a + 1; b < k; ++b)
      f.push_back("tau[" + idx(static_cast<std::size_t>(a)) + "," + idx(static_cast<std::size_t>(b)) + "]");
  for (int a = 0; a < k; ++a) f.push_back("pi[" + idx(static_cast<std::size_t>(a)) + "]");
  for (const char* s : {"mu[1]", "mu[2]", "Sigma[1,1]", "Sigma[1,2]", "Sigma[2,2]"}) f.emplace_back(s);
  return f;
}

struct ChainSet {
  std::size_t n_nodes = 0;
  int n_blocks = 0;
  int dim = 0;
  bool latent_positions = true;
  std::vector<PosteriorChain> chains;
};

inline Json chain_manifest(const ChainSet& cs) {
  Json m;
  m["n_nodes"] = cs.n_nodes;
  m["n_blocks"] = cs.n_blocks;
  m["dim"] = cs.dim;
  m["latent_positions"] = cs.latent_positions;
  m["fields"] = chain_field_names(cs.n_nodes, cs.n_blocks, cs.dim);
  m["chains"] = Json::array();
  for (const auto& c : cs.chains)
    m["chains"].push_back({{"seed", c.seed},
                           {"n_samples", c.samples.size()},
                           {"burn_in", c.burn_in},
                           {"acceptance", {{"membership", c.acceptance.membership},
                                           {"position", c.acceptance.position},
                                           {"eta", c.acceptance.eta}}}});
  return m;
}

inline void write_chain_stream(std::ostream& out, const ChainSet& cs) {
  const auto names = chain_field_names(cs.n_nodes, cs.n_blocks, cs.dim);
  for (std::size_t f = 0; f < names.size(); ++f) out << (f ? "\t" : "") << names[f];
  out << '\n';
  const auto prec = out.precision(17);
  for (std::size_t c = 0; c < cs.chains.size(); ++c) {
    const auto& chain = cs.chains[c];
    for (std::size_t t = 0; t < chain.samples.size(); ++t) {
      const ChainState& s = chain.samples[t];
      out << c + 1 << '\t' << t + 1;
      for (int v : s.gamma.labels) out << '\t' << v + 1;
      for (Eigen::Index i = 0; i < s.z.rows(); ++i)
        for (Eigen::Index d = 0; d < s.z.cols(); ++d) out << '\t' << s.z(i, d);
      for (const auto& e : s.eta) out << '\t' << e.beta;
      for (const auto& e : s.eta) out << '\t' << e.log_sigma;
      for (int a = 0; a < cs.n_blocks; ++a)
        for (int b = a + 1; b < cs.n_blocks; ++b) out << '\t' << s.tau.tau(a, b);
      for (Eigen::Index a = 0; a < s.pi.size(); ++a) out << '\t' << s.pi[a];
      out << '\t' << s.mu[0] << '\t' << s.mu[1] << '\t' << s.sigma_mat(0, 0) << '\t' << s.sigma_mat(0, 1) << '\t'
          << s.sigma_mat(1, 1) << '\n';
    }
  }
  out.precision(prec);
}

inline ChainSet read_chain_stream(std::istream& in, const Json& manifest) {
  ChainSet cs;
  try {
    cs.n_nodes = manifest.at("n_nodes").get<std::size_t>();
    cs.n_blocks = manifest.at("n_blocks").get<int>();
    cs.dim = manifest.at("dim").get<int>();
    cs.latent_positions = manifest.value("latent_positions", true);
    for (const auto& c : manifest.at("chains")) {
      PosteriorChain pc;
      pc.seed = c.at("seed").get<std::uint64_t>();
      pc.burn_in = c.at("burn_in").get<std::size_t>();
      const auto& acc = c.at("acceptance");
      pc.acceptance = {acc.at("membership").get<double>(), acc.at("position").get<double>(), acc.at("eta").get<double>()};
      cs.chains.push_back(std::move(pc));
    }
  } catch (const Json::exception& e) {
    throw ParseError(std::string("invalid chain manifest: ") + e.what());
  }
  const auto names = chain_field_names(cs.n_nodes, cs.n_blocks, cs.dim);
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line)) throw ParseError("chain stream is empty");
  {
    std::istringstream hs(line);
    std::string tok;
    std::size_t f = 0;
    while (std::getline(hs, tok, '\t')) {
      if (f >= names.size() || tok != names[f]) throw ParseError("chain header does not match the manifest", line_no);
      ++f;
    }
    if (f != names.size()) throw ParseError("chain header does not match the manifest", line_no);
  }
  const int k = cs.n_blocks;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::vector<double> v;
    v.reserve(names.size());
    std::string tok;
    while (std::getline(ls, tok, '\t')) {
      try {
        std::size_t used = 0;
        v.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw ParseError("non-numeric chain field '" + tok + "'", line_no);
      }
    }
    if (v.size() != names.size()) throw ParseError("wrong number of chain fields", line_no);
    std::size_t p = 0;
    const auto chain = static_cast<std::size_t>(v[p++]) - 1;
    ++p;  // draw index
    if (chain >= cs.chains.size()) throw ParseError("chain index out of range", line_no);
    ChainState s;
    std::vector<int> labels(cs.n_nodes);
    for (auto& l : labels) {
      l = static_cast<int>(v[p++]) - 1;
      if (l < 0 || l >= k) throw ParseError("block label out of range", line_no);
    }
    s.gamma = BlockAssignment(labels, k);
    s.z = LatentPositions(static_cast<Eigen::Index>(cs.n_nodes), cs.dim);
    for (Eigen::Index i = 0; i < s.z.rows(); ++i)
      for (Eigen::Index d = 0; d < s.z.cols(); ++d) s.z(i, d) = v[p++];
    s.eta.resize(static_cast<std::size_t>(k));
    for (auto& e : s.eta) e.beta = v[p++];
    for (auto& e : s.eta) e.log_sigma = v[p++];
    s.tau.tau = Eigen::MatrixXd::Zero(k, k);
    for (int a = 0; a < k; ++a)
      for (int b = a + 1; b < k; ++b) s.tau.tau(a, b) = s.tau.tau(b, a) = v[p++];
    s.pi.resize(k);
    for (int a = 0; a < k; ++a) s.pi[a] = v[p++];
    s.mu = {v[p], v[p + 1]};
    s.sigma_mat << v[p + 2], v[p + 3], v[p + 3], v[p + 4];
    cs.chains[chain].samples.push_back(std::move(s));
  }
  for (std::size_t c = 0; c < cs.chains.size(); ++c)
    if (cs.chains[c].samples.size() != manifest["chains"][c].value("n_samples", cs.chains[c].samples.size()))
      throw ParseError("chain " + std::to_string(c + 1) + " has a different number of draws than the manifest records");
  return cs;
}

inline void save_chains(const std::string& stream_path, const std::string& manifest_path, const ChainSet& cs) {
  std::ofstream out(stream_path);
  if (!out) throw Error("cannot write " + stream_path);
  write_chain_stream(out, cs);
  std::ofstream mf(manifest_path);
  if (!mf) throw Error("cannot write " + manifest_path);
  mf << chain_manifest(cs).dump(2) << '\n';
}

inline ChainSet load_chains(const std::string& stream_path, const std::string& manifest_path) {
  std::ifstream mf(manifest_path);
  if (!mf) throw Error("cannot read " + manifest_path);
  Json manifest;
  try {
    manifest = Json::parse(mf);
  } catch (const Json::exception& e) {
    throw ParseError(std::string("invalid JSON in ") + manifest_path + ": " + e.what());
  }
  std::ifstream in(stream_path);
  if (!in) throw Error("cannot read " + stream_path);
  return read_chain_stream(in, manifest);
}

// ---------------------------------------------------------------------------

inline Json matrix_to_json(const Eigen::MatrixXd& m) {
  Json out = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    out.push_back(row);
  }
  return out;
}

inline Eigen::MatrixXd matrix_from_json(const Json& j) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows > 0 ? static_cast<Eigen::Index>(j[0].size()) : 0;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (static_cast<Eigen::Index>(j[static_cast<std::size_t>(r)].size()) != cols) throw ParseError("ragged matrix in JSON");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = j[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

/// True generating parameters of a simulated network.
inline Json truth_to_json(const SimulatedNetwork& sim) {
  Json j;
  j["n_nodes"] = sim.gamma.size();
  j["n_blocks"] = sim.gamma.n_blocks;
  j["dim"] = sim.z.cols();
  Json gamma = Json::array();
  for (int v : sim.gamma.labels) gamma.push_back(v + 1);
  j["gamma"] = gamma;
  Json eta = Json::array();
  for (const auto& e : sim.eta) eta.push_back({{"beta", e.beta}, {"log_sigma", e.log_sigma}, {"sigma", e.sigma()}});
  j["eta"] = eta;
  j["tau"] = matrix_to_json(sim.tau.tau);
  j["z"] = matrix_to_json(sim.z);
  return j;
}

/// Two-stage fit: memberships, between-block rates and each block's
/// variational parameters.
inline Json twostage_to_json(const TwoStageResult& r) {
  Json j;
  j["n_nodes"] = r.gamma.size();
  j["n_blocks"] = r.gamma.n_blocks;
  Json gamma = Json::array();
  for (int v : r.gamma.labels) gamma.push_back(v + 1);
  j["gamma"] = gamma;
  j["tau_hat"] = matrix_to_json(r.tau_hat);
  Json blocks = Json::array();
  for (std::size_t k = 0; k < r.fits.size(); ++k) {
    const auto& f = r.fits[k];
    Json members = Json::array();
    for (NodeId v : r.members[k]) members.push_back(v + 1);
    std::vector<double> s(f.state.s.data(), f.state.s.data() + f.state.s.size());
    blocks.push_back({{"members", members},
                      {"m", f.state.m},
                      {"t", f.state.t},
                      {"a", f.state.a},
                      {"b", f.state.b},
                      {"ell", matrix_to_json(f.state.ell)},
                      {"s", s},
                      {"converged", f.converged},
                      {"flagged", f.flagged},
                      {"restarts", f.restarts},
                      {"elbo", f.elbo_trace.empty() ? 0.0 : f.elbo_trace.back()}});
  }
  j["blocks"] = blocks;
  return j;
}

inline TwoStageResult twostage_from_json(const Json& j) {
  TwoStageResult r;
  try {
    const auto n = j.at("n_nodes").get<std::size_t>();
    const int k = j.at("n_blocks").get<int>();
    std::vector<int> labels;
    for (const auto& v : j.at("gamma")) labels.push_back(v.get<int>() - 1);
    if (labels.size() != n) throw ParseError("two-stage fit: gamma length differs from n_nodes");
    for (int l : labels)
      if (l < 0 || l >= k) throw ParseError("two-stage fit: block label out of range");
    r.gamma = BlockAssignment(labels, k);
    r.tau_hat = matrix_from_json(j.at("tau_hat"));
    for (const auto& b : j.at("blocks")) {
      std::vector<NodeId> members;
      for (const auto& v : b.at("members")) members.push_back(v.get<NodeId>() - 1);
      VbFitResult f;
      f.state.m = b.at("m").get<double>();
      f.state.t = b.at("t").get<double>();
      f.state.a = b.at("a").get<double>();
      f.state.b = b.at("b").get<double>();
      f.state.ell = matrix_from_json(b.at("ell"));
      const auto s = b.at("s").get<std::vector<double>>();
      f.state.s = Eigen::Map<const Eigen::VectorXd>(s.data(), static_cast<Eigen::Index>(s.size()));
      f.converged = b.value("converged", false);
      f.flagged = b.value("flagged", false);
      f.restarts = b.value("restarts", 0);
      if (f.state.ell.rows() != static_cast<Eigen::Index>(members.size()) || f.state.s.size() != f.state.ell.rows())
        throw ParseError("two-stage fit: block arrays differ in length");
      r.members.push_back(std::move(members));
      r.fits.push_back(std::move(f));
    }
    if (r.fits.size() != static_cast<std::size_t>(k)) throw ParseError("two-stage fit: wrong number of blocks");
  } catch (const Json::exception& e) {
    throw ParseError(std::string("invalid two-stage fit: ") + e.what());
  }
  return r;
}

}  // namespace lssbm
