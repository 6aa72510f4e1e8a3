#pragma once

// Label alignment, latent-space alignment and convergence diagnostics for
// posterior samples.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lssbm/clustering.hpp"
#include "lssbm/common.hpp"
#include "lssbm/mcmc.hpp"
#include "lssbm/random.hpp"

namespace lssbm {

// ---------------------------------------------------------------------------
// Assignment.

struct AssignmentResult {
  std::vector<int> row_to_col;
  double cost = 0.0;
  Eigen::VectorXd u;  // optimal dual potentials: u_r + v_c <= cost(r, c)
  Eigen::VectorXd v;
};

/// Minimum-cost perfect matching on a square cost matrix (shortest augmenting
/// paths with potentials).
inline AssignmentResult hungarian(const Eigen::MatrixXd& cost) {
  const auto n = static_cast<int>(cost.rows());
  if (cost.cols() != n) throw ValidationError("assignment needs a square cost matrix");
  constexpr double inf = std::numeric_limits<double>::infinity();
  // 1-based arrays with a virtual column 0
  std::vector<double> u(static_cast<std::size_t>(n + 1), 0.0), v(static_cast<std::size_t>(n + 1), 0.0);
  std::vector<int> match(static_cast<std::size_t>(n + 1), 0), way(static_cast<std::size_t>(n + 1), 0);
  for (int r = 1; r <= n; ++r) {
    match[0] = r;
    int c0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(n + 1), inf);
    std::vector<char> used(static_cast<std::size_t>(n + 1), 0);
    do {
      used[static_cast<std::size_t>(c0)] = 1;
      const int r0 = match[static_cast<std::size_t>(c0)];
      double delta = inf;
      int c1 = 0;
      for (int c = 1; c <= n; ++c) {
        if (used[static_cast<std::size_t>(c)]) continue;
        const double cur = cost(r0 - 1, c - 1) - u[static_cast<std::size_t>(r0)] - v[static_cast<std::size_t>(c)];
        if (cur < minv[static_cast<std::size_t>(c)]) {
          minv[static_cast<std::size_t>(c)] = cur;
          way[static_cast<std::size_t>(c)] = c0;
        }
        if (minv[static_cast<std::size_t>(c)] < delta) {
          delta = minv[static_cast<std::size_t>(c)];
          c1 = c;
        }
      }
      for (int c = 0; c <= n; ++c) {
        if (used[static_cast<std::size_t>(c)]) {
          u[static_cast<std::size_t>(match[static_cast<std::size_t>(c)])] += delta;
          v[static_cast<std::size_t>(c)] -= delta;
        } else {
          minv[static_cast<std::size_t>(c)] -= delta;
        }
      }
      c0 = c1;
    } while (match[static_cast<std::size_t>(c0)] != 0);
    do {
      const int c1 = way[static_cast<std::size_t>(c0)];
      match[static_cast<std::size_t>(c0)] = match[static_cast<std::size_t>(c1)];
      c0 = c1;
    } while (c0 != 0);
  }
  AssignmentResult out;
  out.row_to_col.assign(static_cast<std::size_t>(n), -1);
  out.u.resize(n);
  out.v.resize(n);
  for (int c = 1; c <= n; ++c) out.row_to_col[static_cast<std::size_t>(match[static_cast<std::size_t>(c)] - 1)] = c - 1;
  for (int i = 0; i < n; ++i) {
    out.u[i] = u[static_cast<std::size_t>(i + 1)];
    out.v[i] = v[static_cast<std::size_t>(i + 1)];
    out.cost += cost(i, out.row_to_col[static_cast<std::size_t>(i)]);
  }
  return out;
}

/// agreement(k, l) = number of nodes with sample label k and reference label l.
inline Eigen::MatrixXd label_agreement(const BlockAssignment& sample, const BlockAssignment& reference) {
  if (sample.size() != reference.size()) throw ValidationError("label vectors differ in length");
  if (sample.n_blocks != reference.n_blocks) throw ValidationError("label vectors have different K");
  const int k = sample.n_blocks;
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(k, k);
  for (std::size_t i = 0; i < sample.size(); ++i) a(sample[i], reference[i]) += 1.0;
  return a;
}

/// Relabeling (new label of each sample label) maximizing agreement with the
/// reference. Among several optimal relabelings one is drawn uniformly when
/// there are at most `max_enumerated` of them.
inline std::vector<int> align_labels(const BlockAssignment& sample, const BlockAssignment& reference, Rng& rng,
                                     std::size_t max_enumerated = 5040) {
  const Eigen::MatrixXd agree = label_agreement(sample, reference);
  const auto k = static_cast<int>(agree.rows());
  const AssignmentResult best = hungarian(-agree);
  // Every optimal matching uses only edges that are tight under the optimal duals.
  std::vector<std::vector<int>> tight(static_cast<std::size_t>(k));
  for (int r = 0; r < k; ++r)
    for (int c = 0; c < k; ++c)
      if (std::abs(-agree(r, c) - best.u[r] - best.v[c]) < 1e-9) tight[static_cast<std::size_t>(r)].push_back(c);
  std::vector<std::vector<int>> optima;
  std::vector<int> cur(static_cast<std::size_t>(k), -1);
  std::vector<char> taken(static_cast<std::size_t>(k), 0);
  bool truncated = false;
  auto search = [&](auto&& self, int r) -> void {
    if (optima.size() >= max_enumerated) {
      truncated = true;
      return;
    }
    if (r == k) {
      optima.push_back(cur);
      return;
    }
    for (int c : tight[static_cast<std::size_t>(r)]) {
      if (taken[static_cast<std::size_t>(c)]) continue;
      taken[static_cast<std::size_t>(c)] = 1;
      cur[static_cast<std::size_t>(r)] = c;
      self(self, r + 1);
      taken[static_cast<std::size_t>(c)] = 0;
    }
  };
  search(search, 0);
  if (optima.empty()) return best.row_to_col;
  if (truncated) warn("too many optimal label alignments; sampling among the first enumerated");
  return optima[std::uniform_int_distribution<std::size_t>(0, optima.size() - 1)(rng)];
}

inline std::size_t agreement_count(const BlockAssignment& sample, const BlockAssignment& reference,
                                   const std::vector<int>& relabel) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < sample.size(); ++i) n += relabel[static_cast<std::size_t>(sample[i])] == reference[i];
  return n;
}

/// Applies a relabeling (old label -> new label) to every block-indexed field.
inline ChainState relabel_state(const ChainState& s, const std::vector<int>& relabel) {
  const int k = s.n_blocks();
  ChainState out = s;
  for (auto& l : out.gamma.labels) l = relabel[static_cast<std::size_t>(l)];
  for (int a = 0; a < k; ++a) {
    const int na = relabel[static_cast<std::size_t>(a)];
    out.eta[static_cast<std::size_t>(na)] = s.eta[static_cast<std::size_t>(a)];
    out.pi[na] = s.pi[a];
    for (int b = 0; b < k; ++b) out.tau.tau(na, relabel[static_cast<std::size_t>(b)]) = s.tau.tau(a, b);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Distance summary and weighted MDS.

struct BlockDistances {
  std::vector<NodeId> nodes;  // nodes ever observed in the block
  Eigen::MatrixXd weight;     // co-membership counts
  Eigen::MatrixXd distance;   // mean distance where weight > 0, NaN elsewhere
};

using DistanceSummary = std::vector<BlockDistances>;

inline DistanceSummary build_distance_summary(std::span<const ChainState> samples, int n_blocks, std::size_t n_nodes) {
  DistanceSummary out(static_cast<std::size_t>(n_blocks));
  std::vector<std::vector<int>> local(static_cast<std::size_t>(n_blocks), std::vector<int>(n_nodes, -1));
  for (const auto& s : samples)
    for (std::size_t i = 0; i < n_nodes; ++i) {
      const auto k = static_cast<std::size_t>(s.gamma[i]);
      if (local[k][i] < 0) {
        local[k][i] = static_cast<int>(out[k].nodes.size());
        out[k].nodes.push_back(static_cast<NodeId>(i));
      }
    }
  for (std::size_t k = 0; k < out.size(); ++k) {
    std::sort(out[k].nodes.begin(), out[k].nodes.end());
    for (std::size_t r = 0; r < out[k].nodes.size(); ++r) local[k][static_cast<std::size_t>(out[k].nodes[r])] = static_cast<int>(r);
    const auto m = static_cast<Eigen::Index>(out[k].nodes.size());
    out[k].weight = Eigen::MatrixXd::Zero(m, m);
    out[k].distance = Eigen::MatrixXd::Zero(m, m);
  }
  std::vector<std::vector<NodeId>> members;
  for (const auto& s : samples) {
    members = s.gamma.members();
    for (std::size_t k = 0; k < members.size(); ++k) {
      auto& bd = out[k];
      const auto& m = members[k];
      for (std::size_t a = 0; a < m.size(); ++a)
        for (std::size_t b = a + 1; b < m.size(); ++b) {
          const int ra = local[k][static_cast<std::size_t>(m[a])];
          const int rb = local[k][static_cast<std::size_t>(m[b])];
          const double d = (s.z.row(m[a]) - s.z.row(m[b])).norm();
          bd.weight(ra, rb) += 1.0;
          bd.weight(rb, ra) += 1.0;
          bd.distance(ra, rb) += d;
          bd.distance(rb, ra) += d;
        }
    }
  }
  for (auto& bd : out)
    for (Eigen::Index a = 0; a < bd.weight.rows(); ++a)
      for (Eigen::Index b = 0; b < bd.weight.cols(); ++b)
        bd.distance(a, b) = bd.weight(a, b) > 0 ? bd.distance(a, b) / bd.weight(a, b)
                                                : std::numeric_limits<double>::quiet_NaN();
  return out;
}

/// Weighted stress sum_{i<j} w_ij (||x_i - x_j|| - d_ij)^2.
inline double weighted_stress(const Eigen::MatrixXd& x, const Eigen::MatrixXd& weight, const Eigen::MatrixXd& dist) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = i + 1; j < x.rows(); ++j)
      if (weight(i, j) > 0) {
        const double r = (x.row(i) - x.row(j)).norm() - dist(i, j);
        s += weight(i, j) * r * r;
      }
  return s;
}

struct MdsResult {
  Eigen::MatrixXd coords;
  std::vector<double> stress;  // per iteration, starting value first
};

/// SMACOF majorization for weighted stress. Entries with zero weight are ignored.
inline MdsResult weighted_mds(const Eigen::MatrixXd& weight, const Eigen::MatrixXd& dist, int dim,
                              int max_iter = 500, double tol = 1e-9, const Eigen::MatrixXd* start = nullptr) {
  const Eigen::Index n = weight.rows();
  if (dist.rows() != n || dist.cols() != n || weight.cols() != n) throw ValidationError("MDS inputs must be square and matching");
  bool any = false;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) any = any || weight(i, j) > 0;
  if (!any) throw ValidationError("weighted MDS needs at least one positive weight");

  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (i != j && weight(i, j) > 0) {
        v(i, j) = -weight(i, j);
        v(i, i) += weight(i, j);
      }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(v);
  const double cutoff = 1e-10 * std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
  Eigen::VectorXd inv = es.eigenvalues();
  for (Eigen::Index i = 0; i < inv.size(); ++i) inv[i] = std::abs(inv[i]) > cutoff ? 1.0 / inv[i] : 0.0;
  const Eigen::MatrixXd v_pinv = es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();

  Eigen::MatrixXd x;
  if (start != nullptr) {
    x = *start;
  } else {
    // classical scaling with unobserved entries set to the mean observed distance
    double total = 0.0, count = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = i + 1; j < n; ++j)
        if (weight(i, j) > 0) {
          total += dist(i, j);
          count += 1.0;
        }
    Eigen::MatrixXd filled = Eigen::MatrixXd::Constant(n, n, total / count);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j)
        if (i == j) filled(i, j) = 0.0;
        else if (weight(i, j) > 0) filled(i, j) = dist(i, j);
    x = classical_mds(filled, dim);
  }
  MdsResult out;
  double stress = weighted_stress(x, weight, dist);
  out.stress.push_back(stress);
  Eigen::MatrixXd b(n, n);
  for (int it = 0; it < max_iter; ++it) {
    b.setZero();
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) {
        if (i == j || !(weight(i, j) > 0)) continue;
        const double dij = (x.row(i) - x.row(j)).norm();
        if (dij > 0) {
          b(i, j) = -weight(i, j) * dist(i, j) / dij;
          b(i, i) -= b(i, j);
        }
      }
    Eigen::MatrixXd next = v_pinv * (b * x);
    const double next_stress = weighted_stress(next, weight, dist);
    x = std::move(next);
    out.stress.push_back(next_stress);
    const bool done = stress - next_stress <= tol * std::max(stress, 1e-300);
    stress = next_stress;
    if (done) break;
  }
  out.coords = std::move(x);
  return out;
}

// ---------------------------------------------------------------------------
// Procrustes.

struct ProcrustesResult {
  Eigen::MatrixXd coords;       // transformed source
  Eigen::MatrixXd rotation;     // orthogonal, applied on the right
  Eigen::RowVectorXd translation;
  double residual = 0.0;        // sum of squared distances to the target
};

/// Orthogonal transform plus translation (no scaling) taking `source` closest
/// to `target` in least squares.
inline ProcrustesResult procrustes_align(const Eigen::MatrixXd& source, const Eigen::MatrixXd& target) {
  if (source.rows() < 1) throw ValidationError("Procrustes needs at least one point");
  if (source.rows() != target.rows() || source.cols() != target.cols())
    throw ValidationError("Procrustes inputs differ in shape");
  const Eigen::RowVectorXd cs = source.colwise().mean();
  const Eigen::RowVectorXd ct = target.colwise().mean();
  const Eigen::MatrixXd a = source.rowwise() - cs;
  const Eigen::MatrixXd t = target.rowwise() - ct;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a.transpose() * t, Eigen::ComputeFullU | Eigen::ComputeFullV);
  ProcrustesResult out;
  out.rotation = svd.matrixU() * svd.matrixV().transpose();
  out.translation = ct - cs * out.rotation;
  out.coords = (source * out.rotation).rowwise() + out.translation;
  out.residual = (out.coords - target).squaredNorm();
  return out;
}

// ---------------------------------------------------------------------------
// Diagnostics.

/// Potential scale reduction factor; empty when every chain is constant.
inline std::optional<double> gelman_rubin(const std::vector<std::vector<double>>& chains) {
  if (chains.size() < 2) throw ValidationError("Gelman-Rubin needs at least two chains");
  const std::size_t n = chains.front().size();
  if (n < 2) throw ValidationError("Gelman-Rubin needs at least two draws per chain");
  for (const auto& c : chains)
    if (c.size() != n) throw ValidationError("Gelman-Rubin chains differ in length");
  const auto m = static_cast<double>(chains.size());
  const auto nn = static_cast<double>(n);
  std::vector<double> means, vars;
  for (const auto& c : chains) {
    const double mean = std::accumulate(c.begin(), c.end(), 0.0) / nn;
    double ss = 0.0;
    for (double x : c) ss += (x - mean) * (x - mean);
    means.push_back(mean);
    vars.push_back(ss / (nn - 1.0));
  }
  const double grand = std::accumulate(means.begin(), means.end(), 0.0) / m;
  double b = 0.0;
  for (double mu : means) b += (mu - grand) * (mu - grand);
  b *= nn / (m - 1.0);
  const double w = std::accumulate(vars.begin(), vars.end(), 0.0) / m;
  if (!(w > 0)) return std::nullopt;
  const double var_plus = (nn - 1.0) / nn * w + b / nn;
  return std::sqrt(var_plus / w);
}

struct MembershipPosterior {
  Eigen::MatrixXd probability;  // N x K
  std::vector<int> mode;
};

inline MembershipPosterior membership_posterior(std::span<const ChainState> samples, int n_blocks, std::size_t n_nodes) {
  MembershipPosterior out;
  out.probability = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_nodes), n_blocks);
  for (const auto& s : samples)
    for (std::size_t i = 0; i < n_nodes; ++i) out.probability(static_cast<Eigen::Index>(i), s.gamma[i]) += 1.0;
  if (!samples.empty()) out.probability /= static_cast<double>(samples.size());
  out.mode.resize(n_nodes);
  for (std::size_t i = 0; i < n_nodes; ++i) {
    Eigen::Index arg = 0;
    out.probability.row(static_cast<Eigen::Index>(i)).maxCoeff(&arg);
    out.mode[i] = static_cast<int>(arg);
  }
  return out;
}

/// Named scalar traces of a state, in a fixed order.
inline std::vector<std::pair<std::string, double>> scalar_parameters(const ChainState& s) {
  std::vector<std::pair<std::string, double>> out;
  const int k = s.n_blocks();
  for (int a = 0; a < k; ++a) {
    out.emplace_back("beta[" + std::to_string(a + 1) + "]", s.eta[static_cast<std::size_t>(a)].beta);
    out.emplace_back("log_sigma[" + std::to_string(a + 1) + "]", s.eta[static_cast<std::size_t>(a)].log_sigma);
    out.emplace_back("pi[" + std::to_string(a + 1) + "]", s.pi[a]);
  }
  for (int a = 0; a < k; ++a)
    for (int b = a + 1; b < k; ++b)
      out.emplace_back("tau[" + std::to_string(a + 1) + "," + std::to_string(b + 1) + "]", s.tau.tau(a, b));
  out.emplace_back("mu[1]", s.mu[0]);
  out.emplace_back("mu[2]", s.mu[1]);
  out.emplace_back("Sigma[1,1]", s.sigma_mat(0, 0));
  out.emplace_back("Sigma[1,2]", s.sigma_mat(0, 1));
  out.emplace_back("Sigma[2,2]", s.sigma_mat(1, 1));
  return out;
}

struct Diagnostic {
  std::string name;
  std::optional<double> rhat;
};

/// Gelman-Rubin per scalar parameter over the kept samples of aligned chains,
/// truncated to the shortest chain.
inline std::vector<Diagnostic> convergence_diagnostics(const std::vector<std::vector<ChainState>>& chains) {
  std::vector<Diagnostic> out;
  if (chains.size() < 2) return out;
  std::size_t len = std::numeric_limits<std::size_t>::max();
  for (const auto& c : chains) len = std::min(len, c.size());
  if (len < 2) return out;
  std::vector<std::vector<std::vector<double>>> traces;  // [param][chain][draw]
  std::vector<std::string> names;
  for (std::size_t c = 0; c < chains.size(); ++c)
    for (std::size_t t = 0; t < len; ++t) {
      const auto params = scalar_parameters(chains[c][t]);
      if (traces.empty()) {
        traces.assign(params.size(), std::vector<std::vector<double>>(chains.size()));
        for (const auto& p : params) names.push_back(p.first);
      }
      for (std::size_t p = 0; p < params.size(); ++p) traces[p][c].push_back(params[p].second);
    }
  for (std::size_t p = 0; p < traces.size(); ++p) out.push_back({names[p], gelman_rubin(traces[p])});
  return out;
}

// ---------------------------------------------------------------------------
// Full post-processing.

struct PostprocessResult {
  BlockAssignment reference;
  std::vector<std::vector<ChainState>> aligned;  // kept samples per chain
  DistanceSummary distances;
  std::vector<Eigen::MatrixXd> reference_coords;  // per block, rows follow distances[k].nodes
  MembershipPosterior membership;
  Eigen::MatrixXd mean_position;  // per node, averaged over samples in its modal block
  std::vector<Diagnostic> diagnostics;

  std::vector<ChainState> pooled() const {
    std::vector<ChainState> all;
    for (const auto& c : aligned) all.insert(all.end(), c.begin(), c.end());
    return all;
  }
};

/// Aligns labels to a randomly drawn reference membership, builds per-block
/// reference configurations by weighted MDS, and rotates every sample's block
/// positions onto them.
inline PostprocessResult postprocess_chains(const std::vector<PosteriorChain>& chains, std::uint64_t seed,
                                            int mds_max_iter = 300, double mds_tol = 1e-7) {
  if (chains.empty()) throw ValidationError("no chains to post-process");
  Rng rng = make_rng(seed, "postprocess");
  std::vector<std::size_t> nonempty;
  for (std::size_t c = 0; c < chains.size(); ++c)
    if (!chains[c].kept().empty()) nonempty.push_back(c);
  if (nonempty.empty()) throw ValidationError("chains hold no post-burn-in samples");
  const auto& ref_chain = chains[nonempty[std::uniform_int_distribution<std::size_t>(0, nonempty.size() - 1)(rng)]].kept();
  PostprocessResult out;
  out.reference = ref_chain[std::uniform_int_distribution<std::size_t>(0, ref_chain.size() - 1)(rng)].gamma;
  const int k_blocks = out.reference.n_blocks;
  const std::size_t n = out.reference.size();

  for (const auto& chain : chains) {
    std::vector<ChainState> aligned;
    for (const auto& s : chain.kept()) aligned.push_back(relabel_state(s, align_labels(s.gamma, out.reference, rng)));
    out.aligned.push_back(std::move(aligned));
  }
  std::vector<ChainState> all = out.pooled();
  out.distances = build_distance_summary(all, k_blocks, n);
  const int dim = static_cast<int>(all.front().z.cols());

  out.reference_coords.resize(static_cast<std::size_t>(k_blocks));
  std::vector<std::vector<int>> local(static_cast<std::size_t>(k_blocks), std::vector<int>(n, -1));
  for (int k = 0; k < k_blocks; ++k) {
    const auto& bd = out.distances[static_cast<std::size_t>(k)];
    for (std::size_t r = 0; r < bd.nodes.size(); ++r) local[static_cast<std::size_t>(k)][static_cast<std::size_t>(bd.nodes[r])] = static_cast<int>(r);
    const auto m = static_cast<Eigen::Index>(bd.nodes.size());
    if (m >= 2 && (bd.weight.array() > 0).any()) {
      out.reference_coords[static_cast<std::size_t>(k)] = weighted_mds(bd.weight, bd.distance, dim, mds_max_iter, mds_tol).coords;
    } else {
      out.reference_coords[static_cast<std::size_t>(k)] = Eigen::MatrixXd::Zero(m, dim);
    }
  }

  for (auto& chain : out.aligned)
    for (auto& s : chain) {
      const auto members = s.gamma.members();
      for (int k = 0; k < k_blocks; ++k) {
        const auto& m = members[static_cast<std::size_t>(k)];
        if (m.empty()) continue;
        Eigen::MatrixXd src(static_cast<Eigen::Index>(m.size()), dim), tgt(static_cast<Eigen::Index>(m.size()), dim);
        for (std::size_t r = 0; r < m.size(); ++r) {
          src.row(static_cast<Eigen::Index>(r)) = s.z.row(m[r]);
          tgt.row(static_cast<Eigen::Index>(r)) =
              out.reference_coords[static_cast<std::size_t>(k)].row(local[static_cast<std::size_t>(k)][static_cast<std::size_t>(m[r])]);
        }
        const ProcrustesResult pr = procrustes_align(src, tgt);
        for (std::size_t r = 0; r < m.size(); ++r) s.z.row(m[r]) = pr.coords.row(static_cast<Eigen::Index>(r));
      }
    }

  all = out.pooled();
  out.membership = membership_posterior(all, k_blocks, n);
  out.mean_position = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), dim);
  std::vector<double> hits(n, 0.0);
  for (const auto& s : all)
    for (std::size_t i = 0; i < n; ++i)
      if (s.gamma[i] == out.membership.mode[i]) {
        out.mean_position.row(static_cast<Eigen::Index>(i)) += s.z.row(static_cast<Eigen::Index>(i));
        hits[i] += 1.0;
      }
  for (std::size_t i = 0; i < n; ++i)
    if (hits[i] > 0) out.mean_position.row(static_cast<Eigen::Index>(i)) /= hits[i];
  out.diagnostics = convergence_diagnostics(out.aligned);
  return out;
}

}  // namespace lssbm
