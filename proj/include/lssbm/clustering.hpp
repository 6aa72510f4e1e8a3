#pragma once

// Graph clustering for block memberships (Bethe-Hessian spectral clustering,
// asynchronous label propagation) and the embedding helpers they share.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "lssbm/common.hpp"
#include "lssbm/graph.hpp"
#include "lssbm/random.hpp"

namespace lssbm {

struct KMeansResult {
  std::vector<int> labels;
  Eigen::MatrixXd centers;
  double inertia = std::numeric_limits<double>::infinity();
};

/// Lloyd's algorithm with k-means++ seeding, best of `restarts` runs.
inline KMeansResult kmeans(const Eigen::MatrixXd& x, int k, int restarts, Rng& rng, int max_iter = 100) {
  const Eigen::Index n = x.rows();
  if (k < 1 || k > n) throw ValidationError("k-means needs 1 <= k <= number of points");
  KMeansResult best;
  std::vector<double> d2(static_cast<std::size_t>(n));
  for (int rep = 0; rep < restarts; ++rep) {
    Eigen::MatrixXd centers(k, x.cols());
    centers.row(0) = x.row(static_cast<Eigen::Index>(std::uniform_int_distribution<Eigen::Index>(0, n - 1)(rng)));
    for (int c = 1; c < k; ++c) {
      for (Eigen::Index i = 0; i < n; ++i) {
        double m = std::numeric_limits<double>::infinity();
        for (int p = 0; p < c; ++p) m = std::min(m, (x.row(i) - centers.row(p)).squaredNorm());
        d2[static_cast<std::size_t>(i)] = m;
      }
      const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
      const Eigen::Index pick = total > 0 ? static_cast<Eigen::Index>(categorical_draw(rng, d2))
                                          : std::uniform_int_distribution<Eigen::Index>(0, n - 1)(rng);
      centers.row(c) = x.row(pick);
    }
    std::vector<int> labels(static_cast<std::size_t>(n), -1);
    double inertia = 0.0;
    for (int it = 0; it < max_iter; ++it) {
      bool changed = false;
      inertia = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        int arg = 0;
        double m = std::numeric_limits<double>::infinity();
        for (int c = 0; c < k; ++c) {
          const double v = (x.row(i) - centers.row(c)).squaredNorm();
          if (v < m) {
            m = v;
            arg = c;
          }
        }
        d2[static_cast<std::size_t>(i)] = m;
        inertia += m;
        if (labels[static_cast<std::size_t>(i)] != arg) {
          labels[static_cast<std::size_t>(i)] = arg;
          changed = true;
        }
      }
      Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, x.cols());
      std::vector<int> counts(static_cast<std::size_t>(k), 0);
      for (Eigen::Index i = 0; i < n; ++i) {
        sums.row(labels[static_cast<std::size_t>(i)]) += x.row(i);
        ++counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
      }
      for (int c = 0; c < k; ++c) {
        if (counts[static_cast<std::size_t>(c)] > 0) {
          centers.row(c) = sums.row(c) / counts[static_cast<std::size_t>(c)];
        } else {
          // empty cluster: move it to the worst-fit point
          const auto far = static_cast<Eigen::Index>(std::max_element(d2.begin(), d2.end()) - d2.begin());
          centers.row(c) = x.row(far);
          d2[static_cast<std::size_t>(far)] = 0.0;
          changed = true;
        }
      }
      if (!changed) break;
    }
    if (inertia < best.inertia) best = {labels, centers, inertia};
  }
  return best;
}

inline Eigen::MatrixXd dense_adjacency(const Graph& g) {
  const auto n = static_cast<Eigen::Index>(g.n_nodes());
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  for (auto d : g.edges()) a(d.i, d.j) = a(d.j, d.i) = 1.0;
  return a;
}

/// Bethe-Hessian H(r) = (r^2 - 1) I - r A + D with r = sqrt(mean degree),
/// for a possibly weighted symmetric adjacency matrix.
inline Eigen::MatrixXd bethe_hessian(const Eigen::MatrixXd& adjacency) {
  const Eigen::VectorXd deg = adjacency.rowwise().sum();
  const double r = std::sqrt(std::max(deg.mean(), 0.0));
  Eigen::MatrixXd h = -r * adjacency;
  h.diagonal().array() += r * r - 1.0;
  h.diagonal() += deg;
  return h;
}

struct SpectralResult {
  BlockAssignment gamma;
  bool degenerate = false;  // fewer non-empty clusters than requested
};

/// Eigenvectors of the symmetric tridiagonal matrix (diag d, off-diagonal e)
/// for the given ascending eigenvalues, by inverse iteration. Vectors whose
/// eigenvalues lie within 1e-3 * ||T|| of each other are orthogonalized.
inline Eigen::MatrixXd tridiagonal_eigenvectors(const Eigen::VectorXd& d, const Eigen::VectorXd& e,
                                                const Eigen::VectorXd& lambda) {
  const Eigen::Index n = d.size();
  const Eigen::Index m = lambda.size();
  Eigen::MatrixXd x(n, m);
  if (n == 0 || m == 0) return x;
  if (n == 1) {
    x.setOnes();
    return x;
  }
  double tnorm = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    tnorm = std::max(tnorm, std::abs(d[i]) + (i > 0 ? std::abs(e[i - 1]) : 0.0) + (i + 1 < n ? std::abs(e[i]) : 0.0));
  tnorm = std::max(tnorm, std::numeric_limits<double>::min());
  const double eps = std::numeric_limits<double>::epsilon();
  const double sep = 1e-3 * tnorm;
  const double tiny = eps * tnorm;
  std::vector<double> dl(static_cast<std::size_t>(n - 1)), dd(static_cast<std::size_t>(n)), du(static_cast<std::size_t>(n - 1)),
      du2(static_cast<std::size_t>(n), 0.0);
  std::vector<char> piv(static_cast<std::size_t>(n - 1));
  Eigen::Index cluster_start = 0;
  double shift_prev = 0.0;
  for (Eigen::Index c = 0; c < m; ++c) {
    double shift = lambda[c];
    if (c > 0 && lambda[c] - lambda[c - 1] < sep) {
      if (shift <= shift_prev) shift = shift_prev + 10.0 * tiny;
    } else {
      cluster_start = c;
    }
    shift_prev = shift;
    // LU with partial pivoting of T - shift I
    for (Eigen::Index i = 0; i < n; ++i) dd[static_cast<std::size_t>(i)] = d[i] - shift;
    for (Eigen::Index i = 0; i + 1 < n; ++i) dl[static_cast<std::size_t>(i)] = du[static_cast<std::size_t>(i)] = e[i];
    std::fill(du2.begin(), du2.end(), 0.0);
    for (std::size_t i = 0; i + 1 < static_cast<std::size_t>(n); ++i) {
      if (std::abs(dd[i]) >= std::abs(dl[i])) {
        piv[i] = 0;
        if (dd[i] == 0.0) dd[i] = tiny;
        const double f = dl[i] / dd[i];
        dl[i] = f;
        dd[i + 1] -= f * du[i];
      } else {
        piv[i] = 1;
        const double f = dd[i] / dl[i];
        dd[i] = dl[i];
        dl[i] = f;
        const double t = du[i];
        du[i] = dd[i + 1];
        dd[i + 1] = t - f * dd[i + 1];
        if (i + 2 < static_cast<std::size_t>(n)) {
          du2[i] = du[i + 1];
          du[i + 1] = -f * du[i + 1];
        }
      }
    }
    if (dd.back() == 0.0) dd.back() = tiny;
    auto solve = [&](Eigen::VectorXd& b) {
      for (std::size_t i = 0; i + 1 < static_cast<std::size_t>(n); ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        if (piv[i] == 0) {
          b[ii + 1] -= dl[i] * b[ii];
        } else {
          const double t = b[ii];
          b[ii] = b[ii + 1];
          b[ii + 1] = t - dl[i] * b[ii];
        }
      }
      for (Eigen::Index i = n - 1; i >= 0; --i) {
        const auto u = static_cast<std::size_t>(i);
        double v = b[i];
        if (i + 1 < n) v -= du[u] * b[i + 1];
        if (i + 2 < n) v -= du2[u] * b[i + 2];
        b[i] = v / dd[u];
      }
    };
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = std::sin(0.7 * static_cast<double>(i + 1) + 1.3 * static_cast<double>(c)) + 1.5;
    v.normalize();
    for (int it = 0; it < 8; ++it) {
      Eigen::VectorXd w = v;
      solve(w);
      for (Eigen::Index j = cluster_start; j < c; ++j) w -= x.col(j).dot(w) * x.col(j);
      const double norm = w.norm();
      if (!(norm > 0.0) || !std::isfinite(norm)) break;
      w /= norm;
      const double change = std::min((w - v).norm(), (w + v).norm());
      v = w;
      if (change < 1e-13) break;
    }
    x.col(c) = v;
  }
  return x;
}

/// The `count` eigenvectors of a symmetric matrix with smallest eigenvalues,
/// ascending (all of them when count <= 0 or count == n).
inline Eigen::MatrixXd smallest_eigenvectors(const Eigen::MatrixXd& h, int count) {
  const Eigen::Index n = h.rows();
  if (count <= 0 || count >= n) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h);
    if (es.info() != Eigen::Success) throw Error("symmetric eigendecomposition failed");
    return es.eigenvectors().leftCols(count <= 0 ? n : count);
  }
  Eigen::Tridiagonalization<Eigen::MatrixXd> tri(h);
  const Eigen::VectorXd d = tri.diagonal();
  const Eigen::VectorXd e = tri.subDiagonal();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
  es.computeFromTridiagonal(d, e, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw Error("symmetric eigendecomposition failed");
  const Eigen::VectorXd lambda = es.eigenvalues().head(count);
  Eigen::MatrixXd v = tri.matrixQ() * tridiagonal_eigenvectors(d, e, lambda);
  const double scale = std::max(h.cwiseAbs().rowwise().sum().maxCoeff(), 1.0);
  const double residual = ((h * v) - v * lambda.asDiagonal()).colwise().norm().maxCoeff();
  const double orth = (v.transpose() * v - Eigen::MatrixXd::Identity(count, count)).cwiseAbs().maxCoeff();
  if (residual > 1e-8 * scale || orth > 1e-8) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> full(h);
    if (full.info() != Eigen::Success) throw Error("symmetric eigendecomposition failed");
    return full.eigenvectors().leftCols(count);
  }
  return v;
}

/// The `count` Bethe-Hessian eigenvectors with smallest eigenvalues,
/// ascending (all of them when count <= 0).
inline Eigen::MatrixXd bethe_hessian_embedding(const Eigen::MatrixXd& adjacency, int count = 0) {
  return smallest_eigenvectors(bethe_hessian(adjacency), count);
}

/// k-means on the first k columns of a precomputed embedding.
inline SpectralResult cluster_embedding(const Eigen::MatrixXd& vectors, int k, Rng& rng, int restarts = 10) {
  const Eigen::Index n = vectors.rows();
  if (k > n) throw ValidationError("more blocks requested than nodes");
  if (k <= 1) return {BlockAssignment(std::vector<int>(static_cast<std::size_t>(n), 0), 1), false};
  Eigen::MatrixXd emb = vectors.leftCols(k);
  KMeansResult km = kmeans(emb, k, restarts, rng);
  auto distinct = [](const std::vector<int>& l) {
    std::vector<int> s(l);
    std::sort(s.begin(), s.end());
    return static_cast<int>(std::unique(s.begin(), s.end()) - s.begin());
  };
  bool degenerate = false;
  if (distinct(km.labels) < k) {
    const double scale = 1e-3 * std::max(emb.cwiseAbs().maxCoeff(), 1e-12);
    for (Eigen::Index i = 0; i < emb.rows(); ++i)
      for (Eigen::Index j = 0; j < emb.cols(); ++j) emb(i, j) += scale * std_normal(rng);
    km = kmeans(emb, k, restarts, rng);
    degenerate = distinct(km.labels) < k;
  }
  return {canonical_from_labels(km.labels), degenerate};
}

inline SpectralResult bethe_hessian_cluster(const Eigen::MatrixXd& adjacency, int k, Rng& rng, int restarts = 10) {
  if (k > adjacency.rows()) throw ValidationError("more blocks requested than nodes");
  if (k <= 1) return {BlockAssignment(std::vector<int>(static_cast<std::size_t>(adjacency.rows()), 0), 1), false};
  return cluster_embedding(bethe_hessian_embedding(adjacency, k), k, rng, restarts);
}

/// Spectral clustering of a graph into k assortative blocks (canonical labels).
inline BlockAssignment bethe_hessian_cluster(const Graph& g, int k, std::uint64_t seed) {
  if (k < 1) throw ValidationError("need at least one block");
  if (static_cast<std::size_t>(k) > g.n_nodes()) throw ValidationError("more blocks requested than nodes");
  if (g.n_nodes() > 4 * Graph::kDenseLimit)
    throw ValidationError("graph too large for dense spectral clustering; use label propagation");
  Rng rng = make_rng(seed, "bethe-hessian");
  auto res = bethe_hessian_cluster(dense_adjacency(g), k, rng);
  if (res.degenerate) warn("spectral clustering produced fewer non-empty blocks than requested");
  return res.gamma;
}

// ---------------------------------------------------------------------------

/// Asynchronous label propagation: random node order per sweep, ties between
/// maximal labels broken at random, a node keeps its label while that label is
/// among the maximal ones. Stops when a sweep changes nothing.
inline BlockAssignment label_propagation(const Graph& g, std::uint64_t seed, int max_sweeps = 1000) {
  const std::size_t n = g.n_nodes();
  Rng rng = make_rng(seed, "label-propagation");
  std::vector<int> label(n);
  std::iota(label.begin(), label.end(), 0);
  std::vector<NodeId> order(n);
  std::iota(order.begin(), order.end(), NodeId{0});
  std::unordered_map<int, int> freq;
  std::vector<int> best;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    std::shuffle(order.begin(), order.end(), rng);
    bool changed = false;
    for (NodeId v : order) {
      const auto& nb = g.neighbors(v);
      if (nb.empty()) continue;
      freq.clear();
      int top = 0;
      for (NodeId u : nb) top = std::max(top, ++freq[label[static_cast<std::size_t>(u)]]);
      const int own = label[static_cast<std::size_t>(v)];
      if (auto it = freq.find(own); it != freq.end() && it->second == top) continue;
      best.clear();
      for (auto [lab, c] : freq)
        if (c == top) best.push_back(lab);
      std::sort(best.begin(), best.end());  // hash order is not reproducible across platforms
      label[static_cast<std::size_t>(v)] = best[std::uniform_int_distribution<std::size_t>(0, best.size() - 1)(rng)];
      changed = true;
    }
    if (!changed) break;
  }
  return canonical_from_labels(label);
}

// ---------------------------------------------------------------------------

/// Hop distances within a graph; unreachable pairs get (max finite + 1).
inline Eigen::MatrixXd hop_distances(const Graph& g) {
  const std::size_t n = g.n_nodes();
  Eigen::MatrixXd d = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n), -1.0);
  std::vector<NodeId> queue;
  for (std::size_t s = 0; s < n; ++s) {
    queue.assign(1, static_cast<NodeId>(s));
    d(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(s)) = 0.0;
    for (std::size_t head = 0; head < queue.size(); ++head) {
      const NodeId u = queue[head];
      for (NodeId v : g.neighbors(u))
        if (d(static_cast<Eigen::Index>(s), v) < 0) {
          d(static_cast<Eigen::Index>(s), v) = d(static_cast<Eigen::Index>(s), u) + 1.0;
          queue.push_back(v);
        }
    }
  }
  const double fill = std::max(d.maxCoeff(), 0.0) + 1.0;
  for (Eigen::Index i = 0; i < d.rows(); ++i)
    for (Eigen::Index j = 0; j < d.cols(); ++j)
      if (d(i, j) < 0) d(i, j) = fill;
  return d;
}

/// Torgerson classical scaling of a full distance matrix into `dim` coordinates.
inline Eigen::MatrixXd classical_mds(const Eigen::MatrixXd& dist, int dim) {
  const Eigen::Index n = dist.rows();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, dim);
  if (n < 2) return out;
  const Eigen::MatrixXd sq = dist.array().square();
  const Eigen::MatrixXd centering =
      Eigen::MatrixXd::Identity(n, n) - Eigen::MatrixXd::Constant(n, n, 1.0 / static_cast<double>(n));
  const Eigen::MatrixXd b = -0.5 * centering * sq * centering;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(b);
  for (int c = 0; c < dim && c < n; ++c) {
    const Eigen::Index col = n - 1 - c;  // eigenvalues ascend
    const double lambda = std::max(es.eigenvalues()[col], 0.0);
    out.col(c) = es.eigenvectors().col(col) * std::sqrt(lambda);
  }
  return out;
}

}  // namespace lssbm
