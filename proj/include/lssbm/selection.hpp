#pragma once

// Choosing the number of blocks by repeated K-fold cross-validation of a
// degree-corrected spectral blockmodel with iterative held-out imputation.

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <mutex>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/students_t.hpp>

#include "lssbm/clustering.hpp"
#include "lssbm/common.hpp"
#include "lssbm/graph.hpp"
#include "lssbm/random.hpp"

namespace lssbm {

struct CvConfig {
  int n_folds = 10;
  int n_repeats = 20;
  int k_min = 2;
  int k_max = 0;           // 0: floor(N/4)
  std::vector<int> k_grid;  // overrides k_min..k_max when non-empty
  double imputation_tol = 1e-4;
  int max_em_iters = 50;
  int kmeans_restarts = 10;
  std::uint64_t seed = 1;
  int threads = 1;

  std::vector<int> ks(std::size_t n_nodes) const {
    if (!k_grid.empty()) {
      std::vector<int> out = k_grid;
      std::sort(out.begin(), out.end());
      out.erase(std::unique(out.begin(), out.end()), out.end());
      return out;
    }
    const int hi = k_max > 0 ? k_max : static_cast<int>(n_nodes / 4);
    std::vector<int> out;
    for (int k = k_min; k <= hi; ++k) out.push_back(k);
    return out;
  }

  void validate(std::size_t n_nodes) const {
    if (n_folds < 2) throw ValidationError("need at least two folds");
    if (n_repeats < 1) throw ValidationError("need at least one repeat");
    if (!(imputation_tol > 0)) throw ValidationError("imputation tolerance must be positive");
    if (max_em_iters < 1) throw ValidationError("max_em_iters must be positive");
    const auto grid = ks(n_nodes);
    if (grid.empty()) throw ValidationError("empty K grid");
    if (k_grid.empty() && !(2 <= k_min && k_min <= (k_max > 0 ? k_max : static_cast<int>(n_nodes / 4))))
      throw ValidationError("need 2 <= k_min <= k_max");
    for (int k : grid)
      if (k < 2 || static_cast<std::size_t>(k) > n_nodes) throw ValidationError("K grid values must lie in [2, N]");
  }
};

// ---------------------------------------------------------------------------

/// Held-out dyad (i, j) imputed as d_i * d_j, d being each node's observed
/// edge fraction. Values follow mask.held_out order.
inline std::vector<double> impute_initial(const Graph& g, const DyadMask& mask) {
  if (mask.held_out.empty()) throw ValidationError("imputation needs a non-empty mask");
  const auto d = observed_degree_fractions(g, &mask);
  std::vector<double> out;
  out.reserve(mask.held_out.size());
  for (auto dy : mask.held_out) out.push_back(d[static_cast<std::size_t>(dy.i)] * d[static_cast<std::size_t>(dy.j)]);
  return out;
}

/// Degree-corrected blockmodel fitted to a weighted adjacency matrix:
/// p_ij = theta_i theta_j omega_kl, theta_i = n_k d_i / kappa_k.
struct DcSbmFit {
  std::vector<int> labels;
  Eigen::VectorXd theta;
  Eigen::MatrixXd omega;

  double predict(NodeId i, NodeId j) const {
    const double p = theta[i] * theta[j] * omega(labels[static_cast<std::size_t>(i)], labels[static_cast<std::size_t>(j)]);
    return std::clamp(p, 1e-6, 1.0 - 1e-6);
  }
};

inline DcSbmFit fit_dcsbm(const Eigen::MatrixXd& adjacency, const BlockAssignment& gamma) {
  const Eigen::Index n = adjacency.rows();
  const int k = gamma.n_blocks;
  const Eigen::VectorXd deg = adjacency.rowwise().sum();
  std::vector<double> kappa(static_cast<std::size_t>(k), 0.0), size(static_cast<std::size_t>(k), 0.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    kappa[static_cast<std::size_t>(gamma[static_cast<std::size_t>(i)])] += deg[i];
    size[static_cast<std::size_t>(gamma[static_cast<std::size_t>(i)])] += 1.0;
  }
  DcSbmFit fit{gamma.labels, Eigen::VectorXd::Zero(n), Eigen::MatrixXd::Zero(k, k)};
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto b = static_cast<std::size_t>(gamma[static_cast<std::size_t>(i)]);
    fit.theta[i] = kappa[b] > 0 ? size[b] * deg[i] / kappa[b] : 0.0;
  }
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(k, k);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (i != j) m(gamma[static_cast<std::size_t>(i)], gamma[static_cast<std::size_t>(j)]) += adjacency(i, j);
  for (int a = 0; a < k; ++a)
    for (int b = 0; b < k; ++b) {
      // within a block only distinct ordered pairs can carry ties
      const double pairs = a == b ? size[static_cast<std::size_t>(a)] * (size[static_cast<std::size_t>(a)] - 1.0)
                                  : size[static_cast<std::size_t>(a)] * size[static_cast<std::size_t>(b)];
      fit.omega(a, b) = pairs > 0 ? m(a, b) / pairs : 0.0;
    }
  return fit;
}

struct EmFitResult {
  std::vector<double> prob;          // per held-out dyad, mask order
  std::vector<double> change;        // sum of squared changes per iteration
  int iterations = 0;
  bool converged = false;
  bool degenerate = false;           // clustering produced fewer than K blocks
  int effective_k = 0;
};

/// Observed adjacency with held-out dyads set to zero.
inline Eigen::MatrixXd masked_adjacency(const Graph& g, const DyadMask& mask) {
  Eigen::MatrixXd a = dense_adjacency(g);
  for (auto d : mask.held_out) a(d.i, d.j) = a(d.j, d.i) = 0.0;
  return a;
}

/// Alternates spectral clustering of the imputed adjacency, degree-corrected
/// rate estimation and re-imputation until predictions settle. `first_embedding`
/// may carry the Bethe-Hessian eigenvectors of the initially imputed matrix,
/// which do not depend on K.
inline EmFitResult em_spectral_fit(const Graph& g, const DyadMask& mask, int k, const CvConfig& config, Rng& rng,
                                   const Eigen::MatrixXd* first_embedding = nullptr) {
  if (k < 2) throw ValidationError("spectral CV fit needs K >= 2");
  if (static_cast<std::size_t>(k) > g.n_nodes()) throw ValidationError("more blocks requested than nodes");
  Eigen::MatrixXd a = masked_adjacency(g, mask);
  EmFitResult out;
  out.prob = impute_initial(g, mask);
  for (std::size_t h = 0; h < mask.held_out.size(); ++h) {
    const auto d = mask.held_out[h];
    a(d.i, d.j) = a(d.j, d.i) = out.prob[h];
  }
  for (int it = 0; it < config.max_em_iters; ++it) {
    const SpectralResult sc = it == 0 && first_embedding != nullptr
                                  ? cluster_embedding(*first_embedding, k, rng, config.kmeans_restarts)
                                  : bethe_hessian_cluster(a, k, rng, config.kmeans_restarts);
    out.degenerate = out.degenerate || sc.degenerate;
    out.effective_k = sc.gamma.n_blocks;
    const DcSbmFit fit = fit_dcsbm(a, sc.gamma);
    double change = 0.0;
    for (std::size_t h = 0; h < mask.held_out.size(); ++h) {
      const auto d = mask.held_out[h];
      const double p = fit.predict(d.i, d.j);
      change += (p - out.prob[h]) * (p - out.prob[h]);
      out.prob[h] = p;
      a(d.i, d.j) = a(d.j, d.i) = p;
    }
    out.change.push_back(change);
    out.iterations = it + 1;
    if (change < config.imputation_tol) {
      out.converged = true;
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

struct Scores {
  std::optional<double> auc;  // empty when only one class is present
  double mse = 0.0;
  double mpi = 0.0;
};

/// Mann-Whitney AUC with mid-ranks for ties.
inline std::optional<double> auc_score(const std::vector<std::uint8_t>& truth, const std::vector<double>& probs) {
  const std::size_t n = truth.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return probs[a] < probs[b]; });
  double rank_sum = 0.0, n_pos = 0.0;
  for (std::size_t r = 0; r < n;) {
    std::size_t e = r;
    while (e + 1 < n && probs[order[e + 1]] == probs[order[r]]) ++e;
    const double mid = 0.5 * static_cast<double>(r + e) + 1.0;
    for (std::size_t q = r; q <= e; ++q)
      if (truth[order[q]]) {
        rank_sum += mid;
        n_pos += 1.0;
      }
    r = e + 1;
  }
  const double n_neg = static_cast<double>(n) - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  return (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

inline Scores score_predictions(const std::vector<std::uint8_t>& truth, const std::vector<double>& probs) {
  if (truth.size() != probs.size()) throw ValidationError("truth and predictions differ in length");
  if (truth.empty()) throw ValidationError("no predictions to score");
  Scores s;
  s.auc = auc_score(truth, probs);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double y = truth[i] ? 1.0 : 0.0;
    const double p = std::clamp(probs[i], 1e-6, 1.0 - 1e-6);
    s.mse += (y - probs[i]) * (y - probs[i]);
    s.mpi += y * std::log(p) + (1.0 - y) * std::log1p(-p);
  }
  s.mse /= static_cast<double>(truth.size());
  s.mpi /= static_cast<double>(truth.size());
  return s;
}

// ---------------------------------------------------------------------------

enum class Metric { Auc, Mse, Mpi };

inline const char* metric_name(Metric m) {
  switch (m) {
    case Metric::Auc: return "auc";
    case Metric::Mse: return "mse";
    case Metric::Mpi: return "mpi";
  }
  return "";
}

inline bool higher_is_better(Metric m) { return m != Metric::Mse; }

struct CvRecord {
  int repeat = 0;
  int fold = 0;  // -1 for the repeat-level score over all folds
  int k = 0;
  Scores scores;
  int em_iterations = 0;
  bool degenerate = false;
};

struct MetricSummary {
  double mean = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  int n = 0;
};

struct CvResult {
  std::vector<int> ks;
  int n_repeats = 0;
  std::vector<CvRecord> folds;    // per (repeat, fold, K)
  std::vector<CvRecord> repeats;  // per (repeat, K), pooled over folds
  // summary[metric][k index]
  std::array<std::vector<MetricSummary>, 3> summary;
  std::array<std::optional<int>, 3> selected;
  int selected_k = 0;
};

inline std::optional<double> metric_value(const Scores& s, Metric m) {
  switch (m) {
    case Metric::Auc: return s.auc;
    case Metric::Mse: return s.mse;
    case Metric::Mpi: return s.mpi;
  }
  return std::nullopt;
}

/// Mean and t-based 95% interval of repeat-level values.
inline MetricSummary summarize(const std::vector<double>& values) {
  MetricSummary s;
  s.n = static_cast<int>(values.size());
  if (values.empty()) return s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / s.n;
  if (s.n < 2) {
    s.lower = s.upper = s.mean;
    return s;
  }
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  const double se = std::sqrt(ss / (s.n - 1.0) / s.n);
  const double q = boost::math::quantile(boost::math::students_t_distribution<double>(s.n - 1.0), 0.975);
  s.lower = s.mean - q * se;
  s.upper = s.mean + q * se;
  return s;
}

/// Fills per-K summaries and the per-metric and final selections. For each
/// metric: the smallest K whose mean lies inside the interval of the best K.
/// Final K is the median of the per-metric picks, ties broken downward.
inline void select_k(CvResult& r) {
  if (r.n_repeats < 2) throw ValidationError("K selection needs at least two repeats");
  std::vector<int> picks;
  for (Metric m : {Metric::Auc, Metric::Mse, Metric::Mpi}) {
    const auto mi = static_cast<std::size_t>(m);
    r.summary[mi].clear();
    for (int k : r.ks) {
      std::vector<double> vals;
      for (const auto& rec : r.repeats)
        if (rec.k == k)
          if (auto v = metric_value(rec.scores, m)) vals.push_back(*v);
      r.summary[mi].push_back(summarize(vals));
    }
    std::optional<std::size_t> best;
    for (std::size_t q = 0; q < r.ks.size(); ++q) {
      if (r.summary[mi][q].n == 0) continue;
      if (!best || (higher_is_better(m) ? r.summary[mi][q].mean > r.summary[mi][*best].mean
                                        : r.summary[mi][q].mean < r.summary[mi][*best].mean))
        best = q;
    }
    r.selected[mi].reset();
    if (!best) continue;
    const MetricSummary& b = r.summary[mi][*best];
    for (std::size_t q = 0; q < r.ks.size(); ++q) {
      const MetricSummary& s = r.summary[mi][q];
      if (s.n > 0 && s.mean >= b.lower && s.mean <= b.upper) {
        r.selected[mi] = r.ks[q];
        break;
      }
    }
    picks.push_back(*r.selected[mi]);
  }
  if (picks.empty()) throw Error("no metric could be evaluated for K selection");
  std::sort(picks.begin(), picks.end());
  r.selected_k = picks[(picks.size() - 1) / 2];
}

/// Repeated cross-validation over the K grid. Each repeat draws fresh folds;
/// every (repeat, fold, K) cell uses its own random substream.
inline CvResult cross_validate(const Graph& g, const CvConfig& config) {
  config.validate(g.n_nodes());
  CvResult result;
  result.ks = config.ks(g.n_nodes());
  result.n_repeats = config.n_repeats;
  const std::size_t nk = result.ks.size();
  std::vector<std::vector<CvRecord>> fold_records(static_cast<std::size_t>(config.n_repeats));
  std::vector<std::vector<CvRecord>> repeat_records(static_cast<std::size_t>(config.n_repeats));

  auto run_repeat = [&](int rep) {
    const auto folds = make_folds(g, config.n_folds, substream_seed(config.seed, "folds", static_cast<std::uint64_t>(rep)));
    std::vector<std::vector<std::uint8_t>> truth(nk);
    std::vector<std::vector<double>> pooled(nk);
    std::vector<int> iters(nk, 0);
    std::vector<char> degenerate(nk, 0);
    for (std::size_t f = 0; f < folds.size(); ++f) {
      const DyadMask& mask = folds[f];
      if (mask.held_out.empty()) continue;
      std::vector<std::uint8_t> y;
      for (auto d : mask.held_out) y.push_back(g.has_edge(d.i, d.j) ? 1 : 0);
      // first-iteration embedding is shared across K
      Eigen::MatrixXd a = masked_adjacency(g, mask);
      const auto init = impute_initial(g, mask);
      for (std::size_t h = 0; h < mask.held_out.size(); ++h) {
        const auto d = mask.held_out[h];
        a(d.i, d.j) = a(d.j, d.i) = init[h];
      }
      const Eigen::MatrixXd embedding = bethe_hessian_embedding(a, result.ks.back());
      for (std::size_t q = 0; q < nk; ++q) {
        Rng rng = make_rng(config.seed, "cv-cell",
                           (static_cast<std::uint64_t>(rep) * 1000003ULL + f) * 100003ULL + static_cast<std::uint64_t>(result.ks[q]));
        const EmFitResult fit = em_spectral_fit(g, mask, result.ks[q], config, rng, &embedding);
        fold_records[static_cast<std::size_t>(rep)].push_back(
            {rep, static_cast<int>(f), result.ks[q], score_predictions(y, fit.prob), fit.iterations, fit.degenerate});
        truth[q].insert(truth[q].end(), y.begin(), y.end());
        pooled[q].insert(pooled[q].end(), fit.prob.begin(), fit.prob.end());
        iters[q] += fit.iterations;
        degenerate[q] = degenerate[q] || fit.degenerate;
      }
    }
    for (std::size_t q = 0; q < nk; ++q)
      repeat_records[static_cast<std::size_t>(rep)].push_back(
          {rep, -1, result.ks[q], score_predictions(truth[q], pooled[q]), iters[q], degenerate[q] != 0});
  };

  const int threads = std::max(1, std::min(config.threads, config.n_repeats));
  if (threads == 1) {
    for (int rep = 0; rep < config.n_repeats; ++rep) run_repeat(rep);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    std::exception_ptr error;
    std::mutex error_mutex;
    for (int t = 0; t < threads; ++t)
      pool.emplace_back([&] {
        for (int rep; (rep = next++) < config.n_repeats;) {
          try {
            run_repeat(rep);
          } catch (...) {
            std::lock_guard lock(error_mutex);
            if (!error) error = std::current_exception();
          }
        }
      });
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
  }
  for (int rep = 0; rep < config.n_repeats; ++rep) {
    const auto r = static_cast<std::size_t>(rep);
    result.folds.insert(result.folds.end(), fold_records[r].begin(), fold_records[r].end());
    result.repeats.insert(result.repeats.end(), repeat_records[r].begin(), repeat_records[r].end());
  }
  if (config.n_repeats >= 2) select_k(result);
  return result;
}

inline void write_cv_records_csv(std::ostream& out, const CvResult& r) {
  out << "repeat,fold,K,auc,mse,mpi\n";
  auto row = [&](const CvRecord& rec) {
    out << rec.repeat + 1 << ',' << (rec.fold < 0 ? std::string("all") : std::to_string(rec.fold + 1)) << ',' << rec.k
        << ',';
    if (rec.scores.auc) out << *rec.scores.auc;
    else out << "NA";
    out << ',' << rec.scores.mse << ',' << rec.scores.mpi << '\n';
  };
  const auto prec = out.precision(17);
  for (const auto& rec : r.folds) row(rec);
  for (const auto& rec : r.repeats) row(rec);
  out.precision(prec);
}

inline void write_cv_summary_csv(std::ostream& out, const CvResult& r) {
  out << "K,metric,mean,lower,upper,n\n";
  const auto prec = out.precision(17);
  for (Metric m : {Metric::Auc, Metric::Mse, Metric::Mpi}) {
    const auto mi = static_cast<std::size_t>(m);
    for (std::size_t q = 0; q < r.ks.size() && q < r.summary[mi].size(); ++q) {
      const auto& s = r.summary[mi][q];
      out << r.ks[q] << ',' << metric_name(m) << ',' << s.mean << ',' << s.lower << ',' << s.upper << ',' << s.n << '\n';
    }
  }
  out.precision(prec);
}

}  // namespace lssbm
