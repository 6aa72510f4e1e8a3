#pragma once

// Held-out link prediction: posterior predictive probabilities, precision-recall
// summaries split by within/between-block dyads, and interval summaries.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "lssbm/common.hpp"
#include "lssbm/graph.hpp"
#include "lssbm/mcmc.hpp"
#include "lssbm/selection.hpp"

namespace lssbm {

/// Area under the precision-recall curve by the trapezoid rule over the
/// unique score thresholds, starting at recall 0 with the precision of the
/// highest threshold. Empty when there are no positives.
inline std::optional<double> auprc(const std::vector<std::uint8_t>& truth, const std::vector<double>& scores) {
  if (truth.size() != scores.size()) throw ValidationError("truth and scores differ in length");
  const double n_pos = static_cast<double>(std::count(truth.begin(), truth.end(), std::uint8_t{1}));
  if (n_pos == 0) return std::nullopt;
  std::vector<std::size_t> order(truth.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double tp = 0.0, fp = 0.0, area = 0.0;
  double prev_recall = 0.0, prev_precision = -1.0;
  for (std::size_t r = 0; r < order.size();) {
    std::size_t e = r;
    while (e < order.size() && scores[order[e]] == scores[order[r]]) {
      (truth[order[e]] ? tp : fp) += 1.0;
      ++e;
    }
    const double recall = tp / n_pos;
    const double precision = tp / (tp + fp);
    if (prev_precision < 0) prev_precision = precision;
    area += 0.5 * (recall - prev_recall) * (precision + prev_precision);
    prev_recall = recall;
    prev_precision = precision;
    r = e;
  }
  return area;
}

/// Shortest interval holding `mass` of the sample.
inline std::pair<double, double> hpd_interval(std::vector<double> x, double mass = 0.95) {
  if (x.empty()) throw ValidationError("HPD interval of an empty sample");
  if (!(mass > 0 && mass <= 1)) throw ValidationError("HPD mass must be in (0,1]");
  std::sort(x.begin(), x.end());
  const auto n = x.size();
  const auto m = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(mass * static_cast<double>(n))));
  std::size_t best = 0;
  for (std::size_t i = 0; i + m <= n; ++i)
    if (x[i + m - 1] - x[i] < x[best + m - 1] - x[best]) best = i;
  return {x[best], x[best + m - 1]};
}

/// Tie probability between i and j under one posterior draw.
inline double state_edge_probability(const ChainState& s, NodeId i, NodeId j, bool latent = true) {
  const int a = s.gamma[static_cast<std::size_t>(i)];
  const int b = s.gamma[static_cast<std::size_t>(j)];
  if (a != b) return s.tau.tau(a, b);
  const double dist = latent ? (s.z.row(i) - s.z.row(j)).norm() : 0.0;
  return inv_logit(s.eta[static_cast<std::size_t>(a)].beta - dist);
}

/// Posterior mean tie probability of each dyad over the given draws.
inline std::vector<double> posterior_predictive(std::span<const ChainState> samples, const std::vector<Dyad>& dyads,
                                                bool latent = true) {
  std::vector<double> out(dyads.size(), 0.0);
  if (samples.empty()) throw ValidationError("no posterior draws for prediction");
  for (const auto& s : samples)
    for (std::size_t h = 0; h < dyads.size(); ++h) out[h] += state_edge_probability(s, dyads[h].i, dyads[h].j, latent);
  for (double& p : out) p /= static_cast<double>(samples.size());
  return out;
}

struct CategoryMetrics {
  std::size_t n = 0;
  std::size_t n_positive = 0;
  std::optional<double> auprc;
  std::optional<double> auc;
};

struct PredictionReport {
  std::vector<Dyad> dyads;
  std::vector<std::uint8_t> truth;
  std::vector<double> prob;
  std::vector<std::uint8_t> within;  // same modal block
  CategoryMetrics all;
  CategoryMetrics within_block;
  CategoryMetrics between_block;
};

inline CategoryMetrics category_metrics(const std::vector<std::uint8_t>& truth, const std::vector<double>& prob) {
  CategoryMetrics c;
  c.n = truth.size();
  c.n_positive = static_cast<std::size_t>(std::count(truth.begin(), truth.end(), std::uint8_t{1}));
  if (c.n == 0) return c;
  c.auprc = auprc(truth, prob);
  c.auc = auc_score(truth, prob);
  return c;
}

/// Scores predictions for the held-out dyads, splitting them by whether the
/// endpoints share a block under `modal`.
inline PredictionReport prediction_report(const Graph& g, const DyadMask& mask, const std::vector<double>& prob,
                                          const std::vector<int>& modal) {
  if (prob.size() != mask.held_out.size()) throw ValidationError("one prediction per held-out dyad required");
  PredictionReport r;
  r.dyads = mask.held_out;
  r.prob = prob;
  std::vector<std::uint8_t> ty_w, ty_b;
  std::vector<double> p_w, p_b;
  for (std::size_t h = 0; h < r.dyads.size(); ++h) {
    const auto d = r.dyads[h];
    const std::uint8_t y = g.has_edge(d.i, d.j) ? 1 : 0;
    const bool w = modal[static_cast<std::size_t>(d.i)] == modal[static_cast<std::size_t>(d.j)];
    r.truth.push_back(y);
    r.within.push_back(w ? 1 : 0);
    (w ? ty_w : ty_b).push_back(y);
    (w ? p_w : p_b).push_back(prob[h]);
  }
  r.all = category_metrics(r.truth, r.prob);
  r.within_block = category_metrics(ty_w, p_w);
  r.between_block = category_metrics(ty_b, p_b);
  if (ty_w.empty()) warn("no held-out dyads fall within a block");
  if (ty_b.empty()) warn("no held-out dyads fall between blocks");
  return r;
}

inline void write_predictions_csv(std::ostream& out, const PredictionReport& r, const Graph& g) {
  const auto prec = out.precision(17);
  const auto& ids = g.original_ids();
  auto id = [&](NodeId v) { return ids.empty() ? static_cast<std::int64_t>(v) + 1 : ids[static_cast<std::size_t>(v)]; };
  out << "i,j,y,prob,category\n";
  for (std::size_t h = 0; h < r.dyads.size(); ++h)
    out << id(r.dyads[h].i) << ',' << id(r.dyads[h].j) << ',' << int(r.truth[h]) << ',' << r.prob[h] << ','
        << (r.within[h] ? "within" : "between") << '\n';
  out.precision(prec);
}

}  // namespace lssbm
