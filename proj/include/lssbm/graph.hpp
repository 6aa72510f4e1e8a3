#pragma once

// Undirected simple graphs, block assignments, dyad hold-out masks and the
// text formats they are stored in.
//
// Node ids are 0-based in memory and 1-based in every file format.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "lssbm/common.hpp"
#include "lssbm/random.hpp"

namespace lssbm {

class Graph {
 public:
  /// Above this size the dense adjacency bitmap is not materialized.
  static constexpr std::size_t kDenseLimit = 2000;

  Graph() = default;

  /// Builds from node count and pairs; reversed and duplicate pairs collapse.
  Graph(std::size_t n_nodes, const std::vector<std::pair<NodeId, NodeId>>& pairs) : n_(n_nodes) {
    edges_.reserve(pairs.size());
    for (auto [a, b] : pairs) {
      if (a == b) throw ValidationError("self-loop on node " + std::to_string(a + 1));
      if (a < 0 || b < 0 || static_cast<std::size_t>(std::max(a, b)) >= n_nodes)
        throw ValidationError("edge endpoint out of range");
      edges_.push_back(make_dyad(a, b));
    }
    std::sort(edges_.begin(), edges_.end());
    edges_.erase(std::unique(edges_.begin(), edges_.end()), edges_.end());
    build_index();
  }

  Graph(std::size_t n_nodes, const std::vector<Dyad>& dyads) {
    std::vector<std::pair<NodeId, NodeId>> pairs;
    pairs.reserve(dyads.size());
    for (auto d : dyads) pairs.emplace_back(d.i, d.j);
    *this = Graph(n_nodes, pairs);
  }

  std::size_t n_nodes() const { return n_; }
  std::size_t n_edges() const { return edges_.size(); }
  const std::vector<Dyad>& edges() const { return edges_; }
  const std::vector<NodeId>& neighbors(NodeId i) const { return adj_[static_cast<std::size_t>(i)]; }
  std::size_t degree(NodeId i) const { return adj_[static_cast<std::size_t>(i)].size(); }

  bool has_edge(NodeId a, NodeId b) const {
    if (a == b) return false;
    if (!dense_.empty()) return dense_[static_cast<std::size_t>(a) * n_ + static_cast<std::size_t>(b)] != 0;
    const auto& nb = adj_[static_cast<std::size_t>(a)];
    return std::binary_search(nb.begin(), nb.end(), b);
  }

  double density() const { return n_ < 2 ? 0.0 : static_cast<double>(edges_.size()) / static_cast<double>(n_dyads(n_)); }

  /// Original identifiers of each node (1-based file ids unless remapped on load).
  const std::vector<std::int64_t>& original_ids() const { return original_ids_; }
  void set_original_ids(std::vector<std::int64_t> ids) {
    if (ids.size() != n_) throw ValidationError("original id table size mismatch");
    original_ids_ = std::move(ids);
  }

  /// Subgraph induced by `nodes` (in the given order).
  Graph induced(const std::vector<NodeId>& nodes) const {
    std::vector<NodeId> pos(n_, -1);
    for (std::size_t k = 0; k < nodes.size(); ++k) pos[static_cast<std::size_t>(nodes[k])] = static_cast<NodeId>(k);
    std::vector<std::pair<NodeId, NodeId>> pairs;
    for (std::size_t k = 0; k < nodes.size(); ++k)
      for (NodeId j : neighbors(nodes[k])) {
        const NodeId pj = pos[static_cast<std::size_t>(j)];
        if (pj > static_cast<NodeId>(k)) pairs.emplace_back(static_cast<NodeId>(k), pj);
      }
    Graph g(nodes.size(), pairs);
    std::vector<std::int64_t> ids;
    ids.reserve(nodes.size());
    for (NodeId v : nodes) ids.push_back(original_ids_[static_cast<std::size_t>(v)]);
    g.set_original_ids(std::move(ids));
    return g;
  }

  friend bool operator==(const Graph& a, const Graph& b) { return a.n_ == b.n_ && a.edges_ == b.edges_; }

 private:
  void build_index() {
    adj_.assign(n_, {});
    for (auto d : edges_) {
      adj_[static_cast<std::size_t>(d.i)].push_back(d.j);
      adj_[static_cast<std::size_t>(d.j)].push_back(d.i);
    }
    for (auto& nb : adj_) std::sort(nb.begin(), nb.end());
    if (n_ <= kDenseLimit) {
      dense_.assign(n_ * n_, 0);
      for (auto d : edges_) {
        dense_[static_cast<std::size_t>(d.i) * n_ + static_cast<std::size_t>(d.j)] = 1;
        dense_[static_cast<std::size_t>(d.j) * n_ + static_cast<std::size_t>(d.i)] = 1;
      }
    }
    original_ids_.resize(n_);
    std::iota(original_ids_.begin(), original_ids_.end(), std::int64_t{1});
  }

  std::size_t n_ = 0;
  std::vector<Dyad> edges_;
  std::vector<std::vector<NodeId>> adj_;
  std::vector<std::uint8_t> dense_;
  std::vector<std::int64_t> original_ids_;
};

// ---------------------------------------------------------------------------

/// Node-to-block map. Labels are 0..K-1 in memory (1..K in files).
struct BlockAssignment {
  std::vector<int> labels;
  int n_blocks = 0;

  BlockAssignment() = default;
  BlockAssignment(std::vector<int> l, int k) : labels(std::move(l)), n_blocks(k) {
    for (int v : labels)
      if (v < 0 || v >= n_blocks) throw ValidationError("block label out of range");
  }

  std::size_t size() const { return labels.size(); }
  int operator[](std::size_t i) const { return labels[i]; }

  std::vector<int> counts() const {
    std::vector<int> c(static_cast<std::size_t>(n_blocks), 0);
    for (int v : labels) ++c[static_cast<std::size_t>(v)];
    return c;
  }

  std::vector<std::vector<NodeId>> members() const {
    std::vector<std::vector<NodeId>> m(static_cast<std::size_t>(n_blocks));
    for (std::size_t i = 0; i < labels.size(); ++i) m[static_cast<std::size_t>(labels[i])].push_back(static_cast<NodeId>(i));
    return m;
  }

  /// First occurrences in increasing label order, empty labels dropped.
  BlockAssignment canonical() const {
    std::vector<int> remap(static_cast<std::size_t>(n_blocks), -1);
    std::vector<int> out(labels.size());
    int next = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      int& r = remap[static_cast<std::size_t>(labels[i])];
      if (r < 0) r = next++;
      out[i] = r;
    }
    return BlockAssignment(std::move(out), next);
  }

  bool is_canonical() const {
    int seen = -1;
    for (int v : labels) {
      if (v > seen + 1) return false;
      seen = std::max(seen, v);
    }
    return seen + 1 == n_blocks;
  }

  friend bool operator==(const BlockAssignment&, const BlockAssignment&) = default;
};

/// Canonical assignment from arbitrary integer labels.
inline BlockAssignment canonical_from_labels(const std::vector<int>& raw) {
  std::map<int, int> remap;
  std::vector<int> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    auto [it, inserted] = remap.try_emplace(raw[i], static_cast<int>(remap.size()));
    out[i] = it->second;
  }
  return BlockAssignment(std::move(out), static_cast<int>(remap.size()));
}

// ---------------------------------------------------------------------------

struct DyadMask {
  std::vector<Dyad> held_out;  // sorted
  int fold_id = 0;

  bool contains(Dyad d) const { return std::binary_search(held_out.begin(), held_out.end(), d); }
};

/// Constant-time membership lookups for a mask on an n-node graph.
class MaskIndex {
 public:
  MaskIndex() = default;
  MaskIndex(std::size_t n, const DyadMask* mask) : n_(n) {
    partners_.assign(n, {});
    if (mask == nullptr) return;
    if (n <= Graph::kDenseLimit) dense_.assign(n * n, 0);
    for (auto d : mask->held_out) {
      partners_[static_cast<std::size_t>(d.i)].push_back(d.j);
      partners_[static_cast<std::size_t>(d.j)].push_back(d.i);
      if (!dense_.empty()) {
        dense_[static_cast<std::size_t>(d.i) * n + static_cast<std::size_t>(d.j)] = 1;
        dense_[static_cast<std::size_t>(d.j) * n + static_cast<std::size_t>(d.i)] = 1;
      } else {
        sparse_.insert(key(d));
      }
    }
  }

  bool held_out(NodeId a, NodeId b) const {
    if (!dense_.empty()) return dense_[static_cast<std::size_t>(a) * n_ + static_cast<std::size_t>(b)] != 0;
    if (sparse_.empty()) return false;
    return sparse_.count(key(make_dyad(a, b))) > 0;
  }
  bool observed(NodeId a, NodeId b) const { return !held_out(a, b); }
  const std::vector<NodeId>& partners(NodeId i) const { return partners_[static_cast<std::size_t>(i)]; }

 private:
  static std::uint64_t key(Dyad d) { return (static_cast<std::uint64_t>(d.i) << 32) | static_cast<std::uint32_t>(d.j); }
  std::size_t n_ = 0;
  std::vector<std::uint8_t> dense_;
  std::unordered_set<std::uint64_t> sparse_;
  std::vector<std::vector<NodeId>> partners_;
};

struct DegreeCount {
  std::size_t observed_edges = 0;
  std::size_t observed_dyads = 0;

  double fraction() const {
    return observed_dyads == 0 ? 0.0 : static_cast<double>(observed_edges) / static_cast<double>(observed_dyads);
  }
  friend bool operator==(const DegreeCount&, const DegreeCount&) = default;
};

inline DegreeCount degree(const Graph& g, NodeId node, const DyadMask* mask = nullptr) {
  if (node < 0 || static_cast<std::size_t>(node) >= g.n_nodes()) throw ValidationError("node out of range");
  DegreeCount out{g.degree(node), g.n_nodes() - 1};
  if (mask != nullptr) {
    for (auto d : mask->held_out) {
      if (d.i != node && d.j != node) continue;
      --out.observed_dyads;
      if (g.has_edge(d.i, d.j)) --out.observed_edges;
    }
  }
  return out;
}

/// Observed-edge fraction for every node, in one pass over the mask.
inline std::vector<double> observed_degree_fractions(const Graph& g, const DyadMask* mask) {
  const std::size_t n = g.n_nodes();
  std::vector<std::size_t> edges(n), dyads(n, n - 1);
  for (std::size_t i = 0; i < n; ++i) edges[i] = g.degree(static_cast<NodeId>(i));
  if (mask != nullptr)
    for (auto d : mask->held_out) {
      --dyads[static_cast<std::size_t>(d.i)];
      --dyads[static_cast<std::size_t>(d.j)];
      if (g.has_edge(d.i, d.j)) {
        --edges[static_cast<std::size_t>(d.i)];
        --edges[static_cast<std::size_t>(d.j)];
      }
    }
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    out[i] = dyads[i] == 0 ? 0.0 : static_cast<double>(edges[i]) / static_cast<double>(dyads[i]);
  return out;
}

/// Random partition of all dyads of an n-node graph into balanced folds.
inline std::vector<DyadMask> make_folds(std::size_t n_nodes, int n_folds, std::uint64_t seed) {
  if (n_folds < 2) throw ValidationError("need at least two folds");
  const std::size_t total = n_dyads(n_nodes);
  if (static_cast<std::size_t>(n_folds) > total) throw ValidationError("more folds than dyads");
  std::vector<Dyad> all;
  all.reserve(total);
  for (NodeId i = 0; i < static_cast<NodeId>(n_nodes); ++i)
    for (NodeId j = i + 1; j < static_cast<NodeId>(n_nodes); ++j) all.push_back({i, j});
  Rng rng = make_rng(seed, "folds");
  std::shuffle(all.begin(), all.end(), rng);
  std::vector<DyadMask> folds(static_cast<std::size_t>(n_folds));
  for (std::size_t k = 0; k < all.size(); ++k) folds[k % folds.size()].held_out.push_back(all[k]);
  for (std::size_t f = 0; f < folds.size(); ++f) {
    std::sort(folds[f].held_out.begin(), folds[f].held_out.end());
    folds[f].fold_id = static_cast<int>(f);
  }
  return folds;
}

inline std::vector<DyadMask> make_folds(const Graph& g, int n_folds, std::uint64_t seed) {
  return make_folds(g.n_nodes(), n_folds, seed);
}

/// Random held-out set of round(fraction * dyads) dyads.
inline DyadMask make_holdout(std::size_t n_nodes, double fraction, std::uint64_t seed) {
  const std::size_t total = n_dyads(n_nodes);
  const auto count = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(total)));
  std::vector<std::size_t> idx(total);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng = make_rng(seed, "holdout");
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  DyadMask mask;
  std::size_t pos = 0;
  std::size_t k = 0;
  for (NodeId i = 0; i < static_cast<NodeId>(n_nodes) && pos < idx.size(); ++i)
    for (NodeId j = i + 1; j < static_cast<NodeId>(n_nodes) && pos < idx.size(); ++j, ++k)
      if (idx[pos] == k) {
        mask.held_out.push_back({i, j});
        ++pos;
      }
  return mask;
}

// ---------------------------------------------------------------------------

struct BlockView {
  std::vector<std::vector<Dyad>> within;          // per block k
  std::map<std::pair<int, int>, std::vector<Dyad>> between;  // key k < l
};

inline BlockView block_view(const Graph& g, const BlockAssignment& gamma) {
  if (gamma.size() != g.n_nodes()) throw ValidationError("assignment does not cover the graph");
  BlockView v;
  v.within.resize(static_cast<std::size_t>(gamma.n_blocks));
  const auto n = static_cast<NodeId>(g.n_nodes());
  for (NodeId i = 0; i < n; ++i)
    for (NodeId j = i + 1; j < n; ++j) {
      const int a = gamma[static_cast<std::size_t>(i)];
      const int b = gamma[static_cast<std::size_t>(j)];
      if (a == b)
        v.within[static_cast<std::size_t>(a)].push_back({i, j});
      else
        v.between[{std::min(a, b), std::max(a, b)}].push_back({i, j});
    }
  return v;
}

// ---------------------------------------------------------------------------
// File formats.

enum class GraphFormat { EdgeList, DenseMatrix };

struct LoadOptions {
  GraphFormat format = GraphFormat::EdgeList;
  bool drop_isolated = false;
};

/// Removes zero-degree nodes, keeping original ids.
inline Graph drop_isolated_nodes(const Graph& g) {
  std::vector<NodeId> keep;
  for (NodeId i = 0; i < static_cast<NodeId>(g.n_nodes()); ++i)
    if (g.degree(i) > 0) keep.push_back(i);
  if (keep.size() != g.n_nodes())
    warn("dropped " + std::to_string(g.n_nodes() - keep.size()) + " zero-degree nodes");
  return g.induced(keep);
}

namespace detail {

inline std::string strip_comment(const std::string& line) {
  const auto pos = line.find('#');
  return pos == std::string::npos ? line : line.substr(0, pos);
}

inline bool blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c) != 0; });
}

}  // namespace detail

/// Whitespace-separated pairs of 1-based ids, `#` comments. A "# nodes: N"
/// header fixes the node count and keeps ids literal; otherwise distinct ids
/// are remapped in ascending order and kept as original ids.
inline Graph parse_edgelist(std::istream& in) {
  std::vector<std::pair<std::int64_t, std::int64_t>> raw;
  std::optional<std::size_t> declared;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto pos = line.find("# nodes:"); pos != std::string::npos) declared = std::stoull(line.substr(pos + 8));
    const std::string body = detail::strip_comment(line);
    if (detail::blank(body)) continue;
    std::istringstream ss(body);
    std::int64_t a = 0, b = 0;
    std::string extra;
    if (!(ss >> a >> b) || (ss >> extra)) throw ParseError("expected two node ids", lineno);
    if (a < 1 || b < 1) throw ParseError("node ids must be positive", lineno);
    if (a == b) throw ValidationError("self-loop on node " + std::to_string(a) + " (line " + std::to_string(lineno) + ")");
    raw.emplace_back(a, b);
  }
  std::vector<std::pair<NodeId, NodeId>> pairs;
  pairs.reserve(raw.size());
  if (declared) {
    for (auto [a, b] : raw) {
      if (static_cast<std::size_t>(std::max(a, b)) > *declared) throw ValidationError("node id exceeds declared node count");
      pairs.emplace_back(static_cast<NodeId>(a - 1), static_cast<NodeId>(b - 1));
    }
    return Graph(*declared, pairs);
  }
  std::vector<std::int64_t> ids;
  for (auto [a, b] : raw) {
    ids.push_back(a);
    ids.push_back(b);
  }
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  auto index = [&](std::int64_t v) {
    return static_cast<NodeId>(std::lower_bound(ids.begin(), ids.end(), v) - ids.begin());
  };
  for (auto [a, b] : raw) pairs.emplace_back(index(a), index(b));
  Graph g(ids.size(), pairs);
  g.set_original_ids(ids);
  return g;
}

/// Square CSV of 0/1 entries; must be symmetric with zero diagonal.
inline Graph parse_dense_csv(std::istream& in, bool allow_asymmetric = false) {
  std::vector<std::vector<int>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::blank(line)) continue;
    std::vector<int> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      std::istringstream cs(cell);
      double v = 0;
      if (!(cs >> v)) throw ParseError("non-numeric matrix entry", lineno);
      if (v != 0.0 && v != 1.0) {
        if (!allow_asymmetric) throw ParseError("matrix entries must be 0 or 1", lineno);
        v = v > 0 ? 1.0 : 0.0;
      }
      row.push_back(static_cast<int>(v));
    }
    rows.push_back(std::move(row));
  }
  const std::size_t n = rows.size();
  for (std::size_t i = 0; i < n; ++i)
    if (rows[i].size() != n) throw ParseError("matrix is not square", i + 1);
  std::vector<std::pair<NodeId, NodeId>> pairs;
  for (std::size_t i = 0; i < n; ++i) {
    if (rows[i][i] != 0) {
      if (!allow_asymmetric) throw ValidationError("self-loop on node " + std::to_string(i + 1));
    }
    for (std::size_t j = i + 1; j < n; ++j) {
      if (rows[i][j] != rows[j][i] && !allow_asymmetric)
        throw ValidationError("asymmetric matrix at (" + std::to_string(i + 1) + "," + std::to_string(j + 1) + ")");
      if (rows[i][j] != 0 || rows[j][i] != 0) pairs.emplace_back(static_cast<NodeId>(i), static_cast<NodeId>(j));
    }
  }
  return Graph(n, pairs);
}

inline Graph load_graph(const std::string& path, const LoadOptions& opts = {}) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  Graph g = opts.format == GraphFormat::EdgeList ? parse_edgelist(in) : parse_dense_csv(in);
  return opts.drop_isolated ? drop_isolated_nodes(g) : g;
}

inline void write_edgelist(std::ostream& out, const Graph& g) {
  out << "# nodes: " << g.n_nodes() << '\n';
  for (auto d : g.edges()) out << d.i + 1 << ' ' << d.j + 1 << '\n';
}

inline void save_edgelist(const std::string& path, const Graph& g) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  write_edgelist(out, g);
}

inline void write_masks_csv(std::ostream& out, const std::vector<DyadMask>& masks) {
  out << "i,j,fold\n";
  for (const auto& m : masks)
    for (auto d : m.held_out) out << d.i + 1 << ',' << d.j + 1 << ',' << m.fold_id << '\n';
}

inline std::vector<DyadMask> parse_masks_csv(std::istream& in) {
  std::map<int, DyadMask> by_fold;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::blank(line) || line.rfind("i,", 0) == 0) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ss(line);
    long long a = 0, b = 0;
    int f = 0;
    if (!(ss >> a >> b >> f)) throw ParseError("expected i,j,fold", lineno);
    if (a < 1 || b < 1 || a == b) throw ParseError("invalid dyad", lineno);
    auto& m = by_fold[f];
    m.fold_id = f;
    m.held_out.push_back(make_dyad(static_cast<NodeId>(a - 1), static_cast<NodeId>(b - 1)));
  }
  std::vector<DyadMask> out;
  for (auto& [f, m] : by_fold) {
    std::sort(m.held_out.begin(), m.held_out.end());
    m.held_out.erase(std::unique(m.held_out.begin(), m.held_out.end()), m.held_out.end());
    out.push_back(std::move(m));
  }
  return out;
}

inline void write_assignment_csv(std::ostream& out, const BlockAssignment& gamma) {
  out << "node,block\n";
  for (std::size_t i = 0; i < gamma.size(); ++i) out << i + 1 << ',' << gamma[i] + 1 << '\n';
}

inline BlockAssignment parse_assignment_csv(std::istream& in) {
  std::vector<std::pair<long long, int>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::blank(line) || line.rfind("node", 0) == 0) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ss(line);
    long long node = 0;
    int block = 0;
    if (!(ss >> node >> block) || node < 1 || block < 1) throw ParseError("expected node,block", lineno);
    rows.emplace_back(node, block);
  }
  std::sort(rows.begin(), rows.end());
  std::vector<int> labels;
  int k = 0;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].first != static_cast<long long>(r + 1)) throw ValidationError("assignment nodes must be 1..N");
    labels.push_back(rows[r].second - 1);
    k = std::max(k, rows[r].second);
  }
  return BlockAssignment(std::move(labels), k);
}

}  // namespace lssbm
