#pragma once

// Loader for the Karnataka village household networks.
//
// Expected layout (searched recursively under the data directory): one
// adjacency matrix per relation and village named
//   adj_<relation>_HH_vilno_<village>.csv
// with comma-separated 0/1 entries and no header, as distributed in the
// "Adjacency Matrices" folder of the public archive. The relation "visit"
// is the union of "visitcome" and "visitgo". Matrices are symmetrized and
// zero-degree households dropped.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "lssbm/common.hpp"
#include "lssbm/graph.hpp"

namespace lssbm {

inline constexpr const char* kKarnatakaUrl = "https://dataverse.harvard.edu/dataset.xhtml?persistentId=hdl:1902.1/21538";

inline const std::vector<std::string>& karnataka_relations() {
  static const std::vector<std::string> names{
      "borrowmoney", "giveadvice", "helpdecision", "keroricecome", "keroricego", "lendmoney", "medic",
      "nonrel",      "rel",        "templecompany", "visitcome",   "visitgo",    "visit",     "allVillageRelationships"};
  return names;
}

inline std::vector<std::string> relation_components(const std::string& relation) {
  if (relation == "visit") return {"visitcome", "visitgo"};
  return {relation};
}

/// All adjacency files under `dir`, keyed by (relation, village).
inline std::map<std::pair<std::string, int>, std::filesystem::path> find_karnataka_files(const std::string& dir) {
  namespace fs = std::filesystem;
  std::map<std::pair<std::string, int>, fs::path> out;
  if (!fs::is_directory(dir))
    throw Error("Karnataka data directory '" + dir + "' not found; download the archive from " + kKarnatakaUrl);
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    const std::string prefix = "adj_", marker = "_HH_vilno_", suffix = ".csv";
    if (name.rfind(prefix, 0) != 0 || name.size() <= suffix.size() ||
        name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0)
      continue;
    const auto pos = name.find(marker);
    if (pos == std::string::npos) continue;
    const std::string rel = name.substr(prefix.size(), pos - prefix.size());
    const std::string num = name.substr(pos + marker.size(), name.size() - suffix.size() - pos - marker.size());
    try {
      std::size_t used = 0;
      const int v = std::stoi(num, &used);
      if (used == num.size()) out[{rel, v}] = entry.path();
    } catch (const std::exception&) {
    }
  }
  return out;
}

/// Undirected edges (i < j) of a square 0/1 CSV matrix; any nonzero entry in
/// either direction counts and the diagonal is ignored. Returns the order.
inline std::size_t read_household_matrix(const std::filesystem::path& path, std::set<std::pair<NodeId, NodeId>>& edges) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  std::string line;
  std::size_t row = 0, width = 0, line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::istringstream ls(line);
    std::string tok;
    std::size_t col = 0;
    while (std::getline(ls, tok, ',')) {
      double v = 0.0;
      try {
        v = std::stod(tok);
      } catch (const std::exception&) {
        throw ParseError("non-numeric entry in " + path.string(), line_no);
      }
      if (v != 0.0 && col != row)
        edges.insert({static_cast<NodeId>(std::min(row, col)), static_cast<NodeId>(std::max(row, col))});
      ++col;
    }
    if (row == 0) width = col;
    else if (col != width) throw ParseError("ragged adjacency matrix in " + path.string(), line_no);
    ++row;
  }
  if (row != width) throw ParseError("adjacency matrix in " + path.string() + " is not square");
  return row;
}

struct KarnatakaGraph {
  Graph graph;
  std::vector<int> village;  // per retained node
};

/// One village (or every village found when `village` is 0) for a relation.
/// Villages are combined as disjoint components.
inline KarnatakaGraph load_karnataka(const std::string& dir, int village, const std::string& relation) {
  const auto& known = karnataka_relations();
  if (std::find(known.begin(), known.end(), relation) == known.end()) {
    std::string list;
    for (const auto& r : known) list += (list.empty() ? "" : ", ") + r;
    throw ValidationError("unknown relation '" + relation + "'; available: " + list);
  }
  const auto files = find_karnataka_files(dir);
  const auto parts = relation_components(relation);
  std::set<int> villages;
  for (const auto& [key, path] : files)
    if (key.first == parts.front() && (village == 0 || key.second == village)) villages.insert(key.second);
  if (villages.empty())
    throw Error("no adjacency files 'adj_" + parts.front() + "_HH_vilno_" + (village ? std::to_string(village) : "*") +
                ".csv' under '" + dir + "'; download the archive from " + kKarnatakaUrl);
  std::vector<std::pair<NodeId, NodeId>> all_edges;
  std::vector<int> node_village;
  std::vector<std::int64_t> ids;
  for (int v : villages) {
    std::set<std::pair<NodeId, NodeId>> edges;
    std::size_t order = 0;
    for (const auto& rel : parts) {
      const auto it = files.find({rel, v});
      if (it == files.end()) throw Error("missing adjacency file for relation '" + rel + "', village " + std::to_string(v));
      const std::size_t o = read_household_matrix(it->second, edges);
      if (order != 0 && o != order) throw ValidationError("relation matrices for village " + std::to_string(v) + " differ in size");
      order = o;
    }
    std::vector<char> used(order, 0);
    for (auto [a, b] : edges) used[static_cast<std::size_t>(a)] = used[static_cast<std::size_t>(b)] = 1;
    std::vector<NodeId> remap(order, -1);
    for (std::size_t i = 0; i < order; ++i)
      if (used[i]) {
        remap[i] = static_cast<NodeId>(node_village.size());
        node_village.push_back(v);
        // combined villages: village * 10000 + household
        ids.push_back(static_cast<std::int64_t>(i + 1) + (village == 0 ? 10000LL * v : 0LL));
      }
    for (auto [a, b] : edges) all_edges.emplace_back(remap[static_cast<std::size_t>(a)], remap[static_cast<std::size_t>(b)]);
  }
  KarnatakaGraph out{Graph(node_village.size(), all_edges), node_village};
  out.graph.set_original_ids(ids);
  return out;
}

}  // namespace lssbm
