#pragma once

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "mls2s/csv.hpp"
#include "mls2s/tensor.hpp"

namespace mls2s {

/// Undirected, unweighted road graph. Row i of every node-indexed matrix
/// corresponds to node_ids[i].
class RoadGraph {
 public:
  RoadGraph() = default;

  RoadGraph(std::vector<std::string> node_ids, Tensor adjacency)
      : node_ids_(std::move(node_ids)), adjacency_(std::move(adjacency)) {
    validate();
  }

  std::size_t size() const { return node_ids_.size(); }
  const std::vector<std::string>& node_ids() const { return node_ids_; }
  const Tensor& adjacency() const { return adjacency_; }
  bool connected(std::size_t i, std::size_t j) const { return adjacency_(i, j) != 0.0; }

  std::size_t degree(std::size_t i) const {
    std::size_t d = 0;
    for (std::size_t j = 0; j < size(); ++j) d += connected(i, j) ? 1 : 0;
    return d;
  }

  std::size_t edge_count() const {
    std::size_t e = 0;
    for (std::size_t i = 0; i < size(); ++i) e += degree(i);
    return e / 2;
  }

  /// Induced subgraph on `keep` (indices into this graph, in the given order).
  RoadGraph subgraph(const std::vector<std::size_t>& keep) const {
    std::vector<std::string> ids;
    Tensor a(keep.size(), keep.size());
    for (std::size_t i = 0; i < keep.size(); ++i) {
      ids.push_back(node_ids_.at(keep[i]));
      for (std::size_t j = 0; j < keep.size(); ++j) a(i, j) = adjacency_(keep[i], keep[j]);
    }
    return RoadGraph(std::move(ids), std::move(a));
  }

 private:
  void validate() const {
    const std::size_t n = node_ids_.size();
    if (adjacency_.rows() != n || adjacency_.cols() != n) {
      throw ShapeError("adjacency " + adjacency_.shape_string() + " does not match " +
                       std::to_string(n) + " node ids");
    }
    std::unordered_set<std::string> seen;
    for (const auto& id : node_ids_) {
      if (!seen.insert(id).second) throw InputError("duplicate node id '" + id + "'");
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (adjacency_(i, i) != 0.0) throw InputError("adjacency has a self-loop at " + node_ids_[i]);
      for (std::size_t j = 0; j < n; ++j) {
        const double v = adjacency_(i, j);
        if (v != 0.0 && v != 1.0) throw InputError("adjacency entries must be 0 or 1");
        if (v != adjacency_(j, i)) throw InputError("adjacency is not symmetric");
      }
    }
  }

  std::vector<std::string> node_ids_;
  Tensor adjacency_;
};

/// Symmetrically normalized propagation operator with self loops.
struct PropagationMatrix {
  Tensor p;
  std::size_t size() const { return p.rows(); }
};

struct RoadSegment {
  std::string link_id;
  std::string origin_id;
  std::string destination_id;
};

/// Two segments are connected when they share any endpoint, in either role.
inline RoadGraph build_adjacency_from_segments(const std::vector<RoadSegment>& segments) {
  const std::size_t n = segments.size();
  std::vector<std::string> ids;
  ids.reserve(n);
  std::unordered_set<std::string> seen;
  for (const auto& s : segments) {
    if (!seen.insert(s.link_id).second) throw InputError("duplicate link_id '" + s.link_id + "'");
    if (s.origin_id.empty() || s.destination_id.empty()) {
      throw InputError("segment '" + s.link_id + "' has an empty endpoint id");
    }
    ids.push_back(s.link_id);
  }
  // endpoint id -> segments touching it
  std::unordered_map<std::string, std::vector<std::size_t>> touching;
  for (std::size_t i = 0; i < n; ++i) {
    touching[segments[i].origin_id].push_back(i);
    if (segments[i].destination_id != segments[i].origin_id) {
      touching[segments[i].destination_id].push_back(i);
    }
  }
  Tensor a(n, n);
  for (const auto& [endpoint, list] : touching) {
    for (std::size_t x : list)
      for (std::size_t y : list)
        if (x != y) a(x, y) = 1.0;
  }
  return RoadGraph(std::move(ids), std::move(a));
}

/// P = D^-1/2 (A + I) D^-1/2 with D the degree matrix of A + I.
inline PropagationMatrix normalize_propagation(const RoadGraph& g) {
  const std::size_t n = g.size();
  std::vector<double> inv_sqrt(n);
  for (std::size_t i = 0; i < n; ++i) {
    inv_sqrt[i] = 1.0 / std::sqrt(static_cast<double>(g.degree(i) + 1));
  }
  Tensor p(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double a_hat = (i == j) ? 1.0 : g.adjacency()(i, j);
      if (a_hat != 0.0) p(i, j) = inv_sqrt[i] * a_hat * inv_sqrt[j];
    }
  }
  return PropagationMatrix{std::move(p)};
}

inline std::vector<std::string> default_node_ids(std::size_t n) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back("n" + std::to_string(i));
  return ids;
}

inline RoadGraph ring_graph(std::size_t n) {
  Tensor a(n, n);
  if (n >= 2) {
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = (i + 1) % n;
      if (i != j) a(i, j) = a(j, i) = 1.0;
    }
  }
  return RoadGraph(default_node_ids(n), std::move(a));
}

inline RoadGraph path_graph(std::size_t n) {
  Tensor a(n, n);
  for (std::size_t i = 0; i + 1 < n; ++i) a(i, i + 1) = a(i + 1, i) = 1.0;
  return RoadGraph(default_node_ids(n), std::move(a));
}

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

inline std::vector<std::string> load_node_order(const std::filesystem::path& path) {
  std::vector<std::string> ids;
  for (const auto& line : csv::read_lines(path)) ids.emplace_back(csv::trim(line));
  if (ids.empty()) throw InputError("node order file '" + path.string() + "' is empty");
  return ids;
}

/// Edge list (`src_id,dst_id` per line) plus node-order file. Edges are
/// symmetrized; an optional `src_id,dst_id` header line is skipped.
inline RoadGraph load_edge_list(const std::filesystem::path& edges_path,
                                const std::filesystem::path& nodes_path) {
  auto ids = load_node_order(nodes_path);
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < ids.size(); ++i) index.emplace(ids[i], i);
  Tensor a(ids.size(), ids.size());
  const auto lines = csv::read_lines(edges_path);
  for (std::size_t k = 0; k < lines.size(); ++k) {
    const auto f = csv::split(lines[k]);
    if (f.size() != 2) {
      throw InputError(edges_path.string() + ":" + std::to_string(k + 1) +
                       ": expected 'src_id,dst_id'");
    }
    if (k == 0 && f[0] == "src_id" && f[1] == "dst_id") continue;
    auto si = index.find(std::string(f[0]));
    auto di = index.find(std::string(f[1]));
    if (si == index.end() || di == index.end()) {
      throw InputError(edges_path.string() + ":" + std::to_string(k + 1) +
                       ": edge references a node missing from the node order file");
    }
    if (si->second == di->second) continue;
    a(si->second, di->second) = a(di->second, si->second) = 1.0;
  }
  return RoadGraph(std::move(ids), std::move(a));
}

/// Dense 0/1 matrix: header row of node ids, then n rows of n values.
inline RoadGraph load_dense_adjacency(const std::filesystem::path& path) {
  const auto lines = csv::read_lines(path);
  if (lines.empty()) throw InputError("adjacency file '" + path.string() + "' is empty");
  std::vector<std::string> ids;
  for (auto f : csv::split(lines[0])) ids.emplace_back(f);
  const std::size_t n = ids.size();
  if (lines.size() != n + 1) {
    throw InputError(path.string() + ": expected " + std::to_string(n) + " matrix rows, got " +
                     std::to_string(lines.size() - 1));
  }
  Tensor a(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto f = csv::split(lines[i + 1]);
    if (f.size() != n) {
      throw InputError(path.string() + ":" + std::to_string(i + 2) + ": expected " +
                       std::to_string(n) + " columns");
    }
    for (std::size_t j = 0; j < n; ++j) a(i, j) = csv::parse_double(f[j], path.string());
  }
  return RoadGraph(std::move(ids), std::move(a));
}

/// Writes each undirected edge once (i < j in node order) plus the node order.
inline void save_edge_list(const RoadGraph& g, const std::filesystem::path& edges_path,
                           const std::filesystem::path& nodes_path) {
  auto nodes = csv::open_out(nodes_path);
  for (const auto& id : g.node_ids()) nodes << id << '\n';
  auto edges = csv::open_out(edges_path);
  edges << "src_id,dst_id\n";
  for (std::size_t i = 0; i < g.size(); ++i)
    for (std::size_t j = i + 1; j < g.size(); ++j)
      if (g.connected(i, j)) edges << g.node_ids()[i] << ',' << g.node_ids()[j] << '\n';
}

inline void save_dense_adjacency(const RoadGraph& g, const std::filesystem::path& path) {
  auto out = csv::open_out(path);
  for (std::size_t i = 0; i < g.size(); ++i) out << (i ? "," : "") << g.node_ids()[i];
  out << '\n';
  for (std::size_t i = 0; i < g.size(); ++i) {
    for (std::size_t j = 0; j < g.size(); ++j) out << (j ? "," : "") << (g.connected(i, j) ? 1 : 0);
    out << '\n';
  }
}

/// Edge list when a node-order file is given, dense matrix otherwise.
inline RoadGraph load_adjacency(const std::filesystem::path& adjacency_path,
                                const std::filesystem::path& nodes_path = {}) {
  if (!nodes_path.empty()) return load_edge_list(adjacency_path, nodes_path);
  return load_dense_adjacency(adjacency_path);
}

}  // namespace mls2s
