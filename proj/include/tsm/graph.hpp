#pragma once

#include <cstddef>
#include <fstream>
#include <string>
#include <vector>

#include "tsm/errors.hpp"
#include "tsm/instance.hpp"

namespace tsm {

// Bipartite set-cover view of an instance. U-nodes are tests; V-nodes are
// statements followed by faults: statement p -> V-index p, fault k ->
// V-index num_stmts + k. Edges are unweighted and stored both ways.
// Immutable after build.
struct BipartiteGraph {
  std::size_t u_size = 0;
  std::size_t v_size = 0;
  std::size_t num_stmts = 0;   // V-index split point
  std::size_t num_faults = 0;
  std::size_t edge_count = 0;
  std::vector<std::vector<std::size_t>> adj;    // u -> sorted v list
  std::vector<std::vector<std::size_t>> radj;   // v -> sorted u list

  bool is_stmt_node(std::size_t v) const { return v < num_stmts; }
  std::size_t stmt_to_v(std::size_t p) const { return p; }
  std::size_t fault_to_v(std::size_t k) const { return num_stmts + k; }
};

inline BipartiteGraph build_graph(const TsmInstance& inst) {
  BipartiteGraph g;
  g.u_size = inst.num_tests();
  g.num_stmts = inst.num_stmts;
  g.num_faults = inst.num_faults;
  g.v_size = inst.num_stmts + inst.num_faults;
  g.adj.resize(g.u_size);
  g.radj.resize(g.v_size);
  for (std::size_t t = 0; t < g.u_size; ++t) {
    for (std::size_t p = 0; p < inst.num_stmts; ++p)
      if (inst.stmt_at(t, p)) g.adj[t].push_back(g.stmt_to_v(p));
    for (std::size_t k = 0; k < inst.num_faults; ++k)
      if (inst.fault_at(t, k)) g.adj[t].push_back(g.fault_to_v(k));
    for (std::size_t v : g.adj[t]) g.radj[v].push_back(t);
    g.edge_count += g.adj[t].size();
  }
  return g;
}

inline const std::vector<std::size_t>& neighbors(const BipartiteGraph& g, std::size_t u) {
  if (u >= g.u_size) throw ContractViolation("neighbors: U-index " + std::to_string(u) + " out of range");
  return g.adj[u];
}

// One `u v` pair per line, for external inspection.
inline void export_edge_list(const BipartiteGraph& g, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write edge list: " + path);
  for (std::size_t u = 0; u < g.u_size; ++u)
    for (std::size_t v : g.adj[u]) out << u << ' ' << v << '\n';
}

}  // namespace tsm
