#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "tsm/bitset.hpp"
#include "tsm/embedding.hpp"
#include "tsm/errors.hpp"
#include "tsm/instance.hpp"

namespace tsm {

enum class ObjectiveKind { kTrip, kBicriteria };

inline const char* objective_kind_name(ObjectiveKind k) {
  return k == ObjectiveKind::kTrip ? "trip" : "bicriteria";
}

inline ObjectiveKind objective_kind_from_name(const std::string& s) {
  if (s == "trip") return ObjectiveKind::kTrip;
  if (s == "bicriteria") return ObjectiveKind::kBicriteria;
  throw ValidationError("unknown objective kind: " + s);
}

// A candidate reduced suite: one bit per test. The pair indicator
// y_ij used by the pairwise objective term is derived, never stored.
struct Selection {
  DynamicBitset bits;

  Selection() : bits(0) {}
  explicit Selection(std::size_t num_tests) : bits(num_tests) {}

  std::size_t universe() const { return bits.size(); }
  std::size_t count() const { return bits.count(); }
  bool contains(std::size_t i) const { return bits.test(i); }
  void add(std::size_t i) { bits.set(i); }
  void remove(std::size_t i) { bits.reset(i); }
  bool pair_selected(std::size_t i, std::size_t j) const { return bits.test(i) && bits.test(j); }
  std::vector<std::size_t> indices() const { return bits.to_indices(); }
  bool operator==(const Selection& o) const { return bits == o.bits; }
};

struct ObjectiveConfig {
  ObjectiveKind kind = ObjectiveKind::kTrip;
  SimilarityMatrix similarity;          // pairwise costs, kTrip only
  std::vector<double> fault_weights;    // per-test detection ratio, kBicriteria only
};

inline std::vector<double> fault_detection_weights(const TsmInstance& inst) {
  std::vector<double> w(inst.num_tests(), 0.0);
  if (inst.num_faults == 0) return w;
  for (std::size_t t = 0; t < inst.num_tests(); ++t) {
    std::size_t hits = 0;
    for (std::size_t k = 0; k < inst.num_faults; ++k) hits += inst.fault_at(t, k);
    w[t] = static_cast<double>(hits) / static_cast<double>(inst.num_faults);
  }
  return w;
}

inline ObjectiveConfig make_trip_config(SimilarityMatrix sim) {
  ObjectiveConfig cfg;
  cfg.kind = ObjectiveKind::kTrip;
  cfg.similarity = std::move(sim);
  return cfg;
}

inline ObjectiveConfig make_bicriteria_config(const TsmInstance& inst) {
  ObjectiveConfig cfg;
  cfg.kind = ObjectiveKind::kBicriteria;
  cfg.fault_weights = fault_detection_weights(inst);
  return cfg;
}

// Canonical objective evaluation: terms accumulated in ascending index
// order so every solver producing the same selection reports the same
// double. Trip: |sel| + sum of pairwise similarities inside the
// selection. Bicriteria: |sel| - sum of per-test fault weights.
inline double evaluate_objective(const Selection& sel, const ObjectiveConfig& cfg) {
  const auto idx = sel.indices();
  if (cfg.kind == ObjectiveKind::kTrip) {
    if (cfg.similarity.n != sel.universe())
      throw ContractViolation("objective config / selection size mismatch");
    double pair_cost = 0.0;
    for (std::size_t a = 0; a < idx.size(); ++a)
      for (std::size_t b = a + 1; b < idx.size(); ++b)
        pair_cost += cfg.similarity.at(idx[a], idx[b]);
    return static_cast<double>(idx.size()) + pair_cost;
  }
  if (cfg.fault_weights.size() != sel.universe())
    throw ContractViolation("objective config / selection size mismatch");
  double weight_sum = 0.0;
  for (std::size_t i : idx) weight_sum += cfg.fault_weights[i];
  return static_cast<double>(idx.size()) - weight_sum;
}

// Which columns a selection must cover to be feasible.
enum class ConstraintMode { kStatementsAndFaults, kStatementsOnly };

inline ConstraintMode constraint_mode_for(ObjectiveKind kind) {
  return kind == ObjectiveKind::kTrip ? ConstraintMode::kStatementsAndFaults
                                      : ConstraintMode::kStatementsOnly;
}

struct FeasibilityResult {
  bool feasible = false;
  std::vector<std::size_t> uncovered_stmts;
  std::vector<std::size_t> uncovered_faults;
};

inline FeasibilityResult is_feasible(const Selection& sel, const TsmInstance& inst,
                                     ConstraintMode mode) {
  FeasibilityResult res;
  const auto idx = sel.indices();
  for (std::size_t p = 0; p < inst.num_stmts; ++p) {
    bool hit = false;
    for (std::size_t t : idx) hit = hit || inst.stmt_at(t, p) != 0;
    if (!hit) res.uncovered_stmts.push_back(p);
  }
  if (mode == ConstraintMode::kStatementsAndFaults) {
    for (std::size_t k = 0; k < inst.num_faults; ++k) {
      bool hit = false;
      for (std::size_t t : idx) hit = hit || inst.fault_at(t, k) != 0;
      if (!hit) res.uncovered_faults.push_back(k);
    }
  }
  res.feasible = res.uncovered_stmts.empty() && res.uncovered_faults.empty();
  return res;
}

struct Solution {
  Selection selected;
  double objective = 0.0;
  ObjectiveKind kind = ObjectiveKind::kTrip;
  bool feasible = false;
  bool proven_optimal = false;
  bool fallback = false;  // solver failed; this is the backup selection
  std::string solver;
  std::uint64_t seed = 0;
  std::uint64_t nodes_explored = 0;
};

namespace detail {

// Per-test coverage over the constraint-relevant columns: statements
// followed by faults (graph V layout) or statements alone.
inline std::vector<DynamicBitset> coverage_sets(const TsmInstance& inst, ConstraintMode mode) {
  const bool with_faults = mode == ConstraintMode::kStatementsAndFaults;
  const std::size_t v = inst.num_stmts + (with_faults ? inst.num_faults : 0);
  std::vector<DynamicBitset> cov(inst.num_tests(), DynamicBitset(v));
  for (std::size_t t = 0; t < inst.num_tests(); ++t) {
    for (std::size_t p = 0; p < inst.num_stmts; ++p)
      if (inst.stmt_at(t, p)) cov[t].set(p);
    if (with_faults)
      for (std::size_t k = 0; k < inst.num_faults; ++k)
        if (inst.fault_at(t, k)) cov[t].set(inst.num_stmts + k);
  }
  return cov;
}

inline void require_coverable(const TsmInstance& inst, ConstraintMode mode) {
  ValidationReport rep = validate(inst);
  if (!rep.zero_stmt_columns.empty())
    throw InfeasibleInstanceError("statement column " + std::to_string(rep.zero_stmt_columns[0]) +
                                  " has no covering test");
  if (mode == ConstraintMode::kStatementsAndFaults && !rep.zero_fault_columns.empty())
    throw InfeasibleInstanceError("fault column " + std::to_string(rep.zero_fault_columns[0]) +
                                  " has no detecting test");
}

// Objectives this close are one equivalence class. Mathematically tied
// selections (a test whose fault weight is exactly 1 adds nothing, or
// duplicate-coverage tests) can evaluate a few ULPs apart depending on
// summation order; genuine gaps are either exactly zero or far larger
// (bicriteria values step in multiples of 1/|F|).
inline constexpr double kSolutionTieTol = 1e-9;

// Order on candidate solutions: objective up to kSolutionTieTol, then
// cardinality, then lexicographically smallest index set, so every
// exact solver converges to the same selection.
inline bool better_solution(double obj_a, const Selection& a, double obj_b, const Selection& b) {
  if (std::abs(obj_a - obj_b) > kSolutionTieTol) return obj_a < obj_b;
  if (a.count() != b.count()) return a.count() < b.count();
  return a.indices() < b.indices();
}

// Marginal objective cost of adding `t` to `sel_idx` (ascending order).
inline double marginal_cost(const ObjectiveConfig& cfg, const std::vector<std::size_t>& sel_idx,
                            std::size_t t) {
  if (cfg.kind == ObjectiveKind::kTrip) {
    double c = 1.0;
    for (std::size_t s : sel_idx) c += cfg.similarity.at(std::min(s, t), std::max(s, t));
    return c;
  }
  return 1.0 - cfg.fault_weights[t];
}

}  // namespace detail

// Greedy baseline: repeatedly pick the test with the best
// (new columns covered) - (marginal objective cost) score until every
// statement and fault column is covered. Feasible in both constraint
// modes since it covers the full column set. Ties go to the lowest index.
inline Solution solve_greedy(const TsmInstance& inst, const ObjectiveConfig& cfg) {
  detail::require_coverable(inst, ConstraintMode::kStatementsAndFaults);
  const auto cov = detail::coverage_sets(inst, ConstraintMode::kStatementsAndFaults);
  const std::size_t n = inst.num_tests();
  const std::size_t v = inst.num_stmts + inst.num_faults;

  Selection sel(n);
  std::vector<std::size_t> sel_idx;
  DynamicBitset covered(v);
  while (covered.count() < v) {
    std::size_t best = n;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < n; ++t) {
      if (sel.contains(t)) continue;
      std::size_t newly = 0;
      for (std::size_t w = 0; w < cov[t].words().size(); ++w)
        newly += static_cast<std::size_t>(std::popcount(cov[t].words()[w] & ~covered.words()[w]));
      if (newly == 0) continue;
      const double score = static_cast<double>(newly) - detail::marginal_cost(cfg, sel_idx, t);
      if (score > best_score) {
        best_score = score;
        best = t;
      }
    }
    if (best == n) throw SolverError("greedy: no test adds coverage but columns remain uncovered");
    sel.add(best);
    sel_idx.insert(std::lower_bound(sel_idx.begin(), sel_idx.end(), best), best);
    covered |= cov[best];
  }

  Solution sol;
  sol.selected = sel;
  sol.kind = cfg.kind;
  sol.objective = evaluate_objective(sel, cfg);
  sol.feasible = true;
  sol.solver = "greedy";
  return sol;
}

inline constexpr std::size_t kExhaustiveTestLimit = 22;

// Exact oracle by depth-first enumeration of all subsets with
// incremental coverage and objective bookkeeping. A node whose partial
// selection is already feasible records it and skips the subtree:
// every per-test marginal is >= 0, so supersets never win the
// (objective, cardinality, lexicographic) order.
inline Solution solve_exhaustive(const TsmInstance& inst, const ObjectiveConfig& cfg,
                                 std::size_t limit = kExhaustiveTestLimit) {
  const ConstraintMode mode = constraint_mode_for(cfg.kind);
  detail::require_coverable(inst, mode);
  const std::size_t n = inst.num_tests();
  if (n > limit)
    throw SolverError("exhaustive oracle limited to " + std::to_string(limit) +
                      " tests (instance has " + std::to_string(n) + "); use branch-and-bound");
  const auto cov = detail::coverage_sets(inst, mode);
  const std::size_t v = cov.empty() ? 0 : cov[0].size();

  Selection best(n);
  double best_obj = std::numeric_limits<double>::infinity();
  bool found = false;
  std::uint64_t nodes = 0;
  Selection cur(n);
  std::vector<std::size_t> cur_idx;

  auto consider = [&](const Selection& cand, double quick_obj) {
    if (quick_obj > best_obj + 1e-9) return;
    const double obj = evaluate_objective(cand, cfg);
    if (!found || detail::better_solution(obj, cand, best_obj, best)) {
      found = true;
      best = cand;
      best_obj = obj;
    }
  };

  auto dfs = [&](auto&& self, std::size_t t, const DynamicBitset& covered, double partial) -> void {
    ++nodes;
    if (covered.count() == v) {
      consider(cur, partial);
      return;
    }
    if (t == n) return;
    cur.add(t);
    const double add = detail::marginal_cost(cfg, cur_idx, t);
    cur_idx.push_back(t);
    DynamicBitset next = covered;
    next |= cov[t];
    self(self, t + 1, next, partial + add);
    cur_idx.pop_back();
    cur.remove(t);
    self(self, t + 1, covered, partial);
  };
  dfs(dfs, 0, DynamicBitset(v), 0.0);

  if (!found) throw SolverError("exhaustive: no feasible selection exists");
  Solution sol;
  sol.selected = best;
  sol.kind = cfg.kind;
  sol.objective = best_obj;
  sol.feasible = true;
  sol.proven_optimal = true;
  sol.solver = "exhaustive";
  sol.nodes_explored = nodes;
  return sol;
}

inline constexpr std::uint64_t kDefaultNodeBudget = 50'000'000;

// Exact oracle by branch-and-bound over a degree-descending test order.
// The incumbent starts from the greedy baseline. Lower bound at a node:
// current partial objective plus (minimum additional tests) x (minimum
// per-test marginal), where the test count bound is the larger of a
// counting bound ceil(|uncovered| / max new coverage) and a greedy-cover
// bound scaled by the harmonic number H_d (greedy uses at most H_d x OPT
// sets), both admissible. Exceeding the node budget returns the
// incumbent with proven_optimal = false.
inline Solution solve_branch_and_bound(const TsmInstance& inst, const ObjectiveConfig& cfg,
                                       std::uint64_t node_budget = kDefaultNodeBudget) {
  const ConstraintMode mode = constraint_mode_for(cfg.kind);
  detail::require_coverable(inst, mode);
  const auto cov = detail::coverage_sets(inst, mode);
  const std::size_t n = inst.num_tests();
  const std::size_t v = cov.empty() ? 0 : cov[0].size();

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return cov[a].count() > cov[b].count();
  });

  Solution incumbent = solve_greedy(inst, cfg);
  if (cfg.kind == ObjectiveKind::kBicriteria) {
    // Greedy covers fault columns too; its selection is feasible here
    // but its objective must still be evaluated under this config.
    incumbent.objective = evaluate_objective(incumbent.selected, cfg);
  }
  Selection best = incumbent.selected;
  double best_obj = incumbent.objective;

  // Remaining potential cover count per column; hits zero on an
  // uncovered column only along infeasible branches.
  std::vector<std::size_t> support(v, 0);
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t x : cov[t].to_indices()) ++support[x];

  std::uint64_t nodes = 0;
  bool budget_exhausted = false;
  Selection cur(n);
  std::vector<std::size_t> cur_idx;

  const double min_marginal = [&] {
    if (cfg.kind == ObjectiveKind::kTrip) return 1.0;
    double m = 1.0;
    for (double w : cfg.fault_weights) m = std::min(m, 1.0 - w);
    return std::max(m, 0.0);
  }();

  auto harmonic = [](std::size_t d) {
    double h = 0.0;
    for (std::size_t i = 1; i <= d; ++i) h += 1.0 / static_cast<double>(i);
    return h;
  };

  // Admissible count of additional tests required to finish the cover.
  auto additional_tests_bound = [&](const DynamicBitset& covered, std::size_t uncovered,
                                    std::size_t pos) -> std::size_t {
    std::size_t max_new = 0;
    for (std::size_t p = pos; p < n; ++p) {
      const std::size_t t = order[p];
      std::size_t newly = 0;
      for (std::size_t w = 0; w < cov[t].words().size(); ++w)
        newly += static_cast<std::size_t>(std::popcount(cov[t].words()[w] & ~covered.words()[w]));
      max_new = std::max(max_new, newly);
    }
    if (max_new == 0) return std::numeric_limits<std::size_t>::max();  // dead branch
    const std::size_t counting = (uncovered + max_new - 1) / max_new;
    if (counting >= 2) return counting;  // greedy refinement can't beat ceil here cheaply

    DynamicBitset c2 = covered;
    std::size_t greedy_picks = 0;
    std::size_t left = uncovered;
    while (left > 0) {
      std::size_t pick_new = 0;
      std::size_t pick = n;
      for (std::size_t p = pos; p < n; ++p) {
        const std::size_t t = order[p];
        std::size_t newly = 0;
        for (std::size_t w = 0; w < cov[t].words().size(); ++w)
          newly += static_cast<std::size_t>(std::popcount(cov[t].words()[w] & ~c2.words()[w]));
        if (newly > pick_new) {
          pick_new = newly;
          pick = t;
        }
      }
      if (pick == n) return std::numeric_limits<std::size_t>::max();
      ++greedy_picks;
      c2 |= cov[pick];
      left -= pick_new;
    }
    const double h = harmonic(max_new);
    const auto scaled = static_cast<std::size_t>(
        std::ceil(static_cast<double>(greedy_picks) / h - 1e-12));
    return std::max<std::size_t>(counting, std::max<std::size_t>(scaled, 1));
  };

  auto consider = [&](const Selection& cand) {
    const double obj = evaluate_objective(cand, cfg);
    if (detail::better_solution(obj, cand, best_obj, best)) {
      best = cand;
      best_obj = obj;
    }
  };

  auto dfs = [&](auto&& self, std::size_t pos, const DynamicBitset& covered, double partial) -> void {
    if (budget_exhausted) return;
    if (++nodes > node_budget) {
      budget_exhausted = true;
      return;
    }
    const std::size_t covered_count = covered.count();
    if (covered_count == v) {
      consider(cur);
      return;
    }
    if (pos == n) return;

    const std::size_t need = additional_tests_bound(covered, v - covered_count, pos);
    if (need == std::numeric_limits<std::size_t>::max()) return;
    const double lb = partial + static_cast<double>(need) * min_marginal;
    if (lb > best_obj + 1e-9) return;

    const std::size_t t = order[pos];

    cur.add(t);
    const double add = detail::marginal_cost(cfg, cur_idx, t);
    cur_idx.insert(std::lower_bound(cur_idx.begin(), cur_idx.end(), t), t);
    DynamicBitset next = covered;
    next |= cov[t];
    self(self, pos + 1, next, partial + add);
    cur_idx.erase(std::lower_bound(cur_idx.begin(), cur_idx.end(), t));
    cur.remove(t);

    bool exclude_ok = true;
    const auto t_cols = cov[t].to_indices();
    for (std::size_t x : t_cols) {
      if (--support[x] == 0 && !covered.test(x)) exclude_ok = false;
    }
    if (exclude_ok) self(self, pos + 1, covered, partial);
    for (std::size_t x : t_cols) ++support[x];
  };
  dfs(dfs, 0, DynamicBitset(v), 0.0);

  Solution sol;
  sol.selected = best;
  sol.kind = cfg.kind;
  sol.objective = best_obj;
  sol.feasible = true;
  sol.proven_optimal = !budget_exhausted;
  sol.solver = "branch_and_bound";
  sol.nodes_explored = nodes;
  return sol;
}

struct OracleOptions {
  std::size_t exhaustive_limit = kExhaustiveTestLimit;
  bool force_bnb = false;
  std::uint64_t node_budget = kDefaultNodeBudget;
};

inline Solution solve_oracle(const TsmInstance& inst, const ObjectiveConfig& cfg,
                             const OracleOptions& opt = {}) {
  if (opt.force_bnb) return solve_branch_and_bound(inst, cfg, opt.node_budget);
  return solve_exhaustive(inst, cfg, opt.exhaustive_limit);
}

// Solution file: canonical key order, deterministic float serialization,
// no timing fields, so identical runs write identical bytes.
inline nlohmann::ordered_json solution_to_json(const Solution& sol, const TsmInstance& inst) {
  const FeasibilityResult feas =
      is_feasible(sol.selected, inst, constraint_mode_for(sol.kind));
  nlohmann::ordered_json doc;
  doc["format"] = "tsm-solution/1";
  doc["objective_kind"] = objective_kind_name(sol.kind);
  doc["solver"] = sol.solver;
  doc["seed"] = sol.seed;
  nlohmann::ordered_json ids = nlohmann::ordered_json::array();
  for (std::size_t i : sol.selected.indices()) ids.push_back(inst.test_ids[i]);
  doc["selected_tests"] = ids;
  doc["objective"] = sol.objective;
  doc["feasible"] = feas.feasible;
  doc["proven_optimal"] = sol.proven_optimal;
  doc["fallback"] = sol.fallback;
  doc["uncovered_stmts"] = feas.uncovered_stmts;
  doc["uncovered_faults"] = feas.uncovered_faults;
  return doc;
}

inline void save_solution(const Solution& sol, const TsmInstance& inst, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write solution file: " + path);
  out << solution_to_json(sol, inst).dump(2) << "\n";
}

struct LoadedSolution {
  std::vector<std::string> test_ids;
  std::string objective_kind;
  std::string solver;
  double objective = 0.0;
};

inline LoadedSolution load_solution(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open solution file: " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  if (!doc.is_object() || doc.value("format", "") != "tsm-solution/1")
    throw ParseError(path + ": not a tsm-solution/1 document");
  LoadedSolution sol;
  for (const auto& id : doc.at("selected_tests")) sol.test_ids.push_back(id.get<std::string>());
  sol.objective_kind = doc.at("objective_kind").get<std::string>();
  sol.solver = doc.value("solver", "");
  sol.objective = doc.value("objective", 0.0);
  return sol;
}

// Maps solution test ids back to instance indices; unknown ids are a
// validation error.
inline Selection selection_from_ids(const LoadedSolution& sol, const TsmInstance& inst) {
  Selection sel(inst.num_tests());
  for (const auto& id : sol.test_ids) {
    auto it = std::find(inst.test_ids.begin(), inst.test_ids.end(), id);
    if (it == inst.test_ids.end())
      throw ValidationError("solution references unknown test id: " + id);
    sel.add(static_cast<std::size_t>(it - inst.test_ids.begin()));
  }
  return sel;
}

}  // namespace tsm
