#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tsm/errors.hpp"
#include "tsm/rng.hpp"

namespace tsm {

// A test suite plus its binary criteria matrices. Rows are tests, columns
// are statements (stmt) or faults (fault), entries in {0,1}. Immutable by
// convention once validated; safe to share read-only.
struct TsmInstance {
  std::vector<std::string> test_ids;
  std::size_t num_stmts = 0;
  std::size_t num_faults = 0;
  std::vector<std::uint8_t> stmt;   // row-major, num_tests() x num_stmts
  std::vector<std::uint8_t> fault;  // row-major, num_tests() x num_faults

  std::size_t num_tests() const { return test_ids.size(); }

  std::uint8_t stmt_at(std::size_t t, std::size_t p) const { return stmt[t * num_stmts + p]; }
  std::uint8_t fault_at(std::size_t t, std::size_t k) const { return fault[t * num_faults + k]; }
  void set_stmt(std::size_t t, std::size_t p, std::uint8_t v) { stmt[t * num_stmts + p] = v; }
  void set_fault(std::size_t t, std::size_t k, std::uint8_t v) { fault[t * num_faults + k] = v; }
};

struct ValidationReport {
  bool ok = true;
  std::vector<std::string> errors;
  std::vector<std::string> warnings;
  std::vector<std::size_t> zero_stmt_columns;
  std::vector<std::size_t> zero_fault_columns;
  std::vector<std::size_t> zero_test_rows;              // legal, warn only
  std::vector<std::pair<std::size_t, std::size_t>> duplicate_rows;  // identical coverage, warn only
  double stmt_density = 0.0;
  double fault_density = 0.0;
};

namespace detail {

inline bool is_count(const nlohmann::json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0);
}

inline std::string column_label(const char* kind, std::size_t index) {
  // Human-facing labels are 1-based (s1.., f1..); indices stay 0-based.
  std::ostringstream os;
  os << kind << " column " << index << " (" << (kind[0] == 's' ? 's' : 'f') << index + 1 << ")";
  return os.str();
}

}  // namespace detail

// Report-only check of every instance invariant. Never throws.
inline ValidationReport validate(const TsmInstance& inst) {
  ValidationReport rep;
  const std::size_t t = inst.num_tests();
  const std::size_t s = inst.num_stmts;
  const std::size_t f = inst.num_faults;

  auto fail = [&rep](const std::string& msg) {
    rep.ok = false;
    rep.errors.push_back(msg);
  };

  if (t < 1) fail("instance must contain at least one test");
  if (s == 0 && f == 0) fail("instance must have at least one statement or fault");
  if (inst.stmt.size() != t * s) fail("stmt matrix size does not match declared dimensions");
  if (inst.fault.size() != t * f) fail("fault matrix size does not match declared dimensions");

  {
    std::unordered_set<std::string> seen;
    for (const auto& id : inst.test_ids)
      if (!seen.insert(id).second) fail("duplicate test id: " + id);
  }
  if (!rep.errors.empty()) return rep;

  for (std::size_t i = 0; i < inst.stmt.size(); ++i)
    if (inst.stmt[i] > 1) {
      fail("non-binary stmt entry at test " + std::to_string(i / std::max<std::size_t>(s, 1)));
      break;
    }
  for (std::size_t i = 0; i < inst.fault.size(); ++i)
    if (inst.fault[i] > 1) {
      fail("non-binary fault entry at test " + std::to_string(i / std::max<std::size_t>(f, 1)));
      break;
    }

  std::size_t stmt_ones = 0;
  std::size_t fault_ones = 0;
  for (std::size_t p = 0; p < s; ++p) {
    bool any = false;
    for (std::size_t i = 0; i < t; ++i) any = any || inst.stmt_at(i, p) != 0;
    if (!any) {
      rep.zero_stmt_columns.push_back(p);
      fail(detail::column_label("statement", p) + " has no covering test");
    }
  }
  for (std::size_t k = 0; k < f; ++k) {
    bool any = false;
    for (std::size_t i = 0; i < t; ++i) any = any || inst.fault_at(i, k) != 0;
    if (!any) {
      rep.zero_fault_columns.push_back(k);
      fail(detail::column_label("fault", k) + " has no detecting test");
    }
  }
  for (auto v : inst.stmt) stmt_ones += v;
  for (auto v : inst.fault) fault_ones += v;
  rep.stmt_density = (t * s) ? static_cast<double>(stmt_ones) / static_cast<double>(t * s) : 0.0;
  rep.fault_density = (t * f) ? static_cast<double>(fault_ones) / static_cast<double>(t * f) : 0.0;

  for (std::size_t i = 0; i < t; ++i) {
    bool any = false;
    for (std::size_t p = 0; p < s; ++p) any = any || inst.stmt_at(i, p) != 0;
    for (std::size_t k = 0; k < f; ++k) any = any || inst.fault_at(i, k) != 0;
    if (!any) {
      rep.zero_test_rows.push_back(i);
      rep.warnings.push_back("test " + inst.test_ids[i] + " covers nothing and will never be selected");
    }
  }
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = i + 1; j < t; ++j) {
      bool same = std::equal(inst.stmt.begin() + i * s, inst.stmt.begin() + (i + 1) * s,
                             inst.stmt.begin() + j * s) &&
                  std::equal(inst.fault.begin() + i * f, inst.fault.begin() + (i + 1) * f,
                             inst.fault.begin() + j * f);
      if (same) {
        rep.duplicate_rows.emplace_back(i, j);
        rep.warnings.push_back("tests " + inst.test_ids[i] + " and " + inst.test_ids[j] +
                               " have identical coverage");
      }
    }
  }
  return rep;
}

// Throwing variant used by loaders: zero columns are an infeasibility error,
// everything else a validation error.
inline void validate_or_throw(const TsmInstance& inst) {
  ValidationReport rep = validate(inst);
  if (rep.ok) return;
  if (!rep.zero_stmt_columns.empty() || !rep.zero_fault_columns.empty()) {
    for (const auto& e : rep.errors)
      if (e.find("covering") != std::string::npos || e.find("detecting") != std::string::npos)
        throw InfeasibleInstanceError(e);
  }
  throw ValidationError(rep.errors.front());
}

// Instance file format: one JSON document with explicit dimensions and
// sparse 0-based coordinate lists.
//
//   {"num_tests": 3, "num_stmts": 3, "num_faults": 4,
//    "test_ids": ["t1","t2","t3"],
//    "stmt_edges": [[0,0],[1,1],...],
//    "fault_edges": [[0,3],...]}
//
// Unknown keys are rejected.
inline TsmInstance parse_instance(const nlohmann::json& doc, const std::string& origin) {
  if (!doc.is_object()) throw ParseError(origin + ": instance document must be a JSON object");
  static const std::set<std::string> kAllowed = {"num_tests", "num_stmts", "num_faults",
                                                 "test_ids",  "stmt_edges", "fault_edges"};
  for (auto it = doc.begin(); it != doc.end(); ++it)
    if (!kAllowed.count(it.key())) throw ParseError(origin + ": unknown key '" + it.key() + "'");
  for (const auto& key : kAllowed)
    if (!doc.contains(key)) throw ParseError(origin + ": missing key '" + key + "'");

  auto require_count = [&](const char* key) -> std::size_t {
    const auto& v = doc.at(key);
    if (!detail::is_count(v)) throw ParseError(origin + ": '" + key + "' must be a nonnegative integer");
    return v.get<std::size_t>();
  };
  const std::size_t num_tests = require_count("num_tests");
  const std::size_t num_stmts = require_count("num_stmts");
  const std::size_t num_faults = require_count("num_faults");

  TsmInstance inst;
  inst.num_stmts = num_stmts;
  inst.num_faults = num_faults;
  const auto& ids = doc.at("test_ids");
  if (!ids.is_array()) throw ParseError(origin + ": 'test_ids' must be an array");
  for (const auto& id : ids) {
    if (!id.is_string()) throw ParseError(origin + ": test ids must be strings");
    inst.test_ids.push_back(id.get<std::string>());
  }
  if (inst.test_ids.size() != num_tests)
    throw ValidationError(origin + ": test_ids length does not match num_tests");

  inst.stmt.assign(num_tests * num_stmts, 0);
  inst.fault.assign(num_tests * num_faults, 0);

  auto read_edges = [&](const char* key, std::size_t num_cols, std::vector<std::uint8_t>& mat) {
    const auto& edges = doc.at(key);
    if (!edges.is_array()) throw ParseError(origin + ": '" + std::string(key) + "' must be an array");
    for (const auto& e : edges) {
      if (!e.is_array() || e.size() != 2 || !detail::is_count(e[0]) || !detail::is_count(e[1]))
        throw ParseError(origin + ": entries of '" + std::string(key) +
                         "' must be [test_index, column_index] pairs");
      const std::size_t t = e[0].get<std::size_t>();
      const std::size_t c = e[1].get<std::size_t>();
      if (t >= num_tests)
        throw ValidationError(origin + ": test index " + std::to_string(t) + " out of range in " + key);
      if (c >= num_cols)
        throw ValidationError(origin + ": column index " + std::to_string(c) + " out of range in " + key);
      if (mat[t * num_cols + c])
        throw ValidationError(origin + ": duplicate edge [" + std::to_string(t) + "," +
                              std::to_string(c) + "] in " + key);
      mat[t * num_cols + c] = 1;
    }
  };
  read_edges("stmt_edges", num_stmts, inst.stmt);
  read_edges("fault_edges", num_faults, inst.fault);

  validate_or_throw(inst);
  return inst;
}

inline TsmInstance load_instance(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open instance file: " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  return parse_instance(doc, path);
}

// Canonical serialization: fixed key order, edges sorted lexicographically,
// two-space indent, trailing newline. Re-serializing a loaded instance
// reproduces the file byte for byte.
inline std::string serialize_instance(const TsmInstance& inst) {
  nlohmann::ordered_json doc;
  doc["num_tests"] = inst.num_tests();
  doc["num_stmts"] = inst.num_stmts;
  doc["num_faults"] = inst.num_faults;
  doc["test_ids"] = inst.test_ids;
  auto edges_of = [&](const std::vector<std::uint8_t>& mat, std::size_t cols) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (std::size_t t = 0; t < inst.num_tests(); ++t)
      for (std::size_t c = 0; c < cols; ++c)
        if (mat[t * cols + c]) arr.push_back({t, c});
    return arr;
  };
  doc["stmt_edges"] = edges_of(inst.stmt, inst.num_stmts);
  doc["fault_edges"] = edges_of(inst.fault, inst.num_faults);
  return doc.dump(2) + "\n";
}

inline void save_instance(const TsmInstance& inst, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write instance file: " + path);
  out << serialize_instance(inst);
}

// Random instance: i.i.d. Bernoulli(density) entries drawn row-major over
// the stmt matrix then the fault matrix, then every empty column patched
// with one uniform random row so the coverage constraints stay satisfiable.
inline TsmInstance generate_synthetic(std::size_t num_tests, std::size_t num_stmts,
                                      std::size_t num_faults, double density,
                                      std::uint64_t seed) {
  if (num_tests < 1 || num_stmts < 1 || num_faults < 1)
    throw ValidationError("generate_synthetic: counts must be >= 1");
  if (!(density > 0.0) || density > 1.0)
    throw ValidationError("generate_synthetic: density must be in (0, 1]");

  TsmInstance inst;
  inst.num_stmts = num_stmts;
  inst.num_faults = num_faults;
  for (std::size_t i = 0; i < num_tests; ++i) inst.test_ids.push_back("t" + std::to_string(i + 1));
  inst.stmt.assign(num_tests * num_stmts, 0);
  inst.fault.assign(num_tests * num_faults, 0);

  auto rng = make_rng(seed, seed_stream::kInstanceGen);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (auto& v : inst.stmt) v = unit(rng) < density ? 1 : 0;
  for (auto& v : inst.fault) v = unit(rng) < density ? 1 : 0;

  std::uniform_int_distribution<std::size_t> row(0, num_tests - 1);
  auto patch = [&](std::vector<std::uint8_t>& mat, std::size_t cols) {
    for (std::size_t c = 0; c < cols; ++c) {
      bool any = false;
      for (std::size_t t = 0; t < num_tests; ++t) any = any || mat[t * cols + c] != 0;
      if (!any) mat[row(rng) * cols + c] = 1;
    }
  };
  patch(inst.stmt, num_stmts);
  patch(inst.fault, num_faults);
  return inst;
}

}  // namespace tsm
