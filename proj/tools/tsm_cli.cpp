// Command-line front end: generate synthetic instances, reduce suites
// with the RL / oracle / greedy solvers, run the oracle directly, and
// re-evaluate stored solutions.
//
// Exit codes: 0 success, 2 usage, 3 validation or infeasible input,
// 4 solver failure or fallback result, 5 internal error.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <json.hpp>

#include "tsm/agent.hpp"
#include "tsm/embedding.hpp"
#include "tsm/env.hpp"
#include "tsm/errors.hpp"
#include "tsm/evalkit.hpp"
#include "tsm/graph.hpp"
#include "tsm/instance.hpp"
#include "tsm/model.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitValidation = 3;
constexpr int kExitSolver = 4;
constexpr int kExitInternal = 5;

std::filesystem::path resolve_output(const std::string& path) {
  std::filesystem::path p(path);
  if (p.is_absolute()) return p;
  if (const char* dir = std::getenv("TSM_OUTPUT_DIR"); dir && *dir)
    return std::filesystem::path(dir) / p;
  return p;
}

void apply_thread_cap(int flag_value) {
  int n = flag_value;
  if (n <= 0) {
    if (const char* env = std::getenv("TSM_THREADS"); env && *env) n = std::atoi(env);
  }
  if (n > 0) Eigen::setNbThreads(n);
}

struct SimilaritySpec {
  tsm::SimilarityMode mode = tsm::SimilarityMode::kCosine;
  double value = 0.5;
};

SimilaritySpec parse_similarity(const std::string& s) {
  SimilaritySpec spec;
  if (s == "cosine") return spec;
  if (s.rfind("constant:", 0) == 0) {
    spec.mode = tsm::SimilarityMode::kConstant;
    try {
      spec.value = std::stod(s.substr(9));
    } catch (const std::exception&) {
      throw tsm::ValidationError("bad constant similarity value in '" + s + "'");
    }
    if (spec.value < 0.0 || spec.value > 1.0)
      throw tsm::ValidationError("constant similarity must be in [0, 1]");
    return spec;
  }
  throw tsm::ValidationError("similarity must be 'cosine' or 'constant:<value>'");
}

struct ReduceArgs {
  std::string instance_path;
  std::string output = "solution.json";
  std::string report_path;
  std::string solver = "rl";
  std::string objective = "trip";
  std::string similarity = "cosine";
  std::string bonus_variant = "intent";
  std::size_t k = 128;
  std::uint64_t seed = 0;
  // training
  std::size_t steps = 10'000;
  std::size_t envs = 5;
  std::size_t n_steps = 500;
  double lr = 3e-4;
  std::size_t minibatch = 32;
  std::size_t epochs = 10;
  double clip = 0.2;
  std::size_t patience = 20;
  std::size_t step_limit = 0;
  std::string train_log_path;
  std::string checkpoint_path;
  std::string trace_path;
  // oracle
  bool force_bnb = false;
  std::uint64_t node_budget = tsm::kDefaultNodeBudget;
  // exports
  std::string export_graph;
  std::string export_embeddings;
  std::string export_similarity;
};

struct PreparedProblem {
  tsm::TsmInstance inst;
  tsm::BipartiteGraph graph;
  tsm::EmbeddingSet emb;
  tsm::SimilarityMatrix sim;
  tsm::ObjectiveConfig objective;
  std::size_t k_requested = 0;
};

PreparedProblem prepare(const std::string& instance_path, const std::string& objective,
                        const std::string& similarity, std::size_t k, std::uint64_t seed) {
  PreparedProblem p;
  p.inst = tsm::load_instance(instance_path);
  p.graph = tsm::build_graph(p.inst);
  p.k_requested = k;
  const std::size_t kmax = std::min(p.graph.u_size, p.graph.v_size);
  if (k > kmax)
    std::cerr << "note: embedding dimension clamped from " << k << " to " << kmax
              << " (rank bound)\n";
  p.emb = tsm::compute_embeddings(p.graph, k, seed);
  const SimilaritySpec spec = parse_similarity(similarity);
  p.sim = tsm::compute_similarity(p.emb, spec.mode, spec.value);
  const tsm::ObjectiveKind kind = tsm::objective_kind_from_name(objective);
  p.objective = kind == tsm::ObjectiveKind::kTrip ? tsm::make_trip_config(p.sim)
                                                  : tsm::make_bicriteria_config(p.inst);
  return p;
}

nlohmann::ordered_json metrics_json(const tsm::SolutionMetrics& m) {
  return {{"reduced_size", m.reduced_size},
          {"size_ratio", m.size_ratio},
          {"stmt_coverage_pct", m.stmt_coverage_pct},
          {"fault_detection_rate_pct", m.fault_detection_rate_pct},
          {"objective", m.objective},
          {"wall_time_s", m.wall_time_s}};
}

int cmd_generate(std::size_t tests, std::size_t stmts, std::size_t faults, double density,
                 std::uint64_t seed, const std::string& output) {
  tsm::TsmInstance inst = tsm::generate_synthetic(tests, stmts, faults, density, seed);
  const auto path = resolve_output(output);
  tsm::save_instance(inst, path.string());
  std::cout << "generated " << tests << " tests x (" << stmts << " stmts + " << faults
            << " faults), density " << density << ", seed " << seed << " -> " << path.string()
            << "\n";
  return kExitOk;
}

int cmd_reduce(const ReduceArgs& a) {
  const auto t0 = std::chrono::steady_clock::now();
  PreparedProblem p = prepare(a.instance_path, a.objective, a.similarity, a.k, a.seed);

  if (!a.export_graph.empty()) tsm::export_edge_list(p.graph, resolve_output(a.export_graph).string());
  if (!a.export_embeddings.empty()) {
    const auto path = resolve_output(a.export_embeddings);
    tsm::export_embeddings(p.emb.u_vectors, path.string());
    tsm::export_embeddings(p.emb.v_vectors, path.string() + ".v");
  }
  if (!a.export_similarity.empty())
    tsm::export_similarity(p.sim, resolve_output(a.export_similarity).string());

  tsm::Solution sol;
  std::vector<tsm::IterationStats> train_log;
  bool early_stopped = false;
  std::vector<double> iter_wall_times;

  if (a.solver == "greedy") {
    sol = tsm::solve_greedy(p.inst, p.objective);
    sol.seed = a.seed;
  } else if (a.solver == "oracle") {
    tsm::OracleOptions opt;
    opt.force_bnb = a.force_bnb;
    opt.node_budget = a.node_budget;
    sol = tsm::solve_oracle(p.inst, p.objective, opt);
    sol.seed = a.seed;
  } else if (a.solver == "rl") {
    tsm::TrainConfig cfg;
    cfg.total_timesteps = a.steps;
    cfg.num_envs = a.envs;
    cfg.n_steps = a.n_steps;
    cfg.learning_rate = a.lr;
    cfg.minibatch_size = a.minibatch;
    cfg.update_epochs = a.epochs;
    cfg.clip_range = a.clip;
    cfg.early_stop_patience = a.patience;
    cfg.seed = a.seed;
    tsm::EnvConfig env_cfg;
    env_cfg.bonus = a.bonus_variant == "literal" ? tsm::BonusVariant::kLiteral
                                                 : tsm::BonusVariant::kIntent;
    env_cfg.step_limit = a.step_limit;

    std::ofstream trace;
    if (!a.trace_path.empty()) {
      trace.open(resolve_output(a.trace_path), std::ios::binary);
      if (!trace) throw tsm::Error("cannot write trace file: " + a.trace_path);
    }
    tsm::TrainResult res = tsm::train(p.inst, p.graph, p.emb, p.objective, cfg, env_cfg,
                                      trace.is_open() ? &trace : nullptr);
    sol = res.solution;
    train_log = res.log;
    early_stopped = res.early_stopped;
    if (!a.checkpoint_path.empty())
      tsm::save_checkpoint(*res.params, cfg, resolve_output(a.checkpoint_path).string());
  } else {
    throw tsm::ValidationError("unknown solver: " + a.solver);
  }

  const auto t1 = std::chrono::steady_clock::now();
  tsm::SolutionMetrics metrics = tsm::compute_metrics(sol.selected, p.inst, p.objective);
  metrics.wall_time_s = std::chrono::duration<double>(t1 - t0).count();

  const auto sol_path = resolve_output(a.output);
  tsm::save_solution(sol, p.inst, sol_path.string());

  if (!a.train_log_path.empty()) {
    std::ofstream log(resolve_output(a.train_log_path), std::ios::binary);
    if (!log) throw tsm::Error("cannot write training log: " + a.train_log_path);
    for (const auto& it : train_log) {
      nlohmann::ordered_json line = {{"iteration", it.iteration},
                                     {"timesteps", it.timesteps},
                                     {"episodes", it.episodes},
                                     {"mean_return", it.mean_return},
                                     {"best_objective", it.best_objective},
                                     {"policy_loss", it.policy_loss},
                                     {"value_loss", it.value_loss},
                                     {"wall_time_s", metrics.wall_time_s}};
      log << line.dump() << "\n";
    }
  }

  if (!a.report_path.empty()) {
    nlohmann::ordered_json report;
    report["format"] = "tsm-report/1";
    report["config"] = {{"instance", a.instance_path},
                        {"solver", a.solver},
                        {"objective", a.objective},
                        {"similarity", a.similarity},
                        {"k_requested", a.k},
                        {"k_effective", p.emb.k},
                        {"seed", a.seed},
                        {"steps", a.steps},
                        {"num_envs", a.envs},
                        {"n_steps", a.n_steps},
                        {"learning_rate", a.lr},
                        {"minibatch_size", a.minibatch},
                        {"update_epochs", a.epochs},
                        {"clip_range", a.clip},
                        {"early_stop_patience", a.patience},
                        {"bonus_variant", a.bonus_variant},
                        {"force_bnb", a.force_bnb},
                        {"node_budget", a.node_budget}};
    report["instance"] = {{"num_tests", p.inst.num_tests()},
                          {"num_stmts", p.inst.num_stmts},
                          {"num_faults", p.inst.num_faults},
                          {"edges", p.graph.edge_count}};
    report["solver_status"] = {{"feasible", sol.feasible},
                               {"proven_optimal", sol.proven_optimal},
                               {"fallback", sol.fallback},
                               {"nodes_explored", sol.nodes_explored},
                               {"iterations", train_log.size()},
                               {"early_stopped", early_stopped}};
    report["metrics"] = metrics_json(metrics);
    report["solution_file"] = sol_path.string();
    std::ofstream rep(resolve_output(a.report_path), std::ios::binary);
    if (!rep) throw tsm::Error("cannot write report: " + a.report_path);
    rep << report.dump(2) << "\n";
  }

  std::cout << "instance: " << p.inst.num_tests() << " tests, " << p.inst.num_stmts << " stmts, "
            << p.inst.num_faults << " faults\n";
  std::cout << "solver: " << sol.solver << " (" << tsm::objective_kind_name(sol.kind) << ")"
            << (sol.fallback ? " [fallback]" : "") << "\n";
  std::cout << "selected " << metrics.reduced_size << "/" << p.inst.num_tests() << " tests:";
  for (std::size_t i : sol.selected.indices()) std::cout << " " << p.inst.test_ids[i];
  std::cout << "\nobjective " << std::setprecision(17) << sol.objective << ", stmt coverage "
            << std::setprecision(6) << metrics.stmt_coverage_pct << "%, FDR "
            << metrics.fault_detection_rate_pct << "%\n";
  std::cout << "solution written to " << sol_path.string() << "\n";

  return sol.fallback ? kExitSolver : kExitOk;
}

int cmd_oracle(const std::string& instance_path, const std::string& objective,
               const std::string& similarity, std::size_t k, std::uint64_t seed, bool force_bnb,
               std::uint64_t node_budget, const std::string& output) {
  PreparedProblem p = prepare(instance_path, objective, similarity, k, seed);
  tsm::OracleOptions opt;
  opt.force_bnb = force_bnb;
  opt.node_budget = node_budget;
  tsm::Solution sol = tsm::solve_oracle(p.inst, p.objective, opt);
  sol.seed = seed;

  std::cout << (sol.proven_optimal ? "optimal" : "incumbent (node budget exhausted)")
            << " selection:";
  for (std::size_t i : sol.selected.indices()) std::cout << " " << p.inst.test_ids[i];
  std::cout << "\nobjective " << std::setprecision(17) << sol.objective << " ("
            << tsm::objective_kind_name(sol.kind) << "), nodes explored " << sol.nodes_explored
            << "\n";
  if (!output.empty()) {
    const auto path = resolve_output(output);
    tsm::save_solution(sol, p.inst, path.string());
    std::cout << "solution written to " << path.string() << "\n";
  }
  return kExitOk;
}

int cmd_evaluate(const std::string& instance_path, const std::string& solution_path,
                 const std::string& objective, const std::string& similarity, std::size_t k,
                 std::uint64_t seed, const std::string& output) {
  tsm::LoadedSolution loaded = tsm::load_solution(solution_path);
  const std::string kind = objective.empty() ? loaded.objective_kind : objective;
  PreparedProblem p = prepare(instance_path, kind, similarity, k, seed);
  tsm::Selection sel = tsm::selection_from_ids(loaded, p.inst);
  tsm::SolutionMetrics m = tsm::compute_metrics(sel, p.inst, p.objective);

  nlohmann::ordered_json doc;
  doc["format"] = "tsm-evaluation/1";
  doc["instance"] = instance_path;
  doc["solution"] = solution_path;
  doc["objective_kind"] = kind;
  doc["metrics"] = metrics_json(m);
  const std::string text = doc.dump(2) + "\n";
  if (!output.empty()) {
    std::ofstream out(resolve_output(output), std::ios::binary);
    if (!out) throw tsm::Error("cannot write evaluation report: " + output);
    out << text;
  }
  std::cout << text;
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"test suite minimization over bipartite coverage graphs"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "cap worker threads (default: TSM_THREADS or library default)");

  // generate
  auto* gen = app.add_subcommand("generate", "create a synthetic instance");
  std::size_t g_tests = 0, g_stmts = 0, g_faults = 0;
  double g_density = 0.0;
  std::uint64_t g_seed = 0;
  std::string g_output;
  gen->add_option("--tests", g_tests, "number of tests")->required();
  gen->add_option("--stmts", g_stmts, "number of statements")->required();
  gen->add_option("--faults", g_faults, "number of faults")->required();
  gen->add_option("--density", g_density, "edge probability in (0,1]")->required();
  gen->add_option("--seed", g_seed, "generator seed");
  gen->add_option("-o,--output", g_output, "instance file path")->required();

  // reduce
  auto* red = app.add_subcommand("reduce", "minimize a test suite");
  ReduceArgs r;
  red->add_option("-i,--instance", r.instance_path, "instance file")->required();
  red->add_option("-o,--output", r.output, "solution file path");
  red->add_option("--report", r.report_path, "metrics report path");
  red->add_option("--solver", r.solver, "rl | oracle | greedy")
      ->check(CLI::IsMember({"rl", "oracle", "greedy"}));
  red->add_option("--objective", r.objective, "trip | bicriteria")
      ->check(CLI::IsMember({"trip", "bicriteria"}));
  red->add_option("--similarity", r.similarity, "cosine | constant:<value>");
  red->add_option("--k", r.k, "embedding dimension (clamped to rank bound)");
  red->add_option("--seed", r.seed, "root seed for all randomized stages");
  red->add_option("--steps", r.steps, "total training timesteps");
  red->add_option("--envs", r.envs, "parallel environment copies");
  red->add_option("--n-steps", r.n_steps, "rollout length per environment");
  red->add_option("--lr", r.lr, "learning rate");
  red->add_option("--minibatch", r.minibatch, "minibatch size");
  red->add_option("--epochs", r.epochs, "update epochs per iteration");
  red->add_option("--clip", r.clip, "PPO clip range");
  red->add_option("--patience", r.patience, "early-stop patience (evaluations)");
  red->add_option("--step-limit", r.step_limit, "episode step limit (0 = one per test)");
  red->add_option("--bonus-variant", r.bonus_variant, "intent | literal termination bonus")
      ->check(CLI::IsMember({"intent", "literal"}));
  red->add_flag("--force-bnb", r.force_bnb, "oracle: branch-and-bound instead of exhaustive");
  red->add_option("--node-budget", r.node_budget, "oracle: branch-and-bound node budget");
  red->add_option("--train-log", r.train_log_path, "write per-iteration training log (JSON lines)");
  red->add_option("--checkpoint", r.checkpoint_path, "write policy checkpoint");
  red->add_option("--trace", r.trace_path, "write episode trace");
  red->add_option("--export-graph", r.export_graph, "write edge list");
  red->add_option("--export-embeddings", r.export_embeddings, "write embedding matrices");
  red->add_option("--export-similarity", r.export_similarity, "write similarity entries");

  // oracle
  auto* ora = app.add_subcommand("oracle", "exact solve (exhaustive or branch-and-bound)");
  std::string o_instance, o_objective = "trip", o_similarity = "cosine", o_output;
  std::size_t o_k = 128;
  std::uint64_t o_seed = 0, o_budget = tsm::kDefaultNodeBudget;
  bool o_force_bnb = false;
  ora->add_option("-i,--instance", o_instance, "instance file")->required();
  ora->add_option("--objective", o_objective, "trip | bicriteria")
      ->check(CLI::IsMember({"trip", "bicriteria"}));
  ora->add_option("--similarity", o_similarity, "cosine | constant:<value>");
  ora->add_option("--k", o_k, "embedding dimension");
  ora->add_option("--seed", o_seed, "root seed");
  ora->add_flag("--force-bnb", o_force_bnb, "branch-and-bound instead of exhaustive");
  ora->add_option("--node-budget", o_budget, "branch-and-bound node budget");
  ora->add_option("-o,--output", o_output, "optional solution file path");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "recompute metrics for a stored solution");
  std::string e_instance, e_solution, e_objective, e_similarity = "cosine", e_output;
  std::size_t e_k = 128;
  std::uint64_t e_seed = 0;
  ev->add_option("-i,--instance", e_instance, "instance file")->required();
  ev->add_option("-s,--solution", e_solution, "solution file")->required();
  ev->add_option("--objective", e_objective, "trip | bicriteria (default: from solution file)");
  ev->add_option("--similarity", e_similarity, "cosine | constant:<value>");
  ev->add_option("--k", e_k, "embedding dimension");
  ev->add_option("--seed", e_seed, "root seed");
  ev->add_option("-o,--output", e_output, "evaluation report path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    apply_thread_cap(threads);
    if (gen->parsed()) return cmd_generate(g_tests, g_stmts, g_faults, g_density, g_seed, g_output);
    if (red->parsed()) return cmd_reduce(r);
    if (ora->parsed())
      return cmd_oracle(o_instance, o_objective, o_similarity, o_k, o_seed, o_force_bnb, o_budget,
                        o_output);
    if (ev->parsed())
      return cmd_evaluate(e_instance, e_solution, e_objective, e_similarity, e_k, e_seed, e_output);
    std::cerr << "no subcommand selected\n";
    return kExitUsage;
  } catch (const tsm::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const tsm::InfeasibleInstanceError& e) {
    std::cerr << "error: instance is infeasible: " << e.what() << "\n";
    return kExitValidation;
  } catch (const tsm::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const tsm::SolverError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitSolver;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
}
