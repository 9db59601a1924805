#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Dense>

#include "tsm/errors.hpp"
#include "tsm/instance.hpp"
#include "tsm/model.hpp"

namespace tsm {

struct SolutionMetrics {
  std::size_t reduced_size = 0;
  double size_ratio = 0.0;
  double stmt_coverage_pct = 0.0;
  double fault_detection_rate_pct = 0.0;
  double objective = 0.0;
  double wall_time_s = 0.0;  // filled by the caller that timed the run
};

// Coverage percentages are relative to the columns the ORIGINAL suite
// covers (all of them, for a validated instance), so a feasible
// reduction scores exactly 100.
inline SolutionMetrics compute_metrics(const Selection& sel, const TsmInstance& inst,
                                       const ObjectiveConfig& cfg) {
  SolutionMetrics m;
  m.reduced_size = sel.count();
  m.size_ratio = inst.num_tests() ? static_cast<double>(m.reduced_size) /
                                        static_cast<double>(inst.num_tests())
                                  : 0.0;
  const auto idx = sel.indices();

  std::size_t stmt_base = 0, stmt_hit = 0;
  for (std::size_t p = 0; p < inst.num_stmts; ++p) {
    bool orig = false, hit = false;
    for (std::size_t t = 0; t < inst.num_tests(); ++t) orig = orig || inst.stmt_at(t, p) != 0;
    if (!orig) continue;
    ++stmt_base;
    for (std::size_t t : idx) hit = hit || inst.stmt_at(t, p) != 0;
    if (hit) ++stmt_hit;
  }
  std::size_t fault_base = 0, fault_hit = 0;
  for (std::size_t k = 0; k < inst.num_faults; ++k) {
    bool orig = false, hit = false;
    for (std::size_t t = 0; t < inst.num_tests(); ++t) orig = orig || inst.fault_at(t, k) != 0;
    if (!orig) continue;
    ++fault_base;
    for (std::size_t t : idx) hit = hit || inst.fault_at(t, k) != 0;
    if (hit) ++fault_hit;
  }
  m.stmt_coverage_pct =
      stmt_base ? 100.0 * static_cast<double>(stmt_hit) / static_cast<double>(stmt_base) : 100.0;
  m.fault_detection_rate_pct =
      fault_base ? 100.0 * static_cast<double>(fault_hit) / static_cast<double>(fault_base) : 100.0;
  m.objective = evaluate_objective(sel, cfg);
  return m;
}

struct RuntimeSample {
  double tests = 0.0;
  double stmts = 0.0;
  double edges = 0.0;
  double runtime_s = 0.0;
};

// y = b0 + b1*(tests/10^2) + b2*(stmts/10^3) + b3*(edges/10^5)
struct RuntimeRegression {
  Eigen::Vector4d coefficients = Eigen::Vector4d::Zero();  // intercept, then slopes
  double r_squared = 0.0;

  double predict(double tests, double stmts, double edges) const {
    return coefficients(0) + coefficients(1) * tests / 1e2 + coefficients(2) * stmts / 1e3 +
           coefficients(3) * edges / 1e5;
  }
};

inline RuntimeRegression fit_runtime_model(const std::vector<RuntimeSample>& samples) {
  if (samples.size() < 5)
    throw ValidationError("runtime regression needs at least 5 samples, got " +
                          std::to_string(samples.size()));
  const auto n = static_cast<Eigen::Index>(samples.size());
  Eigen::MatrixXd x(n, 4);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = samples[static_cast<std::size_t>(i)];
    x(i, 0) = 1.0;
    x(i, 1) = s.tests / 1e2;
    x(i, 2) = s.stmts / 1e3;
    x(i, 3) = s.edges / 1e5;
    y(i) = s.runtime_s;
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  if (qr.rank() < 4) throw ValidationError("runtime regression design matrix is rank-deficient");

  RuntimeRegression reg;
  reg.coefficients = qr.solve(y);
  const Eigen::VectorXd residuals = y - x * reg.coefficients;
  const double ss_res = residuals.squaredNorm();
  const double ss_tot = (y.array() - y.mean()).square().sum();
  reg.r_squared = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : (ss_res == 0.0 ? 1.0 : 0.0);
  return reg;
}

}  // namespace tsm
