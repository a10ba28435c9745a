#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fairshare/network.hpp"

namespace fairshare {

// Per-phase flow counts in the flat (route, phase) layout.
struct FlowState {
  std::vector<long long> counts;

  Eigen::VectorXd as_vector() const {
    Eigen::VectorXd v(counts.size());
    for (size_t i = 0; i < counts.size(); ++i) v(i) = static_cast<double>(counts[i]);
    return v;
  }
};

Eigen::VectorXd route_totals(const PhaseLayout& layout, const FlowState& state);

// Weighted proportionally fair allocation: maximize
// sum_r kappa_r n_r log x_r subject to sum_{r: l in r} n_r x_r <= C_l.
// At the optimum x_r = kappa_r / sum_{l in r} p_l for n_r > 0 and x_r = 0
// otherwise; p are the link prices, U the unused capacities. The allocation
// depends on the per-route totals only, never on the phase split.
struct Allocation {
  Eigen::VectorXd x;  // per route
  Eigen::VectorXd p;  // per link
  Eigen::VectorXd U;  // per link, C_l - sum_{r: l in r} n_r x_r
  int iterations = 0;
  bool degenerate = false;  // multiple optimal duals; min-norm dual returned
  struct Residuals {
    double feasibility = 0.0;
    double stationarity = 0.0;
    double complementary = 0.0;
    double price_identity = 0.0;  // sum_l p_l C_l vs sum_r kappa_r n_r
  } residuals;
};

// Damped Newton on the dual with nonnegativity working set. Throws
// Error("allocation not converged") after max_iter iterations.
Allocation solve_allocation(const NetworkSpec& spec, const Eigen::VectorXd& totals,
                            double tol = 1e-10, int max_iter = 200);

struct KKTReport {
  double feasibility = 0.0;      // relative to C_l
  double stationarity = 0.0;     // relative to kappa_r
  double complementary = 0.0;    // relative to sum_r kappa_r n_r
  double price_identity = 0.0;   // relative to sum_r kappa_r n_r
  bool ok(double tol = 1e-9) const {
    return feasibility <= tol && stationarity <= tol && complementary <= tol &&
           price_identity <= tol;
  }
  std::string to_json_string() const;
};

// Recomputes the four KKT residuals from (spec, totals, alloc) alone.
KKTReport verify_kkt(const NetworkSpec& spec, const Eigen::VectorXd& totals,
                     const Allocation& alloc);

}  // namespace fairshare
