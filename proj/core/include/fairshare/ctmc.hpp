#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fairshare/allocation.hpp"
#include "fairshare/geometry.hpp"
#include "fairshare/model.hpp"

namespace fairshare {

// One transition: add/sub are flat (route, phase) indices, -1 for none.
// Arrivals add only, departures subtract only, phase swaps do both.
struct Transition {
  int add = -1;
  int sub = -1;
  double rate = 0.0;
};

struct TransitionSet {
  std::vector<Transition> transitions;
  double total_rate = 0.0;
};

// Enumerates the outgoing rates at a state in a fixed order (per route:
// arrivals lambda_eps_r pi_{r,k}, then phase swaps n_{r,k} x_r S_r(k,k+1),
// then exits n_{r,k} x_r times the exit rate).
TransitionSet transition_kernel(const Model& m, const FlowState& state,
                                const Allocation& alloc);

struct SimParams {
  long long events = 100000;
  double warmup_fraction = 0.2;
  uint64_t seed = 1;
  int batches = 32;
};

struct StationaryEstimate {
  double mean_weighted_flows = 0.0;  // E[sum_r kappa_r N_r]
  double se_weighted_flows = 0.0;    // batch-means standard error
  std::vector<double> unused_mean;   // E[U_l] per link
  double mean_perp_norm = 0.0;       // E[||N_perp||], cone distance in M-norm
  double mean_perp_norm_sq = 0.0;
  double mean_norm = 0.0;            // E[||N||_M]
  double se_perp_norm = 0.0;
  long long events = 0;
  uint64_t seed = 0;
  double horizon_time = 0.0;
  // exact mode only
  int cap = -1;
  double boundary_mass = 0.0;
  long long num_states = 0;
  std::vector<double> distribution;  // stationary probabilities by state rank

  std::string to_json_string() const;
};

// Event-driven simulation with time-weighted batch means. Bit-identical
// output for identical (model, geometry, params).
StationaryEstimate simulate(const Model& m, const GeometryContext& geom,
                            const SimParams& params);

// Enumerates {n : sum n <= cap}, kills transitions through the cap, and
// solves pi Q = 0 by sparse LU. Boundary mass is always reported.
StationaryEstimate exact_stationary(const Model& m, const GeometryContext& geom,
                                    int cap);

struct UniformizeReport {
  double qbar = 0.0;
  double tv_distance = 0.0;  // between CTMC and uniformized-DTMC solutions
  int power_iterations = 0;
  std::string to_json_string() const;
};

// Builds P = I + Q/qbar with qbar = qbar_factor * max total outflow and
// compares its stationary distribution (power iteration) with the CTMC one.
UniformizeReport uniformize_check(const Model& m, int cap, double qbar_factor = 1.0);

// Generator drift Delta V(n) = sum_{n'} q(n -> n') (V(n') - V(n)).
double drift_eval(const Model& m, const std::function<double(const FlowState&)>& V,
                  const FlowState& state);

}  // namespace fairshare
