#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fairshare/phase_type.hpp"

namespace fairshare {

struct Link {
  std::string id;
  double capacity = 0.0;
};

// A route is the set of links a flow class traverses plus its fairness
// weight kappa_r.
struct Route {
  std::string id;
  std::vector<int> links;  // indices into NetworkSpec::links
  double weight = 1.0;
};

struct NetworkSpec {
  std::vector<Link> links;
  std::vector<Route> routes;
  Eigen::MatrixXd H;  // H(l, r) = 1 iff link l lies on route r

  int num_links() const { return static_cast<int>(links.size()); }
  int num_routes() const { return static_cast<int>(routes.size()); }
  int link_index(const std::string& id) const;
  int route_index(const std::string& id) const;
  Eigen::VectorXd weights() const;
  Eigen::VectorXd capacities() const;
};

// Rebuilds the routing matrix from the routes' link sets.
Eigen::MatrixXd routing_matrix(const NetworkSpec& spec);

struct Violation {
  std::string code;
  std::string path;
  std::string message;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
  std::string to_json_string() const;
};

// Structural checks (ids, capacities, weights, link references, H
// consistency). Reports violations; never throws on bad content.
ValidationReport validate_network(const NetworkSpec& spec);

// Base loads, per-link slacks and the critical set of one heavy-traffic
// instance. Everything except lambda_eps is independent of epsilon.
struct TrafficProfile {
  double epsilon = 0.0;
  Eigen::VectorXd lambda0;      // base arrival rates, per route
  Eigen::VectorXd lambda_eps;   // (1 - epsilon) * lambda0
  Eigen::VectorXd route_load0;  // rho_r^(0) = lambda0_r / mu_r
  Eigen::VectorXd load0;        // per-phase base loads rho_{r,k}^(0), flat layout
  Eigen::VectorXd delta;        // per-link slack C_l - sum_{r: l in r} rho_r^(0)
  std::vector<int> critical;    // links with delta_l <= crit_tol * C_l, ascending
  double crit_tol = 1e-9;

  int L_s() const { return static_cast<int>(critical.size()); }
  bool is_critical(int l) const;
};

// Throws Error("lambda0 not positive" | "epsilon out of range" |
// "overloaded base" | "no critical link" | "H_s rank-deficient").
TrafficProfile derive_traffic_profile(const NetworkSpec& spec,
                                      const std::vector<PhaseTypeDist>& dists,
                                      const Eigen::VectorXd& lambda0, double epsilon,
                                      double crit_tol = 1e-9, double rank_tol = 1e-10);

}  // namespace fairshare
