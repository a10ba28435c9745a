#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fairshare/allocation.hpp"
#include "fairshare/inner_product.hpp"
#include "fairshare/network.hpp"
#include "fairshare/phase_type.hpp"

namespace fairshare {

// Generators of the critical cone and the fixed-point subspace. Row l of B is
// the vector b^(l) with entries rho0_{r,k} 1{l in r} / kappa_r; Bs keeps the
// critical rows. All distances are in the M-norm.
struct GeometryContext {
  Eigen::MatrixXd B;       // num_links x K
  Eigen::MatrixXd Bs;      // L_s x K, critical links ascending
  Eigen::MatrixXd Ps;      // subspace projector Bs^T (Bs M Bs^T)^-1 Bs M
  Eigen::MatrixXd S;       // block diagonal of the route generators
  Eigen::MatrixXd M;
  Eigen::MatrixXd chol;    // upper R with M = R^T R
  Eigen::MatrixXd cone_A;  // R Bs^T: cone projection becomes NNLS on ||cone_A a - R n||
  Eigen::LLT<Eigen::MatrixXd> gram_llt;  // Bs M Bs^T
  std::vector<int> critical;
  Eigen::VectorXd eta;  // per-route hazard constants
  double eta_min = 0.0;
  double kappa_min = 0.0;
  double mu_min = 0.0;  // min service rate, used by the exponential property
  bool all_exponential = false;
  PhaseLayout layout;
};

GeometryContext build_geometry(const NetworkSpec& spec,
                               const std::vector<PhaseTypeDist>& dists,
                               const TrafficProfile& profile,
                               const InnerProductMatrix& ip);

struct ProjectionResult {
  Eigen::VectorXd alpha;     // coefficients per critical link
  Eigen::VectorXd parallel;  // Bs^T alpha
  Eigen::VectorXd perp;
  double dist = 0.0;  // M-norm of perp
  int iterations = 0;
};

// Projection onto the span of the critical generators (alpha unconstrained).
ProjectionResult project_subspace(const GeometryContext& g, const Eigen::VectorXd& n);

// Projection onto the cone {sum alpha_l b^(l), alpha >= 0} via Lawson-Hanson
// NNLS after the Cholesky change of variables; ties in the pivot pick the
// lowest link index. Throws Error("nnls not converged") at the iteration cap.
ProjectionResult project_cone(const GeometryContext& g, const Eigen::VectorXd& n);

// Pointwise inner-product identities behind the drift method, evaluated at a
// state n with its allocation:
//   c1: <b^(l), (-S^T)(rho0 - nx)> = U_l - delta_l
//   c2: <b^(l) - bhat^(l), (-S^T)(rho0 - nx)> >= const * ||b^(l) - bhat^(l)||^2
// with const = kappa_min * mu_min for exponential networks and
// kappa_min * eta_min otherwise.
struct PropertyReport {
  struct PerLink {
    std::string link;
    bool critical = false;
    double U = 0.0;
    double delta = 0.0;
    double c1_residual = 0.0;
    double c2_lhs = 0.0;
    double c2_norm2 = 0.0;
    double c2_slack = 0.0;
  };
  std::vector<PerLink> links;
  double constant = 0.0;
  double state_norm = 0.0;  // M-norm of n, for tolerance scaling
  double max_c1_residual = 0.0;
  double min_c2_slack = 0.0;
  std::string to_json_string() const;
};

PropertyReport verify_drift_properties(const GeometryContext& g, const NetworkSpec& spec,
                                       const TrafficProfile& profile,
                                       const Eigen::VectorXd& n_flat,
                                       const Allocation& alloc);

}  // namespace fairshare
