#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fairshare/network.hpp"
#include "fairshare/phase_type.hpp"

namespace fairshare {

struct QuadInfo {
  double sigma_max = 0.0;
  int panels = 0;
  double tol = 0.0;
};

// The state-space inner product <y, z> = y^T M z. M is block diagonal with
// one block per route,
//   M_r = (kappa_r / lambda0_r) *
//         Int_0^inf exp(S_r s) 1 1^T exp(S_r^T s) / (pi_r (-S_r)^-1 exp(S_r s) 1) ds,
// which collapses to the scalar kappa_r / lambda0_r for exponential files.
// The denominator equals the survival tail integral Int_s^inf G_r, so it is
// positive and decays at the slowest block rate.
struct InnerProductMatrix {
  std::vector<Eigen::MatrixXd> blocks;
  Eigen::MatrixXd M;     // assembled K x K
  Eigen::MatrixXd chol;  // upper-triangular R with M = R^T R
  std::vector<QuadInfo> quad;
  PhaseLayout layout;

  double inner(const Eigen::VectorXd& y, const Eigen::VectorXd& z) const {
    return y.dot(M * z);
  }
  double norm(const Eigen::VectorXd& y) const { return (chol * y).norm(); }
};

// Exponential blocks are emitted in closed form; phase-type blocks use
// adaptive composite Gauss-Legendre on [0, sigma_max] with sigma_max grown
// until an analytic tail bound falls below quad_tol.
InnerProductMatrix build_M(const NetworkSpec& spec,
                           const std::vector<PhaseTypeDist>& dists,
                           const Eigen::VectorXd& lambda0, double quad_tol = 1e-10);

struct MIdentityReport {
  struct PerRoute {
    std::string route;
    bool symmetric = false;
    bool positive_definite = false;
    bool pbh = false;
    double min_eigenvalue = 0.0;
    // max-abs entry of (1/kappa_r) rho0_r^T M_r (-S_r^T) - 1^T
    double rotation_residual = 0.0;
    // min eigenvalue of sym(M_r (-S_r^T)) - eta_r M_r, scaled by ||M_r||
    double contraction_min_eig = 0.0;
    double eta = 0.0;
    bool eta_flagged = false;
    bool exponential_exact = true;  // K_r = 1 blocks must equal kappa/lambda0
  };
  std::vector<PerRoute> routes;
  double psd_tol = 1e-8;

  bool ok() const;
  std::string to_json_string() const;
};

MIdentityReport verify_M(const InnerProductMatrix& ip, const NetworkSpec& spec,
                         const std::vector<PhaseTypeDist>& dists,
                         const TrafficProfile& profile, double rank_tol = 1e-10);

}  // namespace fairshare
