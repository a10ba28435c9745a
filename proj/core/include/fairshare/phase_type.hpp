#pragma once

#include <vector>

#include <Eigen/Dense>

#include "fairshare/rng.hpp"

namespace fairshare {

struct Block {
  double rate = 0.0;
  int phases = 0;
};

// Phase-type distribution restricted to class D: the generator block S is
// block diagonal, each block upper bidiagonal with a single rate (-mu on the
// diagonal, +mu on the superdiagonal), block rates pairwise distinct, and the
// initial distribution puts positive mass on every block head. Exponential is
// the one-block, one-phase special case.
struct PhaseTypeDist {
  std::vector<Block> blocks;
  Eigen::RowVectorXd pi;
  Eigen::MatrixXd S;
  int K = 0;
  std::vector<int> block_of;    // phase -> block index
  std::vector<int> block_head;  // block -> first phase

  bool is_exponential() const { return K == 1; }
  Eigen::VectorXd exit_rates() const;  // row sums of -S, nonzero on block tails
  double min_rate() const;

  static PhaseTypeDist exponential(double rate);
  // Assembles S and the index maps without class-D validation. Tests use this
  // to probe the verifiers on inadmissible inputs (e.g. merged block rates).
  static PhaseTypeDist unchecked(std::vector<Block> blocks, Eigen::RowVectorXd pi);
};

// Validating factory. Throws Error with code "nonpositive rate",
// "nonpositive phase count", "nondistinct rates", "pi length mismatch",
// "pi not a distribution" or "initial mass zero on block head".
// rate_sep_tol is the relative separation required between block rates.
PhaseTypeDist build_class_d(const std::vector<Block>& blocks,
                            const std::vector<double>& initial,
                            double rate_sep_tol = 1e-6);

struct Moments {
  double mean = 0.0;    // pi (-S)^-1 1
  double rate = 0.0;    // 1/mean
  Eigen::VectorXd chi;  // (-S)^-T pi^T, mean time spent in each phase
};

Moments moments_and_loads(const PhaseTypeDist& d);

struct HazardBound {
  double eta = 0.0;  // 1/2 * min(grid minimum hazard, asymptotic floor)
  double grid_min_u = 0.0;
  double grid_min_value = 0.0;
  double asymptotic_floor = 0.0;  // min block rate
  bool flagged_nonpositive = false;
};

struct HazardCurve {
  Eigen::VectorXd u;         // probe points: u = 0, then a geometric grid
  Eigen::VectorXd survival;  // G(u) = pi exp(Su) 1
  Eigen::VectorXd density;   // g(u) = pi (-S) exp(Su) 1
  Eigen::VectorXd hazard;    // g/G
  HazardBound bound;
};

// Probes the hazard g/G on u = 0 plus a geometric grid on (0, u_max].
// u_max <= 0 selects the default 40 / min block rate. The bound is flagged
// when the probed minimum is nonpositive within tolerance (e.g. Erlang
// blocks with no initial mass on the exit phase have g(0) = 0).
HazardCurve survival_and_hazard(const PhaseTypeDist& d, double u_max = 0.0, int grid = 2000);

double sample_absorption(const PhaseTypeDist& d, Rng& rng);

// Flat (route, phase) indexing across per-route distributions.
struct PhaseLayout {
  std::vector<int> offset;    // per route
  std::vector<int> route_of;  // flat index -> route
  std::vector<int> phase_of;  // flat index -> phase within its route
  int K = 0;
  int R = 0;

  PhaseLayout() = default;
  explicit PhaseLayout(const std::vector<PhaseTypeDist>& dists);
  int flat(int r, int k) const { return offset[r] + k; }
};

}  // namespace fairshare
