#include "fairshare/phase_type.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <unsupported/Eigen/MatrixFunctions>

#include "fairshare/error.hpp"

namespace fairshare {

namespace {

void assemble(PhaseTypeDist& d) {
  d.K = 0;
  for (const auto& b : d.blocks) d.K += b.phases;
  d.S = Eigen::MatrixXd::Zero(d.K, d.K);
  d.block_of.assign(d.K, 0);
  d.block_head.clear();
  int at = 0;
  for (size_t b = 0; b < d.blocks.size(); ++b) {
    d.block_head.push_back(at);
    const double mu = d.blocks[b].rate;
    for (int j = 0; j < d.blocks[b].phases; ++j) {
      d.S(at, at) = -mu;
      if (j + 1 < d.blocks[b].phases) d.S(at, at + 1) = mu;
      d.block_of[at] = static_cast<int>(b);
      ++at;
    }
  }
}

}  // namespace

Eigen::VectorXd PhaseTypeDist::exit_rates() const {
  return -S.rowwise().sum();
}

double PhaseTypeDist::min_rate() const {
  double m = blocks.front().rate;
  for (const auto& b : blocks) m = std::min(m, b.rate);
  return m;
}

PhaseTypeDist PhaseTypeDist::exponential(double rate) {
  return build_class_d({{rate, 1}}, {1.0});
}

PhaseTypeDist PhaseTypeDist::unchecked(std::vector<Block> blocks, Eigen::RowVectorXd pi) {
  PhaseTypeDist d;
  d.blocks = std::move(blocks);
  d.pi = std::move(pi);
  assemble(d);
  return d;
}

PhaseTypeDist build_class_d(const std::vector<Block>& blocks,
                            const std::vector<double>& initial,
                            double rate_sep_tol) {
  if (blocks.empty()) throw Error("nonpositive phase count", "no blocks given");
  int K = 0;
  for (size_t b = 0; b < blocks.size(); ++b) {
    if (!(blocks[b].rate > 0.0))
      throw Error("nonpositive rate", "block " + std::to_string(b));
    if (blocks[b].phases <= 0)
      throw Error("nonpositive phase count", "block " + std::to_string(b));
    K += blocks[b].phases;
  }
  for (size_t a = 0; a < blocks.size(); ++a)
    for (size_t b = a + 1; b < blocks.size(); ++b) {
      const double sep = std::abs(blocks[a].rate - blocks[b].rate);
      if (sep <= rate_sep_tol * std::max(blocks[a].rate, blocks[b].rate))
        throw Error("nondistinct rates",
                    "blocks " + std::to_string(a) + " and " + std::to_string(b));
    }
  if (static_cast<int>(initial.size()) != K)
    throw Error("pi length mismatch", "expected " + std::to_string(K) +
                                          " entries, got " + std::to_string(initial.size()));
  double sum = 0.0;
  for (double v : initial) {
    if (v < 0.0) throw Error("pi not a distribution", "negative entry");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw Error("pi not a distribution", "entries sum to " + std::to_string(sum));

  PhaseTypeDist d;
  d.blocks = blocks;
  d.pi = Eigen::RowVectorXd::Zero(K);
  for (int k = 0; k < K; ++k) d.pi(k) = initial[k];
  assemble(d);
  for (size_t b = 0; b < d.blocks.size(); ++b)
    if (!(d.pi(d.block_head[b]) > 0.0))
      throw Error("initial mass zero on block head", "block " + std::to_string(b));
  return d;
}

Moments moments_and_loads(const PhaseTypeDist& d) {
  Moments m;
  // chi = (-S)^-T pi^T; the mean is chi^T 1 = pi (-S)^-1 1. S is upper
  // triangular with negative diagonal, so the solve is exact back-substitution.
  const Eigen::MatrixXd negST = -d.S.transpose();
  m.chi = negST.triangularView<Eigen::Lower>().solve(d.pi.transpose());
  m.mean = m.chi.sum();
  m.rate = 1.0 / m.mean;
  return m;
}

HazardCurve survival_and_hazard(const PhaseTypeDist& d, double u_max, int grid) {
  if (u_max <= 0.0) u_max = 40.0 / d.min_rate();
  if (grid < 2) grid = 2;

  HazardCurve c;
  const int n = grid + 1;  // the u = 0 probe plus the geometric grid
  c.u.resize(n);
  c.survival.resize(n);
  c.density.resize(n);
  c.hazard.resize(n);

  const double u_min = u_max * 1e-8;
  const double ratio = std::pow(u_max / u_min, 1.0 / (grid - 1));
  c.u(0) = 0.0;
  for (int i = 0; i < grid; ++i) c.u(i + 1) = u_min * std::pow(ratio, i);
  c.u(n - 1) = u_max;

  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(d.K);
  for (int i = 0; i < n; ++i) {
    const Eigen::MatrixXd E = (d.S * c.u(i)).exp();
    const Eigen::VectorXd p = E * ones;
    c.survival(i) = d.pi * p;
    c.density(i) = d.pi * (-d.S) * p;
    c.hazard(i) = c.survival(i) > 0.0 ? c.density(i) / c.survival(i)
                                      : std::numeric_limits<double>::quiet_NaN();
  }

  HazardBound& b = c.bound;
  b.asymptotic_floor = d.min_rate();
  int arg = 0;
  for (int i = 1; i < n; ++i)
    if (c.hazard(i) < c.hazard(arg)) arg = i;
  b.grid_min_u = c.u(arg);
  b.grid_min_value = c.hazard(arg);
  b.flagged_nonpositive = !(b.grid_min_value > 1e-12);
  b.eta = b.flagged_nonpositive
              ? 0.0
              : 0.5 * std::min(b.grid_min_value, b.asymptotic_floor);
  return c;
}

double sample_absorption(const PhaseTypeDist& d, Rng& rng) {
  // Pick the initial phase from pi; class-D trajectories then walk to the end
  // of the chosen block, so the remainder is a sum of exponential holds.
  double u = rng.uniform();
  int k = d.K - 1;
  double acc = 0.0;
  for (int i = 0; i < d.K; ++i) {
    acc += d.pi(i);
    if (u <= acc) {
      k = i;
      break;
    }
  }
  const int b = d.block_of[k];
  const int tail = d.block_head[b] + d.blocks[b].phases;  // one past block end
  double t = 0.0;
  for (int i = k; i < tail; ++i) t += rng.exponential(d.blocks[b].rate);
  return t;
}

PhaseLayout::PhaseLayout(const std::vector<PhaseTypeDist>& dists) {
  R = static_cast<int>(dists.size());
  offset.resize(R);
  for (int r = 0; r < R; ++r) {
    offset[r] = K;
    for (int k = 0; k < dists[r].K; ++k) {
      route_of.push_back(r);
      phase_of.push_back(k);
    }
    K += dists[r].K;
  }
}

}  // namespace fairshare
