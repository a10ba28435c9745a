#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fairshare/ctmc.hpp"
#include "fairshare/geometry.hpp"
#include "fairshare/inner_product.hpp"
#include "fairshare/model.hpp"

namespace fairshare {

struct RunDefaults {
  double epsilon = 0.1;
  long long events = 100000;
  double warmup = 0.2;
  uint64_t seed = 12345;
  int cap = 200;
  double quad_tol = 1e-10;
  std::vector<double> epsilons = {0.2, 0.1, 0.05, 0.025};
  int replications = 1;
  long long events_base = 1000;  // events per sweep cell = events_base * 4/eps^2
  double rel_tol = 0.15;
};

struct Config {
  NetworkSpec spec;
  std::vector<PhaseTypeDist> dists;
  Eigen::VectorXd lambda0;
  bool normalize_weights = false;  // applied at parse time: kappa /= max kappa
  RunDefaults defaults;
};

// Strict parser: unknown keys are rejected and every error carries the
// offending key path. Throws Error("config parse", ...).
Config parse_config(const std::string& text, const std::string& source = "<config>");
Config parse_config_file(const std::string& path);

// Validates the network and derives the profile; throws on violations.
Model make_model(const Config& cfg, double epsilon);

uint64_t network_hash(const Config& cfg);

struct SweepCell {
  double epsilon = 0.0;
  int replication = 0;
  uint64_t seed = 0;
  long long events = 0;
  StationaryEstimate est;
  bool ok = false;
  std::string error;
};

// Rows ordered by descending epsilon, then replication. Failed cells stay in
// the report (marking the gap) but are skipped when emitting CSV.
struct SweepReport {
  std::vector<std::string> link_ids;
  std::vector<SweepCell> cells;
  uint64_t master_seed = 0;
  long long events_base = 0;
  int replications = 1;
  uint64_t net_hash = 0;

  std::string to_csv() const;  // pinned schema plus derived columns
  static SweepReport from_csv(const std::string& text);
};

// Cell seeds are derived from (master_seed, epsilon bits, replication), so a
// cell's trajectory does not depend on the grid shape or replication count.
SweepReport run_sweep(const Config& cfg, const std::vector<double>& epsilons,
                      int replications, uint64_t master_seed, long long events_base,
                      int max_threads = 0);

// CSV with the pinned column set; derived appends eps_weighted_mean and
// collapse_ratio per row.
std::string simulation_csv(const std::vector<std::string>& link_ids,
                           const std::vector<SweepCell>& rows, bool derived);

// Atomic write: temp file in the target directory, then rename. No partial
// file is ever left behind.
void write_file_atomic(const std::string& path, const std::string& content);

struct BoundVerdict {
  double lower = 0.0;  // L_s * min kappa
  double upper = 0.0;  // L_s * max kappa
  struct PerEps {
    double epsilon = 0.0;
    double measured = 0.0;  // eps * E[sum kappa N], replications aggregated
    double ci = 0.0;
    bool pass = false;
    double collapse_ratio = 0.0;
    double ratio_hw = 0.0;
    int replications = 0;
  };
  std::vector<PerEps> per_eps;  // descending epsilon
  double trend_slope = 0.0;     // least-squares slope of measured against eps
  bool collapse_decreasing = false;
  bool pass = false;  // interval test at the smallest epsilon
  double rel_tol = 0.15;

  std::string to_json_string() const;
};

BoundVerdict check_bounds(const SweepReport& report, const NetworkSpec& spec,
                          const TrafficProfile& profile, double rel_tol = 0.15);

// Identity suite over random states: KKT residuals, the pointwise drift
// properties, the w_l drift identity on critical links, and the M-matrix
// verification. pass() pins the acceptance tolerances.
struct IdentityScorecard {
  MIdentityReport m_report;
  int states_tested = 0;
  double max_feasibility = 0.0;
  double max_stationarity = 0.0;
  double max_complementary = 0.0;
  double max_price_identity = 0.0;
  double max_c1_residual_rel = 0.0;  // scaled by 1 + ||n||
  double min_c2_slack = 0.0;
  double max_drift_residual = 0.0;  // w_l drift vs -eps C_l + U_l, critical l
  double max_price_alpha_gap = 0.0;     // |alpha_l^s - p_l|, reported unasserted
  double max_subspace_excess = 0.0; // ||n_perp^s|| - ||n_perp||, diagnostic

  bool pass() const {
    return m_report.ok() && max_feasibility <= 1e-9 && max_stationarity <= 1e-9 &&
           max_complementary <= 1e-9 && max_price_identity <= 1e-9 &&
           max_c1_residual_rel <= 1e-8 && min_c2_slack >= -1e-8 &&
           max_drift_residual <= 1e-9;
  }
  std::string to_json_string() const;
};

IdentityScorecard run_identity_suite(const Config& cfg, double epsilon, int num_states,
                                     uint64_t seed, double quad_tol = 1e-12);

}  // namespace fairshare
