#include <doctest.h>

#include <cmath>

#include "fairshare/ctmc.hpp"
#include "fairshare/harness.hpp"
#include "oracle.hpp"

using namespace fairshare;

namespace {

struct Ctx {
  Config cfg;
  Model model;
  InnerProductMatrix ip;
  GeometryContext geom;
};

Ctx load(const std::string& name, double epsilon) {
  Ctx c{parse_config_file(test_data(name)), {}, {}, {}};
  c.model = make_model(c.cfg, epsilon);
  c.ip = build_M(c.cfg.spec, c.cfg.dists, c.cfg.lambda0, 1e-12);
  c.geom = build_geometry(c.cfg.spec, c.cfg.dists, c.model.profile, c.ip);
  return c;
}

}  // namespace

TEST_SUITE("ctmc") {

TEST_CASE("transition kernel on the two-link example") {
  const Ctx c = load("linear.json", 0.1);
  const FlowState state{{1, 1, 1}};
  const Allocation alloc = solve_allocation(c.cfg.spec, route_totals(c.model.layout, state));
  const TransitionSet ts = transition_kernel(c.model, state, alloc);
  REQUIRE(ts.transitions.size() == 6);  // three arrivals, three departures

  double arrivals = 0.0, departures = 0.0;
  for (const Transition& t : ts.transitions) {
    CHECK(t.rate > 0.0);
    if (t.add >= 0 && t.sub < 0) arrivals += t.rate;
    if (t.sub >= 0 && t.add < 0) departures += t.rate;
  }
  CHECK(arrivals == doctest::Approx(0.9 * 1.6).epsilon(1e-12));
  // departures are n_r x_r mu_r = x_r here: 2/3 + 2/3 + 1/3
  CHECK(departures == doctest::Approx(5.0 / 3.0).epsilon(1e-10));
  CHECK(ts.total_rate == doctest::Approx(arrivals + departures).epsilon(1e-12));
}

TEST_CASE("kernel at the empty state has arrivals only") {
  const Ctx c = load("linear.json", 0.2);
  const FlowState state{{0, 0, 0}};
  const Allocation alloc = solve_allocation(c.cfg.spec, route_totals(c.model.layout, state));
  const TransitionSet ts = transition_kernel(c.model, state, alloc);
  REQUIRE(ts.transitions.size() == 3);
  for (const Transition& t : ts.transitions) {
    CHECK(t.add >= 0);
    CHECK(t.sub < 0);
  }
  CHECK(ts.total_rate == doctest::Approx(0.8 * 1.6).epsilon(1e-12));
}

TEST_CASE("kernel mean drift matches lambda pi + S^T x n") {
  const Ctx c = load("linear_phase.json", 0.15);
  Rng rng(55, 3);
  const int K = c.model.layout.K;
  for (int trial = 0; trial < 40; ++trial) {
    FlowState state;
    state.counts.assign(K, 0);
    for (int i = 0; i < K; ++i)
      state.counts[i] = static_cast<long long>(rng.uniform() * 12.0);
    const Eigen::VectorXd totals = route_totals(c.model.layout, state);
    const Allocation alloc = solve_allocation(c.cfg.spec, totals);
    const TransitionSet ts = transition_kernel(c.model, state, alloc);

    Eigen::VectorXd drift = Eigen::VectorXd::Zero(K);
    for (const Transition& t : ts.transitions) {
      if (t.add >= 0) drift(t.add) += t.rate;
      if (t.sub >= 0) drift(t.sub) -= t.rate;
    }
    Eigen::VectorXd expected = Eigen::VectorXd::Zero(K);
    for (int r = 0; r < c.cfg.spec.num_routes(); ++r) {
      const auto& d = c.cfg.dists[r];
      const int off = c.model.layout.offset[r];
      Eigen::VectorXd nr(d.K);
      for (int k = 0; k < d.K; ++k) nr(k) = static_cast<double>(state.counts[off + k]);
      expected.segment(off, d.K) = c.model.profile.lambda_eps(r) * d.pi.transpose() +
                                   d.S.transpose() * (alloc.x(r) * nr);
    }
    CHECK((drift - expected).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("single link truncated solve recovers the M/M/1 law") {
  for (const double eps : {0.5, 0.2}) {
    const Ctx c = load("single_link.json", eps);
    const StationaryEstimate est = exact_stationary(c.model, c.geom, 400);
    CHECK(est.mean_weighted_flows == doctest::Approx((1.0 - eps) / eps).epsilon(1e-8));
    CHECK(est.unused_mean[0] == doctest::Approx(eps).epsilon(1e-8));
    // geometric law at the bottom states
    const double rho = 1.0 - eps;
    CHECK(est.distribution[0] == doctest::Approx(eps).epsilon(1e-8));
    CHECK(est.distribution[1] == doctest::Approx(eps * rho).epsilon(1e-8));
    CHECK(est.mean_perp_norm <= 1e-9);  // single generator spans every state
  }
}

TEST_CASE("two state chain") {
  const Config cfg = parse_config(R"({
    "links": [{"id": "l1", "capacity": 1.0}],
    "routes": [{"id": "r1", "links": ["l1"], "arrival_rate0": 2.0,
                "filesize": {"type": "exponential", "rate": 2.0}}]
  })");
  const Model m = make_model(cfg, 0.5);
  const StationaryEstimate est = exact_stationary(m, GeometryContext{}, 1);
  REQUIRE(est.num_states == 2);
  CHECK(est.distribution[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(est.distribution[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(est.boundary_mass == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("truncation cap is visible and monotone") {
  const Ctx c = load("single_link.json", 0.5);
  const StationaryEstimate small = exact_stationary(c.model, c.geom, 5);
  const StationaryEstimate big = exact_stationary(c.model, c.geom, 400);
  CHECK(small.cap == 5);
  CHECK(small.boundary_mass > 0.01);
  CHECK(big.boundary_mass < 1e-12);  // solver noise, the true mass is ~1e-121
  CHECK(small.mean_weighted_flows < big.mean_weighted_flows);
}

TEST_CASE("simulation agrees with the exact solve") {
  const Ctx c = load("single_link.json", 0.2);
  const StationaryEstimate exact = exact_stationary(c.model, c.geom, 400);
  SimParams p;
  p.events = 400000;
  p.seed = 99;
  const StationaryEstimate sim = simulate(c.model, c.geom, p);
  CHECK(std::abs(sim.mean_weighted_flows - exact.mean_weighted_flows) <=
        4.0 * sim.se_weighted_flows);
  CHECK(sim.se_weighted_flows > 0.0);
  CHECK(sim.horizon_time > 0.0);
}

TEST_CASE("simulation is deterministic in the seed") {
  const Ctx c = load("linear.json", 0.2);
  SimParams p;
  p.events = 20000;
  p.seed = 4242;
  const StationaryEstimate a = simulate(c.model, c.geom, p);
  const StationaryEstimate b = simulate(c.model, c.geom, p);
  CHECK(a.mean_weighted_flows == b.mean_weighted_flows);
  CHECK(a.se_weighted_flows == b.se_weighted_flows);
  CHECK(a.mean_perp_norm == b.mean_perp_norm);
  CHECK(a.horizon_time == b.horizon_time);
  p.seed = 4243;
  const StationaryEstimate d = simulate(c.model, c.geom, p);
  CHECK(a.mean_weighted_flows != d.mean_weighted_flows);
}

TEST_CASE("deep heavy traffic still runs") {
  const Ctx c = load("single_link.json", 0.999);
  SimParams p;
  p.events = 5000;
  p.seed = 5;
  const StationaryEstimate est = simulate(c.model, c.geom, p);
  CHECK(est.mean_weighted_flows < 1.0);  // arrivals almost never happen
}

TEST_CASE("generator drift of simple functionals") {
  const Ctx c = load("single_link.json", 0.3);
  const FlowState state{{5}};
  CHECK(drift_eval(c.model, [](const FlowState&) { return 3.14; }, state) ==
        doctest::Approx(0.0).epsilon(1e-14));
  // V = n: drift is lambda_eps - served rate = (1 - eps) - 1 on a busy link
  const double d = drift_eval(
      c.model, [](const FlowState& s) { return static_cast<double>(s.counts[0]); }, state);
  CHECK(d == doctest::Approx(-0.3).epsilon(1e-12));
}

TEST_CASE("stationary distribution kills every drift") {
  const Ctx c = load("single_link.json", 0.3);
  const int cap = 100;
  const StationaryEstimate est = exact_stationary(c.model, c.geom, cap);
  const auto V = [](const FlowState& s) {
    return static_cast<double>(std::min<long long>(s.counts[0], 15));
  };
  double acc = 0.0;
  for (int nn = 0; nn <= cap; ++nn)
    acc += est.distribution[nn] * drift_eval(c.model, V, FlowState{{nn}});
  CHECK(std::abs(acc) <= 1e-12);
}

TEST_CASE("uniformized chain matches the generator solution") {
  const Config cfg = parse_config_file(test_data("single_link.json"));
  const Model m = make_model(cfg, 0.1);
  const UniformizeReport r1 = uniformize_check(m, 100, 1.0);
  CHECK(r1.qbar > 0.0);
  CHECK(r1.power_iterations > 0);
  CHECK(r1.tv_distance <= 1e-10);
  const UniformizeReport r10 = uniformize_check(m, 100, 10.0);
  CHECK(r10.qbar == doctest::Approx(10.0 * r1.qbar).epsilon(1e-12));
  CHECK(r10.tv_distance <= 1e-10);
}

TEST_CASE("guards") {
  const Ctx c = load("single_link.json", 0.5);
  SimParams p;
  p.events = 50;
  CHECK(error_code([&] { simulate(c.model, c.geom, p); }) == "horizon too short");
  p.events = 10000;
  p.warmup_fraction = 0.9;
  CHECK(error_code([&] { simulate(c.model, c.geom, p); }) == "warmup out of range");
  CHECK(error_code([&] { exact_stationary(c.model, c.geom, 0); }) == "cap too small");

  const Ctx big = load("linear_phase.json", 0.2);
  CHECK(error_code([&] { exact_stationary(big.model, big.geom, 100); }) ==
        "state space too large");
}

}  // TEST_SUITE
