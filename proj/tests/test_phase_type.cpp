#include <doctest.h>

#include <cmath>

#include "fairshare/phase_type.hpp"
#include "oracle.hpp"

using namespace fairshare;

namespace {

PhaseTypeDist erlang2() { return build_class_d({{2.0, 2}}, {1.0, 0.0}); }
PhaseTypeDist hyper12() { return build_class_d({{1.0, 1}, {2.0, 1}}, {0.5, 0.5}); }
PhaseTypeDist class_d3() { return build_class_d({{1.0, 2}, {3.0, 1}}, {0.5, 0.2, 0.3}); }

}  // namespace

TEST_SUITE("phase_type") {

TEST_CASE("exponential factory") {
  const PhaseTypeDist d = PhaseTypeDist::exponential(2.0);
  CHECK(d.K == 1);
  CHECK(d.is_exponential());
  CHECK(d.S(0, 0) == -2.0);
  CHECK(d.pi(0) == 1.0);
  CHECK(d.min_rate() == 2.0);
  const Moments m = moments_and_loads(d);
  CHECK(m.mean == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(m.rate == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(m.chi(0) == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("generator assembly") {
  const PhaseTypeDist d = class_d3();
  CHECK(d.K == 3);
  CHECK(d.S(0, 0) == -1.0);
  CHECK(d.S(0, 1) == 1.0);
  CHECK(d.S(1, 1) == -1.0);
  CHECK(d.S(1, 2) == 0.0);  // no coupling across blocks
  CHECK(d.S(2, 2) == -3.0);
  CHECK(d.block_of == std::vector<int>{0, 0, 1});
  CHECK(d.block_head == std::vector<int>{0, 2});
  const Eigen::VectorXd exits = d.exit_rates();
  CHECK(exits(0) == 0.0);
  CHECK(exits(1) == 1.0);
  CHECK(exits(2) == 3.0);
  CHECK(d.min_rate() == 1.0);
}

TEST_CASE("moment oracles") {
  // Erlang-2 at rate 2: mean 1, chi = (1/2, 1/2) by direct inversion.
  const Moments me = moments_and_loads(erlang2());
  CHECK(me.mean == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(me.chi(0) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(me.chi(1) == doctest::Approx(0.5).epsilon(1e-14));

  // Hyperexponential (1, 2; 1/2, 1/2): mean 3/4, chi = (1/2, 1/4).
  const Moments mh = moments_and_loads(hyper12());
  CHECK(mh.mean == doctest::Approx(0.75).epsilon(1e-14));
  CHECK(mh.chi(0) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(mh.chi(1) == doctest::Approx(0.25).epsilon(1e-14));

  // Blocks (1,2),(3,1) with pi (.5,.2,.3): mean 13/10, chi = (1/2, 7/10, 1/10).
  const Moments mc = moments_and_loads(class_d3());
  CHECK(mc.mean == doctest::Approx(1.3).epsilon(1e-14));
  CHECK(mc.chi(0) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(mc.chi(1) == doctest::Approx(0.7).epsilon(1e-14));
  CHECK(mc.chi(2) == doctest::Approx(0.1).epsilon(1e-14));
}

TEST_CASE("flow balance identity") {
  // (-S)^T (lambda chi) = lambda pi^T holds exactly for any admissible dist.
  for (const PhaseTypeDist& d : {erlang2(), hyper12(), class_d3()}) {
    const Moments m = moments_and_loads(d);
    const double lambda = 1.7;
    const Eigen::VectorXd lhs = (-d.S).transpose() * (lambda * m.chi);
    const Eigen::VectorXd rhs = lambda * d.pi.transpose();
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() <= 1e-13);
  }
}

TEST_CASE("validation errors") {
  CHECK(error_code([] { build_class_d({{0.0, 1}}, {1.0}); }) == "nonpositive rate");
  CHECK(error_code([] { build_class_d({{1.0, 0}}, {1.0}); }) == "nonpositive phase count");
  CHECK(error_code([] { build_class_d({{1.0, 1}, {1.0, 1}}, {0.5, 0.5}); }) ==
        "nondistinct rates");
  // separation is relative: 1e-7 apart fails at tol 1e-6, 10% apart passes
  CHECK(error_code([] { build_class_d({{1.0, 1}, {1.0000001, 1}}, {0.5, 0.5}); }) ==
        "nondistinct rates");
  CHECK(error_code([] { build_class_d({{1.0, 1}, {1.1, 1}}, {0.5, 0.5}); }) == "");
  CHECK(error_code([] { build_class_d({{1.0, 2}}, {1.0}); }) == "pi length mismatch");
  CHECK(error_code([] { build_class_d({{1.0, 1}}, {0.7}); }) == "pi not a distribution");
  CHECK(error_code([] { build_class_d({{1.0, 2}}, {1.2, -0.2}); }) == "pi not a distribution");
  CHECK(error_code([] { build_class_d({{1.0, 1}, {2.0, 1}}, {1.0, 0.0}); }) ==
        "initial mass zero on block head");
  // mass on a non-head phase is admissible
  CHECK(error_code([] { class_d3(); }) == "");
}

TEST_CASE("unchecked bypasses validation") {
  Eigen::RowVectorXd pi(2);
  pi << 0.5, 0.5;
  const PhaseTypeDist d = PhaseTypeDist::unchecked({{1.0, 1}, {1.0, 1}}, pi);
  CHECK(d.K == 2);
  CHECK(d.S(0, 0) == -1.0);
  CHECK(d.S(1, 1) == -1.0);
}

TEST_CASE("survival curve and mean recovery") {
  for (const PhaseTypeDist& d : {erlang2(), hyper12(), class_d3()}) {
    const Moments m = moments_and_loads(d);
    const HazardCurve c = survival_and_hazard(d, 50.0 / d.min_rate(), 50000);
    CHECK(c.u(0) == 0.0);
    CHECK(c.survival(0) == doctest::Approx(1.0).epsilon(1e-12));
    for (int i = 1; i < c.u.size(); ++i) CHECK(c.survival(i) <= c.survival(i - 1) + 1e-14);
    // trapezoid integral of G recovers the mean
    double integral = 0.5 * (c.survival(0) + c.survival(1)) * c.u(1);
    for (int i = 2; i < c.u.size(); ++i)
      integral += 0.5 * (c.survival(i) + c.survival(i - 1)) * (c.u(i) - c.u(i - 1));
    CHECK(integral == doctest::Approx(m.mean).epsilon(1e-6));
  }
}

TEST_CASE("hazard bound oracles") {
  // exponential: constant hazard mu, eta = mu / 2
  const HazardCurve ce = survival_and_hazard(PhaseTypeDist::exponential(2.0));
  CHECK(!ce.bound.flagged_nonpositive);
  CHECK(ce.bound.asymptotic_floor == 2.0);
  CHECK(ce.bound.eta == doctest::Approx(1.0).epsilon(1e-9));

  // hyperexponential: hazard decreases from 1.5 to the floor 1, eta = 1/2
  const HazardCurve ch = survival_and_hazard(hyper12());
  CHECK(!ch.bound.flagged_nonpositive);
  CHECK(ch.bound.asymptotic_floor == 1.0);
  CHECK(ch.hazard(0) == doctest::Approx(1.5).epsilon(1e-12));
  CHECK(ch.bound.eta == doctest::Approx(0.5).epsilon(1e-9));

  // Erlang: g(0) = 0, so the probed minimum vanishes and the bound is flagged
  const HazardCurve cr = survival_and_hazard(erlang2());
  CHECK(cr.bound.flagged_nonpositive);
  CHECK(cr.bound.eta == 0.0);
  CHECK(cr.density(0) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("absorption sampling") {
  const PhaseTypeDist d = class_d3();
  const Moments m = moments_and_loads(d);
  Rng rng(2024, 1);
  const int n = 200000;
  double acc = 0.0, acc2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double t = sample_absorption(d, rng);
    CHECK(t > 0.0);
    acc += t;
    acc2 += t * t;
  }
  const double mean = acc / n;
  const double sd = std::sqrt(acc2 / n - mean * mean);
  CHECK(std::abs(mean - m.mean) <= 4.0 * sd / std::sqrt(double(n)));

  // identical keys reproduce the stream
  Rng a(99, 5), b(99, 5);
  for (int i = 0; i < 100; ++i) CHECK(sample_absorption(d, a) == sample_absorption(d, b));
}

}  // TEST_SUITE
