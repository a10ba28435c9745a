#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "fairshare/harness.hpp"
#include "oracle.hpp"

using namespace fairshare;

namespace {

std::string error_message(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

bool contains(const std::string& hay, const std::string& needle) {
  return hay.find(needle) != std::string::npos;
}

std::string read_all(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

SweepCell make_cell(double eps, int rep, double mean, double se, double perp,
                    double norm) {
  SweepCell c;
  c.epsilon = eps;
  c.replication = rep;
  c.seed = 1;
  c.events = 1000;
  c.ok = true;
  c.est.mean_weighted_flows = mean;
  c.est.se_weighted_flows = se;
  c.est.mean_perp_norm = perp;
  c.est.mean_perp_norm_sq = perp * perp;
  c.est.mean_norm = norm;
  c.est.unused_mean = {0.0, 0.0};
  return c;
}

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("config file parses into a working model") {
  const Config cfg = parse_config_file(test_data("linear.json"));
  REQUIRE(cfg.spec.num_links() == 2);
  REQUIRE(cfg.spec.num_routes() == 3);
  CHECK(cfg.spec.links[0].id == "l1");
  CHECK(cfg.spec.routes[2].links == std::vector<int>{0, 1});
  CHECK(cfg.lambda0(0) == 0.6);
  CHECK(cfg.lambda0(2) == 0.4);
  CHECK(cfg.defaults.epsilons == std::vector<double>{0.2, 0.1, 0.05});
  CHECK(cfg.defaults.events_base == 1000);
  CHECK(cfg.defaults.replications == 1);
  CHECK(cfg.defaults.seed == 12345);
  CHECK(cfg.defaults.rel_tol == 0.15);

  const Model m = make_model(cfg, 0.1);
  CHECK(m.profile.critical == std::vector<int>{0, 1});
  CHECK(m.layout.K == 3);
}

TEST_CASE("defaults fall back when absent") {
  const Config cfg = parse_config(R"({
    "links": [{"id": "a", "capacity": 2.0}],
    "routes": [{"id": "r", "links": ["a"], "arrival_rate0": 1.0,
                "filesize": {"type": "exponential", "rate": 1.0}}]
  })");
  CHECK(cfg.spec.routes[0].weight == 1.0);
  CHECK(cfg.defaults.epsilon == 0.1);
  CHECK(cfg.defaults.events == 100000);
  CHECK(cfg.defaults.cap == 200);
  CHECK(cfg.defaults.warmup == 0.2);
  CHECK(!cfg.normalize_weights);
}

TEST_CASE("parse errors carry the offending key path") {
  CHECK(error_code([] { parse_config("not json"); }) == "config parse");
  CHECK(contains(error_message([] { parse_config("{}", "net.json"); }),
                 "links: missing required key"));
  CHECK(contains(error_message([] {
          parse_config(R"({"links": [], "routes": [], "bogus": 1})");
        }),
        "bogus: unknown key"));

  const std::string base = R"({
    "links": [{"id": "a", "capacity": CAP}],
    "routes": [{"id": "r", "links": [LINK], "arrival_rate0": 1.0,
                "filesize": FS}],
    "defaults": DEF
  })";
  auto variant = [&base](const std::string& cap, const std::string& link,
                         const std::string& fs, const std::string& def) {
    std::string s = base;
    s.replace(s.find("CAP"), 3, cap);
    s.replace(s.find("LINK"), 4, link);
    s.replace(s.find("FS"), 2, fs);
    s.replace(s.find("DEF"), 3, def);
    return s;
  };
  const std::string good_fs = R"({"type": "exponential", "rate": 1.0})";

  CHECK(contains(
      error_message([&] { parse_config(variant("-1", "\"a\"", good_fs, "{}")); }),
      "links[0].capacity: must be a positive finite number"));
  CHECK(contains(
      error_message([&] { parse_config(variant("1.0", "\"zz\"", good_fs, "{}")); }),
      "routes[0].links[0]: unknown link id \"zz\""));
  CHECK(contains(
      error_message([&] {
        parse_config(variant("1.0", "\"a\"", R"({"type": "weibull"})", "{}"));
      }),
      "routes[0].filesize.type"));
  CHECK(contains(
      error_message([&] {
        parse_config(variant("1.0", "\"a\"", good_fs, R"({"warmup": 0.7})"));
      }),
      "defaults.warmup: must lie in [0, 0.5]"));
  CHECK(contains(
      error_message([&] {
        parse_config(variant("1.0", "\"a\"", good_fs, R"({"epsilons": [1.5]})"));
      }),
      "defaults.epsilons[0]"));
  CHECK(contains(
      error_message([&] {
        parse_config(variant("1.0", "\"a\"", good_fs, R"({"events": 10})"));
      }),
      "defaults.events: must be at least 100"));
}

TEST_CASE("class_d filesize blocks parse into the generator") {
  const Config cfg = parse_config_file(test_data("linear_phase.json"));
  CHECK(cfg.dists[0].K == 2);   // Erlang-2
  CHECK(cfg.dists[1].K == 2);   // two exponential blocks
  CHECK(cfg.dists[2].K == 3);   // blocks (1, 2) and (3, 1)
  CHECK(cfg.dists[2].block_head == std::vector<int>{0, 2});
  const Model m = make_model(cfg, 0.2);
  CHECK(m.layout.K == 7);
}

TEST_CASE("normalize_weights rescales to max one") {
  const std::string text = R"({
    "normalize_weights": true,
    "links": [{"id": "a", "capacity": 1.0}],
    "routes": [
      {"id": "r1", "links": ["a"], "weight": 2.0, "arrival_rate0": 0.5,
       "filesize": {"type": "exponential", "rate": 1.0}},
      {"id": "r2", "links": ["a"], "weight": 0.5, "arrival_rate0": 0.5,
       "filesize": {"type": "exponential", "rate": 1.0}}
    ]
  })";
  const Config cfg = parse_config(text);
  CHECK(cfg.spec.routes[0].weight == 1.0);
  CHECK(cfg.spec.routes[1].weight == 0.25);
}

TEST_CASE("network hash tracks the network, not the run settings") {
  const std::string text = read_all(test_data("linear.json"));
  const uint64_t h = network_hash(parse_config(text));
  CHECK(h == network_hash(parse_config(text)));

  std::string bumped = text;
  const size_t pos = bumped.find("\"capacity\": 1.0");
  REQUIRE(pos != std::string::npos);
  bumped.replace(pos, 15, "\"capacity\": 1.5");
  CHECK(network_hash(parse_config(bumped)) != h);

  std::string reseeded = text;
  const size_t sp = reseeded.find("12345");
  REQUIRE(sp != std::string::npos);
  reseeded.replace(sp, 5, "54321");
  CHECK(network_hash(parse_config(reseeded)) == h);
}

TEST_CASE("cell seeds depend on the grid position only") {
  const Config cfg = parse_config_file(test_data("linear.json"));
  const SweepReport wide = run_sweep(cfg, {0.2, 0.4}, 1, 777, 50, 1);
  const SweepReport deep = run_sweep(cfg, {0.2}, 2, 777, 50, 1);
  REQUIRE(wide.cells.size() == 2);
  REQUIRE(deep.cells.size() == 2);
  // descending order puts 0.4 first in the wide grid
  CHECK(wide.cells[0].epsilon == 0.4);
  const SweepCell& a = wide.cells[1];
  const SweepCell& b = deep.cells[0];
  CHECK(a.epsilon == 0.2);
  CHECK(a.seed == b.seed);
  CHECK(a.events == b.events);
  CHECK(a.events == 5000);
  REQUIRE(a.ok);
  REQUIRE(b.ok);
  CHECK(a.est.mean_weighted_flows == b.est.mean_weighted_flows);
  CHECK(b.seed != deep.cells[1].seed);
}

TEST_CASE("sweep output does not depend on the thread count") {
  const Config cfg = parse_config_file(test_data("linear.json"));
  const SweepReport serial = run_sweep(cfg, {0.4, 0.2}, 2, 9, 50, 1);
  const SweepReport parallel = run_sweep(cfg, {0.4, 0.2}, 2, 9, 50, 4);
  CHECK(serial.to_csv() == parallel.to_csv());
}

TEST_CASE("sweep rejects bad grids") {
  const Config cfg = parse_config_file(test_data("single_link.json"));
  CHECK(error_code([&] { run_sweep(cfg, {}, 1, 1, 100); }) == "sweep");
  CHECK(error_code([&] { run_sweep(cfg, {0.5}, 0, 1, 100); }) == "sweep");
  CHECK(error_code([&] { run_sweep(cfg, {0.5}, 1, 1, 0); }) == "sweep");
  CHECK(error_code([&] { run_sweep(cfg, {1.5}, 1, 1, 100); }) == "sweep");
}

TEST_CASE("csv round trip is exact") {
  const Config cfg = parse_config_file(test_data("linear.json"));
  const SweepReport rep = run_sweep(cfg, {0.4, 0.2}, 2, 31, 50, 2);
  const std::string csv = rep.to_csv();
  const SweepReport back = SweepReport::from_csv(csv);
  CHECK(back.link_ids == std::vector<std::string>{"l1", "l2"});
  CHECK(back.cells.size() == 4);
  CHECK(back.to_csv() == csv);
  CHECK(back.cells[0].seed == rep.cells[0].seed);
}

TEST_CASE("csv parse guards") {
  CHECK(error_code([] { SweepReport::from_csv(""); }) == "csv parse");
  CHECK(error_code([] { SweepReport::from_csv("epsilon,foo\n"); }) == "csv parse");
  const std::string hdr =
      "epsilon,replication,seed,events,mean_weighted_flows,se_weighted_flows,"
      "mean_perp_norm,mean_perp_norm_sq,mean_norm";
  CHECK(SweepReport::from_csv(hdr + "\n").cells.empty());
  CHECK(error_code([&] {
          SweepReport::from_csv(hdr + "\n0.1,1,5,100,1,0,0,0,abc\n");
        }) == "csv parse");
  CHECK(error_code([&] { SweepReport::from_csv(hdr + "\n0.1,1,5\n"); }) ==
        "csv parse");
  CHECK(error_code([&] { SweepReport::from_csv(hdr + ",surprise\n"); }) ==
        "csv parse");
}

TEST_CASE("simulation csv column layout is pinned") {
  SweepCell c = make_cell(0.25, 1, 8.0, 0.5, 0.3, 2.0);
  c.seed = 7;
  c.events = 1600;
  c.est.unused_mean = {0.2, 0.3};
  SweepCell failed = c;
  failed.ok = false;

  const std::string csv = simulation_csv({"a", "b"}, {c, failed}, true);
  CHECK(csv ==
        "epsilon,replication,seed,events,mean_weighted_flows,se_weighted_flows,"
        "mean_perp_norm,mean_perp_norm_sq,mean_norm,unused_a,unused_b,"
        "eps_weighted_mean,collapse_ratio\n"
        "0.25,1,7,1600,8,0.5,0.3,0.09,2,0.2,0.3,2,0.15\n");
  const std::string bare = simulation_csv({"a", "b"}, {c}, false);
  CHECK(contains(bare, "mean_norm,unused_a,unused_b\n"));
  CHECK(!contains(bare, "collapse_ratio"));
}

TEST_CASE("atomic write replaces the target in one step") {
  const std::string path = "harness_atomic_test.txt";
  write_file_atomic(path, "first\n");
  CHECK(read_all(path) == "first\n");
  write_file_atomic(path, "second\n");
  CHECK(read_all(path) == "second\n");
  CHECK(!std::filesystem::exists(path + ".tmp"));
  std::remove(path.c_str());
  CHECK(error_code([] {
          write_file_atomic("no_such_dir_zz/file.txt", "x");
        }) == "io error");
}

TEST_CASE("bound verdict accepts a converging sweep") {
  const Config cfg = parse_config_file(test_data("linear.json"));
  const Model m = make_model(cfg, 0.1);

  SweepReport rep;
  rep.link_ids = {"l1", "l2"};
  rep.cells = {make_cell(0.2, 1, 9.0, 0.0, 0.3, 1.0),
               make_cell(0.1, 1, 19.5, 0.0, 0.2, 1.0),
               make_cell(0.05, 1, 40.0, 0.0, 0.1, 1.0)};
  const BoundVerdict v = check_bounds(rep, cfg.spec, m.profile, 0.15);
  CHECK(v.lower == 2.0);
  CHECK(v.upper == 2.0);
  REQUIRE(v.per_eps.size() == 3);
  CHECK(v.per_eps[0].epsilon == 0.2);
  CHECK(v.per_eps[2].epsilon == 0.05);
  CHECK(v.per_eps[0].measured == doctest::Approx(1.8));
  CHECK(v.per_eps[2].measured == doctest::Approx(2.0));
  CHECK(v.per_eps[2].replications == 1);
  CHECK(v.pass);
  CHECK(v.collapse_decreasing);
  CHECK(v.trend_slope < 0.0);

  // push the smallest-epsilon point far outside the interval
  rep.cells[2] = make_cell(0.05, 1, 10.0, 0.0, 0.1, 1.0);
  const BoundVerdict bad = check_bounds(rep, cfg.spec, m.profile, 0.15);
  CHECK(!bad.pass);
  CHECK(bad.per_eps[0].pass);  // the 0.2 point is still inside
}

TEST_CASE("weighted networks widen the interval") {
  const Config cfg = parse_config_file(test_data("linear_weighted.json"));
  const Model m = make_model(cfg, 0.1);
  SweepReport rep;
  rep.cells = {make_cell(0.1, 1, 15.0, 0.0, 0.2, 1.0)};
  const BoundVerdict v = check_bounds(rep, cfg.spec, m.profile, 0.15);
  CHECK(v.lower == doctest::Approx(1.0));
  CHECK(v.upper == doctest::Approx(2.0));
  CHECK(v.pass);  // 1.5 sits between the weighted bounds
}

TEST_CASE("collapse trend allows overlapping confidence intervals") {
  const Config cfg = parse_config_file(test_data("linear.json"));
  const Model m = make_model(cfg, 0.1);
  SweepReport rep;
  rep.cells = {make_cell(0.2, 1, 10.0, 0.0, 0.2, 1.0),
               make_cell(0.1, 1, 20.0, 0.0, 0.21, 1.0)};
  CHECK(!check_bounds(rep, cfg.spec, m.profile, 0.15).collapse_decreasing);
  // a noisy small-epsilon cell gets the benefit of the doubt
  rep.cells[1] = make_cell(0.1, 1, 20.0, 0.4, 0.21, 1.0);
  CHECK(check_bounds(rep, cfg.spec, m.profile, 0.15).collapse_decreasing);
}

TEST_CASE("replicated cells use the t interval") {
  const Config cfg = parse_config_file(test_data("linear.json"));
  const Model m = make_model(cfg, 0.1);
  SweepReport rep;
  rep.cells = {make_cell(0.1, 1, 19.0, 0.0, 0.2, 1.0),
               make_cell(0.1, 2, 21.0, 0.0, 0.2, 1.0)};
  const BoundVerdict v = check_bounds(rep, cfg.spec, m.profile, 0.15);
  REQUIRE(v.per_eps.size() == 1);
  CHECK(v.per_eps[0].replications == 2);
  CHECK(v.per_eps[0].measured == doctest::Approx(2.0));
  // t_{0.975}(1) * sd / sqrt(2) with sd = sqrt(2)
  CHECK(v.per_eps[0].ci == doctest::Approx(0.1 * 12.706).epsilon(1e-12));
}

TEST_CASE("failed cells drop out of the verdict") {
  const Config cfg = parse_config_file(test_data("linear.json"));
  const Model m = make_model(cfg, 0.1);
  SweepReport rep;
  SweepCell broken = make_cell(0.05, 1, 0.0, 0.0, 0.0, 0.0);
  broken.ok = false;
  broken.error = "horizon too short: demo";
  rep.cells = {make_cell(0.1, 1, 20.0, 0.0, 0.2, 1.0), broken};
  const BoundVerdict v = check_bounds(rep, cfg.spec, m.profile, 0.15);
  CHECK(v.per_eps.size() == 1);
  CHECK(v.per_eps[0].epsilon == 0.1);
}

TEST_CASE("identity suite is clean on the single link") {
  const Config cfg = parse_config_file(test_data("single_link.json"));
  const IdentityScorecard sc = run_identity_suite(cfg, 0.2, 20, 3);
  CHECK(sc.states_tested == 22);  // zero, one unit vector, 20 random
  CHECK(sc.pass());
  CHECK(sc.m_report.ok());
  CHECK(sc.max_drift_residual <= 1e-9);
  CHECK(sc.max_price_alpha_gap <= 1e-9);  // prices equal the projection weights here
  CHECK(sc.max_subspace_excess <= 1e-9);
}

TEST_CASE("identity suite handles phase-type routes") {
  const Config cfg = parse_config_file(test_data("linear_phase.json"));
  const IdentityScorecard sc = run_identity_suite(cfg, 0.1, 30, 11);
  CHECK(sc.states_tested == 38);  // zero, 7 unit vectors, 30 random
  CHECK(sc.pass());
  CHECK(sc.min_c2_slack >= -1e-8);
  const std::string js = sc.to_json_string();
  CHECK(contains(js, "\"states_tested\": 38"));
  CHECK(contains(js, "\"pass\": true"));
}

}  // TEST_SUITE
