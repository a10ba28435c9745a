#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "fairshare/error.hpp"
#include "fairshare/harness.hpp"

namespace fs = fairshare;
using nlohmann::json;

namespace {

// "r1:2,r2:3" puts counts on the first phase; "r1.k2:1" targets phase 2.
fs::FlowState parse_state(const std::string& text, const fs::Model& m) {
  fs::FlowState s;
  s.counts.assign(m.layout.K, 0);
  if (text.empty()) return s;
  std::stringstream in(text);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    const auto colon = tok.find(':');
    if (colon == std::string::npos)
      throw fs::Error("state parse", "missing ':' in \"" + tok + "\"");
    const std::string lhs = tok.substr(0, colon);
    long long count = 0;
    int phase = 0;
    std::string rid = lhs;
    try {
      count = std::stoll(tok.substr(colon + 1));
      const auto dot = lhs.rfind(".k");
      if (dot != std::string::npos) {
        rid = lhs.substr(0, dot);
        phase = std::stoi(lhs.substr(dot + 2));
      }
    } catch (const std::exception&) {
      throw fs::Error("state parse", "bad token \"" + tok + "\"");
    }
    const int r = m.spec.route_index(rid);
    if (r < 0) throw fs::Error("state parse", "unknown route \"" + rid + "\"");
    if (phase < 0 || phase >= m.dists[r].K)
      throw fs::Error("state parse", "phase out of range in \"" + tok + "\"");
    if (count < 0) throw fs::Error("state parse", "negative count in \"" + tok + "\"");
    s.counts[m.layout.flat(r, phase)] += count;
  }
  return s;
}

json vector_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw fs::Error("io error", "cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flow-level bandwidth sharing: simulation and identity checks"};
  app.require_subcommand(1);
  int rc = 0;

  std::string config_path;
  std::string state_text;
  std::string out_path;
  std::string sweep_csv;
  double epsilon = -1.0;
  double rel_tol = -1.0;
  double quad_tol = 1e-12;
  long long events = -1;
  long long events_base = -1;
  double warmup = -1.0;
  uint64_t seed = 0;
  bool seed_set = false;
  int cap = -1;
  int replications = -1;
  int states = 1000;
  int threads = 0;
  std::vector<double> epsilons;

  auto add_config = [&](CLI::App* sub) {
    sub->add_option("config", config_path, "network config (JSON)")
        ->required()
        ->check(CLI::ExistingFile);
  };
  auto add_seed = [&](CLI::App* sub) {
    sub->add_option("--seed", seed, "master seed")->each([&](const std::string&) {
      seed_set = true;
    });
  };

  CLI::App* cmd_validate = app.add_subcommand("validate", "structural checks on a config");
  add_config(cmd_validate);

  CLI::App* cmd_alloc =
      app.add_subcommand("alloc", "solve the allocation at a state and verify KKT");
  add_config(cmd_alloc);
  cmd_alloc->add_option("--state", state_text, "counts, e.g. \"r1:2,r2.k1:3\"");
  cmd_alloc->add_option("--epsilon", epsilon, "heavy-traffic epsilon");

  CLI::App* cmd_simulate = app.add_subcommand("simulate", "run one simulation cell");
  add_config(cmd_simulate);
  cmd_simulate->add_option("--epsilon", epsilon, "heavy-traffic epsilon");
  cmd_simulate->add_option("--events", events, "event budget");
  cmd_simulate->add_option("--warmup", warmup, "warmup fraction in [0, 0.5]");
  add_seed(cmd_simulate);
  cmd_simulate->add_option("--out", out_path, "write the estimate as a CSV row");

  CLI::App* cmd_exact = app.add_subcommand("exact", "truncated-generator stationary solve");
  add_config(cmd_exact);
  cmd_exact->add_option("--epsilon", epsilon, "heavy-traffic epsilon");
  cmd_exact->add_option("--cap", cap, "truncation cap on total flow count");
  cmd_exact->add_option("--out", out_path, "write the estimate as a CSV row");

  CLI::App* cmd_sweep = app.add_subcommand("sweep", "epsilon sweep with bound verdict");
  add_config(cmd_sweep);
  cmd_sweep->add_option("--epsilons", epsilons, "epsilon grid");
  cmd_sweep->add_option("--replications", replications, "replications per epsilon");
  add_seed(cmd_sweep);
  cmd_sweep->add_option("--events-base", events_base, "events per cell = base * 4/eps^2");
  cmd_sweep->add_option("--rel-tol", rel_tol, "relative tolerance for the bound check");
  cmd_sweep->add_option("--threads", threads, "worker threads (0: FAIRSHARE_THREADS or all)");
  cmd_sweep->add_option("--out", out_path, "write the sweep CSV");

  CLI::App* cmd_check = app.add_subcommand("check", "identity suite, optionally a sweep CSV");
  add_config(cmd_check);
  cmd_check->add_option("--epsilon", epsilon, "heavy-traffic epsilon");
  cmd_check->add_option("--states", states, "random states to test");
  add_seed(cmd_check);
  cmd_check->add_option("--quad-tol", quad_tol, "quadrature tolerance for M");
  cmd_check->add_option("--rel-tol", rel_tol, "relative tolerance for the bound check");
  cmd_check->add_option("--sweep", sweep_csv, "sweep CSV to re-verify")->check(CLI::ExistingFile);

  cmd_validate->callback([&] {
    const fs::Config cfg = fs::parse_config_file(config_path);
    const fs::ValidationReport report = fs::validate_network(cfg.spec);
    std::cout << report.to_json_string() << "\n";
    rc = report.ok() ? 0 : 1;
  });

  cmd_alloc->callback([&] {
    const fs::Config cfg = fs::parse_config_file(config_path);
    const double eps = epsilon > 0 ? epsilon : cfg.defaults.epsilon;
    const fs::Model m = fs::make_model(cfg, eps);
    const fs::FlowState state = parse_state(state_text, m);
    const Eigen::VectorXd totals = fs::route_totals(m.layout, state);
    const fs::Allocation alloc = fs::solve_allocation(cfg.spec, totals);
    const fs::KKTReport kkt = fs::verify_kkt(cfg.spec, totals, alloc);
    json out;
    out["totals"] = vector_json(totals);
    out["x"] = vector_json(alloc.x);
    out["p"] = vector_json(alloc.p);
    out["U"] = vector_json(alloc.U);
    out["iterations"] = alloc.iterations;
    out["degenerate"] = alloc.degenerate;
    out["kkt"] = json::parse(kkt.to_json_string());
    std::cout << out.dump(2) << "\n";
    rc = kkt.ok() ? 0 : 1;
  });

  cmd_simulate->callback([&] {
    const fs::Config cfg = fs::parse_config_file(config_path);
    const double eps = epsilon > 0 ? epsilon : cfg.defaults.epsilon;
    const fs::Model m = fs::make_model(cfg, eps);
    const fs::InnerProductMatrix ip =
        fs::build_M(cfg.spec, cfg.dists, cfg.lambda0, cfg.defaults.quad_tol);
    const fs::GeometryContext geom = fs::build_geometry(cfg.spec, cfg.dists, m.profile, ip);
    fs::SimParams p;
    p.events = events > 0 ? events : cfg.defaults.events;
    p.warmup_fraction = warmup >= 0 ? warmup : cfg.defaults.warmup;
    p.seed = seed_set ? seed : cfg.defaults.seed;
    const fs::StationaryEstimate est = fs::simulate(m, geom, p);
    std::cout << est.to_json_string() << "\n";
    if (!out_path.empty()) {
      fs::SweepCell cell;
      cell.epsilon = eps;
      cell.replication = 1;
      cell.seed = p.seed;
      cell.events = p.events;
      cell.est = est;
      cell.ok = true;
      std::vector<std::string> ids;
      for (const auto& l : cfg.spec.links) ids.push_back(l.id);
      fs::write_file_atomic(out_path, fs::simulation_csv(ids, {cell}, false));
    }
  });

  cmd_exact->callback([&] {
    const fs::Config cfg = fs::parse_config_file(config_path);
    const double eps = epsilon > 0 ? epsilon : cfg.defaults.epsilon;
    const fs::Model m = fs::make_model(cfg, eps);
    const fs::InnerProductMatrix ip =
        fs::build_M(cfg.spec, cfg.dists, cfg.lambda0, cfg.defaults.quad_tol);
    const fs::GeometryContext geom = fs::build_geometry(cfg.spec, cfg.dists, m.profile, ip);
    const int use_cap = cap > 0 ? cap : cfg.defaults.cap;
    const fs::StationaryEstimate est = fs::exact_stationary(m, geom, use_cap);
    std::cout << est.to_json_string() << "\n";
    if (!out_path.empty()) {
      fs::SweepCell cell;
      cell.epsilon = eps;
      cell.replication = 0;  // marks an exact row
      cell.seed = 0;
      cell.events = est.num_states;
      cell.est = est;
      cell.ok = true;
      std::vector<std::string> ids;
      for (const auto& l : cfg.spec.links) ids.push_back(l.id);
      fs::write_file_atomic(out_path, fs::simulation_csv(ids, {cell}, false));
    }
  });

  cmd_sweep->callback([&] {
    const fs::Config cfg = fs::parse_config_file(config_path);
    const std::vector<double> grid = epsilons.empty() ? cfg.defaults.epsilons : epsilons;
    const int reps = replications > 0 ? replications : cfg.defaults.replications;
    const uint64_t master = seed_set ? seed : cfg.defaults.seed;
    const long long base = events_base > 0 ? events_base : cfg.defaults.events_base;
    const double rtol = rel_tol >= 0 ? rel_tol : cfg.defaults.rel_tol;
    const fs::SweepReport report = fs::run_sweep(cfg, grid, reps, master, base, threads);
    for (const fs::SweepCell& c : report.cells)
      if (!c.ok)
        std::cerr << "cell epsilon=" << c.epsilon << " replication=" << c.replication
                  << " failed: " << c.error << "\n";
    if (!out_path.empty()) fs::write_file_atomic(out_path, report.to_csv());
    const fs::Model m = fs::make_model(cfg, grid.front());
    const fs::BoundVerdict verdict = fs::check_bounds(report, cfg.spec, m.profile, rtol);
    std::cout << verdict.to_json_string() << "\n";
    rc = verdict.pass ? 0 : 1;
  });

  cmd_check->callback([&] {
    const fs::Config cfg = fs::parse_config_file(config_path);
    const double eps = epsilon > 0 ? epsilon : cfg.defaults.epsilon;
    const uint64_t s = seed_set ? seed : cfg.defaults.seed;
    const fs::IdentityScorecard sc =
        fs::run_identity_suite(cfg, eps, states, s, quad_tol);
    bool pass = sc.pass();
    json out = json::parse(sc.to_json_string());
    if (!sweep_csv.empty()) {
      const fs::SweepReport report = fs::SweepReport::from_csv(read_file(sweep_csv));
      const fs::Model m = fs::make_model(cfg, eps);
      const double rtol = rel_tol >= 0 ? rel_tol : cfg.defaults.rel_tol;
      const fs::BoundVerdict verdict = fs::check_bounds(report, cfg.spec, m.profile, rtol);
      out["bounds"] = json::parse(verdict.to_json_string());
      pass = pass && verdict.pass;
    }
    out["pass"] = pass;
    std::cout << out.dump(2) << "\n";
    rc = pass ? 0 : 1;
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const fs::Error& e) {
    json err;
    err["error"] = {{"code", e.code()}, {"message", e.what()}};
    std::cerr << err.dump(2) << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return rc;
}
