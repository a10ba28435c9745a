#include "fairshare/harness.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>
#include <thread>

#include "fairshare/error.hpp"
#include "fairshare/rng.hpp"

namespace fairshare {
namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& path, const std::string& msg) {
  throw Error("config parse", path + ": " + msg);
}

void expect_object(const json& j, const std::string& path) {
  if (!j.is_object()) fail(path, "expected an object");
}

void check_keys(const json& j, const std::string& path,
                std::initializer_list<const char*> allowed) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        known = true;
        break;
      }
    if (!known) fail(path.empty() ? it.key() : path + "." + it.key(), "unknown key");
  }
}

const json& require(const json& j, const std::string& path, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) fail(path.empty() ? key : path + "." + key, "missing required key");
  return *it;
}

double number_at(const json& j, const std::string& path) {
  if (!j.is_number()) fail(path, "expected a number");
  return j.get<double>();
}

double positive_at(const json& j, const std::string& path) {
  const double v = number_at(j, path);
  if (!(v > 0.0) || !std::isfinite(v)) fail(path, "must be a positive finite number");
  return v;
}

long long integer_at(const json& j, const std::string& path) {
  if (!j.is_number_integer()) fail(path, "expected an integer");
  return j.get<long long>();
}

std::string string_at(const json& j, const std::string& path) {
  if (!j.is_string()) fail(path, "expected a string");
  return j.get<std::string>();
}

bool bool_at(const json& j, const std::string& path) {
  if (!j.is_boolean()) fail(path, "expected a boolean");
  return j.get<bool>();
}

PhaseTypeDist parse_filesize(const json& j, const std::string& path) {
  expect_object(j, path);
  const std::string type = string_at(require(j, path, "type"), path + ".type");
  if (type == "exponential") {
    check_keys(j, path, {"type", "rate"});
    return PhaseTypeDist::exponential(positive_at(require(j, path, "rate"), path + ".rate"));
  }
  if (type != "class_d") fail(path + ".type", "must be \"exponential\" or \"class_d\"");
  check_keys(j, path, {"type", "blocks", "initial"});
  const json& jb = require(j, path, "blocks");
  if (!jb.is_array() || jb.empty()) fail(path + ".blocks", "expected a nonempty array");
  std::vector<Block> blocks;
  for (size_t i = 0; i < jb.size(); ++i) {
    const std::string bp = path + ".blocks[" + std::to_string(i) + "]";
    expect_object(jb[i], bp);
    check_keys(jb[i], bp, {"rate", "phases"});
    Block b;
    b.rate = positive_at(require(jb[i], bp, "rate"), bp + ".rate");
    const long long phases = integer_at(require(jb[i], bp, "phases"), bp + ".phases");
    if (phases < 1 || phases > 64) fail(bp + ".phases", "must be in [1, 64]");
    b.phases = static_cast<int>(phases);
    blocks.push_back(b);
  }
  const json& ji = require(j, path, "initial");
  if (!ji.is_array()) fail(path + ".initial", "expected an array");
  std::vector<double> initial;
  for (size_t i = 0; i < ji.size(); ++i) {
    const std::string ip = path + ".initial[" + std::to_string(i) + "]";
    const double v = number_at(ji[i], ip);
    if (v < 0.0) fail(ip, "must be nonnegative");
    initial.push_back(v);
  }
  try {
    return build_class_d(blocks, initial);
  } catch (const Error& e) {
    fail(path, e.what());
  }
}

void parse_defaults(const json& j, const std::string& path, RunDefaults* out) {
  expect_object(j, path);
  check_keys(j, path,
             {"epsilon", "events", "warmup", "seed", "cap", "quad_tol", "epsilons",
              "replications", "events_base", "rel_tol"});
  if (j.contains("epsilon")) {
    out->epsilon = number_at(j["epsilon"], path + ".epsilon");
    if (!(out->epsilon > 0.0 && out->epsilon < 1.0)) fail(path + ".epsilon", "must lie in (0, 1)");
  }
  if (j.contains("events")) {
    const long long v = integer_at(j["events"], path + ".events");
    if (v < 100) fail(path + ".events", "must be at least 100");
    out->events = v;
  }
  if (j.contains("warmup")) {
    out->warmup = number_at(j["warmup"], path + ".warmup");
    if (!(out->warmup >= 0.0 && out->warmup <= 0.5)) fail(path + ".warmup", "must lie in [0, 0.5]");
  }
  if (j.contains("seed")) {
    const json& s = j["seed"];
    if (!s.is_number_integer() || (s.is_number_integer() && !s.is_number_unsigned() &&
                                   s.get<long long>() < 0))
      fail(path + ".seed", "expected a nonnegative integer");
    out->seed = s.get<uint64_t>();
  }
  if (j.contains("cap")) {
    const long long v = integer_at(j["cap"], path + ".cap");
    if (v < 1) fail(path + ".cap", "must be positive");
    out->cap = static_cast<int>(v);
  }
  if (j.contains("quad_tol")) out->quad_tol = positive_at(j["quad_tol"], path + ".quad_tol");
  if (j.contains("epsilons")) {
    const json& arr = j["epsilons"];
    if (!arr.is_array() || arr.empty()) fail(path + ".epsilons", "expected a nonempty array");
    out->epsilons.clear();
    for (size_t i = 0; i < arr.size(); ++i) {
      const std::string ep = path + ".epsilons[" + std::to_string(i) + "]";
      const double v = number_at(arr[i], ep);
      if (!(v > 0.0 && v < 1.0)) fail(ep, "must lie in (0, 1)");
      out->epsilons.push_back(v);
    }
  }
  if (j.contains("replications")) {
    const long long v = integer_at(j["replications"], path + ".replications");
    if (v < 1 || v > 1024) fail(path + ".replications", "must be in [1, 1024]");
    out->replications = static_cast<int>(v);
  }
  if (j.contains("events_base")) {
    const long long v = integer_at(j["events_base"], path + ".events_base");
    if (v < 1) fail(path + ".events_base", "must be positive");
    out->events_base = v;
  }
  if (j.contains("rel_tol")) {
    out->rel_tol = number_at(j["rel_tol"], path + ".rel_tol");
    if (!(out->rel_tol >= 0.0 && out->rel_tol < 1.0)) fail(path + ".rel_tol", "must lie in [0, 1)");
  }
}

// Shortest round-trip decimal form.
std::string fmt(double v) {
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

double parse_csv_double(const std::string& s, int line) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw Error("csv parse", "line " + std::to_string(line) + ": bad number \"" + s + "\"");
  return v;
}

long long parse_csv_int(const std::string& s, int line) {
  long long v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw Error("csv parse", "line " + std::to_string(line) + ": bad integer \"" + s + "\"");
  return v;
}

uint64_t parse_csv_u64(const std::string& s, int line) {
  uint64_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw Error("csv parse", "line " + std::to_string(line) + ": bad integer \"" + s + "\"");
  return v;
}

double tdist975(int df) {
  static const double table[] = {12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306,
                                 2.262,  2.228, 2.201, 2.179, 2.160, 2.145, 2.131, 2.120,
                                 2.110,  2.101, 2.093, 2.086, 2.080, 2.074, 2.069, 2.064,
                                 2.060,  2.056, 2.052, 2.048, 2.045, 2.042, 2.040, 2.037};
  if (df < 1) return table[0];
  if (df <= 32) return table[df - 1];
  return 1.96 + 2.4 / static_cast<double>(df);
}

void require_valid(const NetworkSpec& spec) {
  const ValidationReport report = validate_network(spec);
  if (!report.ok()) {
    const Violation& v = report.violations.front();
    throw Error("invalid network", v.path + ": " + v.code);
  }
}

int resolve_threads(int requested, size_t jobs) {
  int t = requested;
  if (t <= 0) {
    if (const char* env = std::getenv("FAIRSHARE_THREADS")) t = std::atoi(env);
    if (t <= 0) t = static_cast<int>(std::thread::hardware_concurrency());
  }
  if (t < 1) t = 1;
  return static_cast<int>(std::min<size_t>(static_cast<size_t>(t), jobs));
}

struct EpsGroup {
  double epsilon = 0.0;
  std::vector<const SweepCell*> cells;
};

double sample_sd(const std::vector<double>& xs, double mean) {
  if (xs.size() < 2) return 0.0;
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

}  // namespace

Config parse_config(const std::string& text, const std::string& source) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw Error("config parse", source + ": " + e.what());
  }
  expect_object(root, source);
  check_keys(root, "", {"links", "routes", "normalize_weights", "defaults"});

  Config cfg;
  if (root.contains("normalize_weights"))
    cfg.normalize_weights = bool_at(root["normalize_weights"], "normalize_weights");
  if (root.contains("defaults")) parse_defaults(root["defaults"], "defaults", &cfg.defaults);

  const json& jl = require(root, "", "links");
  if (!jl.is_array() || jl.empty()) fail("links", "expected a nonempty array");
  for (size_t i = 0; i < jl.size(); ++i) {
    const std::string lp = "links[" + std::to_string(i) + "]";
    expect_object(jl[i], lp);
    check_keys(jl[i], lp, {"id", "capacity"});
    Link link;
    link.id = string_at(require(jl[i], lp, "id"), lp + ".id");
    if (link.id.empty()) fail(lp + ".id", "must be nonempty");
    link.capacity = positive_at(require(jl[i], lp, "capacity"), lp + ".capacity");
    cfg.spec.links.push_back(link);
  }

  const json& jr = require(root, "", "routes");
  if (!jr.is_array() || jr.empty()) fail("routes", "expected a nonempty array");
  std::vector<double> lambda0;
  for (size_t i = 0; i < jr.size(); ++i) {
    const std::string rp = "routes[" + std::to_string(i) + "]";
    expect_object(jr[i], rp);
    check_keys(jr[i], rp, {"id", "links", "weight", "arrival_rate0", "filesize"});
    Route route;
    route.id = string_at(require(jr[i], rp, "id"), rp + ".id");
    if (route.id.empty()) fail(rp + ".id", "must be nonempty");
    const json& rl = require(jr[i], rp, "links");
    if (!rl.is_array() || rl.empty()) fail(rp + ".links", "expected a nonempty array");
    for (size_t k = 0; k < rl.size(); ++k) {
      const std::string kp = rp + ".links[" + std::to_string(k) + "]";
      const std::string id = string_at(rl[k], kp);
      const int idx = cfg.spec.link_index(id);
      if (idx < 0) fail(kp, "unknown link id \"" + id + "\"");
      route.links.push_back(idx);
    }
    if (jr[i].contains("weight"))
      route.weight = positive_at(jr[i]["weight"], rp + ".weight");
    lambda0.push_back(positive_at(require(jr[i], rp, "arrival_rate0"), rp + ".arrival_rate0"));
    cfg.dists.push_back(parse_filesize(require(jr[i], rp, "filesize"), rp + ".filesize"));
    cfg.spec.routes.push_back(route);
  }

  if (cfg.normalize_weights) {
    double wmax = 0.0;
    for (const Route& r : cfg.spec.routes) wmax = std::max(wmax, r.weight);
    for (Route& r : cfg.spec.routes) r.weight /= wmax;
  }

  cfg.spec.H = routing_matrix(cfg.spec);
  cfg.lambda0 = Eigen::Map<const Eigen::VectorXd>(lambda0.data(), lambda0.size());
  return cfg;
}

Config parse_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("io error", "cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path);
}

Model make_model(const Config& cfg, double epsilon) {
  require_valid(cfg.spec);
  return Model(cfg.spec, cfg.dists,
               derive_traffic_profile(cfg.spec, cfg.dists, cfg.lambda0, epsilon));
}

uint64_t network_hash(const Config& cfg) {
  std::ostringstream s;
  for (const Link& l : cfg.spec.links) s << "L|" << l.id << '|' << fmt(l.capacity) << ';';
  for (size_t r = 0; r < cfg.spec.routes.size(); ++r) {
    const Route& rt = cfg.spec.routes[r];
    s << "R|" << rt.id << '|' << fmt(rt.weight) << '|' << fmt(cfg.lambda0(r)) << '|';
    for (int l : rt.links) s << l << ',';
    s << '|';
    const PhaseTypeDist& d = cfg.dists[r];
    for (const Block& b : d.blocks) s << fmt(b.rate) << 'x' << b.phases << ',';
    s << '|';
    for (int k = 0; k < d.K; ++k) s << fmt(d.pi(k)) << ',';
    s << ';';
  }
  const std::string bytes = s.str();
  uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

std::string simulation_csv(const std::vector<std::string>& link_ids,
                           const std::vector<SweepCell>& rows, bool derived) {
  std::ostringstream out;
  out << "epsilon,replication,seed,events,mean_weighted_flows,se_weighted_flows,"
         "mean_perp_norm,mean_perp_norm_sq,mean_norm";
  for (const std::string& id : link_ids) out << ",unused_" << id;
  if (derived) out << ",eps_weighted_mean,collapse_ratio";
  out << '\n';
  for (const SweepCell& c : rows) {
    if (!c.ok || c.est.unused_mean.size() != link_ids.size()) continue;
    out << fmt(c.epsilon) << ',' << c.replication << ',' << c.seed << ',' << c.events << ','
        << fmt(c.est.mean_weighted_flows) << ',' << fmt(c.est.se_weighted_flows) << ','
        << fmt(c.est.mean_perp_norm) << ',' << fmt(c.est.mean_perp_norm_sq) << ','
        << fmt(c.est.mean_norm);
    for (double u : c.est.unused_mean) out << ',' << fmt(u);
    if (derived) {
      const double ratio =
          c.est.mean_norm > 0.0 ? c.est.mean_perp_norm / c.est.mean_norm : 0.0;
      out << ',' << fmt(c.epsilon * c.est.mean_weighted_flows) << ',' << fmt(ratio);
    }
    out << '\n';
  }
  return out.str();
}

std::string SweepReport::to_csv() const { return simulation_csv(link_ids, cells, true); }

SweepReport SweepReport::from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw Error("csv parse", "empty input");
  const std::vector<std::string> cols = split_csv_line(line);
  static const char* fixed[] = {"epsilon",
                                "replication",
                                "seed",
                                "events",
                                "mean_weighted_flows",
                                "se_weighted_flows",
                                "mean_perp_norm",
                                "mean_perp_norm_sq",
                                "mean_norm"};
  if (cols.size() < 9) throw Error("csv parse", "missing columns");
  for (size_t i = 0; i < 9; ++i)
    if (cols[i] != fixed[i])
      throw Error("csv parse", "expected column \"" + std::string(fixed[i]) + "\", got \"" +
                                   cols[i] + "\"");
  SweepReport rep;
  size_t j = 9;
  while (j < cols.size() && cols[j].rfind("unused_", 0) == 0) {
    rep.link_ids.push_back(cols[j].substr(7));
    ++j;
  }
  if (j < cols.size()) {
    const bool derived_tail =
        cols[j] == "eps_weighted_mean" && j + 1 < cols.size() &&
        cols[j + 1] == "collapse_ratio" && j + 2 == cols.size();
    if (!derived_tail) throw Error("csv parse", "unexpected column \"" + cols[j] + "\"");
  }
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const std::vector<std::string> f = split_csv_line(line);
    if (f.size() != cols.size())
      throw Error("csv parse", "line " + std::to_string(lineno) + ": expected " +
                                   std::to_string(cols.size()) + " fields, got " +
                                   std::to_string(f.size()));
    SweepCell c;
    c.epsilon = parse_csv_double(f[0], lineno);
    c.replication = static_cast<int>(parse_csv_int(f[1], lineno));
    c.seed = parse_csv_u64(f[2], lineno);
    c.events = parse_csv_int(f[3], lineno);
    c.est.mean_weighted_flows = parse_csv_double(f[4], lineno);
    c.est.se_weighted_flows = parse_csv_double(f[5], lineno);
    c.est.mean_perp_norm = parse_csv_double(f[6], lineno);
    c.est.mean_perp_norm_sq = parse_csv_double(f[7], lineno);
    c.est.mean_norm = parse_csv_double(f[8], lineno);
    for (size_t k = 0; k < rep.link_ids.size(); ++k)
      c.est.unused_mean.push_back(parse_csv_double(f[9 + k], lineno));
    c.est.events = c.events;
    c.est.seed = c.seed;
    c.ok = true;
    rep.cells.push_back(c);
  }
  return rep;
}

void write_file_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("io error", "cannot open " + tmp);
    out << content;
    out.flush();
    if (!out) {
      std::remove(tmp.c_str());
      throw Error("io error", "write failed for " + tmp);
    }
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    std::remove(tmp.c_str());
    throw Error("io error", "rename failed for " + path);
  }
}

SweepReport run_sweep(const Config& cfg, const std::vector<double>& epsilons,
                      int replications, uint64_t master_seed, long long events_base,
                      int max_threads) {
  if (epsilons.empty()) throw Error("sweep", "empty epsilon grid");
  if (replications < 1) throw Error("sweep", "replications must be at least 1");
  if (events_base < 1) throw Error("sweep", "events_base must be positive");
  require_valid(cfg.spec);

  std::vector<double> eps = epsilons;
  std::sort(eps.begin(), eps.end(), std::greater<double>());
  eps.erase(std::unique(eps.begin(), eps.end()), eps.end());
  for (double e : eps)
    if (!(e > 0.0 && e < 1.0)) throw Error("sweep", "epsilon out of range");

  // The inner product and the critical geometry do not depend on epsilon.
  const InnerProductMatrix ip = build_M(cfg.spec, cfg.dists, cfg.lambda0, cfg.defaults.quad_tol);
  const TrafficProfile profile0 =
      derive_traffic_profile(cfg.spec, cfg.dists, cfg.lambda0, eps.front());
  const GeometryContext geom = build_geometry(cfg.spec, cfg.dists, profile0, ip);

  std::vector<Model> models;
  models.reserve(eps.size());
  for (double e : eps)
    models.emplace_back(cfg.spec, cfg.dists,
                        derive_traffic_profile(cfg.spec, cfg.dists, cfg.lambda0, e));

  SweepReport rep;
  for (const Link& l : cfg.spec.links) rep.link_ids.push_back(l.id);
  rep.master_seed = master_seed;
  rep.events_base = events_base;
  rep.replications = replications;
  rep.net_hash = network_hash(cfg);
  rep.cells.resize(eps.size() * static_cast<size_t>(replications));
  for (size_t i = 0; i < eps.size(); ++i) {
    for (int r = 0; r < replications; ++r) {
      SweepCell& c = rep.cells[i * replications + r];
      c.epsilon = eps[i];
      c.replication = r + 1;
      c.seed = Rng::derive(master_seed, std::bit_cast<uint64_t>(eps[i]),
                           static_cast<uint64_t>(r + 1));
      c.events = static_cast<long long>(
          std::llround(static_cast<double>(events_base) * 4.0 / (eps[i] * eps[i])));
    }
  }

  std::atomic<size_t> next{0};
  auto work = [&]() {
    for (;;) {
      const size_t k = next.fetch_add(1);
      if (k >= rep.cells.size()) break;
      SweepCell& c = rep.cells[k];
      SimParams p;
      p.events = c.events;
      p.warmup_fraction = cfg.defaults.warmup;
      p.seed = c.seed;
      try {
        c.est = simulate(models[k / replications], geom, p);
        c.ok = true;
      } catch (const std::exception& e) {
        c.ok = false;
        c.error = e.what();
      }
    }
  };

  const int threads = resolve_threads(max_threads, rep.cells.size());
  if (threads <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads - 1; ++t) pool.emplace_back(work);
    work();
    for (std::thread& t : pool) t.join();
  }
  return rep;
}

BoundVerdict check_bounds(const SweepReport& report, const NetworkSpec& spec,
                          const TrafficProfile& profile, double rel_tol) {
  BoundVerdict v;
  v.rel_tol = rel_tol;
  double kmin = std::numeric_limits<double>::infinity();
  double kmax = 0.0;
  for (const Route& r : spec.routes) {
    kmin = std::min(kmin, r.weight);
    kmax = std::max(kmax, r.weight);
  }
  v.lower = profile.L_s() * kmin;
  v.upper = profile.L_s() * kmax;

  std::vector<EpsGroup> groups;
  for (const SweepCell& c : report.cells) {
    if (!c.ok) continue;
    EpsGroup* g = nullptr;
    for (EpsGroup& eg : groups)
      if (eg.epsilon == c.epsilon) {
        g = &eg;
        break;
      }
    if (!g) {
      groups.push_back({c.epsilon, {}});
      g = &groups.back();
    }
    g->cells.push_back(&c);
  }
  std::sort(groups.begin(), groups.end(),
            [](const EpsGroup& a, const EpsGroup& b) { return a.epsilon > b.epsilon; });

  for (const EpsGroup& g : groups) {
    BoundVerdict::PerEps pe;
    pe.epsilon = g.epsilon;
    pe.replications = static_cast<int>(g.cells.size());
    std::vector<double> means, ratios;
    for (const SweepCell* c : g.cells) {
      means.push_back(c->est.mean_weighted_flows);
      ratios.push_back(c->est.mean_norm > 0.0 ? c->est.mean_perp_norm / c->est.mean_norm
                                              : 0.0);
    }
    const int R = static_cast<int>(means.size());
    double mean = 0.0, ratio = 0.0;
    for (double x : means) mean += x;
    for (double x : ratios) ratio += x;
    mean /= R;
    ratio /= R;
    pe.measured = g.epsilon * mean;
    pe.collapse_ratio = ratio;
    if (R >= 2) {
      pe.ci = g.epsilon * tdist975(R - 1) * sample_sd(means, mean) / std::sqrt(double(R));
      pe.ratio_hw = tdist975(R - 1) * sample_sd(ratios, ratio) / std::sqrt(double(R));
    } else {
      // Single replication: batch-means error for the mean; for the ratio a
      // proxy from the relative weighted-flows error plus a 1% floor, since
      // the pinned CSV schema carries no ratio standard error.
      pe.ci = g.epsilon * tdist975(31) * g.cells[0]->est.se_weighted_flows;
      const double rel =
          mean > 0.0 ? g.cells[0]->est.se_weighted_flows / mean : 0.0;
      pe.ratio_hw = (3.0 * rel + 0.01) * ratio;
    }
    pe.pass = pe.measured >= v.lower * (1.0 - rel_tol) - pe.ci &&
              pe.measured <= v.upper * (1.0 + rel_tol) + pe.ci;
    v.per_eps.push_back(pe);
  }

  if (!v.per_eps.empty()) v.pass = v.per_eps.back().pass;
  if (v.per_eps.size() >= 2) {
    double se = 0.0, sm = 0.0;
    for (const auto& pe : v.per_eps) {
      se += pe.epsilon;
      sm += pe.measured;
    }
    se /= v.per_eps.size();
    sm /= v.per_eps.size();
    double num = 0.0, den = 0.0;
    for (const auto& pe : v.per_eps) {
      num += (pe.epsilon - se) * (pe.measured - sm);
      den += (pe.epsilon - se) * (pe.epsilon - se);
    }
    v.trend_slope = den > 0.0 ? num / den : 0.0;
  }
  v.collapse_decreasing = true;
  for (size_t i = 0; i + 1 < v.per_eps.size(); ++i) {
    const auto& a = v.per_eps[i];      // larger epsilon
    const auto& b = v.per_eps[i + 1];  // smaller epsilon
    if (b.collapse_ratio < a.collapse_ratio) continue;
    const bool overlap = b.collapse_ratio - b.ratio_hw <= a.collapse_ratio + a.ratio_hw &&
                         a.collapse_ratio - a.ratio_hw <= b.collapse_ratio + b.ratio_hw;
    if (!overlap) v.collapse_decreasing = false;
  }
  return v;
}

std::string BoundVerdict::to_json_string() const {
  json j;
  j["lower"] = lower;
  j["upper"] = upper;
  j["rel_tol"] = rel_tol;
  j["pass"] = pass;
  j["trend_slope"] = trend_slope;
  j["collapse_decreasing"] = collapse_decreasing;
  j["per_eps"] = json::array();
  for (const PerEps& pe : per_eps) {
    json e;
    e["epsilon"] = pe.epsilon;
    e["measured"] = pe.measured;
    e["ci"] = pe.ci;
    e["pass"] = pe.pass;
    e["collapse_ratio"] = pe.collapse_ratio;
    e["ratio_hw"] = pe.ratio_hw;
    e["replications"] = pe.replications;
    j["per_eps"].push_back(e);
  }
  return j.dump(2);
}

IdentityScorecard run_identity_suite(const Config& cfg, double epsilon, int num_states,
                                     uint64_t seed, double quad_tol) {
  require_valid(cfg.spec);
  const Model m = make_model(cfg, epsilon);
  const InnerProductMatrix ip = build_M(cfg.spec, cfg.dists, cfg.lambda0, quad_tol);
  const GeometryContext geom = build_geometry(cfg.spec, cfg.dists, m.profile, ip);

  IdentityScorecard sc;
  sc.m_report = verify_M(ip, cfg.spec, cfg.dists, m.profile);
  sc.min_c2_slack = std::numeric_limits<double>::infinity();

  const int K = m.layout.K;
  // w_l(n) = <b^(l), n>_M; precompute the row vectors for the critical links.
  std::vector<Eigen::VectorXd> bM;
  for (int l : geom.critical) bM.push_back((geom.B.row(l) * geom.M).transpose());

  std::vector<FlowState> states;
  FlowState zero;
  zero.counts.assign(K, 0);
  states.push_back(zero);
  for (int i = 0; i < K; ++i) {
    FlowState s = zero;
    s.counts[i] = 1;
    states.push_back(s);
  }
  Rng rng(seed, 7);
  for (int i = 0; i < num_states; ++i) {
    FlowState s = zero;
    const double sel = rng.uniform();
    const long long hi = sel < 0.25 ? 3 : (sel < 0.75 ? 15 : 63);
    for (int k = 0; k < K; ++k)
      s.counts[k] = static_cast<long long>(rng.uniform() * static_cast<double>(hi + 1));
    states.push_back(s);
  }

  for (const FlowState& state : states) {
    const Eigen::VectorXd totals = route_totals(m.layout, state);
    const Allocation alloc = solve_allocation(cfg.spec, totals);
    const KKTReport kkt = verify_kkt(cfg.spec, totals, alloc);
    sc.max_feasibility = std::max(sc.max_feasibility, kkt.feasibility);
    sc.max_stationarity = std::max(sc.max_stationarity, kkt.stationarity);
    sc.max_complementary = std::max(sc.max_complementary, kkt.complementary);
    sc.max_price_identity = std::max(sc.max_price_identity, kkt.price_identity);

    const Eigen::VectorXd nvec = state.as_vector();
    const PropertyReport prop = verify_drift_properties(geom, cfg.spec, m.profile, nvec, alloc);
    sc.max_c1_residual_rel =
        std::max(sc.max_c1_residual_rel, prop.max_c1_residual / (1.0 + prop.state_norm));
    sc.min_c2_slack = std::min(sc.min_c2_slack, prop.min_c2_slack);

    for (size_t li = 0; li < geom.critical.size(); ++li) {
      const int l = geom.critical[li];
      const Eigen::VectorXd& row = bM[li];
      const auto V = [&row](const FlowState& s) {
        double acc = 0.0;
        for (size_t i = 0; i < s.counts.size(); ++i)
          acc += row(static_cast<int>(i)) * static_cast<double>(s.counts[i]);
        return acc;
      };
      const double drift = drift_eval(m, V, state);
      const double target = -epsilon * cfg.spec.links[l].capacity + alloc.U(l);
      sc.max_drift_residual = std::max(sc.max_drift_residual, std::abs(drift - target));
    }

    const ProjectionResult sub = project_subspace(geom, nvec);
    const ProjectionResult cone = project_cone(geom, nvec);
    sc.max_subspace_excess = std::max(sc.max_subspace_excess, sub.dist - cone.dist);
    double gap = 0.0;
    for (size_t li = 0; li < geom.critical.size(); ++li)
      gap = std::max(gap, std::abs(sub.alpha(static_cast<int>(li)) -
                                   alloc.p(geom.critical[li])));
    sc.max_price_alpha_gap = std::max(sc.max_price_alpha_gap, gap);
  }
  sc.states_tested = static_cast<int>(states.size());
  if (states.empty()) sc.min_c2_slack = 0.0;
  return sc;
}

std::string IdentityScorecard::to_json_string() const {
  json j;
  j["pass"] = pass();
  j["states_tested"] = states_tested;
  j["max_feasibility"] = max_feasibility;
  j["max_stationarity"] = max_stationarity;
  j["max_complementary"] = max_complementary;
  j["max_price_identity"] = max_price_identity;
  j["max_c1_residual_rel"] = max_c1_residual_rel;
  j["min_c2_slack"] = min_c2_slack;
  j["max_drift_residual"] = max_drift_residual;
  j["max_price_alpha_gap"] = max_price_alpha_gap;
  j["max_subspace_excess"] = max_subspace_excess;
  j["m_report"] = json::parse(m_report.to_json_string());
  return j.dump(2);
}

}  // namespace fairshare
