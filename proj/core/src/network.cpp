#include "fairshare/network.hpp"

#include <algorithm>
#include <set>

#include <json.hpp>

#include "fairshare/error.hpp"

namespace fairshare {

int NetworkSpec::link_index(const std::string& id) const {
  for (int l = 0; l < num_links(); ++l)
    if (links[l].id == id) return l;
  return -1;
}

int NetworkSpec::route_index(const std::string& id) const {
  for (int r = 0; r < num_routes(); ++r)
    if (routes[r].id == id) return r;
  return -1;
}

Eigen::VectorXd NetworkSpec::weights() const {
  Eigen::VectorXd w(num_routes());
  for (int r = 0; r < num_routes(); ++r) w(r) = routes[r].weight;
  return w;
}

Eigen::VectorXd NetworkSpec::capacities() const {
  Eigen::VectorXd c(num_links());
  for (int l = 0; l < num_links(); ++l) c(l) = links[l].capacity;
  return c;
}

Eigen::MatrixXd routing_matrix(const NetworkSpec& spec) {
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(spec.num_links(), spec.num_routes());
  for (int r = 0; r < spec.num_routes(); ++r)
    for (int l : spec.routes[r].links)
      if (l >= 0 && l < spec.num_links()) H(l, r) = 1.0;
  return H;
}

ValidationReport validate_network(const NetworkSpec& spec) {
  ValidationReport rep;
  auto add = [&rep](const std::string& code, const std::string& path,
                    const std::string& message) {
    rep.violations.push_back({code, path, message});
  };

  if (spec.links.empty()) add("no links", "links", "at least one link required");
  if (spec.routes.empty()) add("no routes", "routes", "at least one route required");

  std::set<std::string> link_ids;
  for (int l = 0; l < spec.num_links(); ++l) {
    const auto& lk = spec.links[l];
    const std::string path = "links[" + std::to_string(l) + "]";
    if (lk.id.empty()) add("empty id", path, "link id must be nonempty");
    if (!link_ids.insert(lk.id).second) add("duplicate id", path, "link id '" + lk.id + "'");
    if (!(lk.capacity > 0.0)) add("nonpositive capacity", path + ".capacity", "link '" + lk.id + "'");
  }

  std::set<std::string> route_ids;
  for (int r = 0; r < spec.num_routes(); ++r) {
    const auto& rt = spec.routes[r];
    const std::string path = "routes[" + std::to_string(r) + "]";
    if (rt.id.empty()) add("empty id", path, "route id must be nonempty");
    if (!route_ids.insert(rt.id).second) add("duplicate id", path, "route id '" + rt.id + "'");
    if (!(rt.weight > 0.0)) add("nonpositive weight", path + ".weight", "route '" + rt.id + "'");
    if (rt.links.empty()) add("route uses no link", path + ".links", "route '" + rt.id + "'");
    std::set<int> seen;
    for (size_t j = 0; j < rt.links.size(); ++j) {
      const int l = rt.links[j];
      const std::string lpath = path + ".links[" + std::to_string(j) + "]";
      if (l < 0 || l >= spec.num_links())
        add("unknown link", lpath, "index " + std::to_string(l));
      else if (!seen.insert(l).second)
        add("duplicate link in route", lpath, "link '" + spec.links[l].id + "'");
    }
  }

  if (rep.ok()) {
    const Eigen::MatrixXd H = routing_matrix(spec);
    if (spec.H.rows() != H.rows() || spec.H.cols() != H.cols() || spec.H != H)
      add("H inconsistent", "H", "stored routing matrix does not match the routes");
  }
  return rep;
}

std::string ValidationReport::to_json_string() const {
  nlohmann::json j;
  j["ok"] = ok();
  j["violations"] = nlohmann::json::array();
  for (const auto& v : violations)
    j["violations"].push_back({{"code", v.code}, {"path", v.path}, {"message", v.message}});
  return j.dump(2);
}

bool TrafficProfile::is_critical(int l) const {
  return std::binary_search(critical.begin(), critical.end(), l);
}

TrafficProfile derive_traffic_profile(const NetworkSpec& spec,
                                      const std::vector<PhaseTypeDist>& dists,
                                      const Eigen::VectorXd& lambda0, double epsilon,
                                      double crit_tol, double rank_tol) {
  const int R = spec.num_routes();
  const int L = spec.num_links();
  if (static_cast<int>(dists.size()) != R)
    throw Error("dist count mismatch", "expected one distribution per route");
  if (lambda0.size() != R)
    throw Error("lambda0 not positive", "expected one rate per route");
  for (int r = 0; r < R; ++r)
    if (!(lambda0(r) > 0.0))
      throw Error("lambda0 not positive", "route '" + spec.routes[r].id + "'");
  if (!(epsilon > 0.0 && epsilon < 1.0))
    throw Error("epsilon out of range", "epsilon must lie in (0,1)");

  TrafficProfile p;
  p.epsilon = epsilon;
  p.crit_tol = crit_tol;
  p.lambda0 = lambda0;
  p.lambda_eps = (1.0 - epsilon) * lambda0;

  PhaseLayout layout(dists);
  p.route_load0.resize(R);
  p.load0 = Eigen::VectorXd::Zero(layout.K);
  for (int r = 0; r < R; ++r) {
    const Moments m = moments_and_loads(dists[r]);
    p.route_load0(r) = lambda0(r) * m.mean;
    p.load0.segment(layout.offset[r], dists[r].K) = lambda0(r) * m.chi;
  }

  p.delta = spec.capacities() - spec.H * p.route_load0;
  for (int l = 0; l < L; ++l) {
    const double C = spec.links[l].capacity;
    if (p.delta(l) < -crit_tol * C)
      throw Error("overloaded base", "link '" + spec.links[l].id + "' slack " +
                                         std::to_string(p.delta(l)));
    if (p.delta(l) <= crit_tol * C) p.critical.push_back(l);
  }
  if (p.critical.empty())
    throw Error("no critical link", "base load saturates no link");

  Eigen::MatrixXd Hs(p.L_s(), R);
  for (int i = 0; i < p.L_s(); ++i) Hs.row(i) = spec.H.row(p.critical[i]);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Hs.transpose());
  qr.setThreshold(rank_tol);
  if (qr.rank() < p.L_s())
    throw Error("H_s rank-deficient", "critical sub-matrix has rank " +
                                          std::to_string(qr.rank()) + " < " +
                                          std::to_string(p.L_s()));
  return p;
}

}  // namespace fairshare
