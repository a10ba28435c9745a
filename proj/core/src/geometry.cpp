#include "fairshare/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "fairshare/error.hpp"

namespace fairshare {

GeometryContext build_geometry(const NetworkSpec& spec,
                               const std::vector<PhaseTypeDist>& dists,
                               const TrafficProfile& profile,
                               const InnerProductMatrix& ip) {
  GeometryContext g;
  g.layout = ip.layout;
  g.M = ip.M;
  g.chol = ip.chol;
  g.critical = profile.critical;

  const int K = g.layout.K;
  const int L = spec.num_links();
  g.B.setZero(L, K);
  for (int r = 0; r < spec.num_routes(); ++r) {
    const double kappa = spec.routes[r].weight;
    for (int l : spec.routes[r].links)
      for (int k = 0; k < dists[r].K; ++k) {
        const int i = g.layout.flat(r, k);
        g.B(l, i) = profile.load0(i) / kappa;
      }
  }
  g.Bs.resize(profile.L_s(), K);
  for (int i = 0; i < profile.L_s(); ++i) g.Bs.row(i) = g.B.row(g.critical[i]);

  g.S.setZero(K, K);
  g.eta.resize(spec.num_routes());
  g.all_exponential = true;
  g.mu_min = std::numeric_limits<double>::infinity();
  for (int r = 0; r < spec.num_routes(); ++r) {
    const int o = g.layout.offset[r];
    g.S.block(o, o, dists[r].K, dists[r].K) = dists[r].S;
    g.eta(r) = survival_and_hazard(dists[r]).bound.eta;
    g.all_exponential = g.all_exponential && dists[r].is_exponential();
    g.mu_min = std::min(g.mu_min, moments_and_loads(dists[r]).rate);
  }
  g.eta_min = g.eta.minCoeff();
  g.kappa_min = spec.weights().minCoeff();

  const Eigen::MatrixXd gram = g.Bs * g.M * g.Bs.transpose();
  g.gram_llt.compute(gram);
  if (g.gram_llt.info() != Eigen::Success)
    throw Error("H_s rank-deficient", "critical generators are dependent");
  g.Ps = g.Bs.transpose() * g.gram_llt.solve(g.Bs * g.M);
  g.cone_A = g.chol * g.Bs.transpose();
  return g;
}

ProjectionResult project_subspace(const GeometryContext& g, const Eigen::VectorXd& n) {
  ProjectionResult r;
  r.alpha = g.gram_llt.solve(g.Bs * (g.M * n));
  r.parallel = g.Bs.transpose() * r.alpha;
  r.perp = n - r.parallel;
  r.dist = (g.chol * r.perp).norm();
  return r;
}

namespace {

// Lawson-Hanson active set for min ||A a - c||, a >= 0. Deterministic: the
// entering pivot is the largest dual, ties resolved toward the lowest index.
Eigen::VectorXd nnls(const Eigen::MatrixXd& A, const Eigen::VectorXd& c, int& iters) {
  const int m = static_cast<int>(A.cols());
  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(m);
  std::vector<char> passive(m, 0);
  Eigen::VectorXd w = A.transpose() * c;
  const double tol = 1e-11 * std::max(1.0, w.cwiseAbs().maxCoeff());

  const int max_iter = 3 * m * (m + 1) + 12;
  iters = 0;
  while (true) {
    int enter = -1;
    double best = tol;
    for (int j = 0; j < m; ++j)
      if (!passive[j] && w(j) > best) {
        best = w(j);
        enter = j;
      }
    if (enter < 0) break;
    passive[enter] = 1;

    while (true) {
      if (++iters > max_iter) {
        std::ostringstream os;
        os << "iterate alpha = [" << alpha.transpose() << "]";
        throw Error("nnls not converged", os.str());
      }
      std::vector<int> idx;
      for (int j = 0; j < m; ++j)
        if (passive[j]) idx.push_back(j);
      Eigen::MatrixXd Ap(A.rows(), idx.size());
      for (size_t j = 0; j < idx.size(); ++j) Ap.col(j) = A.col(idx[j]);
      const Eigen::VectorXd z = Ap.colPivHouseholderQr().solve(c);

      double theta = 1.0;
      int leave = -1;
      for (size_t j = 0; j < idx.size(); ++j)
        if (z(j) <= 0.0) {
          const double t = alpha(idx[j]) / (alpha(idx[j]) - z(j));
          if (t < theta) {
            theta = t;
            leave = static_cast<int>(j);
          }
        }
      if (leave < 0) {
        alpha.setZero();
        for (size_t j = 0; j < idx.size(); ++j) alpha(idx[j]) = z(j);
        break;
      }
      for (size_t j = 0; j < idx.size(); ++j)
        alpha(idx[j]) += theta * (z(j) - alpha(idx[j]));
      for (size_t j = 0; j < idx.size(); ++j)
        if (j == static_cast<size_t>(leave) || alpha(idx[j]) <= 1e-14 * std::abs(best)) {
          alpha(idx[j]) = 0.0;
          passive[idx[j]] = 0;
        }
    }
    w = A.transpose() * (c - A * alpha);
  }
  return alpha;
}

}  // namespace

ProjectionResult project_cone(const GeometryContext& g, const Eigen::VectorXd& n) {
  ProjectionResult r;
  const Eigen::VectorXd c = g.chol * n;
  r.alpha = nnls(g.cone_A, c, r.iterations);
  r.parallel = g.Bs.transpose() * r.alpha;
  r.perp = n - r.parallel;
  r.dist = (g.chol * r.perp).norm();
  return r;
}

PropertyReport verify_drift_properties(const GeometryContext& g, const NetworkSpec& spec,
                                       const TrafficProfile& profile,
                                       const Eigen::VectorXd& n_flat,
                                       const Allocation& alloc) {
  const int K = g.layout.K;
  Eigen::VectorXd nx(K);
  for (int i = 0; i < K; ++i) nx(i) = n_flat(i) * alloc.x(g.layout.route_of[i]);
  const Eigen::VectorXd y = -g.S.transpose() * (profile.load0 - nx);

  PropertyReport rep;
  rep.constant = g.kappa_min * (g.all_exponential ? g.mu_min : g.eta_min);
  rep.state_norm = (g.chol * n_flat).norm();
  rep.max_c1_residual = 0.0;
  rep.min_c2_slack = std::numeric_limits<double>::infinity();

  for (int l = 0; l < spec.num_links(); ++l) {
    PropertyReport::PerLink row;
    row.link = spec.links[l].id;
    row.critical = profile.is_critical(l);
    row.U = alloc.U(l);
    row.delta = profile.delta(l);

    const Eigen::VectorXd b = g.B.row(l).transpose();
    Eigen::VectorXd bhat = Eigen::VectorXd::Zero(K);
    for (int i = 0; i < K; ++i) {
      const int r = g.layout.route_of[i];
      const auto& ls = spec.routes[r].links;
      if (std::find(ls.begin(), ls.end(), l) != ls.end())
        bhat(i) = nx(i) / spec.routes[r].weight;
    }

    row.c1_residual = std::abs(b.dot(g.M * y) - (row.U - row.delta));
    const Eigen::VectorXd dvec = b - bhat;
    row.c2_lhs = dvec.dot(g.M * y);
    row.c2_norm2 = dvec.dot(g.M * dvec);
    row.c2_slack = row.c2_lhs - rep.constant * row.c2_norm2;

    rep.max_c1_residual = std::max(rep.max_c1_residual, row.c1_residual);
    rep.min_c2_slack = std::min(rep.min_c2_slack, row.c2_slack);
    rep.links.push_back(std::move(row));
  }
  return rep;
}

std::string PropertyReport::to_json_string() const {
  nlohmann::json j;
  j["constant"] = constant;
  j["state_norm"] = state_norm;
  j["max_c1_residual"] = max_c1_residual;
  j["min_c2_slack"] = min_c2_slack;
  j["links"] = nlohmann::json::array();
  for (const auto& l : links) {
    j["links"].push_back({{"link", l.link},
                          {"critical", l.critical},
                          {"U", l.U},
                          {"delta", l.delta},
                          {"c1_residual", l.c1_residual},
                          {"c2_lhs", l.c2_lhs},
                          {"c2_norm2", l.c2_norm2},
                          {"c2_slack", l.c2_slack}});
  }
  return j.dump(2);
}

}  // namespace fairshare
