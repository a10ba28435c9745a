#include "fairshare/allocation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "fairshare/error.hpp"

namespace fairshare {

Eigen::VectorXd route_totals(const PhaseLayout& layout, const FlowState& state) {
  Eigen::VectorXd n = Eigen::VectorXd::Zero(layout.R);
  for (int i = 0; i < layout.K; ++i)
    n(layout.route_of[i]) += static_cast<double>(state.counts[i]);
  return n;
}

namespace {

// Dual objective up to an additive constant:
//   D(p) = sum_{r active} kappa_r n_r log(kappa_r / q_r) + sum_l p_l C_l,
// q_r = sum_{l in r} p_l. Convex; grad_l = C_l - sum_{r: l in r} n_r x_r = U_l.
struct Dual {
  const NetworkSpec& spec;
  const Eigen::VectorXd& totals;
  std::vector<int> active;  // routes with n_r > 0

  double value(const Eigen::VectorXd& p) const {
    double v = 0.0;
    for (int r : active) {
      double q = 0.0;
      for (int l : spec.routes[r].links) q += p(l);
      if (!(q > 0.0)) return std::numeric_limits<double>::infinity();
      v += spec.routes[r].weight * totals(r) * std::log(spec.routes[r].weight / q);
    }
    for (int l = 0; l < spec.num_links(); ++l) v += p(l) * spec.links[l].capacity;
    return v;
  }

  void gradient(const Eigen::VectorXd& p, Eigen::VectorXd& g) const {
    g = Eigen::VectorXd(spec.capacities());
    for (int r : active) {
      double q = 0.0;
      for (int l : spec.routes[r].links) q += p(l);
      const double load = spec.routes[r].weight * totals(r) / q;
      for (int l : spec.routes[r].links) g(l) -= load;
    }
  }

  void hessian(const Eigen::VectorXd& p, Eigen::MatrixXd& h) const {
    h.setZero(spec.num_links(), spec.num_links());
    for (int r : active) {
      double q = 0.0;
      for (int l : spec.routes[r].links) q += p(l);
      const double c = spec.routes[r].weight * totals(r) / (q * q);
      for (int a : spec.routes[r].links)
        for (int b : spec.routes[r].links) h(a, b) += c;
    }
  }
};

void fill_primal(const NetworkSpec& spec, const Eigen::VectorXd& totals,
                 const Eigen::VectorXd& p, Allocation& out) {
  const int R = spec.num_routes();
  out.x.setZero(R);
  for (int r = 0; r < R; ++r) {
    if (!(totals(r) > 0.0)) continue;
    double q = 0.0;
    for (int l : spec.routes[r].links) q += p(l);
    out.x(r) = spec.routes[r].weight / q;
  }
  out.U = spec.capacities();
  for (int r = 0; r < R; ++r)
    for (int l : spec.routes[r].links) out.U(l) -= totals(r) * out.x(r);
  out.p = p;
}

void fill_residuals(const NetworkSpec& spec, const Eigen::VectorXd& totals,
                    Allocation& out) {
  const KKTReport k = verify_kkt(spec, totals, out);
  out.residuals = {k.feasibility, k.stationarity, k.complementary, k.price_identity};
}

// Canonical dual among optima: support restricted to tight links, least-norm
// solution of the route price sums, negative entries clamped by shrinking the
// support. Accepted only if the KKT residuals do not degrade.
void min_norm_polish(const NetworkSpec& spec, const Eigen::VectorXd& totals,
                     const Dual& dual, Allocation& out, double tol) {
  const int L = spec.num_links();
  const double pmax = out.p.maxCoeff();
  std::vector<int> tight;
  for (int l = 0; l < L; ++l)
    if (out.U(l) <= 1e-8 * spec.links[l].capacity) tight.push_back(l);
  if (tight.empty()) return;

  Eigen::VectorXd q(dual.active.size());
  for (size_t i = 0; i < dual.active.size(); ++i) {
    const int r = dual.active[i];
    q(i) = spec.routes[r].weight / out.x(r);
  }

  std::vector<int> support = tight;
  Eigen::VectorXd sol;
  for (int round = 0; round < L + 1; ++round) {
    Eigen::MatrixXd A(dual.active.size(), support.size());
    A.setZero();
    for (size_t i = 0; i < dual.active.size(); ++i)
      for (size_t j = 0; j < support.size(); ++j) {
        const auto& ls = spec.routes[dual.active[i]].links;
        if (std::find(ls.begin(), ls.end(), support[j]) != ls.end()) A(i, j) = 1.0;
      }
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(A);
    sol = cod.solve(q);
    int worst = -1;
    double wv = -1e-12 * std::max(pmax, 1.0);
    for (int j = 0; j < sol.size(); ++j)
      if (sol(j) < wv) {
        wv = sol(j);
        worst = j;
      }
    if (worst < 0) break;
    support.erase(support.begin() + worst);
    if (support.empty()) return;
  }

  Allocation cand;
  cand.iterations = out.iterations;
  Eigen::VectorXd p = Eigen::VectorXd::Zero(L);
  for (size_t j = 0; j < support.size(); ++j) p(support[j]) = std::max(sol(j), 0.0);
  fill_primal(spec, totals, p, cand);
  fill_residuals(spec, totals, cand);
  const auto worst_of = [](const Allocation::Residuals& r) {
    return std::max(std::max(r.feasibility, r.stationarity),
                    std::max(r.complementary, r.price_identity));
  };
  if (worst_of(cand.residuals) <= std::max(worst_of(out.residuals), tol)) {
    cand.degenerate = out.degenerate;
    out = cand;
  }
}

}  // namespace

Allocation solve_allocation(const NetworkSpec& spec, const Eigen::VectorXd& totals,
                            double tol, int max_iter) {
  const int L = spec.num_links();
  const int R = spec.num_routes();
  if (totals.size() != R) throw Error("state size mismatch", "expected one total per route");

  Allocation out;
  Dual dual{spec, totals, {}};
  double scale = 0.0;
  for (int r = 0; r < R; ++r) {
    if (totals(r) < 0.0) throw Error("negative count", "route '" + spec.routes[r].id + "'");
    if (totals(r) > 0.0) {
      dual.active.push_back(r);
      scale += spec.routes[r].weight * totals(r);
    }
  }

  if (dual.active.empty()) {
    out.x.setZero(R);
    out.p.setZero(L);
    out.U = spec.capacities();
    return out;  // empty system: prices vanish, residuals are identically zero
  }

  std::vector<char> carries(L, 0);
  for (int r : dual.active)
    for (int l : spec.routes[r].links) carries[l] = 1;

  Eigen::VectorXd p(L);
  for (int l = 0; l < L; ++l)
    p(l) = carries[l] ? scale / (L * spec.links[l].capacity) + 1e-12 : 0.0;

  Eigen::VectorXd g(L);
  Eigen::MatrixXd h(L, L);
  std::vector<char> zeroed(L, 0);  // working set: links pinned at p = 0
  for (int l = 0; l < L; ++l) zeroed[l] = !carries[l];

  bool converged = false;
  int it = 0;
  for (; it < max_iter; ++it) {
    dual.gradient(p, g);

    // KKT test: complementarity and primal feasibility, relative scales.
    double cs = 0.0, pf = 0.0, df = 0.0;
    for (int l = 0; l < L; ++l) {
      cs = std::max(cs, std::abs(p(l) * g(l)) / scale);
      pf = std::max(pf, -g(l) / spec.links[l].capacity);
      if (zeroed[l] && carries[l]) df = std::max(df, -g(l) / spec.links[l].capacity);
    }
    if (cs <= tol && pf <= tol) {
      converged = true;
      break;
    }

    // Release the most violated pinned link, pin free links stuck at zero.
    for (int l = 0; l < L; ++l) {
      if (zeroed[l] && carries[l] && g(l) < -tol) zeroed[l] = 0;
      if (!zeroed[l] && carries[l] && p(l) <= 0.0 && g(l) > 0.0) {
        zeroed[l] = 1;
        p(l) = 0.0;
      }
    }

    std::vector<int> free;
    for (int l = 0; l < L; ++l)
      if (!zeroed[l]) free.push_back(l);
    if (free.empty()) break;

    dual.hessian(p, h);
    Eigen::MatrixXd hf(free.size(), free.size());
    Eigen::VectorXd gf(free.size());
    for (size_t i = 0; i < free.size(); ++i) {
      gf(i) = g(free[i]);
      for (size_t j = 0; j < free.size(); ++j) hf(i, j) = h(free[i], free[j]);
    }
    hf.diagonal().array() += 1e-12 * hf.trace() + 1e-300;
    Eigen::VectorXd d = Eigen::LDLT<Eigen::MatrixXd>(hf).solve(-gf);
    if (!d.allFinite()) d = -gf;

    // Backtracking line search on D with projection onto p >= 0. Once the
    // predicted decrease drops below the rounding noise of the dual value the
    // Armijo test is meaningless; there the full Newton step is safe.
    const double d0 = dual.value(p);
    const double slope = gf.dot(d);
    if (-slope <= 1e-12 * (1.0 + std::abs(d0))) {
      for (size_t i = 0; i < free.size(); ++i)
        p(free[i]) = std::max(p(free[i]) + d(i), 0.0);
      continue;
    }
    double alpha = 1.0;
    Eigen::VectorXd cand = p;
    for (int ls = 0; ls < 60; ++ls) {
      cand = p;
      for (size_t i = 0; i < free.size(); ++i)
        cand(free[i]) = std::max(p(free[i]) + alpha * d(i), 0.0);
      if (dual.value(cand) <= d0 + 1e-4 * alpha * std::min(slope, 0.0)) break;
      alpha *= 0.5;
    }
    p = cand;
  }
  out.iterations = it;
  if (!converged)
    throw Error("allocation not converged",
                "no KKT point after " + std::to_string(it) + " iterations");

  for (int l = 0; l < L; ++l)
    if (p(l) < 1e-13 * scale) p(l) = 0.0;
  fill_primal(spec, totals, p, out);
  fill_residuals(spec, totals, out);

  // Degeneracy: the reduced Hessian on the positive support is singular when
  // several price vectors support the same optimal allocation.
  std::vector<int> pos;
  for (int l = 0; l < L; ++l)
    if (p(l) > 0.0) pos.push_back(l);
  if (!pos.empty()) {
    dual.hessian(p, h);
    Eigen::MatrixXd hp(pos.size(), pos.size());
    for (size_t i = 0; i < pos.size(); ++i)
      for (size_t j = 0; j < pos.size(); ++j) hp(i, j) = h(pos[i], pos[j]);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(hp);
    out.degenerate = es.eigenvalues().minCoeff() <= 1e-10 * es.eigenvalues().maxCoeff();
  }

  min_norm_polish(spec, totals, dual, out, tol);
  return out;
}

KKTReport verify_kkt(const NetworkSpec& spec, const Eigen::VectorXd& totals,
                     const Allocation& alloc) {
  KKTReport k;
  double scale = 0.0;
  for (int r = 0; r < spec.num_routes(); ++r)
    scale += spec.routes[r].weight * totals(r);
  const double s = std::max(scale, std::numeric_limits<double>::min());

  Eigen::VectorXd used = Eigen::VectorXd::Zero(spec.num_links());
  for (int r = 0; r < spec.num_routes(); ++r)
    for (int l : spec.routes[r].links) used(l) += totals(r) * alloc.x(r);

  double price_cap = 0.0;
  for (int l = 0; l < spec.num_links(); ++l) {
    const double C = spec.links[l].capacity;
    k.feasibility = std::max(k.feasibility, (used(l) - C) / C);
    k.complementary = std::max(k.complementary, std::abs(alloc.p(l) * (C - used(l))) / s);
    price_cap += alloc.p(l) * C;
  }
  k.feasibility = std::max(k.feasibility, 0.0);

  for (int r = 0; r < spec.num_routes(); ++r) {
    const double kap = spec.routes[r].weight;
    if (totals(r) > 0.0) {
      double q = 0.0;
      for (int l : spec.routes[r].links) q += alloc.p(l);
      k.stationarity = std::max(k.stationarity, std::abs(alloc.x(r) * q - kap) / kap);
    } else {
      k.stationarity = std::max(k.stationarity, std::abs(alloc.x(r)));
    }
  }

  k.price_identity = std::abs(price_cap - scale) / s;
  return k;
}

std::string KKTReport::to_json_string() const {
  nlohmann::json j;
  j["feasibility"] = feasibility;
  j["stationarity"] = stationarity;
  j["complementary"] = complementary;
  j["price_identity"] = price_identity;
  j["ok"] = ok();
  return j.dump(2);
}

}  // namespace fairshare
