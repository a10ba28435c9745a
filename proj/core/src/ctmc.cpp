#include "fairshare/ctmc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>

#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <json.hpp>

#include "fairshare/error.hpp"
#include "fairshare/rng.hpp"

namespace fairshare {

TransitionSet transition_kernel(const Model& m, const FlowState& state,
                                const Allocation& alloc) {
  TransitionSet ts;
  const PhaseLayout& lay = m.layout;
  for (int r = 0; r < lay.R; ++r) {
    const PhaseTypeDist& d = m.dists[r];
    const int o = lay.offset[r];
    const double lam = m.profile.lambda_eps(r);
    for (int k = 0; k < d.K; ++k)
      if (d.pi(k) > 0.0)
        ts.transitions.push_back({o + k, -1, lam * d.pi(k)});
    const double x = alloc.x(r);
    if (!(x > 0.0)) continue;
    for (int k = 0; k < d.K; ++k) {
      const long long n = state.counts[o + k];
      if (n <= 0) continue;
      if (k + 1 < d.K && d.S(k, k + 1) > 0.0)
        ts.transitions.push_back({o + k + 1, o + k, n * x * d.S(k, k + 1)});
      const double exit = -d.S.row(k).sum();
      if (exit > 0.0) ts.transitions.push_back({-1, o + k, n * x * exit});
    }
  }
  for (const auto& t : ts.transitions) ts.total_rate += t.rate;
  return ts;
}

namespace {

struct TotalsHash {
  size_t operator()(const std::vector<long long>& v) const {
    uint64_t h = 1469598103934665603ULL;
    for (long long x : v) {
      h ^= static_cast<uint64_t>(x);
      h *= 1099511628211ULL;
    }
    return static_cast<size_t>(h);
  }
};

// The allocation depends only on the per-route totals, which a phase swap
// leaves unchanged, so a totals-keyed cache absorbs nearly every solve.
class AllocCache {
 public:
  explicit AllocCache(const NetworkSpec& spec) : spec_(spec) { map_.reserve(1 << 12); }

  const Allocation& get(const std::vector<long long>& totals) {
    auto it = map_.find(totals);
    if (it != map_.end()) return it->second;
    if (map_.size() > 2000000) map_.clear();
    Eigen::VectorXd n(totals.size());
    for (size_t r = 0; r < totals.size(); ++r) n(r) = static_cast<double>(totals[r]);
    return map_.emplace(totals, solve_allocation(spec_, n)).first->second;
  }

 private:
  const NetworkSpec& spec_;
  std::unordered_map<std::vector<long long>, Allocation, TotalsHash> map_;
};

std::vector<long long> totals_of(const PhaseLayout& lay, const FlowState& s) {
  std::vector<long long> t(lay.R, 0);
  for (int i = 0; i < lay.K; ++i) t[lay.route_of[i]] += s.counts[i];
  return t;
}

// Lexicographic enumeration of {n in Z_+^K : sum n <= cap} with O(K) ranking
// via the hockey-stick identity. NN(d, s) = C(s + d, d) counts length-d
// suffixes with sum <= s.
class StateSpace {
 public:
  StateSpace(int K, int cap) : K_(K), cap_(cap) {
    nn_.assign(static_cast<size_t>(K + 1) * (cap + 1), 0);
    for (int s = 0; s <= cap; ++s) at(0, s) = 1;
    for (int d = 1; d <= K; ++d)
      for (int s = 0; s <= cap; ++s)
        at(d, s) = (s > 0 ? at(d, s - 1) : 0) + at(d - 1, s);
    count_ = at(K, cap);
  }

  unsigned long long count() const { return count_; }
  int cap() const { return cap_; }

  unsigned long long rank(const int* n) const {
    unsigned long long r = 0;
    int rem = cap_;
    for (int i = 0; i < K_; ++i) {
      const int d = K_ - i - 1;
      // states with a smaller i-th coordinate under the same prefix
      r += at(d + 1, rem) - at(d + 1, rem - n[i]);
      rem -= n[i];
    }
    return r;
  }

  void unrank(unsigned long long r, int* n) const {
    int rem = cap_;
    for (int i = 0; i < K_; ++i) {
      const int d = K_ - i - 1;
      int v = 0;
      while (at(d + 1, rem) - at(d + 1, rem - v) <= r) ++v;
      --v;
      r -= at(d + 1, rem) - at(d + 1, rem - v);
      n[i] = v;
      rem -= v;
    }
  }

 private:
  unsigned long long& at(int d, int s) { return nn_[static_cast<size_t>(d) * (cap_ + 1) + s]; }
  unsigned long long at(int d, int s) const {
    return s < 0 ? 0 : nn_[static_cast<size_t>(d) * (cap_ + 1) + s];
  }
  int K_, cap_;
  unsigned long long count_ = 0;
  std::vector<unsigned long long> nn_;
};

}  // namespace

StationaryEstimate simulate(const Model& m, const GeometryContext& geom,
                            const SimParams& params) {
  if (params.events < 100) throw Error("horizon too short", "need at least 100 events");
  if (!(params.warmup_fraction >= 0.0 && params.warmup_fraction <= 0.5))
    throw Error("warmup out of range", "warmup fraction must lie in [0, 0.5]");
  const int B = params.batches;
  const int L = m.spec.num_links();
  const int K = m.layout.K;
  const long long warm =
      static_cast<long long>(params.warmup_fraction * static_cast<double>(params.events));
  const long long span = params.events - warm;
  if (span < B) throw Error("horizon too short", "fewer post-warmup events than batches");

  AllocCache cache(m.spec);
  Rng rng(params.seed, 0);
  FlowState state;
  state.counts.assign(K, 0);
  std::vector<long long> totals(m.layout.R, 0);

  const Eigen::VectorXd kappa = m.spec.weights();
  std::vector<double> bt(B, 0.0), bw(B, 0.0), bperp(B, 0.0), bperp2(B, 0.0), bnorm(B, 0.0);
  std::vector<double> bU(static_cast<size_t>(B) * L, 0.0);
  Eigen::VectorXd nvec(K);

  double clock = 0.0;
  for (long long e = 0; e < params.events; ++e) {
    const Allocation& alloc = cache.get(totals);
    const TransitionSet ts = transition_kernel(m, state, alloc);
    if (!(ts.total_rate > 0.0))
      throw Error("absorbing state", "no outgoing transition; is lambda zero?");
    const double dt = rng.exponential(ts.total_rate);
    clock += dt;

    if (e >= warm) {
      const int b = static_cast<int>((e - warm) * B / span);
      double w = 0.0;
      for (int r = 0; r < m.layout.R; ++r) w += kappa(r) * static_cast<double>(totals[r]);
      for (int i = 0; i < K; ++i) nvec(i) = static_cast<double>(state.counts[i]);
      const double nrm = (geom.chol * nvec).norm();
      const ProjectionResult pr = project_cone(geom, nvec);
      bt[b] += dt;
      bw[b] += dt * w;
      bperp[b] += dt * pr.dist;
      bperp2[b] += dt * pr.dist * pr.dist;
      bnorm[b] += dt * nrm;
      for (int l = 0; l < L; ++l) bU[static_cast<size_t>(b) * L + l] += dt * alloc.U(l);
    }

    double u = rng.uniform() * ts.total_rate;
    const Transition* chosen = &ts.transitions.back();
    for (const auto& t : ts.transitions) {
      u -= t.rate;
      if (u <= 0.0) {
        chosen = &t;
        break;
      }
    }
    if (chosen->add >= 0) {
      ++state.counts[chosen->add];
      ++totals[m.layout.route_of[chosen->add]];
    }
    if (chosen->sub >= 0) {
      --state.counts[chosen->sub];
      --totals[m.layout.route_of[chosen->sub]];
    }
  }

  StationaryEstimate est;
  est.events = params.events;
  est.seed = params.seed;
  double T = 0.0, W = 0.0, P1 = 0.0, P2 = 0.0, NM = 0.0;
  for (int b = 0; b < B; ++b) {
    T += bt[b];
    W += bw[b];
    P1 += bperp[b];
    P2 += bperp2[b];
    NM += bnorm[b];
  }
  est.horizon_time = T;
  est.mean_weighted_flows = W / T;
  est.mean_perp_norm = P1 / T;
  est.mean_perp_norm_sq = P2 / T;
  est.mean_norm = NM / T;
  est.unused_mean.assign(L, 0.0);
  for (int l = 0; l < L; ++l) {
    double s = 0.0;
    for (int b = 0; b < B; ++b) s += bU[static_cast<size_t>(b) * L + l];
    est.unused_mean[l] = s / T;
  }

  auto batch_se = [&](const std::vector<double>& acc) {
    double mbar = 0.0;
    for (int b = 0; b < B; ++b) mbar += acc[b] / bt[b];
    mbar /= B;
    double ss = 0.0;
    for (int b = 0; b < B; ++b) {
      const double d = acc[b] / bt[b] - mbar;
      ss += d * d;
    }
    return std::sqrt(ss / (B - 1) / B);
  };
  est.se_weighted_flows = batch_se(bw);
  est.se_perp_norm = batch_se(bperp);
  return est;
}

namespace {

// Shared assembly of the truncated generator: calls out(from, to, rate) for
// every surviving transition and returns each state's total outflow.
template <typename F>
std::vector<double> for_each_transition(const Model& m, const StateSpace& space,
                                        AllocCache& cache, F&& out) {
  const int K = m.layout.K;
  const unsigned long long N = space.count();
  std::vector<double> outflow(N, 0.0);
  std::vector<int> n(K);
  FlowState state;
  state.counts.assign(K, 0);
  std::vector<int> nbr(K);
  for (unsigned long long s = 0; s < N; ++s) {
    space.unrank(s, n.data());
    long long sum = 0;
    for (int i = 0; i < K; ++i) {
      state.counts[i] = n[i];
      sum += n[i];
    }
    const Allocation& alloc = cache.get(totals_of(m.layout, state));
    const TransitionSet ts = transition_kernel(m, state, alloc);
    for (const auto& t : ts.transitions) {
      if (t.add >= 0 && t.sub < 0 && sum >= static_cast<long long>(space.cap()))
        continue;  // arrival through the cap: killed
      std::copy(n.begin(), n.end(), nbr.begin());
      if (t.add >= 0) ++nbr[t.add];
      if (t.sub >= 0) --nbr[t.sub];
      out(s, space.rank(nbr.data()), t.rate);
      outflow[s] += t.rate;
    }
  }
  return outflow;
}

}  // namespace

StationaryEstimate exact_stationary(const Model& m, const GeometryContext& geom,
                                    int cap) {
  const int K = m.layout.K;
  if (cap < 1) throw Error("cap too small", "need cap >= 1");
  // Guard the state count before allocating anything big.
  double approx = 1.0;
  for (int i = 1; i <= K; ++i) approx *= static_cast<double>(cap + i) / i;
  if (approx > 1e7) throw Error("state space too large", "more than 1e7 states");

  const StateSpace space(K, cap);
  const long long N = static_cast<long long>(space.count());
  AllocCache cache(m.spec);

  // pi Q = 0 with the last balance equation replaced by normalization.
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<size_t>(N) * (2 * K + 2) + N);
  std::vector<double> outflow = for_each_transition(
      m, space, cache, [&](unsigned long long from, unsigned long long to, double rate) {
        if (static_cast<long long>(to) != N - 1)
          trips.emplace_back(static_cast<int>(to), static_cast<int>(from), rate);
      });
  for (long long s = 0; s < N; ++s)
    if (s != N - 1 && outflow[s] != 0.0)
      trips.emplace_back(static_cast<int>(s), static_cast<int>(s), -outflow[s]);
  for (long long s = 0; s < N; ++s)
    trips.emplace_back(static_cast<int>(N - 1), static_cast<int>(s), 1.0);

  Eigen::SparseMatrix<double> A(N, N);
  A.setFromTriplets(trips.begin(), trips.end());
  A.makeCompressed();
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu(A);
  if (lu.info() != Eigen::Success)
    throw Error("stationary solve failed", "sparse LU factorization failed");
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(N);
  rhs(N - 1) = 1.0;
  Eigen::VectorXd pi = lu.solve(rhs);
  for (long long s = 0; s < N; ++s) pi(s) = std::max(pi(s), 0.0);
  pi /= pi.sum();

  StationaryEstimate est;
  est.cap = cap;
  est.num_states = N;
  est.distribution.assign(pi.data(), pi.data() + N);

  const int L = m.spec.num_links();
  const Eigen::VectorXd kappa = m.spec.weights();
  const bool has_geom = geom.chol.rows() == K;
  est.unused_mean.assign(L, 0.0);
  std::vector<int> n(K);
  FlowState state;
  state.counts.assign(K, 0);
  Eigen::VectorXd nvec(K);
  for (long long s = 0; s < N; ++s) {
    const double mass = pi(s);
    space.unrank(s, n.data());
    long long sum = 0;
    for (int i = 0; i < K; ++i) {
      state.counts[i] = n[i];
      sum += n[i];
      nvec(i) = n[i];
    }
    if (sum == cap) est.boundary_mass += mass;
    const auto totals = totals_of(m.layout, state);
    const Allocation& alloc = cache.get(totals);
    double w = 0.0;
    for (int r = 0; r < m.layout.R; ++r) w += kappa(r) * static_cast<double>(totals[r]);
    est.mean_weighted_flows += mass * w;
    for (int l = 0; l < L; ++l) est.unused_mean[l] += mass * alloc.U(l);
    if (has_geom) {
      const double nrm = (geom.chol * nvec).norm();
      const ProjectionResult pr = project_cone(geom, nvec);
      est.mean_norm += mass * nrm;
      est.mean_perp_norm += mass * pr.dist;
      est.mean_perp_norm_sq += mass * pr.dist * pr.dist;
    }
  }
  return est;
}

UniformizeReport uniformize_check(const Model& m, int cap, double qbar_factor) {
  const int K = m.layout.K;
  double approx = 1.0;
  for (int i = 1; i <= K; ++i) approx *= static_cast<double>(cap + i) / i;
  if (approx > 1e7) throw Error("state space too large", "more than 1e7 states");
  const StateSpace space(K, cap);
  const long long N = static_cast<long long>(space.count());
  AllocCache cache(m.spec);

  std::vector<Eigen::Triplet<double>> trips;
  std::vector<double> outflow = for_each_transition(
      m, space, cache, [&](unsigned long long from, unsigned long long to, double rate) {
        trips.emplace_back(static_cast<int>(to), static_cast<int>(from), rate);
      });
  double qmax = 0.0;
  for (double q : outflow) qmax = std::max(qmax, q);
  const double qbar = qbar_factor * qmax;

  UniformizeReport rep;
  rep.qbar = qbar;
  const StationaryEstimate ctmc = exact_stationary(m, GeometryContext{}, cap);

  if (!(qbar > 0.0)) {
    rep.tv_distance = 0.0;  // P = I; any distribution is stationary
    return rep;
  }

  // P^T = I + Q^T/qbar; the DTMC solution comes from plain power iteration so
  // it exercises the uniformized kernel rather than re-solving pi Q = 0.
  for (auto& t : trips) t = {t.row(), t.col(), t.value() / qbar};
  Eigen::SparseMatrix<double> PT(N, N);
  PT.setFromTriplets(trips.begin(), trips.end());
  for (long long s = 0; s < N; ++s) PT.coeffRef(s, s) += 1.0 - outflow[s] / qbar;
  PT.makeCompressed();

  Eigen::VectorXd v = Eigen::VectorXd::Constant(N, 1.0 / N);
  Eigen::VectorXd next(N);
  for (int it = 0; it < 4000000; ++it) {
    next = PT * v;
    next /= next.sum();
    const double diff = (next - v).cwiseAbs().sum();
    v.swap(next);
    rep.power_iterations = it + 1;
    if (diff <= 1e-14) break;
  }

  double tv = 0.0;
  for (long long s = 0; s < N; ++s) tv += std::abs(v(s) - ctmc.distribution[s]);
  rep.tv_distance = 0.5 * tv;
  return rep;
}

double drift_eval(const Model& m, const std::function<double(const FlowState&)>& V,
                  const FlowState& state) {
  Eigen::VectorXd n(m.layout.R);
  {
    const auto t = totals_of(m.layout, state);
    for (int r = 0; r < m.layout.R; ++r) n(r) = static_cast<double>(t[r]);
  }
  const Allocation alloc = solve_allocation(m.spec, n);
  const TransitionSet ts = transition_kernel(m, state, alloc);
  const double v0 = V(state);
  double drift = 0.0;
  FlowState nbr = state;
  for (const auto& t : ts.transitions) {
    if (t.add >= 0) ++nbr.counts[t.add];
    if (t.sub >= 0) --nbr.counts[t.sub];
    drift += t.rate * (V(nbr) - v0);
    if (t.add >= 0) --nbr.counts[t.add];
    if (t.sub >= 0) ++nbr.counts[t.sub];
  }
  return drift;
}

std::string StationaryEstimate::to_json_string() const {
  nlohmann::json j;
  j["mean_weighted_flows"] = mean_weighted_flows;
  j["se_weighted_flows"] = se_weighted_flows;
  j["unused_mean"] = unused_mean;
  j["mean_perp_norm"] = mean_perp_norm;
  j["mean_perp_norm_sq"] = mean_perp_norm_sq;
  j["mean_norm"] = mean_norm;
  j["se_perp_norm"] = se_perp_norm;
  if (events > 0) {
    j["events"] = events;
    j["seed"] = seed;
    j["horizon_time"] = horizon_time;
  }
  if (cap >= 0) {
    j["cap"] = cap;
    j["num_states"] = num_states;
    j["boundary_mass"] = boundary_mass;
  }
  return j.dump(2);
}

std::string UniformizeReport::to_json_string() const {
  nlohmann::json j;
  j["qbar"] = qbar;
  j["tv_distance"] = tv_distance;
  j["power_iterations"] = power_iterations;
  return j.dump(2);
}

}  // namespace fairshare
