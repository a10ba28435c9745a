#include "fairshare/inner_product.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>
#include <unsupported/Eigen/MatrixFunctions>

#include "fairshare/error.hpp"

namespace fairshare {

namespace {

// 15-point Gauss-Legendre rule on [-1, 1].
constexpr int GL_N = 15;
constexpr double GL_X[GL_N] = {
    -0.9879925180204854, -0.9372733924007060, -0.8482065834104272,
    -0.7244177313601701, -0.5709721726085388, -0.3941513470775634,
    -0.2011940939974345, 0.0,                 0.2011940939974345,
    0.3941513470775634,  0.5709721726085388,  0.7244177313601701,
    0.8482065834104272,  0.9372733924007060,  0.9879925180204854};
constexpr double GL_W[GL_N] = {
    0.0307532419961173, 0.0703660474881081, 0.1071592204671719,
    0.1395706779261543, 0.1662692058169939, 0.1861610000155622,
    0.1984314853271116, 0.2025782419255613, 0.1984314853271116,
    0.1861610000155622, 0.1662692058169939, 0.1395706779261543,
    0.1071592204671719, 0.0703660474881081, 0.0307532419961173};

struct Integrand {
  const Eigen::MatrixXd& S;
  const Eigen::VectorXd& chi;  // (-S)^-T pi^T; denominator d(s) = chi^T exp(Ss) 1
  Eigen::VectorXd ones;

  explicit Integrand(const Eigen::MatrixXd& S_, const Eigen::VectorXd& chi_)
      : S(S_), chi(chi_), ones(Eigen::VectorXd::Ones(S_.rows())) {}

  Eigen::MatrixXd operator()(double s) const {
    const Eigen::VectorXd p = (S * s).exp() * ones;
    const double d = chi.dot(p);
    if (!(d > 1e-300)) return Eigen::MatrixXd::Zero(S.rows(), S.rows());
    return (p * p.transpose()) / d;
  }
};

Eigen::MatrixXd gl15(const Integrand& f, double a, double b) {
  const double h = 0.5 * (b - a), c = 0.5 * (a + b);
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(f.S.rows(), f.S.rows());
  for (int i = 0; i < GL_N; ++i) acc += GL_W[i] * f(c + h * GL_X[i]);
  return h * acc;
}

void adaptive(const Integrand& f, double a, double b, double tol, int depth,
              Eigen::MatrixXd& out, int& panels) {
  const Eigen::MatrixXd whole = gl15(f, a, b);
  const double m = 0.5 * (a + b);
  const Eigen::MatrixXd halves = gl15(f, a, m) + gl15(f, m, b);
  const double err = (halves - whole).cwiseAbs().maxCoeff();
  if (err <= tol || depth >= 48) {
    if (depth >= 48 && err > tol)
      throw Error("quadrature not converged",
                  "panel [" + std::to_string(a) + ", " + std::to_string(b) +
                      "] error " + std::to_string(err));
    out += halves;
    panels += 2;
    return;
  }
  adaptive(f, a, m, 0.5 * tol, depth + 1, out, panels);
  adaptive(f, m, b, 0.5 * tol, depth + 1, out, panels);
}

// M_r block by quadrature; tol applies to the entries of the scaled block.
Eigen::MatrixXd route_block(const PhaseTypeDist& d, double kappa, double lambda0,
                            double quad_tol, QuadInfo& info) {
  if (d.K == 1) {
    info = {0.0, 0, quad_tol};
    return Eigen::MatrixXd::Constant(1, 1, kappa / lambda0);
  }
  const Moments mo = moments_and_loads(d);
  const double chi_min = mo.chi.minCoeff();
  const double raw_tol = quad_tol * lambda0 / kappa;

  // Grow sigma_max until the analytic tail bound
  //   Int_T^inf P_i P_j / d <= max_i ((-S)^-1 exp(ST) 1)_i / min_k chi_k
  // is negligible against the budget.
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(d.K);
  const Eigen::MatrixXd negS = -d.S;
  double T = 40.0 / d.min_rate();
  for (int it = 0; it < 200; ++it) {
    const Eigen::VectorXd tail =
        negS.triangularView<Eigen::Upper>().solve(((d.S * T).exp() * ones).eval());
    if (tail.maxCoeff() / chi_min <= 0.1 * raw_tol) break;
    T *= 1.4;
  }

  Integrand f(d.S, mo.chi);
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(d.K, d.K);
  int panels = 0;
  adaptive(f, 0.0, T, 0.9 * raw_tol, 0, acc, panels);
  info = {T, panels, quad_tol};
  return (kappa / lambda0) * acc;
}

}  // namespace

InnerProductMatrix build_M(const NetworkSpec& spec,
                           const std::vector<PhaseTypeDist>& dists,
                           const Eigen::VectorXd& lambda0, double quad_tol) {
  const int R = spec.num_routes();
  if (static_cast<int>(dists.size()) != R || lambda0.size() != R)
    throw Error("dist count mismatch", "expected one distribution and rate per route");

  InnerProductMatrix ip;
  ip.layout = PhaseLayout(dists);
  ip.blocks.resize(R);
  ip.quad.resize(R);
  ip.M = Eigen::MatrixXd::Zero(ip.layout.K, ip.layout.K);
  for (int r = 0; r < R; ++r) {
    ip.blocks[r] = route_block(dists[r], spec.routes[r].weight, lambda0(r),
                               quad_tol, ip.quad[r]);
    const int o = ip.layout.offset[r];
    ip.M.block(o, o, dists[r].K, dists[r].K) = ip.blocks[r];
  }

  Eigen::LLT<Eigen::MatrixXd> llt(0.5 * (ip.M + ip.M.transpose()));
  if (llt.info() != Eigen::Success)
    throw Error("M not positive definite", "Cholesky factorization failed");
  ip.chol = llt.matrixU();
  return ip;
}

bool MIdentityReport::ok() const {
  for (const auto& r : routes) {
    if (!r.symmetric || !r.positive_definite || !r.pbh || !r.exponential_exact)
      return false;
    if (!(r.rotation_residual <= 1e-8)) return false;
    if (!(r.contraction_min_eig >= -psd_tol)) return false;
  }
  return true;
}

std::string MIdentityReport::to_json_string() const {
  nlohmann::json j;
  j["ok"] = ok();
  j["psd_tol"] = psd_tol;
  j["routes"] = nlohmann::json::array();
  for (const auto& r : routes) {
    j["routes"].push_back({{"route", r.route},
                           {"symmetric", r.symmetric},
                           {"positive_definite", r.positive_definite},
                           {"pbh", r.pbh},
                           {"min_eigenvalue", r.min_eigenvalue},
                           {"rotation_residual", r.rotation_residual},
                           {"contraction_min_eig", r.contraction_min_eig},
                           {"eta", r.eta},
                           {"eta_flagged", r.eta_flagged},
                           {"exponential_exact", r.exponential_exact}});
  }
  return j.dump(2);
}

MIdentityReport verify_M(const InnerProductMatrix& ip, const NetworkSpec& spec,
                         const std::vector<PhaseTypeDist>& dists,
                         const TrafficProfile& profile, double rank_tol) {
  MIdentityReport rep;
  for (int r = 0; r < spec.num_routes(); ++r) {
    const PhaseTypeDist& d = dists[r];
    const Eigen::MatrixXd& Mr = ip.blocks[r];
    const double kappa = spec.routes[r].weight;
    const int K = d.K;
    MIdentityReport::PerRoute out;
    out.route = spec.routes[r].id;

    const double mnorm = Mr.cwiseAbs().maxCoeff();
    out.symmetric = (Mr - Mr.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * mnorm;

    const Eigen::MatrixXd Msym = 0.5 * (Mr + Mr.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Msym);
    out.min_eigenvalue = es.eigenvalues().minCoeff();
    out.positive_definite = out.min_eigenvalue > 0.0;

    // Rotation identity: (1/kappa_r) rho0_r^T M_r (-S_r^T) = 1^T.
    const Eigen::VectorXd rho0 = profile.load0.segment(ip.layout.offset[r], K);
    const Eigen::RowVectorXd rot =
        (rho0.transpose() * Mr * (-d.S.transpose())) / kappa;
    out.rotation_residual =
        (rot - Eigen::RowVectorXd::Ones(K)).cwiseAbs().maxCoeff();

    const HazardCurve hc = survival_and_hazard(d);
    out.eta = hc.bound.eta;
    out.eta_flagged = hc.bound.flagged_nonpositive;

    // sym(M_r (-S_r^T)) - eta_r M_r must be PSD (checked at eta = 0 when the
    // hazard bound is flagged).
    Eigen::MatrixXd A = Mr * (-d.S.transpose());
    A = 0.5 * (A + A.transpose()) - out.eta * Msym;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> esA(A);
    out.contraction_min_eig = esA.eigenvalues().minCoeff() / mnorm;

    // PBH: rank [mu I + S_r | 1] = K at every distinct block rate. Class-D
    // admits only eigenvectors with a single nonzero entry, so the test is
    // equivalent to "no eigenvector v of S_r^T with v^T 1 = 0".
    out.pbh = true;
    std::vector<double> rates;
    for (const auto& b : d.blocks) {
      bool dup = false;
      for (double x : rates) dup = dup || std::abs(x - b.rate) <= 1e-9 * b.rate;
      if (!dup) rates.push_back(b.rate);
    }
    for (double mu : rates) {
      Eigen::MatrixXd pbh(K, K + 1);
      pbh.leftCols(K) = -mu * Eigen::MatrixXd::Identity(K, K) - d.S;
      pbh.col(K) = Eigen::VectorXd::Ones(K);
      Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(pbh);
      qr.setThreshold(rank_tol);
      if (qr.rank() < K) out.pbh = false;
    }

    out.exponential_exact =
        K != 1 || Mr(0, 0) == spec.routes[r].weight / profile.lambda0(r);
    rep.routes.push_back(std::move(out));
  }
  return rep;
}

}  // namespace fairshare
