#include "treewave/edge_inverse.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "treewave/error.hpp"
#include "treewave/grid.hpp"

namespace treewave {

double EdgeField::at(double s) const { return interpolate_profile(values, length, s); }

EdgeField EdgeField::resampled(std::size_t c) const {
  EdgeField out(length, c);
  for (std::size_t i = 0; i <= c; ++i) out.values[i] = at(out.x(i));
  return out;
}

double edge_l2(const EdgeField& f) {
  double s = 0.0;
  const std::size_t m = f.cells();
  for (std::size_t i = 0; i <= m; ++i) s += (i == 0 || i == m ? 0.5 : 1.0) * f.values[i] * f.values[i];
  return std::sqrt(s * f.dx());
}

double relative_l2_error(const EdgeField& a, const EdgeField& b) {
  EdgeField d = a.resampled(b.cells());
  for (std::size_t i = 0; i < d.values.size(); ++i) d.values[i] -= b.values[i];
  return edge_l2(d) / edge_l2(b);
}

void EdgeInverseProblem::check() const {
  if (!(length > 0.0)) throw ValidationError("edge length must be positive");
  if (!(horizon > 0.0)) throw ValidationError("time horizon must be positive");
  dirichlet.check();
  neumann.check();
  if (dirichlet.count() < 4 || neumann.count() < 4) throw ValidationError("edge data traces are too short");
  if (u0.size() < 2 || u1.size() < 2) throw ValidationError("initial data needs at least 2 samples");
  if (r > 0.0)
    for (double v : u0)
      if (std::abs(v) < r) throw ValidationError("initial data violates the lower bound |u0| >= r");
  if (!(bound_M > 0.0)) throw ValidationError("bound M must be positive");
}

double InverseConfig::resolved_alpha(const EdgeInverseProblem& prob) const {
  if (alpha >= 0.0) return alpha;
  const double q = rms(prob.neumann);
  return 1e-3 * q * q;
}

EdgeDiscretization edge_discretization(const EdgeInverseProblem& prob, const InverseConfig& cfg,
                                       std::size_t cells) {
  EdgeDiscretization d;
  if (cells == 0) {
    if (!(cfg.target_dx > 0.0)) throw ValidationError("target-dx must be positive");
    cells = static_cast<std::size_t>(std::max<long long>(4, std::llround(prob.length / cfg.target_dx)));
  }
  if (cells < 4) throw ValidationError("edge grid needs at least 4 cells");
  d.cells = cells;
  d.dx = prob.length / static_cast<double>(cells);
  d.dt = cfg.time_step > 0.0 ? cfg.time_step : cfg.cfl * d.dx;
  if (d.dt > d.dx * (1.0 + 1e-12))
    throw ValidationError("inversion time step violates the CFL condition on edge " + prob.edge);
  double cover = std::min(prob.dirichlet.end_time(), prob.neumann.end_time());
  if (prob.far_dirichlet) cover = std::min(cover, prob.far_dirichlet->end_time());
  auto want = std::llround(prob.horizon / d.dt);
  auto fit = static_cast<long long>(std::floor(cover / d.dt + 1e-9));
  d.steps = static_cast<std::size_t>(std::min(want, fit));
  if (d.steps < 4) throw ValidationError("data horizon too short for the inversion grid");
  return d;
}

namespace {

// Edge wave model on the inversion grid; interior samples 1..m-1 evolve,
// s = 0 carries D(t), s = l carries the far trace G(t).
class EdgeModel {
 public:
  EdgeModel(const EdgeInverseProblem& prob, const EdgeDiscretization& disc) : disc_(disc) {
    m = disc.cells;
    K = disc.steps;
    dx = disc.dx;
    dt = disc.dt;
    D = resampled(prob.dirichlet, dt, K + 1).values;
    d = resampled(prob.neumann, dt, K + 1).values;
    if (prob.far_dirichlet) G_known = resampled(*prob.far_dirichlet, dt, K + 1).values;
    u0.resize(m + 1);
    u1.resize(m + 1);
    for (std::size_t i = 0; i <= m; ++i) {
      const double s = dx * static_cast<double>(i);
      u0[i] = interpolate_profile(prob.u0, prob.length, s);
      u1[i] = interpolate_profile(prob.u1, prob.length, s);
    }
    w.assign(K + 1, dt);
    w.front() = w.back() = 0.5 * dt;
  }

  bool far_known() const { return !G_known.empty(); }

  std::vector<double> default_far() const {
    if (far_known()) return G_known;
    return std::vector<double>(K + 1, u0[m]);
  }

  // hist is (K + 1) x (m + 1), row-major
  void forward(const std::vector<double>& p, const std::vector<double>& G, std::vector<double>& hist) const {
    const std::size_t S = m + 1;
    hist.assign((K + 1) * S, 0.0);
    const double dt2 = dt * dt;
    const double inv = 1.0 / (dx * dx);
    std::copy(u0.begin(), u0.end(), hist.begin());
    double* r0 = hist.data();
    double* r1 = hist.data() + S;
    for (std::size_t i = 1; i < m; ++i)
      r1[i] = r0[i] + dt * u1[i] + 0.5 * dt2 * ((r0[i - 1] - 2.0 * r0[i] + r0[i + 1]) * inv - p[i] * r0[i]);
    r1[0] = D[1];
    r1[m] = G[1];
    for (std::size_t k = 1; k < K; ++k) {
      const double* a = hist.data() + (k - 1) * S;
      const double* b = hist.data() + k * S;
      double* c = hist.data() + (k + 1) * S;
      for (std::size_t i = 1; i < m; ++i)
        c[i] = 2.0 * b[i] - a[i] + dt2 * ((b[i - 1] - 2.0 * b[i] + b[i + 1]) * inv - p[i] * b[i]);
      c[0] = D[k + 1];
      c[m] = G[k + 1];
    }
  }

  // third-order one-sided outward derivative at s = 0
  double oc(std::size_t i) const {
    static constexpr double c[4] = {11.0, -18.0, 9.0, -2.0};
    return c[i] / (6.0 * dx);
  }
  double observe(const double* row) const { return oc(0) * row[0] + oc(1) * row[1] + oc(2) * row[2] + oc(3) * row[3]; }
  double observe_interior(const std::vector<double>& row) const { return oc(1) * row[1] + oc(2) * row[2] + oc(3) * row[3]; }

  std::vector<double> residual(const std::vector<double>& hist) const {
    std::vector<double> r(K + 1);
    for (std::size_t k = 0; k <= K; ++k) r[k] = observe(hist.data() + k * (m + 1)) - d[k];
    return r;
  }

  double data_term(const std::vector<double>& r) const {
    double s = 0.0;
    for (std::size_t k = 0; k <= K; ++k) s += w[k] * r[k] * r[k];
    return 0.5 * s;
  }

  // Discrete adjoint: gradient of the data term with respect to interior p
  // samples and far-end samples G_1..G_{K-1}.
  void adjoint(const std::vector<double>& p, const std::vector<double>& hist, const std::vector<double>& r,
               std::vector<double>& gp, std::vector<double>& gG) const {
    const std::size_t S = m + 1;
    const double dt2 = dt * dt;
    const double inv = 1.0 / (dx * dx);
    gp.assign(S, 0.0);
    gG.assign(K + 1, 0.0);
    std::vector<double> l1(S, 0.0), l2(S, 0.0), l0(S, 0.0);  // lambda^{k+1}, lambda^{k+2}, lambda^k
    for (std::size_t k = K; k >= 1; --k) {
      for (std::size_t i = 1; i < m; ++i) {
        double Ml = (l1[i - 1] - 2.0 * l1[i] + l1[i + 1]) * inv - p[i] * l1[i];
        l0[i] = 2.0 * l1[i] - l2[i] + dt2 * Ml;
      }
      for (std::size_t i = 1; i <= 3; ++i) l0[i] -= w[k] * r[k] * oc(i);
      // lambda^{k+1} pairs with v^k
      if (k < K) {
        const double* v = hist.data() + k * S;
        for (std::size_t i = 1; i < m; ++i) gp[i] += dt2 * l1[i] * v[i];
        gG[k] = -dt2 * inv * l1[m - 1];
      }
      std::swap(l2, l1);
      std::swap(l1, l0);
    }
    // l1 now holds lambda^1
    for (std::size_t i = 1; i < m; ++i) gp[i] += 0.5 * dt2 * l1[i] * u0[i];
  }

  // d y_k / d p_i for every interior i, column-major into J (K+1 rows).
  void jacobian_p(const std::vector<double>& p, const std::vector<double>& hist, Eigen::MatrixXd& J,
                  std::size_t col0) const {
    const std::size_t S = m + 1;
    const double dt2 = dt * dt;
    const double inv = 1.0 / (dx * dx);
    std::vector<double> a(S), b(S), c(S);
    for (std::size_t j = 1; j < m; ++j) {
      auto col = J.col(static_cast<Eigen::Index>(col0 + j - 1));
      col.setZero();
      std::fill(a.begin(), a.end(), 0.0);
      std::fill(b.begin(), b.end(), 0.0);
      b[j] = -0.5 * dt2 * u0[j];
      col(1) = observe_interior(b);
      for (std::size_t k = 1; k < K; ++k) {
        const double* v = hist.data() + k * S;
        c[0] = c[m] = 0.0;
        for (std::size_t i = 1; i < m; ++i)
          c[i] = 2.0 * b[i] - a[i] + dt2 * ((b[i - 1] - 2.0 * b[i] + b[i + 1]) * inv - p[i] * b[i]);
        c[j] -= dt2 * v[j];
        col(static_cast<Eigen::Index>(k + 1)) = observe_interior(c);
        std::swap(a, b);
        std::swap(b, c);
      }
    }
  }

  // Response of y to a unit impulse in G_1 (y_k for k = 0..K).
  std::vector<double> far_impulse(const std::vector<double>& p) const {
    const std::size_t S = m + 1;
    const double dt2 = dt * dt;
    const double inv = 1.0 / (dx * dx);
    std::vector<double> resp(K + 1, 0.0);
    std::vector<double> a(S, 0.0), b(S, 0.0), c(S, 0.0);
    b[m] = 1.0;  // level 1
    for (std::size_t k = 1; k < K; ++k) {
      c[0] = c[m] = 0.0;
      for (std::size_t i = 1; i < m; ++i)
        c[i] = 2.0 * b[i] - a[i] + dt2 * ((b[i - 1] - 2.0 * b[i] + b[i + 1]) * inv - p[i] * b[i]);
      resp[k + 1] = observe_interior(c);
      std::swap(a, b);
      std::swap(b, c);
    }
    return resp;
  }

  EdgeDiscretization disc_;
  std::size_t m = 0, K = 0;
  double dx = 0.0, dt = 0.0;
  std::vector<double> D, d, G_known, u0, u1, w;
};

// Local cubic (4-point Lagrange) interpolation from n + 1 parameter samples
// onto m + 1 grid samples; the stencil shifts inwards at the ends.
Eigen::MatrixXd interpolation(std::size_t n, std::size_t m) {
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m + 1), static_cast<Eigen::Index>(n + 1));
  for (std::size_t i = 0; i <= m; ++i) {
    const double s = static_cast<double>(i) * static_cast<double>(n) / static_cast<double>(m);
    const auto ii = static_cast<Eigen::Index>(i);
    const double r = std::round(s);
    if (std::abs(s - r) < 1e-12) {
      P(ii, static_cast<Eigen::Index>(r)) = 1.0;
      continue;
    }
    if (n < 3) {
      const std::size_t j = std::min(static_cast<std::size_t>(std::floor(s)), n - 1);
      const double th = s - static_cast<double>(j);
      P(ii, static_cast<Eigen::Index>(j)) += 1.0 - th;
      P(ii, static_cast<Eigen::Index>(j + 1)) += th;
      continue;
    }
    const auto j = static_cast<std::size_t>(std::floor(s));
    const std::size_t lo = std::clamp<std::size_t>(j == 0 ? 0 : j - 1, 0, n - 3);
    for (std::size_t a = lo; a < lo + 4; ++a) {
      double w = 1.0;
      for (std::size_t b = lo; b < lo + 4; ++b)
        if (b != a) w *= (s - static_cast<double>(b)) / (static_cast<double>(a) - static_cast<double>(b));
      P(ii, static_cast<Eigen::Index>(a)) += w;
    }
  }
  return P;
}

// Weights of the interior samples 1, 2, 3 in the extrapolated end sample:
// quadratic when three interior samples exist, else linear or constant.
std::vector<double> end_weights(std::size_t n) {
  if (n >= 4) return {3.0, -3.0, 1.0};
  if (n == 3) return {2.0, -1.0};
  return {1.0};
}

// Interior parameter samples 1..n-1 drive the model; the end samples follow
// by extrapolation (the data barely see them). Maps the n - 1 interior
// parameters onto all n + 1 samples.
Eigen::MatrixXd extension(std::size_t n) {
  Eigen::MatrixXd E = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n + 1), static_cast<Eigen::Index>(n - 1));
  for (std::size_t j = 1; j < n; ++j) E(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j - 1)) = 1.0;
  const auto N = static_cast<Eigen::Index>(n);
  const auto w = end_weights(n);
  for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(w.size()); ++k) {
    E(0, k) += w[static_cast<std::size_t>(k)];
    E(N, N - 2 - k) += w[static_cast<std::size_t>(k)];
  }
  return E;
}

// Quadratic form R of the penalty (1/2)(q - prior)^T R (q - prior) on all
// n + 1 samples. l2: alpha h on interior samples; h1: alpha |dq/ds|^2.
Eigen::MatrixXd penalty(Regularizer kind, double alpha, double length, std::size_t n) {
  const auto N = static_cast<Eigen::Index>(n);
  const double h = length / static_cast<double>(n);
  Eigen::MatrixXd R = Eigen::MatrixXd::Zero(N + 1, N + 1);
  if (kind == Regularizer::l2) {
    for (Eigen::Index j = 1; j < N; ++j) R(j, j) = alpha * h;
    return R;
  }
  for (Eigen::Index j = 0; j < N; ++j) {
    R(j, j) += alpha / h;
    R(j + 1, j + 1) += alpha / h;
    R(j, j + 1) -= alpha / h;
    R(j + 1, j) -= alpha / h;
  }
  return R;
}

void fill_ends(std::vector<double>& q) {
  const std::size_t n = q.size() - 1;
  const auto w = end_weights(n);
  q[0] = 0.0;
  q[n] = 0.0;
  for (std::size_t k = 0; k < w.size(); ++k) {
    q[0] += w[k] * q[1 + k];
    q[n] += w[k] * q[n - 1 - k];
  }
}

std::vector<double> to_grid(const Eigen::MatrixXd& P, const std::vector<double>& q) {
  Eigen::VectorXd v = P * Eigen::Map<const Eigen::VectorXd>(q.data(), static_cast<Eigen::Index>(q.size()));
  return {v.data(), v.data() + v.size()};
}

std::vector<double> prior_on(const InverseConfig& cfg, double length, std::size_t cells) {
  if (cfg.prior.empty()) return std::vector<double>(cells + 1, 0.0);
  return EdgeField(length, cfg.prior).resampled(cells).values;
}


}  // namespace

MisfitResult edge_misfit(const EdgeField& p, const EdgeInverseProblem& prob, const InverseConfig& cfg,
                         const std::vector<double>* far) {
  prob.check();
  if (std::abs(p.length - prob.length) > 1e-12 * prob.length)
    throw ValidationError("candidate length does not match the edge");
  if (p.values.size() < 2) throw ValidationError("candidate potential needs at least 2 samples");
  for (double v : p.values)
    if (std::abs(v) > prob.bound_M * (1.0 + 1e-12))
      throw ValidationError("candidate potential exceeds the bound M");
  auto disc = edge_discretization(prob, cfg);
  EdgeModel model(prob, disc);
  const std::size_t n = p.cells(), m = model.m;
  const auto P = interpolation(n, m);
  std::vector<double> G = far ? *far : model.default_far();
  if (G.size() != model.K + 1) throw ValidationError("far-end trace length does not match the time grid");
  const auto pf = to_grid(P, p.values);
  std::vector<double> hist;
  model.forward(pf, G, hist);
  MisfitResult out;
  out.residual = model.residual(hist);
  out.data_term = model.data_term(out.residual);
  std::vector<double> gfine;
  model.adjoint(pf, hist, out.residual, gfine, out.grad_far);
  if (model.far_known()) std::fill(out.grad_far.begin(), out.grad_far.end(), 0.0);
  Eigen::VectorXd gq = P.transpose() * Eigen::Map<const Eigen::VectorXd>(gfine.data(), static_cast<Eigen::Index>(gfine.size()));
  out.grad.assign(gq.data(), gq.data() + gq.size());
  const auto R = penalty(cfg.regularizer, cfg.resolved_alpha(prob), prob.length, n);
  const auto prior = prior_on(cfg, prob.length, n);
  Eigen::VectorXd e(static_cast<Eigen::Index>(n + 1));
  for (std::size_t j = 0; j <= n; ++j) e(static_cast<Eigen::Index>(j)) = p.values[j] - prior[j];
  const Eigen::VectorXd Re = R * e;
  out.reg_term = 0.5 * e.dot(Re);
  for (std::size_t j = 0; j <= n; ++j) out.grad[j] += Re(static_cast<Eigen::Index>(j));
  out.J = out.data_term + out.reg_term;
  if (!std::isfinite(out.J)) throw NumericalError("misfit is not finite");
  return out;
}

EdgeRecovery recover_edge_potential(const EdgeInverseProblem& prob, const InverseConfig& cfg,
                                    const EdgeField* start) {
  prob.check();
  if (cfg.max_iters < 1) throw ValidationError("max-iters must be at least 1");
  if (cfg.param_dx < 0.0) throw ValidationError("param-dx must be non-negative");
  auto disc = edge_discretization(prob, cfg);
  EdgeModel model(prob, disc);
  const std::size_t m = model.m, K = model.K;
  std::size_t n = m;
  if (cfg.param_dx > 0.0)
    n = std::min<std::size_t>(m, static_cast<std::size_t>(std::max<long long>(cfg.min_param_cells, std::llround(prob.length / cfg.param_dx))));
  n = std::max<std::size_t>(n, 2);
  const auto P = interpolation(n, m);
  std::vector<std::size_t> idx;
  for (std::size_t j = 1; j < n; ++j) idx.push_back(j);
  const std::size_t np = idx.size();
  const auto Ext = extension(n);
  const Eigen::MatrixXd Pe = P * Ext;
  const bool free_far = !model.far_known();
  const std::size_t ng = free_far ? K - 1 : 0;
  const std::size_t nx = np + ng;
  const double alpha = cfg.resolved_alpha(prob);
  const double M = prob.bound_M;
  const auto prior = prior_on(cfg, prob.length, n);
  const auto R = penalty(cfg.regularizer, alpha, prob.length, n);
  const Eigen::MatrixXd ERE = Ext.transpose() * R * Ext;
  auto reg_grad = [&](const std::vector<double>& qq) {
    Eigen::VectorXd e(static_cast<Eigen::Index>(n + 1));
    for (std::size_t j = 0; j <= n; ++j) e(static_cast<Eigen::Index>(j)) = qq[j] - prior[j];
    return Eigen::VectorXd(Ext.transpose() * (R * e));
  };
  const double g0 = model.u0[m];
  // fine interior rows of the interpolation restricted to free parameters
  Eigen::MatrixXd Pi(static_cast<Eigen::Index>(m - 1), static_cast<Eigen::Index>(np));
  for (std::size_t i = 1; i < m; ++i)
    for (std::size_t c = 0; c < np; ++c)
      Pi(static_cast<Eigen::Index>(i - 1), static_cast<Eigen::Index>(c)) =
          Pe(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c));

  std::vector<double> q(n + 1, 0.0);
  if (start) {
    EdgeField st = start->cells() == n ? *start : start->resampled(n);
    for (std::size_t j = 0; j <= n; ++j) q[j] = std::clamp(st.values[j], -M, M);
    fill_ends(q);
  }
  std::vector<double> G = model.default_far();

  // tiny ridge on the far trace so that samples the data cannot see stay put
  double beta = 0.0;
  if (free_far) {
    auto imp = model.far_impulse(to_grid(P, q));
    double h = 0.0;
    for (std::size_t k = 0; k <= K; ++k) h += model.w[k] * imp[k] * imp[k];
    beta = 1e-9 * h / model.dt;
  }

  auto unpack = [&](const Eigen::VectorXd& x, std::vector<double>& qq, std::vector<double>& gg) {
    for (std::size_t c = 0; c < np; ++c) qq[idx[c]] = x(static_cast<Eigen::Index>(c));
    fill_ends(qq);
    for (std::size_t k = 0; k < ng; ++k) gg[k + 1] = x(static_cast<Eigen::Index>(np + k));
  };
  auto project = [&](Eigen::VectorXd& x) {
    for (std::size_t c = 0; c < np; ++c) {
      auto& v = x(static_cast<Eigen::Index>(c));
      v = std::clamp(v, -M, M);
    }
  };

  std::vector<double> hist;
  auto objective = [&](const std::vector<double>& qq, const std::vector<double>& gg, std::vector<double>& r) {
    model.forward(to_grid(P, qq), gg, hist);
    r = model.residual(hist);
    double J = model.data_term(r);
    Eigen::VectorXd e(static_cast<Eigen::Index>(n + 1));
    for (std::size_t j = 0; j <= n; ++j) e(static_cast<Eigen::Index>(j)) = qq[j] - prior[j];
    J += 0.5 * e.dot(R * e);
    for (std::size_t k = 1; k <= ng; ++k) J += 0.5 * beta * model.dt * (gg[k] - g0) * (gg[k] - g0);
    return J;
  };

  Eigen::VectorXd x(static_cast<Eigen::Index>(nx));
  for (std::size_t c = 0; c < np; ++c) x(static_cast<Eigen::Index>(c)) = q[idx[c]];
  for (std::size_t k = 0; k < ng; ++k) x(static_cast<Eigen::Index>(np + k)) = G[k + 1];

  EdgeRecovery out;
  out.disc = disc;
  out.alpha = alpha;
  out.far_estimated = free_far;

  std::vector<double> r;
  double J = objective(q, G, r);
  if (!std::isfinite(J)) throw NumericalError("misfit is not finite at the starting iterate");
  double grad0 = -1.0;
  double mu = 0.0;
  Eigen::MatrixXd Jfine(static_cast<Eigen::Index>(K + 1), static_cast<Eigen::Index>(m - 1));
  Eigen::MatrixXd Jac(static_cast<Eigen::Index>(K + 1), static_cast<Eigen::Index>(nx));
  Eigen::VectorXd sw(static_cast<Eigen::Index>(K + 1));
  for (std::size_t k = 0; k <= K; ++k) sw(static_cast<Eigen::Index>(k)) = std::sqrt(model.w[k]);

  int iter = 0;
  bool converged = false;
  double gnorm = 0.0;
  for (; iter <= cfg.max_iters; ++iter) {
    const auto pf = to_grid(P, q);
    model.forward(pf, G, hist);
    model.jacobian_p(pf, hist, Jfine, 0);
    Jac.leftCols(static_cast<Eigen::Index>(np)).noalias() = Jfine * Pi;
    if (free_far) {
      auto imp = model.far_impulse(pf);
      // column for G_j is the impulse response shifted by j - 1
      for (std::size_t j = 1; j <= ng; ++j) {
        auto col = Jac.col(static_cast<Eigen::Index>(np + j - 1));
        col.setZero();
        for (std::size_t k = j - 1; k <= K; ++k) col(static_cast<Eigen::Index>(k)) = imp[k - (j - 1)];
      }
    }
    Eigen::VectorXd rv(static_cast<Eigen::Index>(K + 1));
    for (std::size_t k = 0; k <= K; ++k) rv(static_cast<Eigen::Index>(k)) = r[k] * model.w[k];
    Eigen::VectorXd grad = Jac.transpose() * rv;
    grad.head(static_cast<Eigen::Index>(np)) += reg_grad(q);
    for (std::size_t k = 0; k < ng; ++k) grad(static_cast<Eigen::Index>(np + k)) += beta * model.dt * (G[k + 1] - g0);
    gnorm = grad.norm();
    if (grad0 < 0.0) grad0 = gnorm;
    out.history.push_back({iter, J, gnorm, out.history.empty() ? 0.0 : out.history.back().step});
    if (gnorm <= cfg.grad_tol || J <= 1e-300) {
      converged = true;
      break;
    }
    if (iter == cfg.max_iters) break;

    Eigen::MatrixXd Jw = sw.asDiagonal() * Jac;
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(nx), static_cast<Eigen::Index>(nx));
    H.selfadjointView<Eigen::Lower>().rankUpdate(Jw.transpose());
    H = H.selfadjointView<Eigen::Lower>();
    H.topLeftCorner(static_cast<Eigen::Index>(np), static_cast<Eigen::Index>(np)) += ERE;
    for (std::size_t k = 0; k < ng; ++k) H(static_cast<Eigen::Index>(np + k), static_cast<Eigen::Index>(np + k)) += beta * model.dt;

    bool accepted = false;
    double step_norm = 0.0;
    double Jnew = J;
    std::vector<double> qt = q, Gt = G, rt;
    for (int attempt = 0; attempt < 12 && !accepted; ++attempt) {
      Eigen::MatrixXd A = H;
      if (mu > 0.0) A.diagonal() += mu * H.diagonal().cwiseMax(1e-300);
      Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
      Eigen::VectorXd delta = ldlt.solve(-grad);
      if (ldlt.info() != Eigen::Success || !delta.allFinite()) {
        mu = std::max(1e-6, mu * 10.0);
        continue;
      }
      double t = 1.0;
      for (int bt = 0; bt <= cfg.max_backtracks; ++bt) {
        Eigen::VectorXd xt = x + t * delta;
        project(xt);
        Eigen::VectorXd dx_ = xt - x;
        const double slope = grad.dot(dx_);
        if (slope < 0.0) {
          unpack(xt, qt, Gt);
          Jnew = objective(qt, Gt, rt);
          if (std::isfinite(Jnew) && Jnew <= J + cfg.armijo_c * slope) {
            x = xt;
            step_norm = dx_.norm();
            accepted = true;
            break;
          }
        }
        t *= cfg.backtrack;
      }
      if (!accepted) mu = std::max(1e-6, mu * 10.0);
    }
    if (!accepted) {
      converged = gnorm <= 1e-6 * grad0;
      break;
    }
    mu *= 0.1;
    if (mu < 1e-8) mu = 0.0;
    const double decrease = J - Jnew;
    q = qt;
    G = Gt;
    r = rt;
    J = Jnew;
    out.history.back().step = step_norm;
    if (decrease <= 1e-13 * J || step_norm <= 1e-13 * (1.0 + x.norm())) {
      converged = true;
      ++iter;
      model.forward(to_grid(P, q), G, hist);
      out.history.push_back({iter, J, std::numeric_limits<double>::quiet_NaN(), 0.0});
      break;
    }
  }
  if (!out.history.empty() && std::isnan(out.history.back().grad_norm)) {
    // final gradient for the report
    std::vector<double> gp, gG;
    model.adjoint(to_grid(P, q), hist, r, gp, gG);
    Eigen::VectorXd gq = Pe.transpose() * Eigen::Map<const Eigen::VectorXd>(gp.data(), static_cast<Eigen::Index>(gp.size()));
    Eigen::VectorXd g(static_cast<Eigen::Index>(nx));
    g.head(static_cast<Eigen::Index>(np)) = gq + reg_grad(q);
    for (std::size_t k = 0; k < ng; ++k)
      g(static_cast<Eigen::Index>(np + k)) = gG[k + 1] + beta * model.dt * (G[k + 1] - g0);
    gnorm = g.norm();
    out.history.back().grad_norm = gnorm;
  }
  fill_ends(q);
  auto pf = to_grid(P, q);
  for (double& v : pf) v = std::clamp(v, -M, M);
  out.p = EdgeField(prob.length, pf);
  out.far_trace = G;
  out.J = J;
  out.grad_norm = gnorm;
  out.residual_l2 = std::sqrt(2.0 * model.data_term(r));
  out.iterations = static_cast<int>(out.history.size()) - 1;
  out.converged = converged;
  return out;
}

DiscrepancyChoice recover_with_discrepancy(const EdgeInverseProblem& prob, const InverseConfig& cfg,
                                           double noise_sd, double tau) {
  if (!(noise_sd > 0.0)) throw ValidationError("discrepancy principle needs a positive noise level");
  DiscrepancyChoice out;
  out.target = tau * noise_sd * std::sqrt(prob.horizon);
  const double q = rms(prob.neumann);
  auto sweep = [&](const InverseConfig& c0, const EdgeField* start) {
    InverseConfig c = c0;
    std::optional<EdgeField> warm;
    if (start) warm = *start;
    double alpha = 1e-1 * q * q;
    for (int j = 0; j < 16; ++j, alpha *= 0.25) {
      c.alpha = alpha;
      auto rec = recover_edge_potential(prob, c, warm ? &*warm : nullptr);
      out.path.emplace_back(alpha, rec.residual_l2);
      warm = rec.p;
      out.alpha = alpha;
      out.recovery = std::move(rec);
      if (out.recovery.residual_l2 <= out.target) break;
    }
  };
  sweep(cfg, nullptr);
  if (cfg.prior.empty()) {
    // a zero prior drags the weakly seen far end towards 0; redo with the
    // first pass's mean as a constant prior
    const auto& f = out.recovery.p;
    double mean = 0.0;
    for (std::size_t i = 0; i <= f.cells(); ++i) mean += (i == 0 || i == f.cells() ? 0.5 : 1.0) * f.values[i];
    mean /= static_cast<double>(f.cells());
    InverseConfig c = cfg;
    c.prior.assign(2, mean);
    const EdgeField first = f;
    sweep(c, &first);
  }
  return out;
}

FarTraces edge_transfer(const EdgeField& p_hat, const EdgeInverseProblem& prob, const InverseConfig& cfg) {
  prob.check();
  if (std::abs(p_hat.length - prob.length) > 1e-12 * prob.length)
    throw ValidationError("potential length does not match edge " + prob.edge);
  // march in s: u_ss = u_tt + p u, Cauchy data at s = 0, u0 on the row t = 0
  const auto disc = edge_discretization(prob, cfg);
  const double dt = disc.dt;
  const std::size_t K = disc.steps;
  const std::size_t m = std::max<std::size_t>(2, static_cast<std::size_t>(std::ceil(prob.length / dt - 1e-9)));
  const double ds = prob.length / static_cast<double>(m);
  if (K < m + 2) throw ValidationError("horizon too short to transfer across edge " + prob.edge);
  const auto D = resampled(prob.dirichlet, dt, K + 1).values;
  const auto N = resampled(prob.neumann, dt, K + 1).values;
  const double r = ds * ds, inv = 1.0 / (dt * dt);
  auto dtt = [&](const std::vector<double>& row, std::size_t k) { return (row[k + 1] - 2.0 * row[k] + row[k - 1]) * inv; };
  auto u0 = [&](std::size_t j) { return interpolate_profile(prob.u0, prob.length, ds * static_cast<double>(j)); };

  std::vector<double> z, a, b = D, c(K + 1, 0.0);
  // third-order Taylor step; u_s = -N, u_sss = -N_tt - p N + p' D
  const double p0 = p_hat.at(0.0);
  const double dp0 = (p_hat.at(ds) - p0) / ds;
  c[0] = u0(1);
  for (std::size_t k = 1; k < K; ++k)
    c[k] = D[k] - ds * N[k] + 0.5 * r * (dtt(D, k) + p0 * D[k]) + r * ds / 6.0 * (-dtt(N, k) - p0 * N[k] + dp0 * D[k]);
  std::size_t top = K - 1;  // last valid index of the newest row
  for (std::size_t j = 1; j < m; ++j) {
    z.swap(a);
    a.swap(b);
    b.swap(c);
    c.assign(K + 1, 0.0);
    const double pj = p_hat.at(ds * static_cast<double>(j));
    --top;
    c[0] = u0(j + 1);
    for (std::size_t k = 1; k <= top; ++k) c[k] = 2.0 * b[k] - a[k] + r * (dtt(b, k) + pj * b[k]);
  }
  // rows: z = s_{m-3}, a = s_{m-2}, b = s_{m-1}, c = s_m
  FarTraces out;
  for (auto* tr : {&out.dirichlet, &out.neumann}) {
    tr->node = prob.far_node;
    tr->edge = prob.edge;
    tr->t0 = 0.0;
    tr->dt = dt;
  }
  out.dirichlet.kind = TraceKind::dirichlet;
  out.neumann.kind = TraceKind::neumann_outward;
  for (std::size_t k = 0; k <= top; ++k) {
    out.dirichlet.values.push_back(c[k]);
    out.neumann.values.push_back(m >= 3 ? (11.0 * c[k] - 18.0 * b[k] + 9.0 * a[k] - 2.0 * z[k]) / (6.0 * ds)
                                        : (3.0 * c[k] - 4.0 * b[k] + a[k]) / (2.0 * ds));
  }
  out.valid_until = dt * static_cast<double>(top);
  return out;
}

FarTraces edge_transfer(const EdgeRecovery& rec, const EdgeInverseProblem& prob, const InverseConfig& cfg) {
  InverseConfig c = cfg;
  c.time_step = rec.disc.dt;
  return edge_transfer(rec.p, prob, c);
}

}  // namespace treewave
