#include "basisprec/theory.hpp"

#include "basisprec/models.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <limits>

namespace basisprec::theory {

namespace {

Vector eigenvalues(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> solver(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
  return solver.eigenvalues();
}

double condition_number(const Matrix& m) {
  const Vector ev = eigenvalues(m);
  return ev(ev.size() - 1) / ev(0);
}

Matrix require_pd_sqrt(const linalg::SymMatrix& s, const char* what) {
  const auto eig = linalg::sym_eig(s);
  if (!(eig.values(0) > 0.0)) {
    throw SingularInput(std::string(what) + ": matrix is not positive definite");
  }
  const Matrix& u = eig.basis.matrix();
  return u * eig.values.cwiseSqrt().asDiagonal() * u.transpose();
}

}  // namespace

linalg::SymMatrix wick_second_moment(const linalg::SymMatrix& sigma, const linalg::SymMatrix& w) {
  require_same_size(sigma.dim(), w.dim(), "wick_second_moment");
  const Matrix& s = sigma.matrix();
  const Matrix sw = s * w.matrix();
  return linalg::SymMatrix(2.0 * sw * s + sw.trace() * s);
}

SandwichReport check_fisher_sandwich(const linalg::SymMatrix& sigma, const Vector& theta,
                                     const Vector& theta_star) {
  require_same_size(theta.size(), sigma.dim(), "check_fisher_sandwich");
  require_same_size(theta_star.size(), sigma.dim(), "check_fisher_sandwich");
  const Vector delta = theta - theta_star;
  const linalg::SymMatrix w(delta * delta.transpose());
  const Matrix& s = sigma.matrix();
  const double loss = 0.5 * delta.dot(s * delta);
  const Matrix half_m = 0.5 * wick_second_moment(sigma, w).matrix();

  SandwichReport r;
  r.loss = loss;
  r.lower_slack = eigenvalues(half_m - loss * s)(0);
  r.upper_slack = eigenvalues(3.0 * loss * s - half_m)(0);
  r.lower_ok = r.lower_slack >= -kSlackTolerance;
  r.upper_ok = r.upper_slack >= -kSlackTolerance;
  return r;
}

RateBound rate_bound(const linalg::SymMatrix& p, const linalg::SymMatrix& sigma) {
  require_same_size(p.dim(), sigma.dim(), "rate_bound");
  const Matrix root = require_pd_sqrt(p, "rate_bound preconditioner");
  require_pd_sqrt(sigma, "rate_bound covariance");
  const linalg::SymMatrix a(root * sigma.matrix() * root);
  const double lmin = eigenvalues(a.matrix())(0);
  const double tr = a.matrix().trace();
  return {a, 1.0 - lmin / (3.0 * tr), tr / lmin};
}

RateReport compare_rate(double predicted, double measured) {
  return {predicted, measured, std::abs(measured - predicted) / std::abs(predicted)};
}

double gn1_expected_loss_factor(Index d, double eta) {
  if (d < 1) throw InvalidInput("gn1_expected_loss_factor: d must be at least 1");
  return 1.0 - 2.0 * eta + 2.0 * eta * eta * static_cast<double>(d + 1);
}

double gn1_expected_loss_factor_exact(Index d, double eta) {
  if (d < 1) throw InvalidInput("gn1_expected_loss_factor_exact: d must be at least 1");
  return 1.0 - 2.0 * eta + static_cast<double>(d + 2) * eta * eta;
}

double optimal_general_lr(const linalg::SymMatrix& a) {
  const Vector ev = eigenvalues(a.matrix());
  if (ev(0) < -linalg::kPsdTolerance) throw InvalidInput("optimal_general_lr: matrix is not PSD");
  const double denom = 2.0 * ev(ev.size() - 1) + a.matrix().trace();
  if (!(denom > 0.0)) throw InvalidInput("optimal_general_lr: zero matrix");
  return 1.0 / denom;
}

double preconditioned_condition(const linalg::SymMatrix& sigma, double power) {
  const Vector diag = sigma.matrix().diagonal();
  if (diag.minCoeff() <= 0.0) {
    throw InvalidInput("condition_ratio: covariance has a non-positive diagonal entry");
  }
  const Matrix root = require_pd_sqrt(sigma, "condition_ratio");
  const Vector scale = diag.array().pow(power);
  return condition_number(root * scale.asDiagonal() * root);
}

double condition_ratio(const linalg::SymMatrix& sigma) {
  return preconditioned_condition(sigma, -1.0) / preconditioned_condition(sigma, -0.5);
}

// ---------------------------------------------------------------------------

double gn_1d_map(double theta, double eta, double eps, double p) {
  if (!std::isfinite(theta)) return theta;
  if (eps == 0.0 && theta == 0.0) throw SingularInput("gn_1d_map: eps = 0 at theta = 0");
  const double z = theta * theta;
  // z sigma(-z) first: 4 z overflows before sigma(-z) underflows.
  const double h = std::isfinite(z) ? 4.0 * (z * models::sigmoid(-z)) * models::sigmoid(z) : 0.0;
  const double num = 2.0 * theta * (models::sigmoid(z) - p);
  const double den = h + eps;
  if (den == 0.0) {
    return num == 0.0 ? theta : std::copysign(std::numeric_limits<double>::infinity(), -num);
  }
  return theta - eta * num / den;
}

double divergence_threshold(double theta0, double eps, double c) {
  if (!(theta0 > 0.0) || models::sigmoid(theta0 * theta0) > 0.55) {
    throw InvalidInput("divergence_threshold: need theta0 > 0 with sigma(theta0^2) <= 0.55");
  }
  if (!(c > 0.0)) throw InvalidInput("divergence_threshold: c must be positive");
  if (!(eps >= 0.0)) throw InvalidInput("divergence_threshold: eps must be nonnegative");
  return c * std::sqrt(std::log(1.0 / theta0)) * (theta0 + eps / theta0);
}

bool diverges_geometrically(double theta0, double eta, double eps, double p, int first, int last) {
  double prev = theta0;
  for (int t = 0; t <= last; ++t) {
    const double next = gn_1d_map(prev, eta, eps, p);
    if (t >= first && !(std::abs(next) >= std::sqrt(2.0) * std::abs(prev))) return false;
    prev = next;
  }
  return true;
}

bool converges_to_fixed_point(double theta0, double eta, double eps, double p, int max_steps,
                              double tol) {
  const double star = std::sqrt(models::logit(p));
  double th = theta0;
  for (int t = 0; t < max_steps; ++t) {
    th = gn_1d_map(th, eta, eps, p);
    if (!std::isfinite(th)) return false;
    if (std::abs(std::abs(th) - star) <= tol) return true;
  }
  return false;
}

CalibrationResult calibrate_divergence_constant(const CalibrationGrid& grid) {
  CalibrationResult out;
  const double lo = std::log(grid.c_min);
  const double hi = std::log(grid.c_max);
  for (double p : grid.label_probs) {
    for (double th0 : grid.theta0s) {
      for (double eps : grid.epss) {
        const double unit = divergence_threshold(th0, eps, 1.0);
        double need = std::numeric_limits<double>::infinity();
        for (int i = grid.points - 1; i >= 0; --i) {
          const double c = std::exp(lo + (hi - lo) * i / (grid.points - 1));
          if (!diverges_geometrically(th0, c * unit, eps, p)) break;
          need = c;
        }
        if (need > out.c_needed) out = {need, p, th0, eps};
      }
    }
  }
  return out;
}

double contraction_factor(const Vector& gn_star_diag, const Vector& weights, double eta_inf,
                          double eps) {
  require_same_size(weights.size(), gn_star_diag.size(), "contraction_factor");
  double gamma = 0.0;
  for (Index i = 0; i < gn_star_diag.size(); ++i) {
    const double h = gn_star_diag(i);
    if (h < -linalg::kPsdTolerance) throw InvalidInput("contraction_factor: negative curvature");
    const double den = h + eps / weights(i);
    const double ratio = den > 0.0 ? h / den : 1.0;
    gamma = std::max(gamma, std::abs(1.0 - eta_inf * ratio));
  }
  return gamma;
}

double logistic_final_lr_bound(const Vector& nu, double eps, double c) {
  const double theta0 = 1.0 / std::sqrt(static_cast<double>(nu.size()));
  return divergence_threshold(theta0, eps / nu.maxCoeff(), c);
}

ContractionBoundReport check_contraction_bound(const Vector& nu, const Vector& label_prob,
                                               double eps, double c) {
  const models::ReparamLogisticModel m(nu, label_prob);
  const Vector h = models::logistic_gn_diag(m, m.optimum());
  const double d = static_cast<double>(nu.size());
  const double kappa = m.imbalance();

  ContractionBoundReport r;
  r.eta_bound = logistic_final_lr_bound(nu, eps, c);
  r.gamma = contraction_factor(h, nu, r.eta_bound, eps);
  r.c_prime = c * nu.minCoeff() / h.minCoeff();
  const double root_log = std::sqrt(std::log(d));
  r.rhs = 1.0 - r.c_prime * root_log * std::max(1.0 / std::sqrt(d), std::sqrt(d / kappa));
  r.rhs_alt = 1.0 - r.c_prime * root_log * std::max(1.0 / std::sqrt(d), std::sqrt(d) / kappa);
  r.holds = r.gamma >= r.rhs - kSlackTolerance;
  return r;
}

// ---------------------------------------------------------------------------

AdamGnRatioReport adam_gn_ratio_check(const linalg::SymMatrix& sigma, const Vector& theta,
                                      const Vector& theta_star, const precond::BasisSpec& basis) {
  require_same_size(theta.size(), sigma.dim(), "adam_gn_ratio_check");
  require_same_size(theta_star.size(), sigma.dim(), "adam_gn_ratio_check");
  AdamGnRatioReport r;
  const Vector delta = theta - theta_star;
  r.loss = 0.5 * delta.dot(sigma.matrix() * delta);
  if (r.loss == 0.0) {
    r.degenerate = true;
    return r;
  }
  const Matrix u = basis.materialize(sigma.dim());
  const Matrix m = wick_second_moment(sigma, linalg::SymMatrix(delta * delta.transpose())).matrix();
  const Vector m_diag = (m * u).cwiseProduct(u).colwise().sum().transpose();
  const Vector s_diag = (sigma.matrix() * u).cwiseProduct(u).colwise().sum().transpose();
  r.d_adam = m_diag.array().rsqrt();
  r.d_gn = s_diag.array().rsqrt();

  const double lo = 1.0 / std::sqrt(3.0 * r.loss);
  const double hi = 1.0 / std::sqrt(r.loss);
  const Vector literal = 0.5 * r.d_adam;
  const Vector corrected = std::sqrt(2.0) * r.d_adam;
  r.literal_lower_slack = (literal - lo * r.d_gn).minCoeff();
  r.literal_upper_slack = (hi * r.d_gn - literal).minCoeff();
  r.corrected_lower_slack = (corrected - lo * r.d_gn).minCoeff();
  r.corrected_upper_slack = (hi * r.d_gn - corrected).minCoeff();
  r.literal_ok = r.literal_lower_slack >= -kSlackTolerance && r.literal_upper_slack >= -kSlackTolerance;
  r.corrected_ok =
      r.corrected_lower_slack >= -kSlackTolerance && r.corrected_upper_slack >= -kSlackTolerance;
  return r;
}

}  // namespace basisprec::theory
