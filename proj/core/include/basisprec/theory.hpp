#pragma once

// Closed-form oracles: Wick second moments of quadratic-model gradients,
// the Fisher sandwich, stochastic rate factors, GN power condition ratios,
// and the one-dimensional logistic GN map with its divergence threshold.

#include "basisprec/common.hpp"
#include "basisprec/linalg.hpp"
#include "basisprec/preconditioner.hpp"

#include <vector>

namespace basisprec::theory {

/// 2 S W S + tr(S W) S: the second moment E[g g^T] of g = (x^T d) x for
/// x ~ N(0, S) and W = d d^T.
linalg::SymMatrix wick_second_moment(const linalg::SymMatrix& sigma, const linalg::SymMatrix& w);

struct SandwichReport {
  bool lower_ok = false;
  bool upper_ok = false;
  double lower_slack = 0.0;  // lambda_min(M / 2 - loss S)
  double upper_slack = 0.0;  // lambda_min(3 loss S - M / 2)
  double loss = 0.0;
};

inline constexpr double kSlackTolerance = 1e-10;

/// loss S <= E[g g^T] / 2 <= 3 loss S in the PSD order.
SandwichReport check_fisher_sandwich(const linalg::SymMatrix& sigma, const Vector& theta,
                                     const Vector& theta_star);

struct RateBound {
  linalg::SymMatrix a;  // P^{1/2} S P^{1/2}
  double factor = 1.0;  // 1 - lambda_min(A) / (3 tr A)
  double kappa_s = 1.0; // tr A / lambda_min(A)
};

/// Throws SingularInput unless P and S are positive definite.
RateBound rate_bound(const linalg::SymMatrix& p, const linalg::SymMatrix& sigma);

struct RateReport {
  double predicted_factor = 1.0;
  double measured_factor = 1.0;
  double relative_gap = 0.0;
};

RateReport compare_rate(double predicted, double measured);

/// 1 - 2 eta + 2 eta^2 (d + 1), the predicted per-step factor of
/// single-sample GN^-1 in the eigenbasis.
double gn1_expected_loss_factor(Index d, double eta);

/// 1 - 2 eta + (d + 2) eta^2: the factor obtained from E[(z^T u)^2 |z|^2]
/// = (d + 2) |u|^2 for z ~ N(0, I).
double gn1_expected_loss_factor_exact(Index d, double eta);

/// 1 / (2 lambda_max(A) + tr A). Throws InvalidInput for A = 0.
double optimal_general_lr(const linalg::SymMatrix& a);

/// kappa(S^{1/2} diag(S)^p S^{1/2}).
double preconditioned_condition(const linalg::SymMatrix& sigma, double power);

/// kappa at p = -1 divided by kappa at p = -1/2; r > 1 favors GN^{-1/2}.
/// Throws InvalidInput on a non-positive diagonal entry.
double condition_ratio(const linalg::SymMatrix& sigma);

// ---------------------------------------------------------------------------
// One coordinate of GN^-1 on the reparameterized logistic model.

/// theta - eta 2 theta (s - P) / (4 theta^2 s (1 - s) + eps), s = sigma(theta^2).
/// Non-finite theta maps to itself. Throws SingularInput for eps = 0, theta = 0.
double gn_1d_map(double theta, double eta, double eps, double p);

/// c sqrt(log(1 / theta0)) (theta0 + eps / theta0). Requires theta0 > 0,
/// sigma(theta0^2) <= 0.55 and c > 0.
double divergence_threshold(double theta0, double eps, double c);

/// Smallest c on the calibration grid for which every larger scanned
/// multiple of the threshold diverges; stored rounded up.
inline constexpr double kDivergenceConstant = 7.7;

/// |theta_{t+1}| >= sqrt(2) |theta_t| for t = first..last under a constant eta.
bool diverges_geometrically(double theta0, double eta, double eps, double p, int first = 1,
                            int last = 10);

/// Iterates the map; true if |theta - theta*| <= tol within max_steps.
bool converges_to_fixed_point(double theta0, double eta, double eps, double p, int max_steps,
                              double tol = 1e-8);

struct CalibrationGrid {
  std::vector<double> label_probs{0.6, 0.7, 0.8};
  std::vector<double> theta0s{0.05, 0.1, 0.3};
  std::vector<double> epss{0.0, 1e-4, 1e-3};
  double c_min = 0.01;
  double c_max = 1e4;
  int points = 3000;
};

struct CalibrationResult {
  double c_needed = 0.0;
  double worst_p = 0.0;
  double worst_theta0 = 0.0;
  double worst_eps = 0.0;
};

/// Scans log-spaced multiples c of the unit threshold over the grid.
CalibrationResult calibrate_divergence_constant(const CalibrationGrid& grid = {});

/// Spectral radius of I - eta (H + diag(eps / w))^{-1} H for diagonal H:
/// max_i |1 - eta h_i / (h_i + eps / w_i)|. Unit weights give eps I; the
/// logistic model uses w = nu. A coordinate with h_i + eps / w_i = 0 counts
/// as fully preconditioned (ratio 1).
double contraction_factor(const Vector& gn_star_diag, const Vector& weights, double eta_inf,
                          double eps);

/// The largest limiting step size that avoids divergence on every
/// coordinate from theta0 = 1/sqrt(d): divergence_threshold at the largest
/// per-coordinate regularization eps / nu_max.
double logistic_final_lr_bound(const Vector& nu, double eps, double c = kDivergenceConstant);

struct ContractionBoundReport {
  double gamma = 0.0;
  double eta_bound = 0.0;
  double c_prime = 0.0;
  double rhs = 0.0;       // 1 - c' sqrt(log d) max(1/sqrt d, sqrt(d / kappa))
  double rhs_alt = 0.0;   // same with sqrt(d) / kappa in place of sqrt(d / kappa)
  bool holds = false;     // gamma >= rhs
};

/// Contraction factor at theta* with the final-lr bound substituted, against
/// the lower bound with c' = c nu_min / lambda_min(H*).
ContractionBoundReport check_contraction_bound(const Vector& nu, const Vector& label_prob,
                                               double eps, double c = kDivergenceConstant);

// ---------------------------------------------------------------------------

/// Exact full-expectation Adam diagonal D_A = (u_i^T E[g g^T] u_i)^{-1/2}
/// against D_GN = (u_i^T S u_i)^{-1/2} in a basis. The literal inequality is
/// (1/sqrt(3 l)) D_GN <= D_A / 2 <= (1/sqrt l) D_GN; the corrected one puts
/// sqrt(2) D_A in the middle, which is what the sandwich implies.
struct AdamGnRatioReport {
  bool degenerate = false;  // loss == 0, nothing checked
  double loss = 0.0;
  Vector d_adam;
  Vector d_gn;
  double literal_lower_slack = 0.0;
  double literal_upper_slack = 0.0;
  double corrected_lower_slack = 0.0;
  double corrected_upper_slack = 0.0;
  bool literal_ok = false;
  bool corrected_ok = false;
};

AdamGnRatioReport adam_gn_ratio_check(const linalg::SymMatrix& sigma, const Vector& theta,
                                      const Vector& theta_star, const precond::BasisSpec& basis);

}  // namespace basisprec::theory
