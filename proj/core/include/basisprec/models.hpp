#pragma once

// Model families with exact losses, gradients and Gauss-Newton curvature:
// linear regression on Gaussian inputs, the square-reparameterized logistic
// model on one-hot inputs, and a one-hidden-layer MLP trained with MSE.

#include "basisprec/common.hpp"
#include "basisprec/linalg.hpp"

#include <vector>

namespace basisprec::models {

struct GradSample {
  ParamVector grad;
  double loss = 0.0;
};

// ---------------------------------------------------------------------------
// Linear regression: loss(theta) = 1/2 E[((theta - theta*)^T x)^2], x ~ N(0, cov)

class QuadraticModel {
 public:
  QuadraticModel(linalg::SymMatrix cov, Vector theta_star);

  Index dim() const { return theta_star_.size(); }
  const linalg::SymMatrix& cov() const { return cov_; }
  const Vector& theta_star() const { return theta_star_; }

 private:
  linalg::SymMatrix cov_;
  Vector theta_star_;
};

double quad_loss(const QuadraticModel& m, const ParamVector& theta);

/// grad = cov (theta - theta*), loss = 1/2 (theta - theta*)^T cov (theta - theta*).
GradSample quad_population_grad(const QuadraticModel& m, const ParamVector& theta);

/// grad = ((theta - theta*)^T x) x for one input x.
GradSample quad_sample_grad(const QuadraticModel& m, const ParamVector& theta, const Vector& x);

/// Mean of quad_sample_grad over the columns of `inputs` (dim x n).
GradSample quad_batch_grad(const QuadraticModel& m, const ParamVector& theta, const Matrix& inputs);

/// The Gauss-Newton matrix of linear regression is the input covariance.
linalg::SymMatrix quad_gn(const QuadraticModel& m);

// ---------------------------------------------------------------------------
// Reparameterized logistic model: x = e_i with probability nu_i,
// P(y = 1 | x = e_i) = P_i, prediction sigma(theta_i^2).

double sigmoid(double z);

/// Checked inverse of the logistic function on (0, 1).
double logit(double p);

class ReparamLogisticModel {
 public:
  /// Enforces nu > 0 summing to 1 (within 1e-12) and 0.6 <= P_i <= 0.8
  /// unless `allow_any_label_prob` is set (then only 0 < P_i < 1).
  ReparamLogisticModel(Vector nu, Vector label_prob, bool allow_any_label_prob = false);

  Index dim() const { return nu_.size(); }
  const Vector& nu() const { return nu_; }
  const Vector& label_prob() const { return p_; }

  /// kappa(nu) = nu_max / nu_min.
  double imbalance() const { return nu_.maxCoeff() / nu_.minCoeff(); }

  /// theta*_i = +sqrt(logit(P_i)).
  Vector optimum() const;

 private:
  Vector nu_;
  Vector p_;
};

/// Population cross-entropy and its gradient g_i = 2 nu_i theta_i (sigma(theta_i^2) - P_i).
GradSample logistic_loss_grad(const ReparamLogisticModel& m, const ParamVector& theta);

/// Diagonal of the Gauss-Newton matrix: 4 nu_i theta_i^2 sigma(1 - sigma).
Vector logistic_gn_diag(const ReparamLogisticModel& m, const ParamVector& theta);

/// Gradient for the single example (x = e_i, y); supported on coordinate i.
GradSample logistic_sample_grad(const ReparamLogisticModel& m, const ParamVector& theta, Index i,
                                int y);

// ---------------------------------------------------------------------------
// One-hidden-layer MLP: yhat = A act(W x + b), MSE loss 1/(2n) sum ||yhat - y||^2.

enum class Activation { Relu, Identity };

struct MlpShape {
  Index input = 0;
  Index hidden = 0;
  Index output = 1;
  Activation activation = Activation::Relu;

  Index weight_count() const { return hidden * input; }
  Index param_count() const { return hidden * input + hidden + output * hidden; }
};

/// Flat layout: vec(W) column-major (hidden x input), then b (hidden),
/// then vec(A) column-major (output x hidden).
struct MlpModel {
  MlpShape shape;
  Matrix w;  // hidden x input
  Vector b;  // hidden
  Matrix a;  // output x hidden

  static MlpModel zeros(const MlpShape& shape);
  static MlpModel from_params(const MlpShape& shape, const ParamVector& theta);
  ParamVector params() const;

  /// Outputs for the columns of x (input x n); returns output x n.
  Matrix forward(const Matrix& x) const;
};

/// Inputs and targets stored column-wise.
struct Batch {
  Matrix x;  // input x n
  Matrix y;  // output x n
  Index size() const { return x.cols(); }
};

/// MSE loss and exact backprop gradient over the batch (ReLU'(0) = 0).
GradSample mlp_forward_backward(const MlpModel& m, const Batch& batch);

double mlp_loss(const MlpModel& m, const Batch& batch);

/// Gauss-Newton statistics of the MLP from per-sample output Jacobians.
/// The weight matrix gets Kronecker factors E[G G^T] (hidden x hidden) and
/// E[G^T G] / tr(E[G^T G]) (input x input), where G = d f / d W summed over
/// outputs; the Kronecker product then has trace E||G||_F^2. `weight_diag`
/// is the exact diagonal E[G o G]. Vector parameters get diagonal second
/// moments.
struct MlpCurvature {
  linalg::KronFactors weight_factors;
  Matrix weight_diag;  // hidden x input
  Vector bias_diag;    // hidden
  Vector out_diag;     // output * hidden, column-major like A
};

MlpCurvature mlp_gn_kron(const MlpModel& m, const Matrix& inputs);

/// (E[G G^T], E[G^T G] / tr) over a list of same-shape matrices, with the
/// left factor carrying the trace. Throws InvalidInput on an empty list.
linalg::KronFactors kron_factors_from_grads(const std::vector<Matrix>& grads);

}  // namespace basisprec::models
