#include "basisprec/models.hpp"

#include <cmath>
#include <string>

namespace basisprec::models {

namespace {

double softplus(double z) {
  // log(1 + e^z) without overflow
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

void require_finite_vec(const Vector& v, const char* what) {
  if (!v.allFinite()) throw InvalidInput(std::string(what) + ": non-finite entry");
}

Matrix activate(const Matrix& h, Activation act) {
  return act == Activation::Relu ? Matrix(h.cwiseMax(0.0)) : h;
}

Matrix activation_slope(const Matrix& h, Activation act) {
  if (act == Activation::Identity) return Matrix::Ones(h.rows(), h.cols());
  return (h.array() > 0.0).cast<double>().matrix();
}

void check_batch(const MlpModel& m, const Matrix& x, const char* what) {
  if (x.cols() == 0) throw InvalidInput(std::string(what) + ": empty batch");
  require_same_size(x.rows(), m.shape.input, what);
}

}  // namespace

// ---------------------------------------------------------------------------

QuadraticModel::QuadraticModel(linalg::SymMatrix cov, Vector theta_star)
    : cov_(std::move(cov)), theta_star_(std::move(theta_star)) {
  require_same_size(cov_.dim(), theta_star_.size(), "QuadraticModel");
  require_finite_vec(theta_star_, "QuadraticModel");
}

double quad_loss(const QuadraticModel& m, const ParamVector& theta) {
  require_same_size(theta.size(), m.dim(), "quad_loss");
  const Vector delta = theta - m.theta_star();
  return 0.5 * delta.dot(m.cov().matrix() * delta);
}

GradSample quad_population_grad(const QuadraticModel& m, const ParamVector& theta) {
  require_same_size(theta.size(), m.dim(), "quad_population_grad");
  const Vector delta = theta - m.theta_star();
  Vector g = m.cov().matrix() * delta;
  const double loss = 0.5 * delta.dot(g);
  return {std::move(g), loss};
}

GradSample quad_sample_grad(const QuadraticModel& m, const ParamVector& theta, const Vector& x) {
  require_same_size(theta.size(), m.dim(), "quad_sample_grad");
  require_same_size(x.size(), m.dim(), "quad_sample_grad");
  const double r = (theta - m.theta_star()).dot(x);
  return {r * x, 0.5 * r * r};
}

GradSample quad_batch_grad(const QuadraticModel& m, const ParamVector& theta, const Matrix& inputs) {
  require_same_size(theta.size(), m.dim(), "quad_batch_grad");
  require_same_size(inputs.rows(), m.dim(), "quad_batch_grad");
  if (inputs.cols() == 0) throw InvalidInput("quad_batch_grad: empty batch");
  const double n = static_cast<double>(inputs.cols());
  const Vector r = inputs.transpose() * (theta - m.theta_star());
  return {inputs * r / n, 0.5 * r.squaredNorm() / n};
}

linalg::SymMatrix quad_gn(const QuadraticModel& m) { return m.cov(); }

// ---------------------------------------------------------------------------

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double logit(double p) {
  if (!(p > 0.0 && p < 1.0)) throw InvalidInput("logit: probability must lie in (0, 1)");
  return std::log(p / (1.0 - p));
}

ReparamLogisticModel::ReparamLogisticModel(Vector nu, Vector label_prob, bool allow_any_label_prob)
    : nu_(std::move(nu)), p_(std::move(label_prob)) {
  require_same_size(nu_.size(), p_.size(), "ReparamLogisticModel");
  if (nu_.size() == 0) throw InvalidInput("ReparamLogisticModel: empty model");
  require_finite_vec(nu_, "ReparamLogisticModel nu");
  require_finite_vec(p_, "ReparamLogisticModel P");
  if (nu_.minCoeff() <= 0.0) throw InvalidInput("ReparamLogisticModel: nu must be positive");
  if (std::abs(nu_.sum() - 1.0) > 1e-12) {
    throw InvalidInput("ReparamLogisticModel: nu must sum to 1");
  }
  for (Index i = 0; i < p_.size(); ++i) {
    const double p = p_(i);
    const bool ok = allow_any_label_prob ? (p > 0.0 && p < 1.0) : (p >= 0.6 && p <= 0.8);
    if (!ok) {
      throw InvalidInput("ReparamLogisticModel: label probability " + std::to_string(p) +
                         (allow_any_label_prob ? " outside (0, 1)" : " outside [0.6, 0.8]"));
    }
  }
}

Vector ReparamLogisticModel::optimum() const {
  Vector out(dim());
  for (Index i = 0; i < dim(); ++i) out(i) = std::sqrt(logit(p_(i)));
  return out;
}

GradSample logistic_loss_grad(const ReparamLogisticModel& m, const ParamVector& theta) {
  require_same_size(theta.size(), m.dim(), "logistic_loss_grad");
  Vector g(m.dim());
  double loss = 0.0;
  for (Index i = 0; i < m.dim(); ++i) {
    const double z = theta(i) * theta(i);
    const double p = m.label_prob()(i);
    const double nu = m.nu()(i);
    loss += nu * (p * softplus(-z) + (1.0 - p) * softplus(z));
    g(i) = 2.0 * nu * theta(i) * (sigmoid(z) - p);
  }
  return {std::move(g), loss};
}

Vector logistic_gn_diag(const ReparamLogisticModel& m, const ParamVector& theta) {
  require_same_size(theta.size(), m.dim(), "logistic_gn_diag");
  Vector h(m.dim());
  for (Index i = 0; i < m.dim(); ++i) {
    const double z = theta(i) * theta(i);
    h(i) = 4.0 * m.nu()(i) * z * sigmoid(z) * sigmoid(-z);
  }
  return h;
}

GradSample logistic_sample_grad(const ReparamLogisticModel& m, const ParamVector& theta, Index i,
                                int y) {
  require_same_size(theta.size(), m.dim(), "logistic_sample_grad");
  if (i < 0 || i >= m.dim()) {
    throw InvalidInput("logistic_sample_grad: coordinate " + std::to_string(i) + " out of range");
  }
  if (y != 0 && y != 1) throw InvalidInput("logistic_sample_grad: label must be 0 or 1");
  const double z = theta(i) * theta(i);
  GradSample out{ParamVector::Zero(m.dim()), y == 1 ? softplus(-z) : softplus(z)};
  out.grad(i) = 2.0 * theta(i) * (sigmoid(z) - y);
  return out;
}

// ---------------------------------------------------------------------------

MlpModel MlpModel::zeros(const MlpShape& shape) {
  if (shape.input < 1 || shape.hidden < 1 || shape.output < 1) {
    throw InvalidInput("MlpModel: dimensions must be positive");
  }
  return {shape, Matrix::Zero(shape.hidden, shape.input), Vector::Zero(shape.hidden),
          Matrix::Zero(shape.output, shape.hidden)};
}

MlpModel MlpModel::from_params(const MlpShape& shape, const ParamVector& theta) {
  require_same_size(theta.size(), shape.param_count(), "MlpModel::from_params");
  MlpModel m = zeros(shape);
  const Index nw = shape.weight_count();
  m.w = Eigen::Map<const Matrix>(theta.data(), shape.hidden, shape.input);
  m.b = theta.segment(nw, shape.hidden);
  m.a = Eigen::Map<const Matrix>(theta.data() + nw + shape.hidden, shape.output, shape.hidden);
  return m;
}

ParamVector MlpModel::params() const {
  ParamVector theta(shape.param_count());
  const Index nw = shape.weight_count();
  Eigen::Map<Matrix>(theta.data(), shape.hidden, shape.input) = w;
  theta.segment(nw, shape.hidden) = b;
  Eigen::Map<Matrix>(theta.data() + nw + shape.hidden, shape.output, shape.hidden) = a;
  return theta;
}

Matrix MlpModel::forward(const Matrix& x) const {
  require_same_size(x.rows(), shape.input, "MlpModel::forward");
  const Matrix h = (w * x).colwise() + b;
  return a * activate(h, shape.activation);
}

GradSample mlp_forward_backward(const MlpModel& m, const Batch& batch) {
  check_batch(m, batch.x, "mlp_forward_backward");
  require_same_size(batch.y.rows(), m.shape.output, "mlp_forward_backward targets");
  require_same_size(batch.y.cols(), batch.x.cols(), "mlp_forward_backward targets");
  const double n = static_cast<double>(batch.size());

  const Matrix h = (m.w * batch.x).colwise() + m.b;
  const Matrix act = activate(h, m.shape.activation);
  const Matrix resid = m.a * act - batch.y;
  const double loss = 0.5 * resid.squaredNorm() / n;

  const Matrix r = resid / n;
  const Matrix d_a = r * act.transpose();
  const Matrix d_h = (m.a.transpose() * r).cwiseProduct(activation_slope(h, m.shape.activation));
  const Matrix d_w = d_h * batch.x.transpose();
  const Vector d_b = d_h.rowwise().sum();

  MlpModel grad = m;
  grad.w = d_w;
  grad.b = d_b;
  grad.a = d_a;
  return {grad.params(), loss};
}

double mlp_loss(const MlpModel& m, const Batch& batch) {
  check_batch(m, batch.x, "mlp_loss");
  const Matrix resid = m.forward(batch.x) - batch.y;
  return 0.5 * resid.squaredNorm() / static_cast<double>(batch.size());
}

MlpCurvature mlp_gn_kron(const MlpModel& m, const Matrix& inputs) {
  check_batch(m, inputs, "mlp_gn_kron");
  const double n = static_cast<double>(inputs.cols());
  const Index hid = m.shape.hidden;
  const Index in = m.shape.input;

  const Matrix h = (m.w * inputs).colwise() + m.b;
  const Matrix act = activate(h, m.shape.activation);
  const Matrix slope = activation_slope(h, m.shape.activation);
  const Vector x_sq = inputs.colwise().squaredNorm().transpose();  // n
  const Matrix x_elem_sq = inputs.cwiseAbs2();                      // in x n

  // For output k and sample s, G = s_k x^T with s_k = a_k o act'(h).
  Matrix left = Matrix::Zero(hid, hid);
  Matrix right = Matrix::Zero(in, in);
  Matrix diag = Matrix::Zero(hid, in);
  Vector bias = Vector::Zero(hid);
  for (Index k = 0; k < m.shape.output; ++k) {
    const Matrix s = slope.array().colwise() * m.a.row(k).transpose().array();  // hid x n
    const Vector s_sq = s.colwise().squaredNorm().transpose();
    left.noalias() += (s * x_sq.asDiagonal()) * s.transpose();
    right.noalias() += (inputs * s_sq.asDiagonal()) * inputs.transpose();
    diag.noalias() += s.cwiseAbs2() * x_elem_sq.transpose();
    bias += s.cwiseAbs2().rowwise().sum();
  }
  left /= n;
  right /= n;
  diag /= n;
  bias /= n;

  const double tr = right.trace();
  if (tr > 0.0) {
    right /= tr;
  } else {
    right = Matrix::Identity(in, in) / static_cast<double>(in);
  }

  // d f_k / d A(k, j) = act_j; other outputs do not depend on row k.
  const Vector act_sq = act.cwiseAbs2().rowwise().sum() / n;
  Matrix out_diag(m.shape.output, hid);
  for (Index k = 0; k < m.shape.output; ++k) out_diag.row(k) = act_sq.transpose();

  MlpCurvature c{linalg::KronFactors{linalg::SymMatrix(left), linalg::SymMatrix(right)}, diag, bias,
                 Eigen::Map<const Vector>(out_diag.data(), out_diag.size())};
  return c;
}

linalg::KronFactors kron_factors_from_grads(const std::vector<Matrix>& grads) {
  if (grads.empty()) throw InvalidInput("kron_factors_from_grads: empty list");
  const Index r = grads.front().rows();
  const Index c = grads.front().cols();
  Matrix left = Matrix::Zero(r, r);
  Matrix right = Matrix::Zero(c, c);
  for (const auto& g : grads) {
    require_same_size(g.rows(), r, "kron_factors_from_grads");
    require_same_size(g.cols(), c, "kron_factors_from_grads");
    left.noalias() += g * g.transpose();
    right.noalias() += g.transpose() * g;
  }
  const double n = static_cast<double>(grads.size());
  left /= n;
  right /= n;
  const double tr = right.trace();
  right = tr > 0.0 ? Matrix(right / tr) : Matrix(Matrix::Identity(c, c) / static_cast<double>(c));
  return {linalg::SymMatrix(left), linalg::SymMatrix(right)};
}

}  // namespace basisprec::models
