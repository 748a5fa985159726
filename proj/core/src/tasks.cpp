#include "basisprec/tasks.hpp"

#include "basisprec/theory.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace basisprec::tasks {

double Task::dist_to_opt(const ParamVector& theta) const {
  const auto opt = optimum();
  if (!opt) return std::numeric_limits<double>::quiet_NaN();
  return (theta - *opt).norm();
}

// ---------------------------------------------------------------------------

QuadraticTask::QuadraticTask(std::string name, models::QuadraticModel model,
                             std::optional<Vector> theta0)
    : name_(std::move(name)),
      model_(std::move(model)),
      cov_sqrt_(linalg::psd_sqrt(model_.cov())),
      theta0_(theta0 ? *theta0 : Vector::Zero(model_.dim())) {
  require_same_size(theta0_.size(), model_.dim(), "QuadraticTask theta0");
}

ParamVector QuadraticTask::initial_params(Rng&) const { return theta0_; }

double QuadraticTask::eval_loss(const ParamVector& theta) const { return models::quad_loss(model_, theta); }

models::GradSample QuadraticTask::full_grad(const ParamVector& theta, Rng&) const {
  return models::quad_population_grad(model_, theta);
}

Matrix QuadraticTask::sample_inputs(Index n, Rng& rng) const {
  return cov_sqrt_ * gaussian_matrix(rng, dim(), n);
}

models::GradSample QuadraticTask::batch_grad(const ParamVector& theta, Index batch, Rng& rng) const {
  return models::quad_batch_grad(model_, theta, sample_inputs(batch, rng));
}

precond::Curvature QuadraticTask::full_gn(const ParamVector&, Rng&) const {
  return precond::Curvature::dense(models::quad_gn(model_));
}

precond::Curvature QuadraticTask::batch_gn(const ParamVector&, Index batch, Rng& rng) const {
  const Matrix x = sample_inputs(batch, rng);
  return precond::Curvature::dense(linalg::SymMatrix(x * x.transpose() / static_cast<double>(batch)));
}

double QuadraticTask::dist_to_opt(const ParamVector& theta) const {
  return (theta - model_.theta_star()).norm();
}

// ---------------------------------------------------------------------------

LogisticTask::LogisticTask(std::string name, models::ReparamLogisticModel model, Vector theta0)
    : name_(std::move(name)), model_(std::move(model)), theta0_(std::move(theta0)) {
  require_same_size(theta0_.size(), model_.dim(), "LogisticTask theta0");
  cdf_.resize(static_cast<std::size_t>(model_.dim()));
  double acc = 0.0;
  for (Index i = 0; i < model_.dim(); ++i) {
    acc += model_.nu()(i);
    cdf_[static_cast<std::size_t>(i)] = acc;
  }
  cdf_.back() = 1.0;
}

ParamVector LogisticTask::initial_params(Rng&) const { return theta0_; }

double LogisticTask::eval_loss(const ParamVector& theta) const {
  return models::logistic_loss_grad(model_, theta).loss;
}

models::GradSample LogisticTask::full_grad(const ParamVector& theta, Rng&) const {
  return models::logistic_loss_grad(model_, theta);
}

std::pair<Index, int> LogisticTask::sample(Rng& rng) const {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double r = u(rng);
  const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), r);
  const Index i = std::min<Index>(static_cast<Index>(it - cdf_.begin()), model_.dim() - 1);
  const int y = u(rng) < model_.label_prob()(i) ? 1 : 0;
  return {i, y};
}

models::GradSample LogisticTask::batch_grad(const ParamVector& theta, Index batch, Rng& rng) const {
  if (batch < 1) throw InvalidInput("LogisticTask: batch must be at least 1");
  models::GradSample out{ParamVector::Zero(dim()), 0.0};
  for (Index s = 0; s < batch; ++s) {
    const auto [i, y] = sample(rng);
    const auto g = models::logistic_sample_grad(model_, theta, i, y);
    out.grad(i) += g.grad(i);
    out.loss += g.loss;
  }
  out.grad /= static_cast<double>(batch);
  out.loss /= static_cast<double>(batch);
  return out;
}

precond::Curvature LogisticTask::full_gn(const ParamVector& theta, Rng&) const {
  return precond::Curvature::diagonal(models::logistic_gn_diag(model_, theta));
}

precond::Curvature LogisticTask::batch_gn(const ParamVector& theta, Index batch, Rng& rng) const {
  if (batch < 1) throw InvalidInput("LogisticTask: batch must be at least 1");
  Vector h = Vector::Zero(dim());
  for (Index s = 0; s < batch; ++s) {
    const Index i = sample(rng).first;
    const double z = theta(i) * theta(i);
    h(i) += 4.0 * z * models::sigmoid(z) * models::sigmoid(-z);
  }
  return precond::Curvature::diagonal(h / static_cast<double>(batch));
}

double LogisticTask::dist_to_opt(const ParamVector& theta) const {
  return (theta.cwiseAbs() - model_.optimum()).norm();
}

// ---------------------------------------------------------------------------

MlpTask::MlpTask(std::string name, models::MlpShape shape, BatchSampler sampler,
                 std::uint64_t eval_seed, std::optional<ParamVector> optimum, Index eval_samples,
                 Index full_batch)
    : name_(std::move(name)),
      shape_(shape),
      sampler_(std::move(sampler)),
      optimum_(std::move(optimum)),
      full_batch_(full_batch) {
  if (optimum_) require_same_size(optimum_->size(), shape_.param_count(), "MlpTask optimum");
  Rng rng = make_rng(eval_seed, 0, Stream::Eval);
  eval_ = sampler_(eval_samples, rng);
}

ParamVector MlpTask::initial_params(Rng& rng) const {
  auto m = models::MlpModel::zeros(shape_);
  m.w = gaussian_matrix(rng, shape_.hidden, shape_.input, 1.0 / std::sqrt(double(shape_.input)));
  m.a = gaussian_matrix(rng, shape_.output, shape_.hidden, 1.0 / std::sqrt(double(shape_.hidden)));
  return m.params();
}

double MlpTask::eval_loss(const ParamVector& theta) const {
  return models::mlp_loss(models::MlpModel::from_params(shape_, theta), eval_);
}

models::GradSample MlpTask::full_grad(const ParamVector& theta, Rng& rng) const {
  return batch_grad(theta, full_batch_, rng);
}

models::GradSample MlpTask::batch_grad(const ParamVector& theta, Index batch, Rng& rng) const {
  if (batch < 1) throw InvalidInput("MlpTask: batch must be at least 1");
  return models::mlp_forward_backward(models::MlpModel::from_params(shape_, theta), sampler_(batch, rng));
}

precond::Curvature MlpTask::full_gn(const ParamVector& theta, Rng& rng) const {
  return batch_gn(theta, full_batch_, rng);
}

precond::Curvature MlpTask::batch_gn(const ParamVector& theta, Index batch, Rng& rng) const {
  if (batch < 1) throw InvalidInput("MlpTask: batch must be at least 1");
  const auto m = models::MlpModel::from_params(shape_, theta);
  auto c = models::mlp_gn_kron(m, sampler_(batch, rng).x);
  precond::Curvature out;
  out.blocks.emplace_back(precond::KronCurvature{std::move(c.weight_factors), std::move(c.weight_diag)});
  out.blocks.emplace_back(precond::DiagonalCurvature{std::move(c.bias_diag)});
  out.blocks.emplace_back(precond::DiagonalCurvature{std::move(c.out_diag)});
  return out;
}

// ---------------------------------------------------------------------------

Matrix random_orthogonal(Index d, Rng& rng) {
  const Matrix g = gaussian_matrix(rng, d, d);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(d, d);
  const Matrix& r = qr.matrixQR();
  for (Index j = 0; j < d; ++j) {
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  }
  return q;
}

Vector log_spectrum(Index d, double lo, double hi) {
  if (d < 1 || !(lo > 0.0) || !(hi >= lo)) throw InvalidInput("log_spectrum: bad range");
  Vector out(d);
  for (Index i = 0; i < d; ++i) {
    const double t = d == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(d - 1);
    out(i) = lo * std::pow(hi / lo, t);
  }
  return out;
}

linalg::SymMatrix block_covariance(Index d_block) {
  if (d_block < 2) throw InvalidInput("block_covariance: d_block must be at least 2");
  Matrix s = Matrix::Zero(2 * d_block, 2 * d_block);
  s.topLeftCorner(d_block, d_block).setOnes();
  s.bottomRightCorner(d_block, d_block).setIdentity();
  return linalg::SymMatrix(s);
}

std::shared_ptr<QuadraticTask> gen_block_covariance(Index d_block, std::uint64_t seed) {
  auto cov = block_covariance(d_block);
  Rng rng = make_rng(seed, 0, Stream::Task);
  Vector theta_star = gaussian_vector(rng, 2 * d_block);
  return std::make_shared<QuadraticTask>("block_covariance",
                                         models::QuadraticModel(std::move(cov), std::move(theta_star)));
}

namespace {

linalg::SymMatrix rotated_spectrum(const Vector& spectrum, Rng& rng) {
  const Matrix u = random_orthogonal(spectrum.size(), rng);
  return linalg::SymMatrix(u * spectrum.asDiagonal() * u.transpose());
}

}  // namespace

std::shared_ptr<QuadraticTask> gen_random_quadratic(const Vector& spectrum, std::uint64_t seed) {
  if (spectrum.size() < 1 || spectrum.minCoeff() <= 0.0) {
    throw InvalidInput("gen_random_quadratic: spectrum must be positive");
  }
  Rng rng = make_rng(seed, 0, Stream::Task);
  auto cov = rotated_spectrum(spectrum, rng);
  Vector theta_star = gaussian_vector(rng, spectrum.size());
  return std::make_shared<QuadraticTask>("random_quadratic",
                                         models::QuadraticModel(std::move(cov), std::move(theta_star)));
}

PowerCovarianceResult search_power_covariance(Index d, PowerDirection direction, Index trials,
                                              std::uint64_t seed, double margin,
                                              std::optional<Vector> spectrum) {
  if (d < 2) throw InvalidInput("search_power_covariance: d must be at least 2");
  if (trials < 1) throw InvalidInput("search_power_covariance: trials must be at least 1");
  if (!(margin >= 1.0)) throw InvalidInput("search_power_covariance: margin must be >= 1");
  const Vector lam = spectrum ? *spectrum : log_spectrum(d, 1.0, 100.0);
  require_same_size(lam.size(), d, "search_power_covariance spectrum");
  Rng rng = make_rng(seed, 0, Stream::Task);
  for (Index t = 0; t < trials; ++t) {
    auto cov = rotated_spectrum(lam, rng);
    const double r = theory::condition_ratio(cov);
    const bool ok = direction == PowerDirection::HalfWins ? r > margin : r < 1.0 / margin;
    if (ok) {
      Vector theta_star = gaussian_vector(rng, d);
      auto task = std::make_shared<QuadraticTask>(
          direction == PowerDirection::HalfWins ? "power_half" : "power_one",
          models::QuadraticModel(std::move(cov), std::move(theta_star)));
      return {std::move(task), r, t + 1};
    }
  }
  throw SearchExhausted("search_power_covariance: no qualifying covariance found in budget of " +
                        std::to_string(trials) + " trials");
}

Vector powerlaw_weights(Index d, double c) {
  if (d < 2) throw InvalidInput("powerlaw_weights: d must be at least 2");
  if (!(c >= 0.0)) throw InvalidInput("powerlaw_weights: c must be nonnegative");
  Vector nu(d);
  for (Index i = 0; i < d; ++i) nu(i) = std::pow(static_cast<double>(i + 1), -c);
  nu /= nu.sum();
  return nu;
}

std::shared_ptr<LogisticTask> gen_powerlaw_logistic(Index d, double c, double p_const,
                                                    bool allow_any_label_prob) {
  Vector nu = powerlaw_weights(d, c);
  models::ReparamLogisticModel model(nu, Vector::Constant(d, p_const), allow_any_label_prob);
  Vector theta0 = Vector::Constant(d, 1.0 / std::sqrt(static_cast<double>(d)));
  return std::make_shared<LogisticTask>("powerlaw_logistic", std::move(model), std::move(theta0));
}

namespace {

Matrix sign_inputs(Index d, Index n, Rng& rng) {
  std::bernoulli_distribution coin(0.5);
  Matrix x(d, n);
  for (Index j = 0; j < n; ++j) {
    for (Index i = 0; i < d; ++i) x(i, j) = coin(rng) ? 1.0 : -1.0;
  }
  return x;
}

}  // namespace

std::vector<Index> parity_support(Index d, Index k, std::uint64_t seed) {
  if (k < 1 || k > d) throw InvalidInput("gen_parity: need 1 <= k <= d");
  std::vector<Index> idx(static_cast<std::size_t>(d));
  std::iota(idx.begin(), idx.end(), Index{0});
  Rng rng = make_rng(seed, 0, Stream::Task);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(static_cast<std::size_t>(k));
  std::sort(idx.begin(), idx.end());
  return idx;
}

double parity_label(const Vector& x, const std::vector<Index>& support) {
  double y = 1.0;
  for (Index i : support) y *= x(i);
  return y;
}

std::shared_ptr<MlpTask> gen_parity(Index d, Index k, std::uint64_t seed, Index hidden) {
  auto support = parity_support(d, k, seed);
  BatchSampler sampler = [d, support](Index n, Rng& rng) {
    models::Batch b{sign_inputs(d, n, rng), Matrix(1, n)};
    for (Index j = 0; j < n; ++j) b.y(0, j) = parity_label(b.x.col(j), support);
    return b;
  };
  models::MlpShape shape{d, hidden, 1, models::Activation::Relu};
  return std::make_shared<MlpTask>("parity", shape, std::move(sampler), seed);
}

std::vector<Segment> default_staircase_segments() { return {{0, 7}, {7, 14}, {14, 21}}; }

double staircase_label(const Vector& x, const std::vector<Segment>& segments) {
  double y = 0.0;
  for (const auto& [lo, hi] : segments) {
    double p = 1.0;
    for (Index j = lo; j < hi; ++j) p *= x(j);
    y += p;
  }
  return y;
}

std::shared_ptr<MlpTask> gen_staircase(Index d, const std::vector<Segment>& segments,
                                       std::uint64_t seed, Index hidden) {
  if (segments.empty()) throw InvalidInput("gen_staircase: no segments");
  auto sorted = segments;
  std::sort(sorted.begin(), sorted.end());
  Index expect = 0;
  for (const auto& [lo, hi] : sorted) {
    if (lo >= hi) throw InvalidInput("gen_staircase: empty segment");
    if (lo < expect) throw InvalidInput("gen_staircase: overlapping segments");
    if (lo > expect) throw InvalidInput("gen_staircase: segments leave a gap");
    expect = hi;
  }
  if (expect != d) throw InvalidInput("gen_staircase: segments must cover [0, d)");
  BatchSampler sampler = [d, sorted](Index n, Rng& rng) {
    models::Batch b{sign_inputs(d, n, rng), Matrix(1, n)};
    for (Index j = 0; j < n; ++j) b.y(0, j) = staircase_label(b.x.col(j), sorted);
    return b;
  };
  models::MlpShape shape{d, hidden, 1, models::Activation::Relu};
  return std::make_shared<MlpTask>("staircase", shape, std::move(sampler), seed);
}

ParamVector pad_teacher(const models::MlpModel& teacher, Index student_hidden) {
  if (student_hidden < teacher.shape.hidden) throw InvalidInput("pad_teacher: student too narrow");
  models::MlpShape s = teacher.shape;
  s.hidden = student_hidden;
  auto m = models::MlpModel::zeros(s);
  m.w.topRows(teacher.shape.hidden) = teacher.w;
  m.b.head(teacher.shape.hidden) = teacher.b;
  m.a.leftCols(teacher.shape.hidden) = teacher.a;
  return m.params();
}

TeacherStudent gen_teacher_student(Index d, Index m_teacher, std::uint64_t seed) {
  if (d < 1 || m_teacher < 1) throw InvalidInput("gen_teacher_student: dims must be positive");
  Rng rng = make_rng(seed, 0, Stream::Task);
  const Matrix b = gaussian_matrix(rng, d, d);
  const Matrix cov_sqrt = linalg::psd_sqrt(linalg::SymMatrix(b * b.transpose() / double(d)));

  models::MlpShape tshape{d, m_teacher, 1, models::Activation::Relu};
  auto teacher = models::MlpModel::zeros(tshape);
  teacher.w = gaussian_matrix(rng, m_teacher, d, 1.0 / std::sqrt(double(d)));
  teacher.b = gaussian_vector(rng, m_teacher, 0.1);
  teacher.a = gaussian_matrix(rng, 1, m_teacher, 1.0 / std::sqrt(double(m_teacher)));

  BatchSampler sampler = [cov_sqrt, teacher](Index n, Rng& r) {
    models::Batch batch;
    batch.x = cov_sqrt * gaussian_matrix(r, cov_sqrt.rows(), n);
    batch.y = teacher.forward(batch.x);
    return batch;
  };
  models::MlpShape sshape{d, 2 * m_teacher, 1, models::Activation::Relu};
  auto task = std::make_shared<MlpTask>("teacher_student", sshape, std::move(sampler), seed,
                                        pad_teacher(teacher, 2 * m_teacher));
  return {std::move(task), std::move(teacher), cov_sqrt};
}

}  // namespace basisprec::tasks
