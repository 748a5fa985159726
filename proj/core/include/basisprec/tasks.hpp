#pragma once

// Seeded task generators. A Task bundles a model with its samplers: exact
// population quantities where they exist (quadratic, logistic) and fresh
// sampled batches otherwise (MLP tasks).

#include "basisprec/common.hpp"
#include "basisprec/models.hpp"
#include "basisprec/preconditioner.hpp"
#include "basisprec/random.hpp"

#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace basisprec::tasks {

class Task {
 public:
  virtual ~Task() = default;

  virtual const std::string& name() const = 0;
  virtual Index dim() const = 0;

  virtual ParamVector initial_params(Rng& rng) const = 0;

  /// Known minimizer with zero population gradient, if any.
  virtual std::optional<ParamVector> optimum() const { return std::nullopt; }

  /// Recorded loss: exact population loss, or the loss on a fixed eval set.
  virtual double eval_loss(const ParamVector& theta) const = 0;

  /// Full-batch gradient: population gradient, or a large fresh batch.
  virtual models::GradSample full_grad(const ParamVector& theta, Rng& rng) const = 0;
  virtual models::GradSample batch_grad(const ParamVector& theta, Index batch, Rng& rng) const = 0;

  virtual precond::Curvature full_gn(const ParamVector& theta, Rng& rng) const = 0;
  virtual precond::Curvature batch_gn(const ParamVector& theta, Index batch, Rng& rng) const = 0;

  /// Distance to the optimum in the task's natural metric; NaN if unknown.
  virtual double dist_to_opt(const ParamVector& theta) const;
};

using TaskPtr = std::shared_ptr<const Task>;

// ---------------------------------------------------------------------------

class QuadraticTask final : public Task {
 public:
  /// theta_0 defaults to zero.
  QuadraticTask(std::string name, models::QuadraticModel model, std::optional<Vector> theta0 = {});

  const std::string& name() const override { return name_; }
  Index dim() const override { return model_.dim(); }
  const models::QuadraticModel& model() const { return model_; }
  const Matrix& cov_sqrt() const { return cov_sqrt_; }

  ParamVector initial_params(Rng& rng) const override;
  std::optional<ParamVector> optimum() const override { return model_.theta_star(); }
  double eval_loss(const ParamVector& theta) const override;
  models::GradSample full_grad(const ParamVector& theta, Rng& rng) const override;
  models::GradSample batch_grad(const ParamVector& theta, Index batch, Rng& rng) const override;
  precond::Curvature full_gn(const ParamVector& theta, Rng& rng) const override;
  precond::Curvature batch_gn(const ParamVector& theta, Index batch, Rng& rng) const override;
  double dist_to_opt(const ParamVector& theta) const override;

  /// n inputs x ~ N(0, cov) as columns.
  Matrix sample_inputs(Index n, Rng& rng) const;

 private:
  std::string name_;
  models::QuadraticModel model_;
  Matrix cov_sqrt_;
  Vector theta0_;
};

class LogisticTask final : public Task {
 public:
  LogisticTask(std::string name, models::ReparamLogisticModel model, Vector theta0);

  const std::string& name() const override { return name_; }
  Index dim() const override { return model_.dim(); }
  const models::ReparamLogisticModel& model() const { return model_; }

  ParamVector initial_params(Rng& rng) const override;
  std::optional<ParamVector> optimum() const override { return model_.optimum(); }
  double eval_loss(const ParamVector& theta) const override;
  models::GradSample full_grad(const ParamVector& theta, Rng& rng) const override;
  models::GradSample batch_grad(const ParamVector& theta, Index batch, Rng& rng) const override;
  precond::Curvature full_gn(const ParamVector& theta, Rng& rng) const override;
  precond::Curvature batch_gn(const ParamVector& theta, Index batch, Rng& rng) const override;

  /// || |theta| - theta* ||: the loss depends on theta only through theta^2.
  double dist_to_opt(const ParamVector& theta) const override;

  /// One (coordinate, label) draw under (nu, P).
  std::pair<Index, int> sample(Rng& rng) const;

 private:
  std::string name_;
  models::ReparamLogisticModel model_;
  Vector theta0_;
  std::vector<double> cdf_;
};

using BatchSampler = std::function<models::Batch(Index n, Rng& rng)>;

inline constexpr Index kFullBatchSamples = 4096;
inline constexpr Index kEvalSamples = 1024;

class MlpTask final : public Task {
 public:
  /// The eval set is drawn once from `eval_seed`.
  MlpTask(std::string name, models::MlpShape shape, BatchSampler sampler, std::uint64_t eval_seed,
          std::optional<ParamVector> optimum = {}, Index eval_samples = kEvalSamples,
          Index full_batch = kFullBatchSamples);

  const std::string& name() const override { return name_; }
  Index dim() const override { return shape_.param_count(); }
  const models::MlpShape& shape() const { return shape_; }
  const models::Batch& eval_set() const { return eval_; }

  /// W ~ N(0, 1/input), b = 0, A ~ N(0, 1/hidden).
  ParamVector initial_params(Rng& rng) const override;
  std::optional<ParamVector> optimum() const override { return optimum_; }
  double eval_loss(const ParamVector& theta) const override;
  models::GradSample full_grad(const ParamVector& theta, Rng& rng) const override;
  models::GradSample batch_grad(const ParamVector& theta, Index batch, Rng& rng) const override;
  precond::Curvature full_gn(const ParamVector& theta, Rng& rng) const override;
  precond::Curvature batch_gn(const ParamVector& theta, Index batch, Rng& rng) const override;
  /// NaN: permuting hidden units gives other optima, so a distance to the
  /// stored one is not meaningful.
  double dist_to_opt(const ParamVector&) const override {
    return std::numeric_limits<double>::quiet_NaN();
  }

  models::Batch sample(Index n, Rng& rng) const { return sampler_(n, rng); }

 private:
  std::string name_;
  models::MlpShape shape_;
  BatchSampler sampler_;
  std::optional<ParamVector> optimum_;
  models::Batch eval_;
  Index full_batch_;
};

// ---------------------------------------------------------------------------

/// Haar-distributed orthogonal matrix (QR of a Gaussian matrix, diag(R) > 0).
Matrix random_orthogonal(Index d, Rng& rng);

/// log-spaced values from lo to hi inclusive.
Vector log_spectrum(Index d, double lo, double hi);

/// Quadratic with cov = [[1 1^T, 0], [0, I]] of size 2 d_block and
/// theta* ~ N(0, I).
std::shared_ptr<QuadraticTask> gen_block_covariance(Index d_block, std::uint64_t seed);

linalg::SymMatrix block_covariance(Index d_block);

/// Quadratic with cov = U diag(spectrum) U^T for a random rotation U and
/// theta* ~ N(0, I).
std::shared_ptr<QuadraticTask> gen_random_quadratic(const Vector& spectrum, std::uint64_t seed);

enum class PowerDirection { HalfWins, OneWins };

struct PowerCovarianceResult {
  std::shared_ptr<QuadraticTask> task;
  double ratio = 1.0;
  Index trials_used = 0;
};

/// First cov = U diag(spectrum) U^T over random rotations with
/// condition_ratio > margin (HalfWins) or < 1 / margin (OneWins). The default
/// spectrum is log-spaced on [1, 100]. Throws SearchExhausted.
PowerCovarianceResult search_power_covariance(Index d, PowerDirection direction, Index trials,
                                              std::uint64_t seed, double margin = 1.0,
                                              std::optional<Vector> spectrum = {});

/// nu_i proportional to i^-c, P_i = p_const, theta_0 = 1/sqrt(d).
std::shared_ptr<LogisticTask> gen_powerlaw_logistic(Index d, double c, double p_const,
                                                    bool allow_any_label_prob = false);

Vector powerlaw_weights(Index d, double c);

/// Uniform x in {-1, 1}^d, y = prod_{i in S} x_i for a seeded support of size k.
std::shared_ptr<MlpTask> gen_parity(Index d, Index k, std::uint64_t seed, Index hidden = 128);

/// The seeded parity support (sorted).
std::vector<Index> parity_support(Index d, Index k, std::uint64_t seed);

double parity_label(const Vector& x, const std::vector<Index>& support);

using Segment = std::pair<Index, Index>;  // [begin, end)

/// y = sum over segments of prod_{j in segment} x_j. Segments must partition
/// [0, d) without overlap.
std::shared_ptr<MlpTask> gen_staircase(Index d, const std::vector<Segment>& segments,
                                       std::uint64_t seed, Index hidden = 128);

std::vector<Segment> default_staircase_segments();

double staircase_label(const Vector& x, const std::vector<Segment>& segments);

struct TeacherStudent {
  std::shared_ptr<MlpTask> task;
  models::MlpModel teacher;
  Matrix input_cov_sqrt;
};

/// Random ReLU teacher (hidden m_teacher) on x ~ N(0, B B^T / d); the student
/// has hidden width 2 m_teacher and the padded teacher as optimum.
TeacherStudent gen_teacher_student(Index d, Index m_teacher, std::uint64_t seed);

/// Student parameters equal to the teacher with zero extra hidden units.
ParamVector pad_teacher(const models::MlpModel& teacher, Index student_hidden);

// ---------------------------------------------------------------------------

inline constexpr Index kCifarPixels = 3072;
inline constexpr Index kCifarRecord = 3073;
inline constexpr Index kCifarClasses = 10;

struct CifarData {
  Matrix x;                  // 3072 x n, scaled to [0, 1]
  Matrix y;                  // 10 x n one-hot
  std::vector<int> labels;
};

/// Reads records of 1 label byte + 3072 pixel bytes. Throws IoError on a
/// missing file or a size that is not a multiple of 3073, InvalidInput on a
/// label byte above 9.
CifarData load_cifar10_binary(const std::string& path, Index max_records = -1);

/// MLP regression onto one-hot targets, samples drawn with replacement.
std::shared_ptr<MlpTask> make_cifar_task(CifarData data, Index hidden, std::uint64_t seed);

}  // namespace basisprec::tasks
