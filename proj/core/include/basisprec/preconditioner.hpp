#pragma once

// Diagonal scaling in a chosen orthonormal basis:
//   theta' = theta - lr * U (D o U^T g)
// with D from a running second moment (Adam, beta1 = 0, no bias correction)
// or from the Gauss-Newton diagonal in the basis raised to p in {-1, -1/2}.

#include "basisprec/common.hpp"
#include "basisprec/linalg.hpp"

#include <optional>
#include <variant>
#include <vector>

namespace basisprec::precond {

// ---------------------------------------------------------------------------
// Curvature: one entry per parameter block, laid out consecutively in the
// flat parameter vector.

struct DenseCurvature {
  linalg::SymMatrix h;
};

/// Curvature known only on the diagonal (or known to be diagonal).
struct DiagonalCurvature {
  Vector h;
};

/// Kronecker-factored curvature of an m x n matrix parameter stored
/// column-major. `exact_diag` (m x n) is the true diagonal, used when the
/// basis is the identity.
struct KronCurvature {
  linalg::KronFactors factors;
  Matrix exact_diag;
};

using CurvatureBlock = std::variant<DenseCurvature, DiagonalCurvature, KronCurvature>;

struct Curvature {
  std::vector<CurvatureBlock> blocks;

  static Curvature dense(linalg::SymMatrix h);
  static Curvature diagonal(Vector h);
  Index dim() const;
};

Index block_size(const CurvatureBlock& b);

// ---------------------------------------------------------------------------

enum class BasisKind { Identity, Eigen, KronEigen, Interpolated };

struct IdentityBlockBasis {
  Index size;
};

struct DenseBlockBasis {
  linalg::OrthoMatrix u;
};

/// U = Ul (x) Ur acting on a column-major m x n block as Ul^T G Ur.
struct KronBlockBasis {
  linalg::OrthoMatrix left;
  linalg::OrthoMatrix right;
};

using BlockBasis = std::variant<IdentityBlockBasis, DenseBlockBasis, KronBlockBasis>;

/// An orthonormal basis over the full parameter vector. No blocks means the
/// global identity of any size.
struct BasisSpec {
  BasisKind kind = BasisKind::Identity;
  double alpha = 1.0;
  std::vector<BlockBasis> blocks;

  static BasisSpec identity() { return {}; }
  static BasisSpec explicit_matrix(linalg::OrthoMatrix u);

  /// Dense d x d matrix of the basis. Small sizes only; used by checks.
  Matrix materialize(Index dim) const;
};

/// Identity: trivial basis. Eigen: sym_eig of each dense block, implicit
/// Kronecker eigenbasis for Kronecker blocks. KronEigen: same as Eigen.
/// Interpolated: geodesic_interp(U, alpha) of the Eigen basis (each
/// Kronecker factor separately), after flipping the smallest-eigenvalue
/// column of any reflection. Diagonal blocks always get the identity.
BasisSpec estimate_basis(const Curvature& gn, BasisKind kind, double alpha = 1.0);

ParamVector rotate(const ParamVector& g, const BasisSpec& basis);
ParamVector unrotate(const ParamVector& g, const BasisSpec& basis);

// ---------------------------------------------------------------------------

struct AdamState {
  Vector v;  // running second moment of the rotated gradient
  double beta2 = 0.0;
  double eps = 0.0;
  Index steps = 0;

  AdamState(Index dim, double beta2, double eps);
};

/// v <- beta2 v + (1 - beta2) g~^2 and D = (v + eps)^(-1/2).
Vector adam_diag(AdamState& state, const ParamVector& g_rot);

inline constexpr double kNegativeTolerance = 1e-10;

/// Diagonal of U^T H U per coordinate, checked against the PSD tolerance.
/// Throws InvalidInput on an entry below -1e-10 (relative to the block's
/// largest entry); small negatives are clamped to zero.
Vector curvature_diag_in_basis(const BasisSpec& basis, const Curvature& gn);

/// D = (u_i^T H u_i + eps)^p with p in {-1, -0.5}.
Vector gn_diag(const BasisSpec& basis, const Curvature& gn, double power, double eps);

/// theta - lr U (D o U^T g). Coordinates with a zero rotated gradient move
/// by zero even when D is infinite.
ParamVector step(const ParamVector& theta, const ParamVector& g, const BasisSpec& basis,
                 const Vector& d, double lr);

// ---------------------------------------------------------------------------

struct LrSchedule {
  enum class Kind { Constant, StepDecay };
  Kind kind = Kind::Constant;
  double eta0 = 1.0;
  Index halve_every = 1;

  static LrSchedule constant(double eta0);
  static LrSchedule step_decay(double eta0, Index halve_every);
};

/// Constant: eta0. StepDecay: eta0 * 2^(-floor(t / halve_every)).
double schedule_lr(const LrSchedule& s, Index t);

// ---------------------------------------------------------------------------

/// Identity scaling (D = 1) is plain gradient descent in any basis.
enum class ScalingKind { Adam, GaussNewton, Identity };

struct OptimizerConfig {
  BasisKind basis = BasisKind::Identity;
  double alpha = 1.0;
  ScalingKind scaling = ScalingKind::Adam;
  double power = -0.5;  // GN only
  double beta2 = 0.0;   // Adam only
  double eps = 0.0;
  Index refresh_interval = 1;
};

/// Holds the basis and scaling state of one run. The caller supplies a
/// curvature estimate whenever wants_curvature(t) is true.
class Optimizer {
 public:
  Optimizer(OptimizerConfig cfg, Index dim);

  const OptimizerConfig& config() const { return cfg_; }

  /// True when step t refreshes the basis or the GN diagonal.
  bool wants_curvature(Index t) const;

  void update_curvature(const Curvature& gn);

  /// One update; returns the new parameters. The step count advances.
  ParamVector step(const ParamVector& theta, const ParamVector& grad, double lr);

  const BasisSpec& basis() const { return basis_; }
  const Vector& last_diag() const { return d_; }

 private:
  OptimizerConfig cfg_;
  Index dim_;
  BasisSpec basis_;
  AdamState adam_;
  std::optional<Curvature> gn_;
  Vector d_;
  Index t_ = 0;
};

}  // namespace basisprec::precond
