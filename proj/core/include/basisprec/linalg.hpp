#pragma once

// Dense small-matrix primitives: symmetric eigendecomposition, the principal
// logarithm of a rotation, geodesic interpolation between the identity and a
// rotation, and the implicit eigenbasis of a Kronecker product.

#include "basisprec/common.hpp"

namespace basisprec::linalg {

/// Real symmetric matrix. Symmetrized as (A + A^T) / 2 on construction, so
/// entries(i, j) == entries(j, i) holds exactly afterwards.
class SymMatrix {
 public:
  explicit SymMatrix(const Matrix& a);

  static SymMatrix identity(Index n);
  static SymMatrix diagonal(const Vector& d);

  Index dim() const { return m_.rows(); }
  const Matrix& matrix() const { return m_; }
  double operator()(Index i, Index j) const { return m_(i, j); }

 private:
  Matrix m_;
};

/// Square matrix with orthonormal columns (U^T U = I within 1e-10).
class OrthoMatrix {
 public:
  /// Validates orthonormality; throws InvalidInput otherwise.
  explicit OrthoMatrix(const Matrix& u);

  static OrthoMatrix identity(Index n);

  Index dim() const { return u_.rows(); }
  const Matrix& matrix() const { return u_; }

  /// Copy with column `j` negated. U D U^T is unchanged by this.
  OrthoMatrix with_flipped_column(Index j) const;

  double determinant() const;

 private:
  struct Unchecked {};
  OrthoMatrix(Matrix u, Unchecked) : u_(std::move(u)) {}
  friend OrthoMatrix reorthonormalize(const Matrix& u);

  Matrix u_;
};

inline constexpr double kOrthoTolerance = 1e-10;
inline constexpr double kPsdTolerance = 1e-10;

/// Gram-Schmidt (via Householder QR) that keeps column directions: the
/// result's column j has positive inner product with u's column j.
OrthoMatrix reorthonormalize(const Matrix& u);

struct EigenDecomposition {
  Vector values;  // ascending
  OrthoMatrix basis;
};

/// Eigendecomposition with ascending eigenvalues. Each eigenvector is signed
/// so that its largest-magnitude entry is positive (ties: lowest index).
EigenDecomposition sym_eig(const SymMatrix& s);

/// Principal logarithm of a rotation. Result is exactly skew-symmetric.
/// Throws NonInterpolableBasis if det(U) < 0 or some rotation angle is
/// within 1e-8 of pi.
Matrix ortho_log(const OrthoMatrix& u);

/// exp(K) for skew-symmetric K, computed from its rotation blocks.
OrthoMatrix skew_exp(const Matrix& k);

/// real(exp(alpha * log U)), re-orthonormalized. alpha = 0 gives I and
/// alpha = 1 gives U.
OrthoMatrix geodesic_interp(const OrthoMatrix& u, double alpha);

/// Left (m x m) and right (n x n) PSD factors of a Kronecker-factored
/// curvature estimate for an m x n matrix parameter.
struct KronFactors {
  SymMatrix left;
  SymMatrix right;
};

/// Throws InvalidInput when either factor has an eigenvalue below -1e-10.
void validate_psd(const KronFactors& f);

/// Implicit eigenbasis of left (x) right. Rotates an m x n gradient matrix
/// as Ul^T G Ur without forming the mn x mn basis.
class KronEigenbasis {
 public:
  KronEigenbasis(EigenDecomposition left, EigenDecomposition right);

  Index rows() const { return left_.dim(); }
  Index cols() const { return right_.dim(); }

  const OrthoMatrix& left() const { return left_; }
  const OrthoMatrix& right() const { return right_; }
  const Vector& left_values() const { return left_values_; }
  const Vector& right_values() const { return right_values_; }

  /// Products lambda_i * mu_j laid out as an m x n matrix, matching the
  /// entries of rotate(G).
  Matrix eigenvalue_grid() const;

  /// All m*n products, sorted ascending.
  Vector eigenvalues() const;

  Matrix rotate(const Matrix& g) const;
  Matrix unrotate(const Matrix& g) const;

 private:
  OrthoMatrix left_;
  OrthoMatrix right_;
  Vector left_values_;
  Vector right_values_;
};

KronEigenbasis kron_eigenbasis(const KronFactors& f);

/// Symmetric PSD square root through sym_eig (negative roundoff clipped).
Matrix psd_sqrt(const SymMatrix& s);

/// Dense Kronecker product a (x) b. Small inputs only; used by checks.
Matrix kron(const Matrix& a, const Matrix& b);

}  // namespace basisprec::linalg
