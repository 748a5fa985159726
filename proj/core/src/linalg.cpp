#include "basisprec/linalg.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

namespace basisprec::linalg {

namespace {

void require_square(const Matrix& a, const char* what) {
  if (a.rows() != a.cols() || a.rows() == 0) {
    throw ShapeError(std::string(what) + ": expected a non-empty square matrix, got " +
                     std::to_string(a.rows()) + "x" + std::to_string(a.cols()));
  }
}

void require_finite(const Matrix& a, const char* what) {
  if (!a.allFinite()) {
    throw InvalidInput(std::string(what) + ": non-finite entry");
  }
}

// Largest-magnitude entry of each column made positive.
void canonicalize_signs(Matrix& v) {
  for (Index j = 0; j < v.cols(); ++j) {
    Index best = 0;
    double best_abs = -1.0;
    for (Index i = 0; i < v.rows(); ++i) {
      const double a = std::abs(v(i, j));
      if (a > best_abs + 1e-12) {
        best_abs = a;
        best = i;
      }
    }
    if (v(best, j) < 0.0) v.col(j) = -v.col(j);
  }
}

// One block of the real Schur form of a normal matrix.
struct RotationBlock {
  Index start;
  Index size;    // 1 or 2
  double angle;  // 0 or pi for 1x1 blocks
};

std::vector<RotationBlock> rotation_blocks(const Matrix& t) {
  std::vector<RotationBlock> blocks;
  const Index n = t.rows();
  Index i = 0;
  while (i < n) {
    if (i + 1 < n && t(i + 1, i) != 0.0) {
      const double c = 0.5 * (t(i, i) + t(i + 1, i + 1));
      const double s = 0.5 * (t(i + 1, i) - t(i, i + 1));
      blocks.push_back({i, 2, std::atan2(s, c)});
      i += 2;
    } else {
      blocks.push_back({i, 1, t(i, i) >= 0.0 ? 0.0 : std::numbers::pi});
      i += 1;
    }
  }
  return blocks;
}

Matrix block_generator(const std::vector<RotationBlock>& blocks, Index n, double scale) {
  Matrix l = Matrix::Zero(n, n);
  for (const auto& b : blocks) {
    if (b.size == 2) {
      l(b.start, b.start + 1) = -scale * b.angle;
      l(b.start + 1, b.start) = scale * b.angle;
    }
  }
  return l;
}

Matrix block_rotation(const std::vector<RotationBlock>& blocks, Index n, double scale) {
  Matrix r = Matrix::Identity(n, n);
  for (const auto& b : blocks) {
    if (b.size == 2) {
      const double c = std::cos(scale * b.angle);
      const double s = std::sin(scale * b.angle);
      r(b.start, b.start) = c;
      r(b.start, b.start + 1) = -s;
      r(b.start + 1, b.start) = s;
      r(b.start + 1, b.start + 1) = c;
    }
  }
  return r;
}

struct RotationSchur {
  Matrix z;
  std::vector<RotationBlock> blocks;
};

RotationSchur interpolable_schur(const OrthoMatrix& u) {
  if (u.determinant() < 0.0) {
    throw NonInterpolableBasis("basis is a reflection (det < 0); flip one column first");
  }
  Eigen::RealSchur<Matrix> schur(u.matrix());
  if (schur.info() != Eigen::Success) {
    throw NonInterpolableBasis("real Schur decomposition did not converge");
  }
  RotationSchur out{schur.matrixU(), rotation_blocks(schur.matrixT())};
  for (const auto& b : out.blocks) {
    if (std::numbers::pi - std::abs(b.angle) < 1e-8) {
      throw NonInterpolableBasis("basis has an eigenvalue at -1; principal log undefined");
    }
  }
  return out;
}

}  // namespace

SymMatrix::SymMatrix(const Matrix& a) {
  require_square(a, "SymMatrix");
  require_finite(a, "SymMatrix");
  m_ = 0.5 * (a + a.transpose());
}

SymMatrix SymMatrix::identity(Index n) { return SymMatrix(Matrix::Identity(n, n)); }

SymMatrix SymMatrix::diagonal(const Vector& d) { return SymMatrix(Matrix(d.asDiagonal())); }

OrthoMatrix::OrthoMatrix(const Matrix& u) : u_(u) {
  require_square(u, "OrthoMatrix");
  require_finite(u, "OrthoMatrix");
  const Matrix gram = u.transpose() * u;
  const double err = (gram - Matrix::Identity(u.cols(), u.cols())).cwiseAbs().maxCoeff();
  if (err > kOrthoTolerance) {
    throw InvalidInput("OrthoMatrix: columns not orthonormal (max |U^T U - I| = " +
                       std::to_string(err) + ")");
  }
}

OrthoMatrix OrthoMatrix::identity(Index n) { return OrthoMatrix(Matrix::Identity(n, n), Unchecked{}); }

OrthoMatrix OrthoMatrix::with_flipped_column(Index j) const {
  Matrix u = u_;
  u.col(j) = -u.col(j);
  return OrthoMatrix(std::move(u), Unchecked{});
}

double OrthoMatrix::determinant() const { return u_.determinant(); }

OrthoMatrix reorthonormalize(const Matrix& u) {
  Eigen::HouseholderQR<Matrix> qr(u);
  Matrix q = qr.householderQ() * Matrix::Identity(u.rows(), u.cols());
  const Matrix& r = qr.matrixQR();
  for (Index j = 0; j < q.cols(); ++j) {
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  }
  return OrthoMatrix(std::move(q), OrthoMatrix::Unchecked{});
}

EigenDecomposition sym_eig(const SymMatrix& s) {
  Eigen::SelfAdjointEigenSolver<Matrix> solver(s.matrix());
  if (solver.info() != Eigen::Success) {
    throw InvalidInput("sym_eig: eigensolver did not converge");
  }
  Matrix v = solver.eigenvectors();
  canonicalize_signs(v);
  return {solver.eigenvalues(), OrthoMatrix(v)};
}

Matrix ortho_log(const OrthoMatrix& u) {
  const auto schur = interpolable_schur(u);
  const Index n = u.dim();
  const Matrix k = schur.z * block_generator(schur.blocks, n, 1.0) * schur.z.transpose();
  return 0.5 * (k - k.transpose());
}

OrthoMatrix skew_exp(const Matrix& k) {
  require_square(k, "skew_exp");
  require_finite(k, "skew_exp");
  const Matrix skew = 0.5 * (k - k.transpose());
  Eigen::RealSchur<Matrix> schur(skew);
  if (schur.info() != Eigen::Success) {
    throw InvalidInput("skew_exp: real Schur decomposition did not converge");
  }
  // Blocks of a skew matrix are [[0, -w], [w, 0]]; atan2(s, c) with c ~ 0
  // would give pi/2, so read the angle directly.
  const Matrix& t = schur.matrixT();
  const Index n = k.rows();
  Matrix r = Matrix::Identity(n, n);
  for (Index i = 0; i < n;) {
    if (i + 1 < n && t(i + 1, i) != 0.0) {
      const double w = 0.5 * (t(i + 1, i) - t(i, i + 1));
      r(i, i) = std::cos(w);
      r(i, i + 1) = -std::sin(w);
      r(i + 1, i) = std::sin(w);
      r(i + 1, i + 1) = std::cos(w);
      i += 2;
    } else {
      i += 1;
    }
  }
  const Matrix z = schur.matrixU();
  return reorthonormalize(z * r * z.transpose());
}

OrthoMatrix geodesic_interp(const OrthoMatrix& u, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw InvalidInput("geodesic_interp: alpha must lie in [0, 1]");
  }
  const auto schur = interpolable_schur(u);
  const Index n = u.dim();
  const Matrix r = block_rotation(schur.blocks, n, alpha);
  return reorthonormalize(schur.z * r * schur.z.transpose());
}

void validate_psd(const KronFactors& f) {
  for (const SymMatrix* s : {&f.left, &f.right}) {
    Eigen::SelfAdjointEigenSolver<Matrix> solver(s->matrix(), Eigen::EigenvaluesOnly);
    if (solver.eigenvalues()(0) < -kPsdTolerance) {
      throw InvalidInput("KronFactors: factor is not positive semidefinite");
    }
  }
}

KronEigenbasis::KronEigenbasis(EigenDecomposition left, EigenDecomposition right)
    : left_(std::move(left.basis)),
      right_(std::move(right.basis)),
      left_values_(std::move(left.values)),
      right_values_(std::move(right.values)) {}

Matrix KronEigenbasis::eigenvalue_grid() const { return left_values_ * right_values_.transpose(); }

Vector KronEigenbasis::eigenvalues() const {
  const Matrix grid = eigenvalue_grid();
  Vector out = Eigen::Map<const Vector>(grid.data(), grid.size());
  std::sort(out.data(), out.data() + out.size());
  return out;
}

Matrix KronEigenbasis::rotate(const Matrix& g) const {
  if (g.rows() != rows() || g.cols() != cols()) {
    throw ShapeError("KronEigenbasis::rotate: gradient is " + std::to_string(g.rows()) + "x" +
                     std::to_string(g.cols()) + ", basis expects " + std::to_string(rows()) +
                     "x" + std::to_string(cols()));
  }
  return left_.matrix().transpose() * g * right_.matrix();
}

Matrix KronEigenbasis::unrotate(const Matrix& g) const {
  if (g.rows() != rows() || g.cols() != cols()) {
    throw ShapeError("KronEigenbasis::unrotate: shape mismatch");
  }
  return left_.matrix() * g * right_.matrix().transpose();
}

KronEigenbasis kron_eigenbasis(const KronFactors& f) {
  validate_psd(f);
  return KronEigenbasis(sym_eig(f.left), sym_eig(f.right));
}

Matrix psd_sqrt(const SymMatrix& s) {
  const auto eig = sym_eig(s);
  const Vector root = eig.values.cwiseMax(0.0).cwiseSqrt();
  const Matrix& u = eig.basis.matrix();
  return u * root.asDiagonal() * u.transpose();
}

Matrix kron(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Index i = 0; i < a.rows(); ++i) {
    for (Index j = 0; j < a.cols(); ++j) {
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    }
  }
  return out;
}

}  // namespace basisprec::linalg
