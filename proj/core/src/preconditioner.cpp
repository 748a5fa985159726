#include "basisprec/preconditioner.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace basisprec::precond {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

Index basis_block_size(const BlockBasis& b) {
  return std::visit(overloaded{[](const IdentityBlockBasis& x) { return x.size; },
                               [](const DenseBlockBasis& x) { return x.u.dim(); },
                               [](const KronBlockBasis& x) { return x.left.dim() * x.right.dim(); }},
                    b);
}

Index kron_rows(const KronCurvature& k) { return k.factors.left.dim(); }
Index kron_cols(const KronCurvature& k) { return k.factors.right.dim(); }

// Eigenbasis with det > 0; the smallest-eigenvalue column is flipped if needed.
linalg::OrthoMatrix rotation_eigenbasis(const linalg::SymMatrix& h) {
  auto eig = linalg::sym_eig(h);
  if (eig.basis.determinant() < 0.0) return eig.basis.with_flipped_column(0);
  return eig.basis;
}

BlockBasis block_basis(const CurvatureBlock& c, BasisKind kind, double alpha) {
  if (kind == BasisKind::Identity) return IdentityBlockBasis{block_size(c)};
  return std::visit(
      overloaded{
          [&](const DenseCurvature& d) -> BlockBasis {
            if (kind == BasisKind::Interpolated) {
              return DenseBlockBasis{linalg::geodesic_interp(rotation_eigenbasis(d.h), alpha)};
            }
            return DenseBlockBasis{linalg::sym_eig(d.h).basis};
          },
          [&](const DiagonalCurvature& d) -> BlockBasis { return IdentityBlockBasis{d.h.size()}; },
          [&](const KronCurvature& k) -> BlockBasis {
            linalg::validate_psd(k.factors);
            if (kind == BasisKind::Interpolated) {
              return KronBlockBasis{
                  linalg::geodesic_interp(rotation_eigenbasis(k.factors.left), alpha),
                  linalg::geodesic_interp(rotation_eigenbasis(k.factors.right), alpha)};
            }
            const auto kb = linalg::kron_eigenbasis(k.factors);
            return KronBlockBasis{kb.left(), kb.right()};
          }},
      c);
}

enum class Direction { Forward, Backward };

ParamVector apply_basis(const ParamVector& g, const BasisSpec& basis, Direction dir) {
  if (basis.blocks.empty()) return g;
  ParamVector out(g.size());
  Index off = 0;
  for (const auto& b : basis.blocks) {
    const Index n = basis_block_size(b);
    if (off + n > g.size()) {
      throw ShapeError("rotate: basis covers more coordinates than the vector has (" +
                       std::to_string(g.size()) + ")");
    }
    const auto seg = g.segment(off, n);
    std::visit(overloaded{[&](const IdentityBlockBasis&) { out.segment(off, n) = seg; },
                          [&](const DenseBlockBasis& d) {
                            out.segment(off, n) = dir == Direction::Forward
                                                      ? Vector(d.u.matrix().transpose() * seg)
                                                      : Vector(d.u.matrix() * seg);
                          },
                          [&](const KronBlockBasis& k) {
                            const Index r = k.left.dim();
                            const Index c = k.right.dim();
                            const Eigen::Map<const Matrix> gm(g.data() + off, r, c);
                            Eigen::Map<Matrix> om(out.data() + off, r, c);
                            if (dir == Direction::Forward) {
                              om = k.left.matrix().transpose() * gm * k.right.matrix();
                            } else {
                              om = k.left.matrix() * gm * k.right.matrix().transpose();
                            }
                          }},
               b);
    off += n;
  }
  require_same_size(off, g.size(), "rotate: basis size");
  return out;
}

Vector checked_nonneg(Vector m, const char* what) {
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  for (Index i = 0; i < m.size(); ++i) {
    if (!std::isfinite(m(i))) throw InvalidInput(std::string(what) + ": non-finite curvature");
    if (m(i) < -kNegativeTolerance * scale) {
      throw InvalidInput(std::string(what) + ": invalid Gauss-Newton estimate, diagonal entry " +
                         std::to_string(m(i)) + " is negative");
    }
    if (m(i) < 0.0) m(i) = 0.0;
  }
  return m;
}

Vector flat(const Matrix& m) { return Eigen::Map<const Vector>(m.data(), m.size()); }

Vector block_diag(const BlockBasis& b, const CurvatureBlock& c) {
  const Index n = block_size(c);
  require_same_size(basis_block_size(b), n, "curvature_diag_in_basis");
  if (std::holds_alternative<IdentityBlockBasis>(b)) {
    return std::visit(overloaded{[](const DenseCurvature& d) -> Vector { return d.h.matrix().diagonal(); },
                                 [](const DiagonalCurvature& d) -> Vector { return d.h; },
                                 [](const KronCurvature& k) -> Vector {
                                   if (k.exact_diag.size() > 0) return flat(k.exact_diag);
                                   const Vector l = k.factors.left.matrix().diagonal();
                                   const Vector r = k.factors.right.matrix().diagonal();
                                   return flat(l * r.transpose());
                                 }},
                      c);
  }
  if (const auto* db = std::get_if<DenseBlockBasis>(&b)) {
    const auto* dc = std::get_if<DenseCurvature>(&c);
    if (dc == nullptr) throw ShapeError("curvature_diag_in_basis: dense basis needs dense curvature");
    const Matrix& u = db->u.matrix();
    return (dc->h.matrix() * u).cwiseProduct(u).colwise().sum().transpose();
  }
  const auto& kb = std::get<KronBlockBasis>(b);
  const auto* kc = std::get_if<KronCurvature>(&c);
  if (kc == nullptr) throw ShapeError("curvature_diag_in_basis: Kronecker basis needs Kronecker curvature");
  const Matrix& ul = kb.left.matrix();
  const Matrix& ur = kb.right.matrix();
  const Vector l = (kc->factors.left.matrix() * ul).cwiseProduct(ul).colwise().sum().transpose();
  const Vector r = (kc->factors.right.matrix() * ur).cwiseProduct(ur).colwise().sum().transpose();
  return flat(l * r.transpose());
}

}  // namespace

Curvature Curvature::dense(linalg::SymMatrix h) { return {{DenseCurvature{std::move(h)}}}; }

Curvature Curvature::diagonal(Vector h) { return {{DiagonalCurvature{std::move(h)}}}; }

Index block_size(const CurvatureBlock& b) {
  return std::visit(overloaded{[](const DenseCurvature& x) { return x.h.dim(); },
                               [](const DiagonalCurvature& x) { return x.h.size(); },
                               [](const KronCurvature& x) { return kron_rows(x) * kron_cols(x); }},
                    b);
}

Index Curvature::dim() const {
  Index n = 0;
  for (const auto& b : blocks) n += block_size(b);
  return n;
}

BasisSpec BasisSpec::explicit_matrix(linalg::OrthoMatrix u) {
  BasisSpec s;
  s.kind = BasisKind::Eigen;
  s.blocks.emplace_back(DenseBlockBasis{std::move(u)});
  return s;
}

Matrix BasisSpec::materialize(Index dim) const {
  if (blocks.empty()) return Matrix::Identity(dim, dim);
  Matrix out = Matrix::Zero(dim, dim);
  Index off = 0;
  for (const auto& b : blocks) {
    const Index n = basis_block_size(b);
    if (off + n > dim) throw ShapeError("BasisSpec::materialize: dimension too small");
    std::visit(overloaded{[&](const IdentityBlockBasis&) {
                            out.block(off, off, n, n).setIdentity();
                          },
                          [&](const DenseBlockBasis& d) { out.block(off, off, n, n) = d.u.matrix(); },
                          [&](const KronBlockBasis& k) {
                            out.block(off, off, n, n) = linalg::kron(k.right.matrix(), k.left.matrix());
                          }},
               b);
    off += n;
  }
  require_same_size(off, dim, "BasisSpec::materialize");
  return out;
}

BasisSpec estimate_basis(const Curvature& gn, BasisKind kind, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidInput("estimate_basis: alpha must lie in [0, 1]");
  BasisSpec s;
  s.kind = kind;
  s.alpha = kind == BasisKind::Interpolated ? alpha : 1.0;
  s.blocks.reserve(gn.blocks.size());
  for (const auto& c : gn.blocks) s.blocks.push_back(block_basis(c, kind, alpha));
  return s;
}

ParamVector rotate(const ParamVector& g, const BasisSpec& basis) {
  return apply_basis(g, basis, Direction::Forward);
}

ParamVector unrotate(const ParamVector& g, const BasisSpec& basis) {
  return apply_basis(g, basis, Direction::Backward);
}

// ---------------------------------------------------------------------------

AdamState::AdamState(Index dim, double beta2_, double eps_)
    : v(Vector::Zero(dim)), beta2(beta2_), eps(eps_) {
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw InvalidInput("AdamState: beta2 must lie in [0, 1)");
  if (!(eps >= 0.0)) throw InvalidInput("AdamState: eps must be nonnegative");
}

Vector adam_diag(AdamState& state, const ParamVector& g_rot) {
  require_same_size(g_rot.size(), state.v.size(), "adam_diag");
  state.v = state.beta2 * state.v + (1.0 - state.beta2) * g_rot.cwiseAbs2();
  ++state.steps;
  return (state.v.array() + state.eps).rsqrt().matrix();
}

Vector curvature_diag_in_basis(const BasisSpec& basis, const Curvature& gn) {
  Vector out(gn.dim());
  Index off = 0;
  if (!basis.blocks.empty()) require_same_size(basis.blocks.size(), gn.blocks.size(), "gn_diag blocks");
  for (std::size_t i = 0; i < gn.blocks.size(); ++i) {
    const auto& c = gn.blocks[i];
    const Index n = block_size(c);
    const BlockBasis b = basis.blocks.empty() ? BlockBasis{IdentityBlockBasis{n}} : basis.blocks[i];
    out.segment(off, n) = checked_nonneg(block_diag(b, c), "gn_diag");
    off += n;
  }
  return out;
}

Vector gn_diag(const BasisSpec& basis, const Curvature& gn, double power, double eps) {
  if (power != -1.0 && power != -0.5) throw InvalidInput("gn_diag: power must be -1 or -0.5");
  if (!(eps >= 0.0)) throw InvalidInput("gn_diag: eps must be nonnegative");
  const Vector m = curvature_diag_in_basis(basis, gn);
  const auto shifted = m.array() + eps;
  return power == -1.0 ? Vector(shifted.inverse()) : Vector(shifted.rsqrt());
}

ParamVector step(const ParamVector& theta, const ParamVector& g, const BasisSpec& basis,
                 const Vector& d, double lr) {
  require_same_size(g.size(), theta.size(), "step gradient");
  require_same_size(d.size(), theta.size(), "step diagonal");
  ParamVector scaled = rotate(g, basis);
  for (Index i = 0; i < scaled.size(); ++i) {
    if (scaled(i) != 0.0) scaled(i) *= d(i);
  }
  return theta - lr * unrotate(scaled, basis);
}

// ---------------------------------------------------------------------------

LrSchedule LrSchedule::constant(double eta0) {
  if (!(eta0 > 0.0)) throw InvalidInput("LrSchedule: eta0 must be positive");
  return {Kind::Constant, eta0, 1};
}

LrSchedule LrSchedule::step_decay(double eta0, Index halve_every) {
  if (!(eta0 > 0.0)) throw InvalidInput("LrSchedule: eta0 must be positive");
  if (halve_every < 1) throw InvalidInput("LrSchedule: halve_every must be at least 1");
  return {Kind::StepDecay, eta0, halve_every};
}

double schedule_lr(const LrSchedule& s, Index t) {
  if (t < 0) throw InvalidInput("schedule_lr: step must be nonnegative");
  if (s.kind == LrSchedule::Kind::Constant) return s.eta0;
  return std::ldexp(s.eta0, -static_cast<int>(std::min<Index>(t / s.halve_every, 2000)));
}

// ---------------------------------------------------------------------------

Optimizer::Optimizer(OptimizerConfig cfg, Index dim)
    : cfg_(cfg), dim_(dim), adam_(dim, cfg.scaling == ScalingKind::Adam ? cfg.beta2 : 0.0, cfg.eps) {
  if (cfg_.refresh_interval < 1) throw InvalidInput("Optimizer: refresh interval must be at least 1");
  if (cfg_.scaling == ScalingKind::GaussNewton && cfg_.power != -1.0 && cfg_.power != -0.5) {
    throw InvalidInput("Optimizer: power must be -1 or -0.5");
  }
}

bool Optimizer::wants_curvature(Index t) const {
  const bool uses = cfg_.scaling == ScalingKind::GaussNewton || cfg_.basis != BasisKind::Identity;
  return uses && (t % cfg_.refresh_interval == 0 || !gn_.has_value());
}

void Optimizer::update_curvature(const Curvature& gn) {
  require_same_size(gn.dim(), dim_, "Optimizer::update_curvature");
  basis_ = cfg_.basis == BasisKind::Identity ? BasisSpec::identity()
                                             : estimate_basis(gn, cfg_.basis, cfg_.alpha);
  if (cfg_.scaling == ScalingKind::GaussNewton) d_ = gn_diag(basis_, gn, cfg_.power, cfg_.eps);
  gn_ = gn;
}

ParamVector Optimizer::step(const ParamVector& theta, const ParamVector& grad, double lr) {
  require_same_size(theta.size(), dim_, "Optimizer::step");
  require_same_size(grad.size(), dim_, "Optimizer::step");
  ParamVector g_rot = rotate(grad, basis_);
  if (cfg_.scaling == ScalingKind::Adam) {
    d_ = adam_diag(adam_, g_rot);
  } else if (cfg_.scaling == ScalingKind::Identity) {
    if (d_.size() != dim_) d_ = Vector::Ones(dim_);
  } else if (!gn_.has_value()) {
    throw InvalidInput("Optimizer::step: Gauss-Newton scaling needs a curvature estimate first");
  }
  for (Index i = 0; i < g_rot.size(); ++i) {
    if (g_rot(i) != 0.0) g_rot(i) *= d_(i);
  }
  ++t_;
  return theta - lr * unrotate(g_rot, basis_);
}

}  // namespace basisprec::precond
