#include "basisprec/harness.hpp"
#include "basisprec/theory.hpp"

#include <cmath>
#include <sstream>

namespace basisprec::harness {

namespace {

std::string fmt(double x) { return format_double(x); }

linalg::SymMatrix random_cov(Index d, Rng& rng) {
  const Matrix u = tasks::random_orthogonal(d, rng);
  std::uniform_real_distribution<double> logu(0.0, std::log(100.0));
  Vector s(d);
  for (Index i = 0; i < d; ++i) s(i) = std::exp(logu(rng));
  return linalg::SymMatrix(u * s.asDiagonal() * u.transpose());
}

VerifyItem sandwich(Rng& rng) {
  VerifyItem it{"fisher_sandwich", true, ""};
  double worst = std::numeric_limits<double>::infinity();
  for (int k = 0; k < 100; ++k) {
    const Index d = 2 + k % 9;
    const auto cov = random_cov(d, rng);
    const auto r = theory::check_fisher_sandwich(cov, gaussian_vector(rng, d), gaussian_vector(rng, d));
    it.pass = it.pass && r.lower_ok && r.upper_ok;
    worst = std::min({worst, r.lower_slack, r.upper_slack});
  }
  it.detail = "100 instances, min slack " + fmt(worst);
  return it;
}

std::vector<VerifyItem> adam_gn(Rng& rng) {
  VerifyItem lit{"adam_gn_ratio_literal", true, ""};
  VerifyItem cor{"adam_gn_ratio_corrected", true, ""};
  int lit_fail = 0;
  for (int k = 0; k < 100; ++k) {
    const Index d = 2 + k % 7;
    const auto cov = random_cov(d, rng);
    const auto basis = precond::BasisSpec::explicit_matrix(linalg::OrthoMatrix(tasks::random_orthogonal(d, rng)));
    const auto r = theory::adam_gn_ratio_check(cov, gaussian_vector(rng, d), gaussian_vector(rng, d), basis);
    if (r.degenerate) continue;
    lit_fail += r.literal_ok ? 0 : 1;
    cor.pass = cor.pass && r.corrected_ok;
  }
  lit.pass = lit_fail == 0;
  lit.detail = std::to_string(lit_fail) + "/100 instances violate D_GN/sqrt(3l) <= D_A/2 <= D_GN/sqrt(l)";
  cor.detail = "with sqrt(2) D_A in the middle";
  return {lit, cor};
}

VerifyItem gn1_rate(std::uint64_t seed) {
  constexpr Index d = 10;
  constexpr Index steps = 100;
  constexpr int seeds = 200;
  const double eta = 1.0 / 22.0;
  RunConfig cfg;
  cfg.task = "quadratic";
  cfg.dim = d;
  cfg.task_seed = seed;
  cfg.basis = precond::BasisKind::Eigen;
  cfg.precond = "gn";
  cfg.power = -1.0;
  cfg.eps = 0.0;
  cfg.lr = eta;
  cfg.batch = 1;
  cfg.gn_batch = kFullBatch;
  cfg.refresh = steps;
  cfg.steps = steps;
  const auto task = make_task(cfg);
  double l0 = 0.0;
  double lt = 0.0;
  for (int s = 0; s < seeds; ++s) {
    cfg.seed = seed * 1000003u + static_cast<std::uint64_t>(s);
    const auto rec = run(cfg, *task);
    l0 += rec.initial_loss;
    lt += rec.final_loss();
  }
  const double measured = std::pow(lt / l0, 1.0 / static_cast<double>(steps));
  const double predicted = theory::gn1_expected_loss_factor(d, eta);
  const double exact = theory::gn1_expected_loss_factor_exact(d, eta);
  const auto rep = theory::compare_rate(predicted, measured);
  VerifyItem it{"gn1_rate", rep.relative_gap <= 0.05, ""};
  it.detail = "measured " + fmt(measured) + " predicted " + fmt(predicted) + " exact " + fmt(exact) +
              " gap " + fmt(rep.relative_gap);
  return it;
}

VerifyItem divergence_constant() {
  const auto r = theory::calibrate_divergence_constant();
  VerifyItem it{"divergence_constant", r.c_needed <= theory::kDivergenceConstant, ""};
  it.detail = "needed c " + fmt(r.c_needed) + " stored " + fmt(theory::kDivergenceConstant) + " worst at P " +
              fmt(r.worst_p) + " theta0 " + fmt(r.worst_theta0) + " eps " + fmt(r.worst_eps);
  return it;
}

VerifyItem contraction_endpoints() {
  const Vector h = Vector::LinSpaced(8, 0.1, 2.0);
  const Vector w = Vector::Ones(8);
  const double g0 = theory::contraction_factor(h, w, 1.0, 0.0);
  const double g1 = theory::contraction_factor(h, w, 1.0, 1e12);
  VerifyItem it{"contraction_endpoints", g0 == 0.0 && std::abs(g1 - 1.0) < 1e-9, ""};
  it.detail = "eta=1 eps=0: " + fmt(g0) + ", eps=1e12: " + fmt(g1);
  return it;
}

VerifyItem contraction_bound() {
  VerifyItem it{"contraction_bound", true, ""};
  std::ostringstream os;
  for (Index d : {64, 256, 1024}) {
    const Vector nu = tasks::powerlaw_weights(d, 0.6);
    const auto r = theory::check_contraction_bound(nu, Vector::Constant(d, 0.75), 1e-3);
    it.pass = it.pass && r.holds;
    os << "d=" << d << " gamma " << fmt(r.gamma) << " rhs " << fmt(r.rhs) << "; ";
  }
  it.detail = os.str();
  return it;
}

VerifyItem power_search(std::uint64_t seed) {
  VerifyItem it{"power_covariance_search", true, ""};
  try {
    const auto half = tasks::search_power_covariance(5, tasks::PowerDirection::HalfWins, 10000, seed, 1.1);
    const auto one = tasks::search_power_covariance(5, tasks::PowerDirection::OneWins, 10000, seed, 1.1);
    it.detail = "ratio " + fmt(half.ratio) + " after " + std::to_string(half.trials_used) + ", ratio " +
                fmt(one.ratio) + " after " + std::to_string(one.trials_used);
  } catch (const SearchExhausted& e) {
    it.pass = false;
    it.detail = e.what();
  }
  return it;
}

VerifyItem geodesic(Rng& rng) {
  double err = 0.0;
  for (int k = 0; k < 20; ++k) {
    const Index d = 2 + k % 8;
    linalg::OrthoMatrix u(tasks::random_orthogonal(d, rng));
    if (u.determinant() < 0.0) u = u.with_flipped_column(0);
    const Matrix id = Matrix::Identity(d, d);
    err = std::max(err, (linalg::geodesic_interp(u, 1.0).matrix() - u.matrix()).norm());
    err = std::max(err, (linalg::geodesic_interp(u, 0.0).matrix() - id).norm());
    err = std::max(err, (linalg::skew_exp(linalg::ortho_log(u)).matrix() - u.matrix()).norm());
  }
  VerifyItem it{"geodesic_round_trip", err <= 1e-10, ""};
  it.detail = "max error " + fmt(err);
  return it;
}

}  // namespace

std::vector<VerifyItem> verify_suite(std::uint64_t seed) {
  Rng rng = make_rng(seed, 0, Stream::Task);
  std::vector<VerifyItem> out;
  out.push_back(sandwich(rng));
  for (auto& it : adam_gn(rng)) out.push_back(std::move(it));
  out.push_back(gn1_rate(seed));
  out.push_back(divergence_constant());
  out.push_back(contraction_endpoints());
  out.push_back(contraction_bound());
  out.push_back(power_search(seed));
  out.push_back(geodesic(rng));
  return out;
}

}  // namespace basisprec::harness
