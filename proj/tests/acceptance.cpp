// Acceptance run: one PASS/FAIL line per criterion.
//
//   basisprec_acceptance            all criteria
//   basisprec_acceptance 3 7        selected criteria
//
// Exit status is 0 only if every selected criterion passed.

#include "basisprec/harness.hpp"
#include "basisprec/linalg.hpp"
#include "basisprec/random.hpp"
#include "basisprec/tasks.hpp"
#include "basisprec/theory.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

using namespace basisprec;
using namespace basisprec::harness;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double x) {
  std::ostringstream os;
  os.precision(6);
  os << x;
  return os.str();
}

linalg::SymMatrix random_cov(Index d, Rng& rng) {
  const Matrix u = tasks::random_orthogonal(d, rng);
  std::uniform_real_distribution<double> logu(0.0, std::log(100.0));
  Vector s(d);
  for (Index i = 0; i < d; ++i) s(i) = std::exp(logu(rng));
  return linalg::SymMatrix(u * s.asDiagonal() * u.transpose());
}

double objective_or_inf(const SweepResult& r) {
  return r.best ? r.best_point().objective : std::numeric_limits<double>::infinity();
}

std::string describe(const SweepResult& r) {
  if (!r.best) return "no stable configuration";
  const auto& p = r.best_point();
  std::string s = "lr " + fmt(p.config.lr);
  if (p.config.halve_every > 0) s += " halve_every " + std::to_string(p.config.halve_every);
  if (p.config.precond == "gn") s += " eps " + fmt(p.config.eps);
  return s + " -> " + fmt(p.objective);
}

// ---------------------------------------------------------------------------

Outcome c1_one_step() {
  double worst = 0.0;
  for (std::uint64_t ts = 0; ts < 5; ++ts) {
    RunConfig cfg;
    cfg.task = "quadratic";
    cfg.dim = 50;
    cfg.task_seed = ts;
    cfg.basis = precond::BasisKind::Eigen;
    cfg.precond = "gn";
    cfg.power = -1.0;
    cfg.eps = 0.0;
    cfg.lr = 1.0;
    cfg.steps = 1;
    const auto rec = run(cfg);
    if (rec.failed || rec.steps.empty()) return {false, "run failed: " + rec.failure};
    worst = std::max(worst, rec.final_loss() / rec.initial_loss);
  }
  return {worst <= 1e-16, "d=50, 5 instances, worst loss ratio after one step " + fmt(worst)};
}

Outcome c2_identity_and_adam() {
  RunConfig base;
  base.task = "block";
  base.d_block = 50;
  base.basis = precond::BasisKind::Identity;
  base.batch = kFullBatch;

  // GN with the identity basis on this covariance has unit diagonal, so it is GD.
  double max_rel = 0.0;
  {
    RunConfig gd = base;
    gd.precond = "gd";
    gd.lr = 0.02;
    gd.steps = 300;
    const auto ref = run(gd);
    for (double p : {-1.0, -0.5}) {
      RunConfig gn = gd;
      gn.precond = "gn";
      gn.power = p;
      const auto rec = run(gn);
      if (rec.steps.size() != ref.steps.size()) return {false, "trajectory lengths differ"};
      for (std::size_t t = 0; t < ref.steps.size(); ++t) {
        const double a = ref.steps[t].loss;
        const double b = rec.steps[t].loss;
        const double rel = std::abs(a - b) / std::max(std::abs(a), 1e-300);
        max_rel = std::max(max_rel, rel);
      }
    }
  }

  SweepOptions so;
  so.objective = Objective::steps_to_loss_ratio(1e-8);
  RunConfig fast = base;
  fast.steps = 3000;
  fast.stop_loss_ratio = 1e-8;
  TaskCache cache;

  RunConfig adam = fast;
  adam.precond = "adam";
  adam.beta2 = 0.0;
  adam.eps = 0.0;
  SweepGrid ag;
  ag.halve_every = {1, 50, 200};
  const auto adam_res = lr_search(adam, ag, {0}, so, {}, &cache);

  RunConfig gd = fast;
  gd.precond = "gd";
  const auto gd_res = lr_search(gd, SweepGrid{}, {0}, so, {}, &cache);

  const double a = objective_or_inf(adam_res);
  const double g = objective_or_inf(gd_res);
  const bool ok = max_rel <= 1e-12 && std::isfinite(a) && 5.0 * a <= g;
  return {ok, "identity-basis GN vs GD max rel loss diff " + fmt(max_rel) + "; steps to 1e-8: Adam(" +
                  describe(adam_res) + ") GD(" + describe(gd_res) + ")"};
}

Outcome c3_sandwich() {
  Rng rng = make_rng(3, 0, Stream::Task);
  bool ok = true;
  double worst = std::numeric_limits<double>::infinity();
  for (int k = 0; k < 100; ++k) {
    const Index d = 2 + k % 9;
    const auto cov = random_cov(d, rng);
    const auto r = theory::check_fisher_sandwich(cov, gaussian_vector(rng, d), gaussian_vector(rng, d));
    ok = ok && r.lower_ok && r.upper_ok;
    worst = std::min({worst, r.lower_slack, r.upper_slack});
  }

  // Monte-Carlo second moment against the closed form.
  double worst_mc = 0.0;
  constexpr Index n = 500000;
  for (int k = 0; k < 5; ++k) {
    const Index d = 3 + k;
    const auto cov = random_cov(d, rng);
    const Vector delta = gaussian_vector(rng, d);
    const Matrix root = linalg::psd_sqrt(cov);
    Matrix m = Matrix::Zero(d, d);
    for (Index i = 0; i < n; ++i) {
      const Vector x = root * gaussian_vector(rng, d);
      const Vector g = x.dot(delta) * x;
      m.noalias() += g * g.transpose();
    }
    m /= static_cast<double>(n);
    const auto w = linalg::SymMatrix(delta * delta.transpose());
    const Matrix exact = theory::wick_second_moment(cov, w).matrix();
    worst_mc = std::max(worst_mc, (m - exact).norm() / exact.norm());
  }
  ok = ok && worst_mc <= 0.02;
  return {ok, "100 instances, min PSD slack " + fmt(worst) + "; Monte-Carlo vs closed form max rel err " +
                  fmt(worst_mc)};
}

Outcome c4_gn1_rate() {
  constexpr Index d = 10;
  constexpr Index steps = 200;
  constexpr int seeds = 2000;
  const double eta = 1.0 / (2.0 * (d + 1));
  RunConfig cfg;
  cfg.task = "quadratic";
  cfg.dim = d;
  cfg.basis = precond::BasisKind::Eigen;
  cfg.precond = "gn";
  cfg.power = -1.0;
  cfg.lr = eta;
  cfg.batch = 1;
  cfg.gn_batch = kFullBatch;
  cfg.refresh = steps;
  cfg.steps = steps;
  const auto task = make_task(cfg);
  double l0 = 0.0;
  double lt = 0.0;
  for (int s = 0; s < seeds; ++s) {
    cfg.seed = static_cast<std::uint64_t>(s);
    const auto rec = run(cfg, *task);
    if (rec.failed || rec.diverged) return {false, "seed " + std::to_string(s) + " did not complete"};
    l0 += rec.initial_loss;
    lt += rec.final_loss();
  }
  const double measured = std::pow(lt / l0, 1.0 / static_cast<double>(steps));
  const double predicted = theory::gn1_expected_loss_factor(d, eta);
  const double exact = theory::gn1_expected_loss_factor_exact(d, eta);
  const auto rep = theory::compare_rate(predicted, measured);
  return {rep.relative_gap <= 0.05, "measured per-step factor " + fmt(measured) + " vs predicted " +
                                        fmt(predicted) + " (gap " + fmt(rep.relative_gap) +
                                        "; exact-moment value " + fmt(exact) + ")"};
}

Outcome c5_adam_gn_ratio() {
  Rng rng = make_rng(5, 0, Stream::Task);
  int checked = 0;
  int literal_fail = 0;
  int corrected_fail = 0;
  for (int k = 0; k < 100; ++k) {
    const Index d = 2 + k % 7;
    const auto cov = random_cov(d, rng);
    const Vector theta = gaussian_vector(rng, d);
    const Vector star = gaussian_vector(rng, d);
    const auto eig = linalg::sym_eig(cov);
    const std::vector<precond::BasisSpec> bases = {
        precond::BasisSpec::identity(),
        precond::BasisSpec::explicit_matrix(eig.basis),
        precond::BasisSpec::explicit_matrix(linalg::OrthoMatrix(tasks::random_orthogonal(d, rng)))};
    for (const auto& b : bases) {
      const auto r = theory::adam_gn_ratio_check(cov, theta, star, b);
      if (r.degenerate) continue;
      ++checked;
      literal_fail += r.literal_ok ? 0 : 1;
      corrected_fail += r.corrected_ok ? 0 : 1;
    }
  }
  return {literal_fail == 0 && checked > 0,
          std::to_string(literal_fail) + "/" + std::to_string(checked) +
              " (instance, basis) pairs violate D_GN/sqrt(3l) <= D_A/2 <= D_GN/sqrt(l); with sqrt(2) D_A in "
              "the middle " +
              std::to_string(corrected_fail) + " violate"};
}

Outcome c6_power_ordering() {
  constexpr double margin = 1.1;
  std::ostringstream os;
  bool ok = true;
  TaskCache cache;
  LrSearchOptions lo;
  lo.refinements = 6;
  SweepOptions so;
  so.objective = Objective::steps_to_loss_ratio(1e-6);

  auto compare = [&](const std::string& task, Index batch, Index steps, int nseeds, bool half_should_win) {
    RunConfig cfg;
    cfg.task = task;
    cfg.dim = 5;
    cfg.search_margin = margin;
    cfg.search_trials = 10000;
    cfg.basis = precond::BasisKind::Identity;
    cfg.precond = "gn";
    cfg.eps = 0.0;
    cfg.batch = batch;
    cfg.gn_batch = kFullBatch;
    cfg.steps = steps;
    cfg.stop_loss_ratio = 1e-6;
    std::vector<std::uint64_t> seeds;
    for (int s = 0; s < nseeds; ++s) seeds.push_back(static_cast<std::uint64_t>(s));
    cfg.power = -0.5;
    const auto half = lr_search(cfg, SweepGrid{}, seeds, so, lo, &cache);
    cfg.power = -1.0;
    const auto one = lr_search(cfg, SweepGrid{}, seeds, so, lo, &cache);
    const double h = objective_or_inf(half);
    const double o = objective_or_inf(one);
    const bool won = half_should_win ? (std::isfinite(h) && h < o) : (std::isfinite(o) && o < h);
    ok = ok && won;
    os << task << (batch == kFullBatch ? " full" : " batch1") << ": GN^-1/2 " << h << " GN^-1 " << o
       << " steps; ";
  };

  try {
    const auto r_half = tasks::search_power_covariance(5, tasks::PowerDirection::HalfWins, 10000, 0, margin);
    const auto r_one = tasks::search_power_covariance(5, tasks::PowerDirection::OneWins, 10000, 0, margin);
    os << "ratios " << fmt(r_half.ratio) << " / " << fmt(r_one.ratio) << "; ";
  } catch (const SearchExhausted& e) {
    return {false, e.what()};
  }
  compare("power_half", kFullBatch, 2000, 1, true);
  compare("power_half", 1, 4000, 10, true);
  compare("power_one", kFullBatch, 2000, 1, false);
  return {ok, os.str()};
}

Outcome c7_logistic() {
  RunConfig base;
  base.task = "logistic";
  base.dim = 256;
  base.powerlaw_c = 0.6;
  base.label_prob = 0.75;
  base.batch = kFullBatch;
  base.steps = 2000;
  base.stop_dist = 1e-4;
  TaskCache cache;
  SweepOptions so;
  so.objective = Objective::steps_to_dist(1e-4);

  RunConfig adam = base;
  adam.precond = "adam";
  adam.basis = precond::BasisKind::Identity;
  adam.beta2 = 0.0;
  adam.eps = 0.0;
  SweepGrid ag;
  ag.halve_every = {1, 50, 200};
  const auto adam_res = lr_search(adam, ag, {0}, so, {}, &cache);

  RunConfig gn = base;
  gn.precond = "gn";
  gn.power = -1.0;
  gn.basis = precond::BasisKind::Eigen;
  SweepGrid gg;
  gg.epss = {0.0, 1e-6, 1e-3};
  gg.halve_every = {0, 50, 200};
  const auto gn_res = lr_search(gn, gg, {0}, so, {}, &cache);

  const double a = objective_or_inf(adam_res);
  const double g = objective_or_inf(gn_res);
  const bool speed_ok = std::isfinite(a) && 3.0 * a <= g;

  // Every constant lr above the final-lr bound must be flagged diverged.
  const Vector nu = tasks::powerlaw_weights(256, 0.6);
  int above = 0;
  int flagged = 0;
  std::string missed;
  for (double eps : gg.epss) {
    const double bound = theory::logistic_final_lr_bound(nu, eps);
    for (double m : {1.5, 3.0, 10.0}) {
      RunConfig c = gn;
      c.eps = eps;
      c.lr = m * bound;
      c.halve_every = 0;
      c.stop_dist = 0.0;
      const auto rec = run(c, *cache.get(c));
      ++above;
      if (rec.diverged) {
        ++flagged;
      } else if (missed.empty()) {
        missed = " (first miss: eps " + fmt(eps) + " lr " + fmt(c.lr) + ")";
      }
    }
  }
  const bool div_ok = flagged == above;
  return {speed_ok && div_ok, "steps to dist 1e-4: Adam(" + describe(adam_res) + ") GN^-1(" + describe(gn_res) +
                                  "); above-bound constant lrs flagged diverged " + std::to_string(flagged) +
                                  "/" + std::to_string(above) + missed};
}

Outcome c8_divergence_lemma() {
  const double c = theory::kDivergenceConstant;
  int cases = 0;
  int diverged = 0;
  int converged = 0;
  for (double p : {0.6, 0.7, 0.8}) {
    for (double t0 : {0.05, 0.1, 0.3}) {
      for (double eps : {0.0, 1e-4}) {
        const double thr = theory::divergence_threshold(t0, eps, c);
        for (double m : {1.0, 1.5, 2.0, 5.0, 10.0, 100.0, 1000.0}) {
          ++cases;
          diverged += theory::diverges_geometrically(t0, m * thr, eps, p) ? 1 : 0;
        }
        converged += theory::converges_to_fixed_point(t0, 0.01 * thr, eps, p, 10000) ? 1 : 0;
      }
    }
  }
  const auto cal = theory::calibrate_divergence_constant();
  const bool ok = diverged == cases && converged == 18 && cal.c_needed <= c;
  return {ok, "c " + fmt(c) + " (calibrated " + fmt(cal.c_needed) + "); geometric divergence " +
                  std::to_string(diverged) + "/" + std::to_string(cases) + "; 1% of threshold converges " +
                  std::to_string(converged) + "/18"};
}

Outcome c9_contraction() {
  const Vector h = Vector::LinSpaced(16, 0.05, 3.0);
  const Vector w = Vector::LinSpaced(16, 0.1, 1.0);
  const double g0 = theory::contraction_factor(h, w, 1.0, 0.0);
  const double g1 = theory::contraction_factor(h, w, 0.0, 0.5);
  bool ok = g0 == 0.0 && g1 == 1.0;
  std::ostringstream os;
  os << "gamma(eta=1,eps=0) " << g0 << ", gamma(eta=0) " << g1 << "; ";
  for (Index d : {64, 256, 1024}) {
    const Vector nu = tasks::powerlaw_weights(d, 0.6);
    for (double eps : {1e-4, 1e-3, 1e-2}) {
      const auto r = theory::check_contraction_bound(nu, Vector::Constant(d, 0.75), eps);
      ok = ok && r.holds;
      if (eps == 1e-3) os << "d=" << d << " gamma " << fmt(r.gamma) << " >= " << fmt(r.rhs) << "; ";
    }
  }
  return {ok, os.str()};
}

// Trailing moving average over up to `window` points.
std::vector<double> smooth(const std::vector<double>& xs, std::size_t window) {
  std::vector<double> out(xs.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    acc += xs[i];
    if (i >= window) acc -= xs[i - window];
    out[i] = acc / static_cast<double>(std::min(i + 1, window));
  }
  return out;
}

// Seed-averaged loss curve of a sweep point; held at the last value after an early stop.
std::vector<double> mean_curve(const SweepPoint& p, Index steps) {
  std::vector<double> out(static_cast<std::size_t>(steps), 0.0);
  for (const auto& r : p.records) {
    for (Index t = 0; t < steps; ++t) {
      const auto idx = std::min<std::size_t>(static_cast<std::size_t>(t), r.steps.size() - 1);
      out[static_cast<std::size_t>(t)] += r.steps[idx].loss;
    }
  }
  for (auto& v : out) v /= static_cast<double>(p.records.size());
  return out;
}

double fraction_within(const std::vector<double>& a, const std::vector<double>& b, double band) {
  const auto sa = smooth(a, 50);
  const auto sb = smooth(b, 50);
  std::size_t in = 0;
  for (std::size_t i = 0; i < sa.size(); ++i) {
    const double r = sa[i] / sb[i];
    if (r <= band && r >= 1.0 / band) ++in;
  }
  return static_cast<double>(in) / static_cast<double>(sa.size());
}

Outcome c10_mlp_parity() {
  bool ok = true;
  std::ostringstream os;
  TaskCache cache;
  SweepOptions so;
  so.keep_records = true;
  LrSearchOptions lo;
  lo.lr_min = 1e-3;
  lo.lr_max = 1.0;
  lo.refinements = 1;
  const std::vector<std::uint64_t> seeds{0, 1};

  for (const std::string name : {"parity", "staircase"}) {
    for (auto basis : {precond::BasisKind::Identity, precond::BasisKind::KronEigen}) {
      RunConfig cfg = task_defaults(name);
      cfg.hidden = 128;
      cfg.batch = 1;
      cfg.gn_batch = kFullBatch;
      cfg.basis = basis;
      cfg.refresh = 20;

      RunConfig adam = cfg;
      adam.precond = "adam";
      adam.beta2 = 0.99;
      adam.eps = 1e-8;
      const auto ar = lr_search(adam, SweepGrid{}, seeds, so, lo, &cache);

      RunConfig gn = cfg;
      gn.precond = "gn";
      gn.power = -0.5;
      SweepGrid gg;
      gg.epss = {1e-6};
      const auto gr = lr_search(gn, gg, seeds, so, lo, &cache);

      if (!ar.best || !gr.best) {
        ok = false;
        os << name << '/' << basis_name(basis) << ": no stable configuration; ";
        continue;
      }
      const double frac = fraction_within(mean_curve(ar.best_point(), cfg.steps),
                                          mean_curve(gr.best_point(), cfg.steps), 3.0);
      ok = ok && frac >= 0.9;
      os << name << '/' << basis_name(basis) << " within 3x on " << fmt(100.0 * frac) << "% of steps (final "
         << fmt(ar.best_point().mean_final_loss) << " vs " << fmt(gr.best_point().mean_final_loss) << " from "
         << fmt(ar.best_point().records.front().initial_loss) << "); ";
    }
  }

  // Control: on the block quadratic the two methods must separate.
  {
    RunConfig cfg;
    cfg.task = "block";
    cfg.d_block = 10;
    cfg.basis = precond::BasisKind::Identity;
    cfg.batch = kFullBatch;
    cfg.steps = 1000;
    RunConfig adam = cfg;
    adam.precond = "adam";
    adam.beta2 = 0.0;
    SweepGrid ag;
    ag.halve_every = {1, 50, 200};
    const auto ar = lr_search(adam, ag, {0}, so, {}, &cache);
    RunConfig gn = cfg;
    gn.precond = "gn";
    gn.power = -1.0;
    const auto gr = lr_search(gn, SweepGrid{}, {0}, so, {}, &cache);
    if (!ar.best || !gr.best) return {false, os.str() + "control: no stable configuration"};
    const double frac =
        fraction_within(mean_curve(ar.best_point(), cfg.steps), mean_curve(gr.best_point(), cfg.steps), 3.0);
    const bool sep = 1.0 - frac >= 0.3;
    ok = ok && sep;
    os << "control (block quadratic, GN^-1 identity vs Adam) outside 3x on " << fmt(100.0 * (1.0 - frac))
       << "% of steps";
  }
  return {ok, os.str()};
}

Outcome c11_interpolation() {
  Rng rng = make_rng(11, 0, Stream::Task);
  double err = 0.0;
  for (int k = 0; k < 50; ++k) {
    const Index d = 2 + k % 12;
    linalg::OrthoMatrix u(tasks::random_orthogonal(d, rng));
    if (u.determinant() < 0.0) u = u.with_flipped_column(0);
    const Matrix id = Matrix::Identity(d, d);
    err = std::max(err, (linalg::geodesic_interp(u, 1.0).matrix() - u.matrix()).norm());
    err = std::max(err, (linalg::geodesic_interp(u, 0.0).matrix() - id).norm());
    err = std::max(err, (linalg::skew_exp(linalg::ortho_log(u)).matrix() - u.matrix()).norm());
    const Matrix half = linalg::geodesic_interp(u, 0.5).matrix();
    err = std::max(err, (half * half - u.matrix()).norm());
  }
  bool ok = err <= 1e-8;

  RunConfig cfg = task_defaults("parity");
  cfg.batch = 1;
  cfg.basis = precond::BasisKind::Interpolated;
  cfg.precond = "gn";
  cfg.power = -0.5;
  cfg.eps = 1e-3;
  cfg.lr = 0.003;
  TaskCache cache;
  std::vector<TrajectoryRecord> recs;
  std::ostringstream os;
  os << "geodesic max error " << fmt(err) << "; parity final loss by alpha:";
  for (double a : {0.25, 0.5, 0.75}) {
    cfg.alpha = a;
    auto rec = run(cfg, *cache.get(cfg));
    ok = ok && !rec.failed && static_cast<Index>(rec.steps.size()) == cfg.steps;
    os << ' ' << a << "->" << (rec.failed ? std::string("failed: ") + rec.failure : fmt(rec.final_loss()));
    recs.push_back(std::move(rec));
  }
  const auto path = (std::filesystem::temp_directory_path() / "basisprec_acceptance_c11.csv").string();
  emit_metrics(recs, path);
  const auto back = read_metrics(path);
  ok = ok && back.size() == recs.size();
  std::filesystem::remove(path);
  std::filesystem::remove(sidecar_path(path));
  return {ok, os.str()};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> fn;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all = {
      {1, "one_step_eigen_gn", c1_one_step},
      {2, "identity_gn_is_gd_and_adam_beats_gd", c2_identity_and_adam},
      {3, "fisher_sandwich", c3_sandwich},
      {4, "single_sample_gn_rate", c4_gn1_rate},
      {5, "adam_gn_diagonal_ratio", c5_adam_gn_ratio},
      {6, "gn_power_ordering", c6_power_ordering},
      {7, "logistic_adam_vs_gn", c7_logistic},
      {8, "divergence_threshold", c8_divergence_lemma},
      {9, "contraction_factor", c9_contraction},
      {10, "mlp_adam_matches_gn_half", c10_mlp_parity},
      {11, "basis_interpolation", c11_interpolation},
  };
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));

  bool all_pass = true;
  for (const auto& c : all) {
    if (!selected.empty() && std::find(selected.begin(), selected.end(), c.id) == selected.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("C%-2d %s %s: %s [%.1fs]\n", c.id, o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str(), secs);
    std::fflush(stdout);
    all_pass = all_pass && o.pass;
  }
  return all_pass ? 0 : 1;
}
