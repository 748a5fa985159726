#include "basisprec/harness.hpp"

#include <cmath>
#include <limits>

namespace basisprec::harness {

namespace {

std::vector<tasks::Segment> thirds(Index d) {
  if (d == 21) return tasks::default_staircase_segments();
  if (d < 3) return {{0, d}};
  const Index a = d / 3;
  const Index b = 2 * d / 3;
  return {{0, a}, {a, b}, {b, d}};
}

}  // namespace

tasks::TaskPtr make_task(const RunConfig& cfg) {
  cfg.validate();
  const auto& t = cfg.task;
  if (t == "quadratic") {
    return tasks::gen_random_quadratic(tasks::log_spectrum(cfg.dim, cfg.spectrum_lo, cfg.spectrum_hi),
                                       cfg.task_seed);
  }
  if (t == "block") return tasks::gen_block_covariance(cfg.d_block, cfg.task_seed);
  if (t == "power_half" || t == "power_one") {
    const auto dir = t == "power_half" ? tasks::PowerDirection::HalfWins : tasks::PowerDirection::OneWins;
    return tasks::search_power_covariance(cfg.dim, dir, cfg.search_trials, cfg.task_seed,
                                          cfg.search_margin,
                                          tasks::log_spectrum(cfg.dim, cfg.spectrum_lo, cfg.spectrum_hi))
        .task;
  }
  if (t == "logistic") return tasks::gen_powerlaw_logistic(cfg.dim, cfg.powerlaw_c, cfg.label_prob);
  if (t == "parity") return tasks::gen_parity(cfg.dim, cfg.parity_k, cfg.task_seed, cfg.hidden);
  if (t == "staircase") return tasks::gen_staircase(cfg.dim, thirds(cfg.dim), cfg.task_seed, cfg.hidden);
  if (t == "teacher") return tasks::gen_teacher_student(cfg.dim, cfg.teacher_hidden, cfg.task_seed).task;
  if (t == "cifar") {
    return tasks::make_cifar_task(tasks::load_cifar10_binary(cfg.cifar_path, cfg.cifar_records),
                                  cfg.hidden, cfg.task_seed);
  }
  throw ConfigError("task: unknown task '" + t + "'");
}

tasks::TaskPtr TaskCache::get(const RunConfig& cfg) {
  const std::string key = task_key(cfg);
  {
    std::lock_guard<std::mutex> lock(mu_);
    const auto it = tasks_.find(key);
    if (it != tasks_.end()) return it->second;
  }
  auto task = make_task(cfg);
  std::lock_guard<std::mutex> lock(mu_);
  return tasks_.emplace(key, std::move(task)).first->second;
}

double TrajectoryRecord::final_loss() const {
  if (diverged || failed) return std::numeric_limits<double>::infinity();
  return steps.empty() ? initial_loss : steps.back().loss;
}

std::optional<Index> TrajectoryRecord::steps_to_loss_ratio(double ratio) const {
  for (const auto& s : steps) {
    if (s.loss <= ratio * initial_loss) return s.step;
  }
  return std::nullopt;
}

std::optional<Index> TrajectoryRecord::steps_to_dist(double tol) const {
  for (const auto& s : steps) {
    if (s.dist_to_opt <= tol) return s.step;
  }
  return std::nullopt;
}

TrajectoryRecord run(const RunConfig& cfg) { return run(cfg, *make_task(cfg)); }

TrajectoryRecord run(const RunConfig& cfg, const tasks::Task& task) {
  cfg.validate();
  TrajectoryRecord rec;
  rec.config = cfg;
  rec.config_hash = config_hash(cfg);
  rec.run_id = rec.config_hash + "-" + std::to_string(cfg.seed);

  Rng init_rng = make_rng(cfg.seed, 0, Stream::Init);
  Rng grad_rng = make_rng(cfg.seed, 0, Stream::Gradient);
  Rng gn_rng = make_rng(cfg.seed, 0, Stream::Curvature);

  ParamVector theta = task.initial_params(init_rng);
  rec.initial_loss = task.eval_loss(theta);
  rec.initial_dist = task.dist_to_opt(theta);
  const auto schedule = cfg.schedule();
  precond::Optimizer opt(cfg.optimizer(), task.dim());
  rec.steps.reserve(static_cast<std::size_t>(cfg.steps));

  try {
    for (Index t = 0; t < cfg.steps; ++t) {
      if (opt.wants_curvature(t)) {
        opt.update_curvature(cfg.gn_batch == kFullBatch ? task.full_gn(theta, gn_rng)
                                                        : task.batch_gn(theta, cfg.gn_batch, gn_rng));
      }
      const auto g = cfg.batch == kFullBatch ? task.full_grad(theta, grad_rng)
                                             : task.batch_grad(theta, cfg.batch, grad_rng);
      const double lr = precond::schedule_lr(schedule, t);
      theta = opt.step(theta, g.grad, lr);

      StepMetrics m;
      m.step = t + 1;
      m.grad_norm = g.grad.norm();
      m.lr = lr;
      const bool finite_params = theta.allFinite();
      m.loss = finite_params ? task.eval_loss(theta) : std::numeric_limits<double>::infinity();
      m.dist_to_opt = finite_params ? task.dist_to_opt(theta) : std::numeric_limits<double>::infinity();
      rec.steps.push_back(m);

      const bool blown = !std::isfinite(m.loss) ||
                         (rec.initial_loss > 0.0 && m.loss > cfg.diverge_factor * rec.initial_loss);
      if (blown) {
        rec.diverged = true;
        rec.diverged_at = m.step;
        break;
      }
      if ((cfg.stop_loss_ratio > 0.0 && m.loss <= cfg.stop_loss_ratio * rec.initial_loss) ||
          (cfg.stop_dist > 0.0 && m.dist_to_opt <= cfg.stop_dist)) {
        rec.stopped_early = true;
        break;
      }
    }
  } catch (const Error& e) {
    rec.failed = true;
    rec.failure = e.what();
  }
  return rec;
}

}  // namespace basisprec::harness
