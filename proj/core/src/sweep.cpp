#include "basisprec/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <thread>
#include <tuple>

namespace basisprec::harness {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double curve_objective(const std::vector<TrajectoryRecord>& recs, const Objective& obj) {
  if (obj.kind == Objective::Kind::FinalLoss) {
    double s = 0.0;
    for (const auto& r : recs) s += r.final_loss();
    return s / static_cast<double>(recs.size());
  }
  const bool by_dist = obj.kind == Objective::Kind::StepsToDist;
  std::size_t len = 0;
  double start = 0.0;
  for (const auto& r : recs) {
    len = std::max(len, r.steps.size());
    start += by_dist ? r.initial_dist : r.initial_loss;
  }
  start /= static_cast<double>(recs.size());
  const double target = by_dist ? obj.threshold : obj.threshold * start;
  for (std::size_t t = 0; t < len; ++t) {
    double s = 0.0;
    for (const auto& r : recs) {
      // Runs stopped early hold their last value.
      const auto& m = r.steps[std::min(t, r.steps.size() - 1)];
      s += by_dist ? m.dist_to_opt : m.loss;
    }
    if (s / static_cast<double>(recs.size()) <= target) return static_cast<double>(t + 1);
  }
  return kInf;
}

struct Job {
  std::size_t point;
  std::uint64_t seed;
};

void run_jobs(std::vector<SweepPoint>& points, const std::vector<std::uint64_t>& seeds, int threads,
              TaskCache& cache) {
  std::vector<Job> jobs;
  for (std::size_t p = 0; p < points.size(); ++p) {
    for (auto s : seeds) jobs.push_back({p, s});
  }
  std::vector<TrajectoryRecord> out(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      RunConfig cfg = points[jobs[i].point].config;
      cfg.seed = jobs[i].seed;
      out[i] = run(cfg, *cache.get(cfg));
    }
  };
  const int n = std::max(1, std::min<int>(threads, static_cast<int>(jobs.size())));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int k = 0; k < n; ++k) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (std::size_t i = 0; i < jobs.size(); ++i) points[jobs[i].point].records.push_back(std::move(out[i]));
}

void summarize(SweepPoint& p, const Objective& obj, bool keep) {
  p.final_losses.clear();
  p.diverged_runs = 0;
  p.failed_runs = 0;
  for (const auto& r : p.records) {
    p.final_losses.push_back(r.final_loss());
    p.diverged_runs += r.diverged ? 1 : 0;
    p.failed_runs += r.failed ? 1 : 0;
  }
  std::tie(p.mean_final_loss, p.stderr_final_loss) = mean_stderr(p.final_losses);
  p.stable = p.diverged_runs == 0 && p.failed_runs == 0;
  p.objective = p.stable ? curve_objective(p.records, obj) : kInf;
  if (!keep) p.records.clear();
}

void choose_best(SweepResult& res) {
  res.best.reset();
  for (std::size_t i = 0; i < res.points.size(); ++i) {
    auto& p = res.points[i];
    p.best = false;
    if (!p.stable) continue;
    if (!res.best) {
      res.best = i;
      continue;
    }
    const auto& b = res.points[*res.best];
    if (p.objective < b.objective || (p.objective == b.objective && p.mean_final_loss < b.mean_final_loss)) {
      res.best = i;
    }
  }
  res.no_stable_configuration = !res.best.has_value();
  if (res.best) res.points[*res.best].best = true;
}

std::vector<SweepPoint> grid_points(const RunConfig& base, const SweepGrid& grid,
                                    const std::vector<std::uint64_t>& seeds) {
  std::vector<SweepPoint> pts;
  for (double lr : grid.lrs) {
    for (double eps : grid.epss) {
      for (double b2 : grid.beta2s) {
        for (Index h : grid.halve_every) {
          SweepPoint p;
          p.config = base;
          p.config.lr = lr;
          p.config.eps = eps;
          p.config.beta2 = b2;
          p.config.halve_every = h;
          p.config.seed = seeds.front();
          p.config.validate();
          pts.push_back(std::move(p));
        }
      }
    }
  }
  return pts;
}

}  // namespace

const SweepPoint& SweepResult::best_point() const {
  if (!best) throw SearchExhausted("sweep: no stable configuration");
  return points[*best];
}

std::pair<double, double> mean_stderr(const std::vector<double>& xs) {
  if (xs.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  if (xs.size() < 2 || !std::isfinite(mean)) return {mean, xs.size() < 2 ? 0.0 : kInf};
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  const double var = ss / static_cast<double>(xs.size() - 1);
  return {mean, std::sqrt(var / static_cast<double>(xs.size()))};
}

SweepResult sweep(const RunConfig& base, const SweepGrid& grid, const std::vector<std::uint64_t>& seeds,
                  const SweepOptions& opts, TaskCache* cache) {
  if (grid.lrs.empty() || grid.epss.empty() || grid.beta2s.empty() || grid.halve_every.empty()) {
    throw ConfigError("sweep: every grid axis needs at least one value");
  }
  if (seeds.empty()) throw ConfigError("sweep: need at least one seed");
  TaskCache local;
  TaskCache& tc = cache ? *cache : local;

  SweepResult res;
  res.points = grid_points(base, grid, seeds);
  run_jobs(res.points, seeds, opts.threads, tc);
  for (auto& p : res.points) summarize(p, opts.objective, opts.keep_records);
  choose_best(res);
  return res;
}

SweepResult lr_search(const RunConfig& base, SweepGrid grid, const std::vector<std::uint64_t>& seeds,
                      const SweepOptions& opts, const LrSearchOptions& lr_opts, TaskCache* cache) {
  if (!(lr_opts.lr_min > 0.0) || !(lr_opts.lr_max >= lr_opts.lr_min)) {
    throw ConfigError("lr_search: need 0 < lr_min <= lr_max");
  }
  TaskCache local;
  TaskCache& tc = cache ? *cache : local;

  // Powers of 3, so lr = 1 is always on the grid when in range.
  grid.lrs.clear();
  const int k0 = static_cast<int>(std::ceil(std::log(lr_opts.lr_min) / std::log(3.0) - 1e-9));
  const int k1 = static_cast<int>(std::floor(std::log(lr_opts.lr_max) / std::log(3.0) + 1e-9));
  for (int k = k0; k <= k1; ++k) grid.lrs.push_back(std::pow(3.0, k));
  if (grid.lrs.empty()) grid.lrs.push_back(lr_opts.lr_min);
  SweepResult res = sweep(base, grid, seeds, opts, &tc);

  double factor = 2.0;
  for (int round = 0; round < lr_opts.refinements && res.best; ++round, factor = std::sqrt(factor)) {
    const RunConfig center = res.points[*res.best].config;
    SweepGrid local_grid{{center.lr / factor, center.lr * factor},
                         {center.eps},
                         {center.beta2},
                         {center.halve_every}};
    SweepResult more = sweep(center, local_grid, seeds, opts, &tc);
    for (auto& p : more.points) res.points.push_back(std::move(p));
    choose_best(res);
  }
  return res;
}

}  // namespace basisprec::harness
