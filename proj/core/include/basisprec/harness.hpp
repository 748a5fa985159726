#pragma once

// Experiment execution: single runs, seeded sweeps with mean and standard
// error, CSV metrics with a config sidecar, the basis x batch-size grid,
// and the theory verification suite.

#include "basisprec/config.hpp"
#include "basisprec/tasks.hpp"

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace basisprec::harness {

/// Builds the task named by the config. Deterministic in task_key(cfg).
tasks::TaskPtr make_task(const RunConfig& cfg);

/// Thread-safe memo of make_task keyed by task_key.
class TaskCache {
 public:
  tasks::TaskPtr get(const RunConfig& cfg);

 private:
  std::mutex mu_;
  std::map<std::string, tasks::TaskPtr> tasks_;
};

struct StepMetrics {
  Index step = 0;  // 1-based; step t is the state after t updates
  double loss = 0.0;
  double grad_norm = 0.0;  // norm of the gradient used for this update
  double dist_to_opt = 0.0;
  double lr = 0.0;
};

struct TrajectoryRecord {
  std::string run_id;
  RunConfig config;
  std::string config_hash;
  double initial_loss = 0.0;
  double initial_dist = 0.0;
  std::vector<StepMetrics> steps;
  bool diverged = false;
  Index diverged_at = -1;
  bool failed = false;  // a numerical error stopped the run
  std::string failure;
  bool stopped_early = false;

  std::uint64_t seed() const { return config.seed; }
  double final_loss() const;

  /// First recorded step with loss <= ratio * initial_loss.
  std::optional<Index> steps_to_loss_ratio(double ratio) const;
  std::optional<Index> steps_to_dist(double tol) const;
};

/// Runs the loop: sample a gradient batch and (on refresh steps) an
/// independent curvature batch, update, record. A run is flagged diverged at
/// the first step whose loss is non-finite or exceeds diverge_factor times
/// the initial loss; library errors are recorded as failures.
TrajectoryRecord run(const RunConfig& cfg, const tasks::Task& task);
TrajectoryRecord run(const RunConfig& cfg);

// ---------------------------------------------------------------------------

struct Objective {
  enum class Kind { FinalLoss, StepsToLossRatio, StepsToDist };
  Kind kind = Kind::FinalLoss;
  double threshold = 0.0;

  static Objective final_loss() { return {}; }
  static Objective steps_to_loss_ratio(double r) { return {Kind::StepsToLossRatio, r}; }
  static Objective steps_to_dist(double tol) { return {Kind::StepsToDist, tol}; }
};

struct SweepGrid {
  std::vector<double> lrs;
  std::vector<double> epss{0.0};
  std::vector<double> beta2s{0.0};
  std::vector<Index> halve_every{0};  // 0: constant
};

struct SweepPoint {
  RunConfig config;  // seed of the first run
  std::vector<double> final_losses;
  double mean_final_loss = 0.0;
  double stderr_final_loss = 0.0;
  Index diverged_runs = 0;
  Index failed_runs = 0;
  /// Objective of the seed-averaged curve; +inf when not reached.
  double objective = 0.0;
  bool stable = false;  // no seed diverged or failed
  bool best = false;
  std::vector<TrajectoryRecord> records;  // kept when requested
};

struct SweepResult {
  std::vector<SweepPoint> points;
  std::optional<std::size_t> best;
  bool no_stable_configuration = false;

  const SweepPoint& best_point() const;
};

struct SweepOptions {
  Objective objective;
  bool keep_records = false;
  int threads = 1;
};

/// Executes the Cartesian product of grid x seeds. Runs are independent and
/// may execute concurrently; results are ordered by grid position. The best
/// point minimizes the objective (ties: mean final loss) among stable points.
SweepResult sweep(const RunConfig& base, const SweepGrid& grid, const std::vector<std::uint64_t>& seeds,
                  const SweepOptions& opts = {}, TaskCache* cache = nullptr);

/// Mean and standard error (n - 1 denominator; 0 for one value).
std::pair<double, double> mean_stderr(const std::vector<double>& xs);

struct LrSearchOptions {
  double lr_min = 1e-4;
  double lr_max = 10.0;
  /// Refinement rounds after the factor-3 pass: factor 2, then sqrt 2, ...
  int refinements = 2;
};

/// lr grid of powers of 3 within [lr_min, lr_max] crossed with the rest of
/// the grid, then per-round refinement of the lr around the best point.
/// Returns every evaluated point.
SweepResult lr_search(const RunConfig& base, SweepGrid grid, const std::vector<std::uint64_t>& seeds,
                      const SweepOptions& opts = {}, const LrSearchOptions& lr_opts = {},
                      TaskCache* cache = nullptr);

// ---------------------------------------------------------------------------

inline const char* kMetricsHeader = "run_id,seed,step,loss,grad_norm,dist_to_opt,lr";

/// Sidecar path for a metrics file.
std::string sidecar_path(const std::string& csv_path);

/// Writes the CSV and its sidecar. Throws IoError with the path on failure.
void emit_metrics(const std::vector<TrajectoryRecord>& records, const std::string& path);

/// Reads back what emit_metrics wrote.
std::vector<TrajectoryRecord> read_metrics(const std::string& path);

// ---------------------------------------------------------------------------

struct GridCell {
  std::string basis;   // "eigen" (or "kron" for MLP tasks) / "identity"
  std::string regime;  // "full" / "batch1"
  std::string method;  // "adam" / "gn-1" / "gn-0.5"
  SweepPoint best;
  bool no_stable_configuration = false;
  std::string metrics_path;
};

struct GridOptions {
  std::string out_dir = "grid_out";
  std::vector<std::uint64_t> seeds{0, 1};
  Index steps = 0;  // 0: task default
  LrSearchOptions lr;
  int threads = 1;
  std::uint64_t task_seed = 0;
};

/// The {eigen/kron, identity} x {full, batch 1} grid for Adam, GN^-1 and
/// GN^-1/2, each lr-swept, one metrics file per cell.
std::vector<GridCell> grid_experiment(const std::string& name, const GridOptions& opts = {});

/// Task defaults used by the grid and the CLI.
RunConfig task_defaults(const std::string& name);

// ---------------------------------------------------------------------------

struct VerifyItem {
  std::string name;
  bool pass = false;
  std::string detail;
};

/// Closed-form and Monte-Carlo theory checks, seconds-scale.
std::vector<VerifyItem> verify_suite(std::uint64_t seed = 0);

}  // namespace basisprec::harness
