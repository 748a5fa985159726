#include "basisprec/harness.hpp"

#include <filesystem>
#include <fstream>

namespace basisprec::harness {

RunConfig task_defaults(const std::string& name) {
  RunConfig c;
  if (name == "quadratic") {
    c.task = "block";
    c.d_block = 10;
    c.steps = 2000;
  } else if (name == "logistic") {
    c.task = "logistic";
    c.dim = 256;
    c.powerlaw_c = 0.6;
    c.label_prob = 0.75;
    c.steps = 2000;
  } else if (name == "parity") {
    c.task = "parity";
    c.dim = 20;
    c.parity_k = 6;
    c.steps = 1000;
    c.refresh = 20;
  } else if (name == "staircase") {
    c.task = "staircase";
    c.dim = 21;
    c.steps = 1000;
    c.refresh = 20;
  } else if (name == "teacher") {
    c.task = "teacher";
    c.dim = 20;
    c.teacher_hidden = 32;
    c.steps = 1000;
    c.refresh = 20;
  } else {
    throw ConfigError("grid: unknown experiment '" + name + "' (teacher|parity|staircase|quadratic|logistic)");
  }
  return c;
}

std::vector<GridCell> grid_experiment(const std::string& name, const GridOptions& opts) {
  RunConfig base = task_defaults(name);
  base.task_seed = opts.task_seed;
  if (opts.steps > 0) base.steps = opts.steps;
  const bool mlp = name == "parity" || name == "staircase" || name == "teacher";

  std::error_code ec;
  std::filesystem::create_directories(opts.out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + opts.out_dir + ": " + ec.message());

  TaskCache cache;
  std::vector<GridCell> cells;
  const std::string rotated = mlp ? "kron" : "eigen";
  for (const std::string& basis : {rotated, std::string("identity")}) {
    for (const std::string regime : {"full", "batch1"}) {
      for (const std::string method : {"adam", "gn-1", "gn-0.5"}) {
        RunConfig cfg = base;
        cfg.basis = parse_basis(basis);
        cfg.batch = regime == "full" ? kFullBatch : 1;
        cfg.gn_batch = kFullBatch;
        SweepGrid grid;
        if (method == "adam") {
          cfg.precond = "adam";
          grid.beta2s = {0.0, 0.9, 0.99};
          grid.epss = {mlp ? 1e-8 : 0.0};
          grid.halve_every = {1, 50, 200};
        } else {
          cfg.precond = "gn";
          cfg.power = method == "gn-1" ? -1.0 : -0.5;
          grid.epss = {0.0, 1e-6, 1e-3};
        }
        SweepOptions so;
        so.keep_records = true;
        so.threads = opts.threads;
        const SweepResult res = lr_search(cfg, grid, opts.seeds, so, opts.lr, &cache);

        GridCell cell;
        cell.basis = basis;
        cell.regime = regime;
        cell.method = method;
        cell.no_stable_configuration = res.no_stable_configuration;
        cell.metrics_path = (std::filesystem::path(opts.out_dir) /
                             (name + "_" + basis + "_" + regime + "_" + method + ".csv"))
                                .string();
        if (res.best) {
          cell.best = res.best_point();
          emit_metrics(cell.best.records, cell.metrics_path);
          cell.best.records.clear();
        } else {
          emit_metrics({}, cell.metrics_path);
        }
        cells.push_back(std::move(cell));
      }
    }
  }

  const std::string summary = (std::filesystem::path(opts.out_dir) / (name + "_summary.csv")).string();
  std::ofstream out(summary);
  if (!out) throw IoError("cannot write " + summary);
  out << "basis,regime,method,stable,lr,eps,beta2,halve_every,mean_final_loss,stderr_final_loss\n";
  for (const auto& c : cells) {
    const auto& k = c.best.config;
    out << c.basis << ',' << c.regime << ',' << c.method << ',' << (c.no_stable_configuration ? 0 : 1) << ','
        << format_double(k.lr) << ',' << format_double(k.eps) << ',' << format_double(k.beta2) << ','
        << k.halve_every << ',' << format_double(c.best.mean_final_loss) << ','
        << format_double(c.best.stderr_final_loss) << '\n';
  }
  if (!out) throw IoError("write failed: " + summary);
  return cells;
}

}  // namespace basisprec::harness
