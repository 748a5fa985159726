// basisprec: command-line front end for runs, sweeps, the basis x batch grid,
// the theory checks and the CIFAR-10 loader.

#include "basisprec/harness.hpp"
#include "basisprec/theory.hpp"

#if __has_include(<CLI11.hpp>)
#include <CLI11.hpp>
#else
#include <CLI/CLI.hpp>
#endif

#include <algorithm>
#include <array>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

namespace bp = basisprec;
namespace hx = basisprec::harness;

namespace {

std::string flag_name(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return "--" + key;
}

// Config assembly shared by run and sweep: preset, then file, then --set,
// then per-key flags.
struct ConfigArgs {
  std::string preset;
  std::string file;
  std::vector<std::string> sets;
  std::map<std::string, std::string> flags;

  void attach(CLI::App* app) {
    app->add_option("--preset", preset, "Start from a grid task's defaults (teacher|parity|staircase|quadratic|logistic)");
    app->add_option("-c,--config", file, "key=value config file");
    app->add_option("--set", sets, "Override one key: key=value (repeatable)");
    for (const auto& key : hx::config_keys()) {
      app->add_option(flag_name(key), flags[key], "config key " + key)->group("Config keys");
    }
  }

  hx::RunConfig build() const {
    hx::RunConfig cfg = preset.empty() ? hx::RunConfig{} : hx::task_defaults(preset);
    if (!file.empty()) cfg = hx::load_config_file(file, cfg);
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw bp::ConfigError("--set expects key=value, got '" + kv + "'");
      hx::set_key(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    for (const auto& [key, val] : flags) {
      if (!val.empty()) hx::set_key(cfg, key, val);
    }
    cfg.validate();
    return cfg;
  }
};

std::vector<double> parse_list(const std::string& s, const std::string& what) {
  std::vector<double> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, ',')) out.push_back(hx::parse_double(cur, what));
  if (out.empty()) throw bp::ConfigError(what + ": empty list");
  return out;
}

hx::Objective parse_objective(const std::string& s) {
  if (s == "final") return hx::Objective::final_loss();
  const auto colon = s.find(':');
  const std::string kind = s.substr(0, colon);
  if (colon != std::string::npos) {
    const double v = hx::parse_double(s.substr(colon + 1), "objective");
    if (kind == "loss_ratio") return hx::Objective::steps_to_loss_ratio(v);
    if (kind == "dist") return hx::Objective::steps_to_dist(v);
  }
  throw bp::ConfigError("objective: expected final, loss_ratio:X or dist:X, got '" + s + "'");
}

std::vector<std::uint64_t> seed_range(std::uint64_t first, int n) {
  if (n < 1) throw bp::ConfigError("seeds: need at least one");
  std::vector<std::uint64_t> out;
  for (int i = 0; i < n; ++i) out.push_back(first + static_cast<std::uint64_t>(i));
  return out;
}

void print_record(const hx::TrajectoryRecord& r) {
  std::cout << r.run_id << " steps=" << r.steps.size() << " initial_loss=" << hx::format_double(r.initial_loss)
            << " final_loss=" << hx::format_double(r.steps.empty() ? r.initial_loss : r.steps.back().loss);
  if (r.diverged) std::cout << " diverged_at=" << r.diverged_at;
  if (r.failed) std::cout << " failed: " << r.failure;
  std::cout << '\n';
}

int cmd_run(const ConfigArgs& args, const std::string& out, int n_seeds) {
  hx::RunConfig cfg = args.build();
  const auto task = hx::make_task(cfg);
  std::vector<hx::TrajectoryRecord> recs;
  for (auto s : seed_range(cfg.seed, n_seeds)) {
    cfg.seed = s;
    recs.push_back(hx::run(cfg, *task));
    print_record(recs.back());
  }
  hx::emit_metrics(recs, out);
  std::cout << "wrote " << out << " and " << hx::sidecar_path(out) << '\n';
  return 0;
}

struct SweepArgs {
  std::string lrs;
  std::string epss = "0";
  std::string beta2s = "0";
  std::string halve = "0";
  std::string objective = "final";
  bool lr_search = false;
  double lr_min = 1e-4;
  double lr_max = 10.0;
  int refinements = 2;
  int n_seeds = 3;
  int threads = 1;
  std::string out = "sweep.csv";
};

int cmd_sweep(const ConfigArgs& args, const SweepArgs& sa) {
  const hx::RunConfig base = args.build();
  hx::SweepGrid grid;
  grid.epss = parse_list(sa.epss, "eps-grid");
  grid.beta2s = parse_list(sa.beta2s, "beta2-grid");
  grid.halve_every.clear();
  for (double h : parse_list(sa.halve, "halve-every-grid")) grid.halve_every.push_back(static_cast<bp::Index>(h));
  hx::SweepOptions so;
  so.objective = parse_objective(sa.objective);
  so.keep_records = true;
  so.threads = sa.threads;
  const auto seeds = seed_range(base.seed, sa.n_seeds);

  hx::SweepResult res;
  if (sa.lr_search) {
    hx::LrSearchOptions lo{sa.lr_min, sa.lr_max, sa.refinements};
    res = hx::lr_search(base, grid, seeds, so, lo);
  } else {
    if (sa.lrs.empty()) throw bp::ConfigError("sweep: give --lr-grid or --lr-search");
    grid.lrs = parse_list(sa.lrs, "lr-grid");
    res = hx::sweep(base, grid, seeds, so);
  }

  std::vector<hx::TrajectoryRecord> all;
  const std::string summary = sa.out + ".summary.csv";
  std::ofstream sum(summary);
  if (!sum) throw bp::IoError("cannot write " + summary);
  sum << "config_hash,lr,eps,beta2,halve_every,mean_final_loss,stderr_final_loss,diverged_runs,failed_runs,"
         "objective,best\n";
  for (const auto& p : res.points) {
    const auto& c = p.config;
    sum << hx::config_hash(c) << ',' << hx::format_double(c.lr) << ',' << hx::format_double(c.eps) << ','
        << hx::format_double(c.beta2) << ',' << c.halve_every << ',' << hx::format_double(p.mean_final_loss)
        << ',' << hx::format_double(p.stderr_final_loss) << ',' << p.diverged_runs << ',' << p.failed_runs << ','
        << hx::format_double(p.objective) << ',' << (p.best ? 1 : 0) << '\n';
    all.insert(all.end(), p.records.begin(), p.records.end());
  }
  if (!sum) throw bp::IoError("write failed: " + summary);
  hx::emit_metrics(all, sa.out);

  if (res.no_stable_configuration) {
    std::cout << "no stable configuration among " << res.points.size() << " points\n";
  } else {
    const auto& b = res.best_point();
    std::cout << "best lr=" << hx::format_double(b.config.lr) << " eps=" << hx::format_double(b.config.eps)
              << " beta2=" << hx::format_double(b.config.beta2) << " halve_every=" << b.config.halve_every
              << " mean_final_loss=" << hx::format_double(b.mean_final_loss) << " +- "
              << hx::format_double(b.stderr_final_loss) << " objective=" << hx::format_double(b.objective) << '\n';
  }
  std::cout << "wrote " << sa.out << ", " << hx::sidecar_path(sa.out) << " and " << summary << '\n';
  return 0;
}

int cmd_grid(const std::string& name, hx::GridOptions opts, int n_seeds) {
  opts.seeds = seed_range(0, n_seeds);
  const auto cells = hx::grid_experiment(name, opts);
  for (const auto& c : cells) {
    std::cout << c.basis << ' ' << c.regime << ' ' << c.method << ": ";
    if (c.no_stable_configuration) {
      std::cout << "no stable configuration";
    } else {
      std::cout << "lr=" << hx::format_double(c.best.config.lr) << " final_loss="
                << hx::format_double(c.best.mean_final_loss);
    }
    std::cout << " -> " << c.metrics_path << '\n';
  }
  return 0;
}

int cmd_verify(std::uint64_t seed) {
  int failed = 0;
  for (const auto& it : hx::verify_suite(seed)) {
    std::cout << (it.pass ? "PASS " : "FAIL ") << it.name << ": " << it.detail << '\n';
    failed += it.pass ? 0 : 1;
  }
  std::cout << failed << " check(s) failed\n";
  return 0;
}

int cmd_cifar(const std::string& path, bp::Index records) {
  const auto data = bp::tasks::load_cifar10_binary(path, records);
  std::array<long, 10> counts{};
  for (auto l : data.labels) ++counts.at(static_cast<std::size_t>(l));
  std::cout << "records=" << data.x.cols() << " features=" << data.x.rows()
            << " pixel_mean=" << hx::format_double(data.x.mean()) << "\nlabel counts:";
  for (long c : counts) std::cout << ' ' << c;
  std::cout << '\n';
  return 0;
}

int cmd_calibrate() {
  const auto r = bp::theory::calibrate_divergence_constant();
  std::cout << "c_needed=" << hx::format_double(r.c_needed) << " stored=" << hx::format_double(bp::theory::kDivergenceConstant)
            << " worst P=" << hx::format_double(r.worst_p) << " theta0=" << hx::format_double(r.worst_theta0)
            << " eps=" << hx::format_double(r.worst_eps) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Eigenbasis-preconditioned optimizer experiments"};
  app.require_subcommand(1);

  ConfigArgs run_args;
  std::string run_out = "metrics.csv";
  int run_seeds = 1;
  auto* run = app.add_subcommand("run", "Run one config and write metrics");
  run_args.attach(run);
  run->add_option("-o,--out", run_out, "Metrics CSV path");
  run->add_option("--num-seeds", run_seeds, "Consecutive seeds starting at seed");

  ConfigArgs sweep_args;
  SweepArgs sa;
  auto* sweep = app.add_subcommand("sweep", "Sweep a grid over seeds");
  sweep_args.attach(sweep);
  sweep->add_option("--lr-grid", sa.lrs, "Comma-separated learning rates");
  sweep->add_option("--eps-grid", sa.epss, "Comma-separated eps values");
  sweep->add_option("--beta2-grid", sa.beta2s, "Comma-separated beta2 values");
  sweep->add_option("--halve-every-grid", sa.halve, "Comma-separated halving intervals (0: constant)");
  sweep->add_option("--objective", sa.objective, "final | loss_ratio:X | dist:X");
  sweep->add_flag("--lr-search", sa.lr_search, "Search lr over powers of 3 and refine");
  sweep->add_option("--lr-min", sa.lr_min);
  sweep->add_option("--lr-max", sa.lr_max);
  sweep->add_option("--refinements", sa.refinements);
  sweep->add_option("--num-seeds", sa.n_seeds, "Consecutive seeds starting at seed");
  sweep->add_option("--threads", sa.threads);
  sweep->add_option("-o,--out", sa.out, "Metrics CSV path");

  std::string grid_name;
  hx::GridOptions gopts;
  int grid_seeds = 2;
  auto* grid = app.add_subcommand("grid", "Basis x batch-size grid for Adam, GN^-1 and GN^-1/2");
  grid->add_option("name", grid_name, "teacher|parity|staircase|quadratic|logistic")->required();
  grid->add_option("--out-dir", gopts.out_dir);
  grid->add_option("--num-seeds", grid_seeds);
  grid->add_option("--steps", gopts.steps, "0: task default");
  grid->add_option("--task-seed", gopts.task_seed);
  grid->add_option("--threads", gopts.threads);
  grid->add_option("--lr-min", gopts.lr.lr_min);
  grid->add_option("--lr-max", gopts.lr.lr_max);
  grid->add_option("--refinements", gopts.lr.refinements);

  std::uint64_t verify_seed = 0;
  auto* verify = app.add_subcommand("verify", "Closed-form and Monte-Carlo theory checks");
  verify->add_option("--seed", verify_seed);

  std::string cifar_path;
  bp::Index cifar_records = -1;
  auto* cifar = app.add_subcommand("cifar", "Load a CIFAR-10 binary batch and print a summary");
  cifar->add_option("path", cifar_path, "data_batch_N.bin")->required();
  cifar->add_option("--records", cifar_records, "-1: all");

  auto* calibrate = app.add_subcommand("calibrate", "Recompute the divergence-threshold constant");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(run_args, run_out, run_seeds);
    if (*sweep) return cmd_sweep(sweep_args, sa);
    if (*grid) return cmd_grid(grid_name, gopts, grid_seeds);
    if (*verify) return cmd_verify(verify_seed);
    if (*cifar) return cmd_cifar(cifar_path, cifar_records);
    if (*calibrate) return cmd_calibrate();
  } catch (const bp::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const bp::IoError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return 3;
  } catch (const bp::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
