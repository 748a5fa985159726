#pragma once

// Experiment description as plain key=value text. Keys mirror the
// command-line flags (with '-' in place of '_').

#include "basisprec/common.hpp"
#include "basisprec/preconditioner.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace basisprec::harness {

/// Batch size 0 means "full": the population quantity where the task has
/// one, otherwise a fresh batch of 4096 samples.
inline constexpr Index kFullBatch = 0;

struct RunConfig {
  // task
  std::string task = "quadratic";  // quadratic|block|power_half|power_one|logistic|parity|staircase|teacher|cifar
  Index dim = 10;
  Index d_block = 50;
  Index parity_k = 6;
  Index hidden = 128;
  Index teacher_hidden = 32;
  double powerlaw_c = 0.6;
  double label_prob = 0.75;
  double spectrum_lo = 1.0;
  double spectrum_hi = 100.0;
  Index search_trials = 10000;
  double search_margin = 1.0;
  std::string cifar_path;
  Index cifar_records = -1;
  std::uint64_t task_seed = 0;

  // optimizer
  precond::BasisKind basis = precond::BasisKind::Identity;
  double alpha = 1.0;
  Index refresh = 1;
  std::string precond = "adam";  // adam|gn|gd
  double power = -0.5;
  double beta2 = 0.0;
  double eps = 0.0;
  double lr = 0.1;
  Index halve_every = 0;  // 0: constant schedule
  Index batch = kFullBatch;
  Index gn_batch = kFullBatch;

  // run
  Index steps = 100;
  std::uint64_t seed = 0;
  double diverge_factor = 1e8;
  double stop_loss_ratio = 0.0;  // stop once loss <= ratio * initial loss; 0 disables
  double stop_dist = 0.0;        // stop once dist_to_opt <= value; 0 disables

  precond::LrSchedule schedule() const;
  precond::OptimizerConfig optimizer() const;

  /// Throws ConfigError on out-of-range values.
  void validate() const;
};

/// Sets one key from text. Throws ConfigError on unknown keys or bad values.
void set_key(RunConfig& cfg, const std::string& key, const std::string& value);

/// All keys in canonical order.
const std::vector<std::string>& config_keys();

std::string get_key(const RunConfig& cfg, const std::string& key);

/// "key=value" lines in canonical order.
std::string serialize(const RunConfig& cfg);

/// Parses key=value lines; '#' starts a comment, blank lines are skipped.
RunConfig parse_config(const std::string& text, RunConfig base = {});

RunConfig load_config_file(const std::string& path, RunConfig base = {});

/// FNV-1a of everything except the seed, as 16 hex digits.
std::string config_hash(const RunConfig& cfg);

/// Key identifying the task instance (task parameters and task seed).
std::string task_key(const RunConfig& cfg);

std::string basis_name(precond::BasisKind k);
precond::BasisKind parse_basis(const std::string& s);

/// Shortest round-trip decimal text.
std::string format_double(double x);
double parse_double(const std::string& s, const std::string& what);

}  // namespace basisprec::harness
