#include "basisprec/config.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

namespace basisprec::harness {

std::string format_double(double x) {
  std::array<char, 64> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), x);
  return std::string(buf.data(), res.ptr);
}

double parse_double(const std::string& s, const std::string& what) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (!s.empty() && *first == '+') ++first;
  const auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc() || res.ptr != last) {
    throw ConfigError(what + ": cannot parse '" + s + "' as a number");
  }
  return v;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

Index parse_index(const std::string& s, const std::string& what) {
  long long v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ConfigError(what + ": cannot parse '" + s + "' as an integer");
  }
  return static_cast<Index>(v);
}

std::uint64_t parse_u64(const std::string& s, const std::string& what) {
  std::uint64_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ConfigError(what + ": cannot parse '" + s + "' as a seed");
  }
  return v;
}

Index parse_batch(const std::string& s, const std::string& what) {
  if (s == "full") return kFullBatch;
  const Index b = parse_index(s, what);
  if (b < 1) throw ConfigError(what + ": batch must be >= 1 or 'full'");
  return b;
}

std::string batch_text(Index b) { return b == kFullBatch ? "full" : std::to_string(b); }

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define BP_DOUBLE(name)                                                                    \
  Field {                                                                                  \
    #name, [](const RunConfig& c) { return format_double(c.name); },                      \
        [](RunConfig& c, const std::string& v) { c.name = parse_double(v, #name); }        \
  }
#define BP_INDEX(name)                                                                     \
  Field {                                                                                  \
    #name, [](const RunConfig& c) { return std::to_string(c.name); },                     \
        [](RunConfig& c, const std::string& v) { c.name = parse_index(v, #name); }         \
  }
#define BP_STRING(name)                                                                    \
  Field {                                                                                  \
    #name, [](const RunConfig& c) { return c.name; },                                      \
        [](RunConfig& c, const std::string& v) { c.name = v; }                             \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      BP_STRING(task),
      BP_INDEX(dim),
      BP_INDEX(d_block),
      BP_INDEX(parity_k),
      BP_INDEX(hidden),
      BP_INDEX(teacher_hidden),
      BP_DOUBLE(powerlaw_c),
      BP_DOUBLE(label_prob),
      BP_DOUBLE(spectrum_lo),
      BP_DOUBLE(spectrum_hi),
      BP_INDEX(search_trials),
      BP_DOUBLE(search_margin),
      BP_STRING(cifar_path),
      BP_INDEX(cifar_records),
      Field{"task_seed", [](const RunConfig& c) { return std::to_string(c.task_seed); },
            [](RunConfig& c, const std::string& v) { c.task_seed = parse_u64(v, "task_seed"); }},
      Field{"basis", [](const RunConfig& c) { return basis_name(c.basis); },
            [](RunConfig& c, const std::string& v) { c.basis = parse_basis(v); }},
      BP_DOUBLE(alpha),
      BP_INDEX(refresh),
      BP_STRING(precond),
      BP_DOUBLE(power),
      BP_DOUBLE(beta2),
      BP_DOUBLE(eps),
      BP_DOUBLE(lr),
      BP_INDEX(halve_every),
      Field{"batch", [](const RunConfig& c) { return batch_text(c.batch); },
            [](RunConfig& c, const std::string& v) { c.batch = parse_batch(v, "batch"); }},
      Field{"gn_batch", [](const RunConfig& c) { return batch_text(c.gn_batch); },
            [](RunConfig& c, const std::string& v) { c.gn_batch = parse_batch(v, "gn_batch"); }},
      BP_INDEX(steps),
      Field{"seed", [](const RunConfig& c) { return std::to_string(c.seed); },
            [](RunConfig& c, const std::string& v) { c.seed = parse_u64(v, "seed"); }},
      BP_DOUBLE(diverge_factor),
      BP_DOUBLE(stop_loss_ratio),
      BP_DOUBLE(stop_dist),
  };
  return f;
}

#undef BP_DOUBLE
#undef BP_INDEX
#undef BP_STRING

const Field& find_field(const std::string& key) {
  std::string k = key;
  for (char& ch : k) {
    if (ch == '-') ch = '_';
  }
  for (const auto& f : fields()) {
    if (f.key == k) return f;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex16(std::uint64_t h) {
  std::ostringstream os;
  os.width(16);
  os.fill('0');
  os << std::hex << h;
  return os.str();
}

}  // namespace

std::string basis_name(precond::BasisKind k) {
  switch (k) {
    case precond::BasisKind::Identity: return "identity";
    case precond::BasisKind::Eigen: return "eigen";
    case precond::BasisKind::KronEigen: return "kron";
    case precond::BasisKind::Interpolated: return "interpolated";
  }
  return "identity";
}

precond::BasisKind parse_basis(const std::string& s) {
  if (s == "identity" || s == "id") return precond::BasisKind::Identity;
  if (s == "eigen") return precond::BasisKind::Eigen;
  if (s == "kron") return precond::BasisKind::KronEigen;
  if (s == "interpolated") return precond::BasisKind::Interpolated;
  throw ConfigError("basis: expected identity|eigen|kron|interpolated, got '" + s + "'");
}

precond::LrSchedule RunConfig::schedule() const {
  return halve_every > 0 ? precond::LrSchedule::step_decay(lr, halve_every)
                         : precond::LrSchedule::constant(lr);
}

precond::OptimizerConfig RunConfig::optimizer() const {
  precond::OptimizerConfig o;
  o.basis = basis;
  o.alpha = alpha;
  o.refresh_interval = refresh;
  o.eps = eps;
  if (precond == "adam") {
    o.scaling = precond::ScalingKind::Adam;
    o.beta2 = beta2;
  } else if (precond == "gn") {
    o.scaling = precond::ScalingKind::GaussNewton;
    o.power = power;
  } else {
    o.scaling = precond::ScalingKind::Identity;
  }
  return o;
}

void RunConfig::validate() const {
  static const std::vector<std::string> tasks = {"quadratic", "block",  "power_half",
                                                 "power_one", "logistic", "parity",
                                                 "staircase", "teacher", "cifar"};
  if (std::find(tasks.begin(), tasks.end(), task) == tasks.end()) {
    throw ConfigError("task: unknown task '" + task + "'");
  }
  if (precond != "adam" && precond != "gn" && precond != "gd") {
    throw ConfigError("precond: expected adam|gn|gd, got '" + precond + "'");
  }
  if (power != -1.0 && power != -0.5) {
    throw ConfigError("power: must be -1 or -0.5");
  }
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr: must be positive");
  if (!(eps >= 0.0) || !std::isfinite(eps)) throw ConfigError("eps: must be nonnegative");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("beta2: must lie in [0, 1)");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha: must lie in [0, 1]");
  if (steps < 1) throw ConfigError("steps: must be at least 1");
  if (refresh < 1) throw ConfigError("refresh: must be at least 1");
  if (halve_every < 0) throw ConfigError("halve_every: must be nonnegative");
  if (batch < 0 || gn_batch < 0) throw ConfigError("batch: must be >= 1 or full");
  if (dim < 1 || hidden < 1 || teacher_hidden < 1) throw ConfigError("dimensions must be positive");
  if (!(diverge_factor > 1.0)) throw ConfigError("diverge_factor: must exceed 1");
  if (task == "cifar" && cifar_path.empty()) throw ConfigError("cifar_path: required for task=cifar");
}

void set_key(RunConfig& cfg, const std::string& key, const std::string& value) {
  find_field(key).set(cfg, trim(value));
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& f : fields()) k.push_back(f.key);
    return k;
  }();
  return keys;
}

std::string get_key(const RunConfig& cfg, const std::string& key) { return find_field(key).get(cfg); }

std::string serialize(const RunConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) out += f.key + "=" + f.get(cfg) + "\n";
  return out;
}

RunConfig parse_config(const std::string& text, RunConfig base) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
    }
    try {
      set_key(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return base;
}

RunConfig load_config_file(const std::string& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str(), std::move(base));
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

std::string config_hash(const RunConfig& cfg) {
  RunConfig c = cfg;
  c.seed = 0;
  return hex16(fnv1a(serialize(c)));
}

std::string task_key(const RunConfig& cfg) {
  static const std::vector<std::string> keys = {
      "task",         "dim",           "d_block",     "parity_k",      "hidden",
      "teacher_hidden", "powerlaw_c",  "label_prob",  "spectrum_lo",   "spectrum_hi",
      "search_trials", "search_margin", "cifar_path", "cifar_records", "task_seed"};
  std::string out;
  for (const auto& k : keys) out += k + "=" + get_key(cfg, k) + ";";
  return out;
}

}  // namespace basisprec::harness
