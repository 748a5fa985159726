#include "basisprec/harness.hpp"

#include <fstream>
#include <map>
#include <sstream>

namespace basisprec::harness {

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(line);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

void write_or_throw(std::ofstream& out, const std::string& path) {
  out.flush();
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace

std::string sidecar_path(const std::string& csv_path) { return csv_path + ".runs.txt"; }

void emit_metrics(const std::vector<TrajectoryRecord>& records, const std::string& path) {
  std::ofstream csv(path, std::ios::binary | std::ios::trunc);
  if (!csv) throw IoError("cannot open metrics file for writing: " + path);
  const std::string side_path = sidecar_path(path);
  std::ofstream side(side_path, std::ios::binary | std::ios::trunc);
  if (!side) throw IoError("cannot open sidecar for writing: " + side_path);

  csv << kMetricsHeader << '\n';
  for (const auto& r : records) {
    const std::string prefix = r.run_id + "," + std::to_string(r.seed()) + ",";
    for (const auto& s : r.steps) {
      csv << prefix << s.step << ',' << format_double(s.loss) << ',' << format_double(s.grad_norm) << ','
          << format_double(s.dist_to_opt) << ',' << format_double(s.lr) << '\n';
    }
    side << "[run " << r.run_id << "]\n"
         << "config_hash=" << r.config_hash << '\n'
         << "initial_loss=" << format_double(r.initial_loss) << '\n'
         << "initial_dist=" << format_double(r.initial_dist) << '\n'
         << "diverged=" << (r.diverged ? 1 : 0) << '\n'
         << "diverged_at=" << r.diverged_at << '\n'
         << "failed=" << (r.failed ? 1 : 0) << '\n'
         << "failure=" << r.failure << '\n'
         << "stopped_early=" << (r.stopped_early ? 1 : 0) << '\n'
         << serialize(r.config) << '\n';
  }
  write_or_throw(csv, path);
  write_or_throw(side, side_path);
}

std::vector<TrajectoryRecord> read_metrics(const std::string& path) {
  const std::string side_path = sidecar_path(path);
  std::ifstream side(side_path, std::ios::binary);
  if (!side) throw IoError("cannot open sidecar: " + side_path);

  std::vector<TrajectoryRecord> records;
  std::map<std::string, std::size_t> by_id;
  std::string line;
  std::string config_text;
  auto finish = [&]() {
    if (records.empty()) return;
    records.back().config = parse_config(config_text);
    config_text.clear();
  };
  while (std::getline(side, line)) {
    if (line.rfind("[run ", 0) == 0 && line.back() == ']') {
      finish();
      TrajectoryRecord r;
      r.run_id = line.substr(5, line.size() - 6);
      by_id[r.run_id] = records.size();
      records.push_back(std::move(r));
      continue;
    }
    if (line.empty()) continue;
    if (records.empty()) throw IoError(side_path + ": entry before the first [run] header");
    const auto eq = line.find('=');
    const std::string key = line.substr(0, eq);
    const std::string val = eq == std::string::npos ? "" : line.substr(eq + 1);
    auto& r = records.back();
    if (key == "config_hash") r.config_hash = val;
    else if (key == "initial_loss") r.initial_loss = parse_double(val, key);
    else if (key == "initial_dist") r.initial_dist = parse_double(val, key);
    else if (key == "diverged") r.diverged = val == "1";
    else if (key == "diverged_at") r.diverged_at = static_cast<Index>(parse_double(val, key));
    else if (key == "failed") r.failed = val == "1";
    else if (key == "failure") r.failure = val;
    else if (key == "stopped_early") r.stopped_early = val == "1";
    else config_text += line + "\n";
  }
  finish();

  std::ifstream csv(path, std::ios::binary);
  if (!csv) throw IoError("cannot open metrics file: " + path);
  if (!std::getline(csv, line) || line != kMetricsHeader) {
    throw IoError(path + ": missing or unexpected header");
  }
  Index lineno = 1;
  while (std::getline(csv, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 7) throw IoError(path + ":" + std::to_string(lineno) + ": expected 7 fields");
    const auto it = by_id.find(f[0]);
    if (it == by_id.end()) throw IoError(path + ":" + std::to_string(lineno) + ": unknown run " + f[0]);
    StepMetrics s;
    s.step = static_cast<Index>(parse_double(f[2], "step"));
    s.loss = parse_double(f[3], "loss");
    s.grad_norm = parse_double(f[4], "grad_norm");
    s.dist_to_opt = parse_double(f[5], "dist_to_opt");
    s.lr = parse_double(f[6], "lr");
    records[it->second].steps.push_back(s);
  }
  return records;
}

}  // namespace basisprec::harness
