#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>

#include <fmt/format.h>

#include "msmgn/cli.hpp"

namespace msmgn {

namespace {

std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

double parse_real(const std::string& key, const std::string& text) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(v)) {
    throw ConfigError(fmt::format("{}: '{}' is not a number", key, text));
  }
  return v;
}

template <class T>
T parse_integral(const std::string& key, const std::string& text) {
  T v{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError(fmt::format("{}: '{}' is not an integer", key, text));
  }
  return v;
}

}  // namespace

const std::vector<ConfigKey>& RunConfig::keys() {
  static const std::vector<ConfigKey> table{
      {"output_dir", "out", "directory receiving every output of a command"},
      {"seed", "0", "master seed for scenarios, initialization and training"},
      {"pde.mu", "0.001", "diffusivity"},
      {"pde.dt", "0.01", "time between stored frames"},
      {"pde.steps", "200", "stored steps per trajectory (T)"},
      {"pde.inflow_stripes", "2", "inflow profile sin^2(pi * stripes * y / height)"},
      {"pde.cfl", "0.5", "substep size as a fraction of the explicit stability bound"},
      {"dataset.dir", "", "dataset read by train and analyze; empty means <output_dir>/dataset"},
      {"dataset.scenarios", "20", "number of scenarios generated by gen"},
      {"dataset.labels", "native", "native or high_accuracy"},
      {"dataset.refine", "4", "refinement factor of high-accuracy labels"},
      {"dataset.radius_lo", "0.02", "obstacle radius range"},
      {"dataset.radius_hi", "0.08", ""},
      {"dataset.cx_lo", "0.15", "obstacle center x range"},
      {"dataset.cx_hi", "0.4", ""},
      {"dataset.cy_lo", "0.1", "obstacle center y range"},
      {"dataset.cy_hi", "0.3", ""},
      {"dataset.u_lo", "0.2", "mean inflow speed range"},
      {"dataset.u_hi", "12", ""},
      {"dataset.edge_min_lo", "0.001", "mesh edge_min range (log-uniform)"},
      {"dataset.edge_min_hi", "0.01", ""},
      {"model.schedule", "p=15H (U=0,D=0)", "processor schedule"},
      {"model.latent", "128", "latent width"},
      {"model.hidden", "128", "hidden width of every MLP"},
      {"model.normalizer_accumulations", "1000", "samples fed to the normalizers"},
      {"train.steps", "10000", "optimization steps"},
      {"train.learning_rate", "0.0001", "initial Adam learning rate"},
      {"train.lr_decay", "0.1", "final learning rate relative to the initial one"},
      {"train.batch", "1", "graphs per step"},
      {"train.noise_std", "0.02", "input noise in normalized units"},
      {"train.labels", "native", "native or high_accuracy"},
      {"train.log_every", "100", "history interval"},
      {"train.coarse_edge_min", "0.01", "resolution of the coarse level"},
      {"train.val_fraction", "0.1", "fraction of scenarios held out for validation"},
      {"train.checkpoint", "", "checkpoint read by eval, analyze and bench; empty means <output_dir>/checkpoint.bin"},
      {"train.resume", "", "training checkpoint to continue from"},
      {"eval.count", "6", "test-set resolutions"},
      {"eval.edge_min_lo", "0.004", "test-set edge_min range (log-uniform)"},
      {"eval.edge_min_hi", "0.02", ""},
      {"eval.ref_edge_min", "0.002", "resolution of the reference simulation"},
      {"eval.steps", "50", "reference trajectory length"},
      {"eval.solver", "true", "include the classical solver"},
      {"eval.model", "true", "include the trained model when a checkpoint exists"},
      {"eval.name", "model", "model column label"},
      {"analyze.step", "10", "frame whose one-step error is analyzed"},
      {"analyze.weights", "unit", "Laplacian weights: unit or inverse_length"},
      {"analyze.cap", "4000", "largest mesh analyzed"},
      {"analyze.curve", "true", "also write the convergence curve"},
      {"bench.resolutions", "0.004,0.003,0.002", "fine resolutions timed"},
      {"bench.repeats", "5", "median over this many runs"},
  };
  return table;
}

RunConfig::RunConfig() {
  for (const ConfigKey& k : keys()) values_[k.name] = k.default_value;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError(fmt::format("unknown config key '{}'", key));
  it->second = value;
}

void RunConfig::assign(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw ParseError(fmt::format("expected key=value, got '{}'", assignment));
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void RunConfig::load(std::istream& in, const std::string& source) {
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    const std::string body = trim(std::string_view(line).substr(0, hash));
    if (body.empty()) continue;
    if (body.find('=') == std::string::npos) throw ParseError(fmt::format("{}:{}: expected key = value", source, number));
    try {
      assign(body);
    } catch (const ConfigError& e) {
      throw ConfigError(fmt::format("{}:{}: {}", source, number, e.what()));
    }
  }
}

void RunConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  load(in, path);
}

const std::string& RunConfig::text(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError(fmt::format("unknown config key '{}'", key));
  return it->second;
}

double RunConfig::real(const std::string& key) const { return parse_real(key, text(key)); }

int RunConfig::integer(const std::string& key) const { return parse_integral<int>(key, text(key)); }

std::uint64_t RunConfig::unsigned_integer(const std::string& key) const {
  return parse_integral<std::uint64_t>(key, text(key));
}

bool RunConfig::flag(const std::string& key) const {
  const std::string& v = text(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(fmt::format("{}: '{}' is not a boolean", key, v));
}

std::vector<double> RunConfig::reals(const std::string& key) const {
  std::vector<double> out;
  const std::string& v = text(key);
  std::size_t start = 0;
  while (start <= v.size()) {
    const auto comma = std::min(v.find(',', start), v.size());
    out.push_back(parse_real(key, trim(std::string_view(v).substr(start, comma - start))));
    start = comma + 1;
  }
  return out;
}

std::string RunConfig::dataset_dir() const {
  const std::string& d = text("dataset.dir");
  return d.empty() ? (std::filesystem::path(output_dir()) / "dataset").string() : d;
}

std::string RunConfig::checkpoint_path() const {
  const std::string& c = text("train.checkpoint");
  return c.empty() ? (std::filesystem::path(output_dir()) / "checkpoint.bin").string() : c;
}

PdeConfig RunConfig::pde() const {
  PdeConfig p;
  p.mu = real("pde.mu");
  p.dt = real("pde.dt");
  p.steps = integer("pde.steps");
  p.inflow_stripes = integer("pde.inflow_stripes");
  p.cfl = real("pde.cfl");
  p.validate();
  return p;
}

ScenarioRanges RunConfig::ranges() const {
  ScenarioRanges r;
  r.radius_lo = real("dataset.radius_lo");
  r.radius_hi = real("dataset.radius_hi");
  r.cx_lo = real("dataset.cx_lo");
  r.cx_hi = real("dataset.cx_hi");
  r.cy_lo = real("dataset.cy_lo");
  r.cy_hi = real("dataset.cy_hi");
  r.u_lo = real("dataset.u_lo");
  r.u_hi = real("dataset.u_hi");
  r.edge_min_lo = real("dataset.edge_min_lo");
  r.edge_min_hi = real("dataset.edge_min_hi");
  r.validate();
  return r;
}

ModelConfig RunConfig::model() const {
  ModelConfig m;
  m.schedule = text("model.schedule");
  m.latent = integer("model.latent");
  m.hidden = integer("model.hidden");
  m.normalizer_accumulations = integer("model.normalizer_accumulations");
  parse_schedule(m.schedule);
  if (m.latent < 1 || m.hidden < 1) throw ConfigError("model widths must be positive");
  return m;
}

TrainConfig RunConfig::train() const {
  TrainConfig t;
  t.steps = integer("train.steps");
  t.learning_rate = real("train.learning_rate");
  t.lr_decay = real("train.lr_decay");
  t.batch = integer("train.batch");
  t.noise_std = real("train.noise_std");
  t.labels = parse_label_mode(text("train.labels"));
  t.log_every = integer("train.log_every");
  t.coarse_edge_min = real("train.coarse_edge_min");
  t.seed = unsigned_integer("seed");
  t.validate();
  return t;
}

void RunConfig::write(std::ostream& out) const {
  for (const ConfigKey& k : keys()) out << k.name << " = " << values_.at(k.name) << '\n';
}

}  // namespace msmgn
