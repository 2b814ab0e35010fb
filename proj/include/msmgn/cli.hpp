#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "msmgn/dataset.hpp"
#include "msmgn/processor.hpp"
#include "msmgn/solver.hpp"
#include "msmgn/training.hpp"

namespace msmgn {

struct ConfigKey {
  std::string name;
  std::string default_value;
  std::string doc;
};

/// key=value run configuration. Every key has a default; unknown keys are
/// rejected. Later assignments override earlier ones.
class RunConfig {
 public:
  RunConfig();

  static const std::vector<ConfigKey>& keys();

  /// Lines "key = value"; '#' starts a comment. Throws ParseError with the line number.
  void load(std::istream& in, const std::string& source = "<config>");
  void load_file(const std::string& path);
  void set(const std::string& key, const std::string& value);
  /// "key=value" override.
  void assign(std::string_view assignment);

  const std::string& text(const std::string& key) const;
  double real(const std::string& key) const;
  int integer(const std::string& key) const;
  std::uint64_t unsigned_integer(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::vector<double> reals(const std::string& key) const;

  std::string output_dir() const { return text("output_dir"); }
  /// dataset.dir, or <output_dir>/dataset when empty.
  std::string dataset_dir() const;
  /// train.checkpoint, or <output_dir>/checkpoint.bin when empty.
  std::string checkpoint_path() const;

  PdeConfig pde() const;
  ScenarioRanges ranges() const;
  ModelConfig model() const;
  TrainConfig train() const;

  /// Every key in table order, "key = value".
  void write(std::ostream& out) const;

 private:
  std::map<std::string, std::string> values_;
};

/// Exit codes: 0 success, 1 error, 2 invariant violation.
inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitInvariant = 2;

/// Dataset under dataset_dir(): scenarios, meshes, trajectories and, with
/// dataset.labels = high_accuracy, interpolated labels.
int cmd_gen(const RunConfig& config, std::ostream& log);
/// Trains on the dataset; writes the checkpoint and history.csv. Resumes when
/// train.resume names a training checkpoint.
int cmd_train(const RunConfig& config, std::ostream& log);
/// EvalReport CSV on the fixed-obstacle test set (eval.csv).
int cmd_eval(const RunConfig& config, std::ostream& log);
/// Error spectra per scenario and the convergence curve under analysis/.
int cmd_analyze(const RunConfig& config, std::ostream& log);
/// Per-step-kind timings at bench.resolutions (timing.csv).
int cmd_bench(const RunConfig& config, std::ostream& log);

}  // namespace msmgn
