#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "msmgn/nn/tape.hpp"

namespace msmgn::nn {

/// One block of first-layer input columns. When `rows` is set the block's
/// projection is computed per source row and then gathered, which is how edge
/// MLPs read node latents without materializing the concatenation.
struct MlpPart {
  Var x;
  std::shared_ptr<const std::vector<int>> rows;
};

/// Two hidden ReLU layers and a linear output, optionally followed by layer
/// normalization. Residual connections are added by the caller.
class Mlp {
 public:
  static constexpr int kHiddenLayers = 2;

  Mlp() = default;
  /// He-normal hidden weights, 1/fan_in output weights, zero biases, unit LN gain.
  Mlp(std::string name, int in, int hidden, int out, bool layer_norm, std::mt19937_64& rng);

  Var apply(Tape& tape, Var x);
  /// Same map applied to the column-wise concatenation of the (gathered) parts.
  Var apply(Tape& tape, std::span<const MlpPart> parts);
  /// Convenience forward pass without gradients.
  Matrix forward(const Matrix& x);

  int in_width() const { return in_; }
  int out_width() const { return out_; }
  bool has_layer_norm() const { return layer_norm_; }
  const std::string& name() const { return name_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  /// Sets every weight and bias to zero (layer-norm gain and offset included).
  void zero();

 private:
  std::string name_;
  int in_ = 0;
  int out_ = 0;
  bool layer_norm_ = false;
  std::vector<Parameter> params_;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam over a fixed list of parameters; moments are keyed by position.
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Parameter*> params, AdamConfig config = {});

  void step(double lr);
  void zero_grad();
  std::int64_t steps() const { return t_; }
  std::vector<Matrix>& first_moments() { return m_; }
  std::vector<Matrix>& second_moments() { return v_; }
  void set_steps(std::int64_t t) { t_ = t; }

 private:
  std::vector<Parameter*> params_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  AdamConfig config_;
  std::int64_t t_ = 0;
};

/// Running per-channel mean and variance. Accumulation stops after
/// `max_accumulations` update calls.
class Normalizer {
 public:
  static constexpr double kStdFloor = 1e-8;

  Normalizer() = default;
  explicit Normalizer(int width, std::int64_t max_accumulations = 1'000'000);

  /// Rows are samples, columns channels.
  void update(const Matrix& batch);
  Matrix apply(const Matrix& x) const;
  Matrix inverse(const Matrix& x) const;

  RowVector mean() const;
  RowVector std() const;
  /// Root mean square per channel, sqrt(mean^2 + var), floored like std().
  RowVector rms() const;
  int width() const { return width_; }
  double count() const { return count_; }
  std::int64_t accumulations() const { return accumulations_; }
  std::int64_t max_accumulations() const { return max_accumulations_; }

  /// Flat state for checkpoints: [count, accumulations, max, mean..., m2...].
  Matrix state() const;
  static Normalizer from_state(const Matrix& state);

 private:
  int width_ = 0;
  std::int64_t max_accumulations_ = 0;
  std::int64_t accumulations_ = 0;
  double count_ = 0.0;
  RowVector mean_;
  RowVector m2_;
};

/// Named matrices plus string metadata; see docs/formats.md for the byte layout.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, Matrix>> blocks;

  void add(std::string name, Matrix value) { blocks.emplace_back(std::move(name), std::move(value)); }
  const Matrix& get(const std::string& name) const;
  bool has(const std::string& name) const;
};

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace msmgn::nn
