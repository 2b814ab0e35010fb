#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "msmgn/graphs.hpp"
#include "msmgn/nn/layers.hpp"

namespace msmgn {

enum class StepKind : std::uint8_t { H, L, D, U };

char to_char(StepKind k);

/// Expanded processor schedule, e.g. "p=1H 11L 1H (U=1,D=1)" ->
/// H D L*11 U H. D and U each count as one message passing step.
struct Schedule {
  std::string text;
  std::vector<StepKind> steps;
  int h_count = 0;
  int l_count = 0;
  int d_count = 0;
  int u_count = 0;

  int total_mps() const { return static_cast<int>(steps.size()); }
  bool multiscale() const { return d_count > 0; }
  /// Canonical text "p=aH bL ... (U=u,D=d)".
  std::string canonical() const;
};

/// Grammar: p=<int>(H|L) [<int>(H|L)]... (U=<int>,D=<int>), whitespace
/// allowed around tokens and U/D in either order. Throws ParseError.
Schedule parse_schedule(std::string_view text);

/// Edge and node MLP for one processor step.
struct ProcessorBlock {
  StepKind kind = StepKind::H;
  nn::Mlp edge;
  nn::Mlp node;
};

/// e' = e + f_E(e, v_s, v_r); v'_r = v_r + f_V(v_r, sum of e' over incoming edges),
/// summed in edge order. Used for H and L steps.
EncodedGraph high_res_update(nn::Tape& tape, const EncodedGraph& g, ProcessorBlock& block);
EncodedGraph low_res_update(nn::Tape& tape, const EncodedGraph& g, ProcessorBlock& block);

struct TransferUpdate {
  nn::Var target_nodes;
  nn::Var edges;
};

/// Cross-level update: edges carry source latents into target nodes. Source
/// latents are read, never written.
TransferUpdate downsample_update(nn::Tape& tape, nn::Var fine_nodes, nn::Var coarse_nodes, nn::Var edges,
                                 const TransferGeometry& down, ProcessorBlock& block);
TransferUpdate upsample_update(nn::Tape& tape, nn::Var coarse_nodes, nn::Var fine_nodes, nn::Var edges,
                               const TransferGeometry& up, ProcessorBlock& block);

struct ModelConfig {
  int latent = 128;
  int hidden = 128;
  /// Width of the evolving field (1 for the passive scalar).
  int state_width = 1;
  /// Width of static per-node inputs (the advecting velocity).
  int static_width = 2;
  std::string schedule = "p=15H (U=0,D=0)";
  std::int64_t normalizer_accumulations = 1000;
};

/// Encoders, one processor block per schedule step, decoder and normalizers.
class Model {
 public:
  Model() = default;
  Model(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const Schedule& schedule() const { return schedule_; }

  /// Normalized per-node delta predicted from normalized node fields.
  nn::Var normalized_delta(nn::Tape& tape, const MultiGraph& graph, nn::Var normalized_fields);

  /// Next state on the tape (differentiable w.r.t. `state`). Prescribed
  /// nodes keep their input value.
  nn::Var predict(nn::Tape& tape, const MultiGraph& graph, nn::Var state, const Matrix& statics);
  /// Inference without gradients.
  Matrix predict(const MultiGraph& graph, const Matrix& state, const Matrix& statics);

  /// Mean squared error of normalized deltas over loss-mask nodes. `noise`
  /// (same shape as state, raw units) perturbs the input; the target delta is
  /// taken from the perturbed state.
  nn::Var loss(nn::Tape& tape, const MultiGraph& graph, const Matrix& state, const Matrix& statics,
               const Matrix& target, const Matrix* noise = nullptr);

  /// Feeds one sample into every normalizer (stops after the configured budget).
  void update_normalizers(const MultiGraph& graph, const Matrix& state, const Matrix& statics,
                          const Matrix& target);

  std::vector<nn::Parameter*> parameters();
  std::size_t parameter_count();
  /// Every MLP weight, bias and layer-norm parameter set to zero.
  void zero_weights();

  nn::Normalizer& input_normalizer() { return input_norm_; }
  nn::Normalizer& output_normalizer() { return output_norm_; }

  nn::Checkpoint to_checkpoint();
  static Model from_checkpoint(const nn::Checkpoint& ckpt);

 private:
  std::vector<nn::Mlp*> mlps();

  ModelConfig config_;
  Schedule schedule_;
  nn::Mlp fine_node_enc_, fine_edge_enc_;
  nn::Mlp coarse_node_enc_, coarse_edge_enc_, down_edge_enc_, up_edge_enc_;
  std::vector<ProcessorBlock> blocks_;
  nn::Mlp decoder_;
  nn::Normalizer input_norm_, output_norm_;
  nn::Normalizer fine_edge_norm_, coarse_edge_norm_, down_edge_norm_, up_edge_norm_;
};

}  // namespace msmgn
