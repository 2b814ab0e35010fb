#include <fmt/format.h>

#include "msmgn/processor.hpp"

namespace msmgn {
namespace {

using nn::MlpPart;
using nn::Tape;
using nn::Var;

// Shared body of all four operators: edges i -> j carry sender latents into
// receiver nodes.
std::pair<Var, Var> message_pass(Tape& tape, Var sender_nodes, Var receiver_nodes, Var edges,
                                 const IndexList& senders, const IndexList& receivers, const IndexList& order,
                                 ProcessorBlock& block) {
  const MlpPart edge_in[] = {{edges, nullptr}, {sender_nodes, senders}, {receiver_nodes, receivers}};
  Var new_edges = nn::add(edges, block.edge.apply(tape, edge_in));
  Var aggregate = nn::scatter_add_rows(new_edges, receivers, receiver_nodes.rows(), order);
  const MlpPart node_in[] = {{receiver_nodes, nullptr}, {aggregate, nullptr}};
  Var new_nodes = nn::add(receiver_nodes, block.node.apply(tape, node_in));
  return {new_nodes, new_edges};
}

EncodedGraph same_level_update(Tape& tape, const EncodedGraph& g, ProcessorBlock& block) {
  const auto [nodes, edges] =
      message_pass(tape, g.nodes, g.nodes, g.edges, g.geometry->senders, g.geometry->receivers,
                   g.geometry->order, block);
  return {nodes, edges, g.geometry};
}

void check_transfer(const TransferGeometry& t, Var source, Var target) {
  if (static_cast<std::size_t>(source.rows()) != t.source_nodes ||
      static_cast<std::size_t>(target.rows()) != t.target_nodes) {
    throw ShapeError(fmt::format("transfer graph expects {} -> {} nodes, got {} -> {}", t.source_nodes,
                                 t.target_nodes, source.rows(), target.rows()));
  }
}

const char* kind_name(StepKind k) {
  switch (k) {
    case StepKind::H: return "H";
    case StepKind::L: return "L";
    case StepKind::D: return "D";
    case StepKind::U: return "U";
  }
  return "?";
}

}  // namespace

EncodedGraph high_res_update(Tape& tape, const EncodedGraph& g, ProcessorBlock& block) {
  return same_level_update(tape, g, block);
}

EncodedGraph low_res_update(Tape& tape, const EncodedGraph& g, ProcessorBlock& block) {
  return same_level_update(tape, g, block);
}

TransferUpdate downsample_update(Tape& tape, Var fine_nodes, Var coarse_nodes, Var edges,
                                 const TransferGeometry& down, ProcessorBlock& block) {
  check_transfer(down, fine_nodes, coarse_nodes);
  const auto [nodes, new_edges] = message_pass(tape, fine_nodes, coarse_nodes, edges, down.senders, down.receivers, down.order, block);
  return {nodes, new_edges};
}

TransferUpdate upsample_update(Tape& tape, Var coarse_nodes, Var fine_nodes, Var edges, const TransferGeometry& up,
                               ProcessorBlock& block) {
  check_transfer(up, coarse_nodes, fine_nodes);
  const auto [nodes, new_edges] = message_pass(tape, coarse_nodes, fine_nodes, edges, up.senders, up.receivers, up.order, block);
  return {nodes, new_edges};
}

Model::Model(const ModelConfig& config, std::uint64_t seed)
    : config_(config), schedule_(parse_schedule(config.schedule)) {
  if (config.latent <= 0 || config.hidden <= 0 || config.state_width <= 0 || config.static_width < 0) {
    throw ConfigError("model widths must be positive");
  }
  std::mt19937_64 rng(mix_seed(seed, 0));
  const int d = config.latent, h = config.hidden;
  const int fine_in = kNodeKindCount + config.state_width + config.static_width;
  fine_node_enc_ = nn::Mlp("enc.fine_node", fine_in, h, d, true, rng);
  fine_edge_enc_ = nn::Mlp("enc.fine_edge", kEdgeFeatureWidth, h, d, true, rng);
  if (schedule_.multiscale()) {
    coarse_node_enc_ = nn::Mlp("enc.coarse_node", kNodeKindCount, h, d, true, rng);
    coarse_edge_enc_ = nn::Mlp("enc.coarse_edge", kEdgeFeatureWidth, h, d, true, rng);
    down_edge_enc_ = nn::Mlp("enc.down_edge", kEdgeFeatureWidth, h, d, true, rng);
    up_edge_enc_ = nn::Mlp("enc.up_edge", kEdgeFeatureWidth, h, d, true, rng);
  }
  for (std::size_t k = 0; k < schedule_.steps.size(); ++k) {
    const StepKind kind = schedule_.steps[k];
    const std::string prefix = fmt::format("proc.{}.{}", k, kind_name(kind));
    ProcessorBlock b;
    b.kind = kind;
    b.edge = nn::Mlp(prefix + ".edge", 3 * d, h, d, true, rng);
    b.node = nn::Mlp(prefix + ".node", 2 * d, h, d, true, rng);
    blocks_.push_back(std::move(b));
  }
  decoder_ = nn::Mlp("dec", d, h, config.state_width, false, rng);
  const auto acc = config.normalizer_accumulations;
  input_norm_ = nn::Normalizer(config.state_width + config.static_width, acc);
  output_norm_ = nn::Normalizer(config.state_width, acc);
  fine_edge_norm_ = nn::Normalizer(kEdgeFeatureWidth, acc);
  coarse_edge_norm_ = nn::Normalizer(kEdgeFeatureWidth, acc);
  down_edge_norm_ = nn::Normalizer(kEdgeFeatureWidth, acc);
  up_edge_norm_ = nn::Normalizer(kEdgeFeatureWidth, acc);
}

Var Model::normalized_delta(Tape& tape, const MultiGraph& graph, Var normalized_fields) {
  if (schedule_.multiscale() && !graph.has_coarse()) {
    throw ConfigError(fmt::format("schedule '{}' needs a coarse level", schedule_.text));
  }
  EncodedGraph fine = encode_fine(tape, graph.fine, normalized_fields, fine_edge_norm_, fine_node_enc_, fine_edge_enc_);
  EncodedGraph coarse;
  Var down_edges, up_edges;
  if (schedule_.multiscale()) {
    coarse = encode_coarse(tape, *graph.coarse, coarse_edge_norm_, coarse_node_enc_, coarse_edge_enc_);
    down_edges = encode_transfer(tape, graph.down, down_edge_norm_, down_edge_enc_);
    up_edges = encode_transfer(tape, graph.up, up_edge_norm_, up_edge_enc_);
  }
  for (ProcessorBlock& block : blocks_) {
    switch (block.kind) {
      case StepKind::H:
        fine = high_res_update(tape, fine, block);
        break;
      case StepKind::L:
        coarse = low_res_update(tape, coarse, block);
        break;
      case StepKind::D: {
        const TransferUpdate u = downsample_update(tape, fine.nodes, coarse.nodes, down_edges, graph.down, block);
        coarse.nodes = u.target_nodes;
        down_edges = u.edges;
        break;
      }
      case StepKind::U: {
        const TransferUpdate u = upsample_update(tape, coarse.nodes, fine.nodes, up_edges, graph.up, block);
        fine.nodes = u.target_nodes;
        up_edges = u.edges;
        break;
      }
    }
  }
  return decoder_.apply(tape, fine.nodes);
}

Var Model::predict(Tape& tape, const MultiGraph& graph, Var state, const Matrix& statics) {
  if (state.cols() != config_.state_width || statics.cols() != config_.static_width ||
      static_cast<std::size_t>(state.rows()) != graph.fine.node_count() || statics.rows() != state.rows()) {
    throw ShapeError("predict: state/statics do not match the model widths or the fine graph");
  }
  const Var parts[] = {state, tape.constant(statics)};
  const RowVector inv_std = input_norm_.std().cwiseInverse();
  const RowVector shift = -input_norm_.mean().cwiseProduct(inv_std);
  Var fields = nn::affine_cols(nn::concat_cols(parts), inv_std, shift);
  Var delta = nn::affine_cols(normalized_delta(tape, graph, fields), output_norm_.rms(),
                              RowVector::Zero(config_.state_width));
  return nn::select_rows(nn::add(state, delta), state, graph.prescribed);
}

Matrix Model::predict(const MultiGraph& graph, const Matrix& state, const Matrix& statics) {
  Tape tape(false);
  return predict(tape, graph, tape.constant(state), statics).value();
}

Var Model::loss(Tape& tape, const MultiGraph& graph, const Matrix& state, const Matrix& statics, const Matrix& target,
                const Matrix* noise) {
  if (target.rows() != state.rows() || target.cols() != state.cols()) throw ShapeError("loss: target shape mismatch");
  Matrix input = state;
  if (noise != nullptr) {
    if (noise->rows() != state.rows() || noise->cols() != state.cols()) throw ShapeError("loss: noise shape mismatch");
    input += *noise;
  }
  Matrix raw(state.rows(), config_.state_width + config_.static_width);
  raw << input, statics;
  const RowVector inv_std = input_norm_.std().cwiseInverse();
  const RowVector shift = -input_norm_.mean().cwiseProduct(inv_std);
  Var fields = nn::affine_cols(tape.constant(std::move(raw)), inv_std, shift);
  Var predicted = normalized_delta(tape, graph, fields);
  const Matrix target_delta = (target - input).array().rowwise() / output_norm_.rms().array();
  return nn::masked_mean_square(nn::sub(predicted, tape.constant(target_delta)), graph.loss_mask);
}

void Model::update_normalizers(const MultiGraph& graph, const Matrix& state, const Matrix& statics,
                               const Matrix& target) {
  Matrix raw(state.rows(), config_.state_width + config_.static_width);
  raw << state, statics;
  input_norm_.update(raw);
  Matrix delta(0, config_.state_width);
  const Matrix full = target - state;
  std::vector<Eigen::Index> rows;
  for (std::size_t i = 0; i < graph.loss_mask->size(); ++i) {
    if ((*graph.loss_mask)[i]) rows.push_back(static_cast<Eigen::Index>(i));
  }
  delta.resize(static_cast<Eigen::Index>(rows.size()), config_.state_width);
  for (std::size_t k = 0; k < rows.size(); ++k) delta.row(static_cast<Eigen::Index>(k)) = full.row(rows[k]);
  output_norm_.update(delta);
  fine_edge_norm_.update(graph.fine.edge_features);
  if (schedule_.multiscale() && graph.has_coarse()) {
    coarse_edge_norm_.update(graph.coarse->edge_features);
    down_edge_norm_.update(graph.down.edge_features);
    up_edge_norm_.update(graph.up.edge_features);
  }
}

std::vector<nn::Mlp*> Model::mlps() {
  std::vector<nn::Mlp*> out{&fine_node_enc_, &fine_edge_enc_};
  if (schedule_.multiscale()) {
    for (nn::Mlp* m : {&coarse_node_enc_, &coarse_edge_enc_, &down_edge_enc_, &up_edge_enc_}) out.push_back(m);
  }
  for (auto& b : blocks_) {
    out.push_back(&b.edge);
    out.push_back(&b.node);
  }
  out.push_back(&decoder_);
  return out;
}

std::vector<nn::Parameter*> Model::parameters() {
  std::vector<nn::Parameter*> out;
  for (nn::Mlp* m : mlps()) {
    for (auto& p : m->parameters()) out.push_back(&p);
  }
  return out;
}

std::size_t Model::parameter_count() {
  std::size_t n = 0;
  for (const nn::Parameter* p : parameters()) n += static_cast<std::size_t>(p->value.size());
  return n;
}

void Model::zero_weights() {
  for (nn::Mlp* m : mlps()) m->zero();
}

nn::Checkpoint Model::to_checkpoint() {
  nn::Checkpoint c;
  c.meta["schedule"] = config_.schedule;
  c.meta["latent"] = std::to_string(config_.latent);
  c.meta["hidden"] = std::to_string(config_.hidden);
  c.meta["state_width"] = std::to_string(config_.state_width);
  c.meta["static_width"] = std::to_string(config_.static_width);
  c.meta["normalizer_accumulations"] = std::to_string(config_.normalizer_accumulations);
  for (const nn::Parameter* p : parameters()) c.add(p->name, p->value);
  c.add("norm.input", input_norm_.state());
  c.add("norm.output", output_norm_.state());
  c.add("norm.fine_edge", fine_edge_norm_.state());
  c.add("norm.coarse_edge", coarse_edge_norm_.state());
  c.add("norm.down_edge", down_edge_norm_.state());
  c.add("norm.up_edge", up_edge_norm_.state());
  return c;
}

Model Model::from_checkpoint(const nn::Checkpoint& c) {
  auto meta = [&](const std::string& key) {
    const auto it = c.meta.find(key);
    if (it == c.meta.end()) throw ParseError("checkpoint is missing meta key " + key);
    return it->second;
  };
  ModelConfig cfg;
  cfg.schedule = meta("schedule");
  cfg.latent = std::stoi(meta("latent"));
  cfg.hidden = std::stoi(meta("hidden"));
  cfg.state_width = std::stoi(meta("state_width"));
  cfg.static_width = std::stoi(meta("static_width"));
  cfg.normalizer_accumulations = std::stoll(meta("normalizer_accumulations"));
  Model m(cfg, 0);
  for (nn::Parameter* p : m.parameters()) {
    const Matrix& v = c.get(p->name);
    if (v.rows() != p->value.rows() || v.cols() != p->value.cols()) {
      throw ParseError(fmt::format("checkpoint block {} has shape {}x{}, expected {}x{}", p->name, v.rows(), v.cols(),
                                   p->value.rows(), p->value.cols()));
    }
    p->value = v;
  }
  m.input_norm_ = nn::Normalizer::from_state(c.get("norm.input"));
  m.output_norm_ = nn::Normalizer::from_state(c.get("norm.output"));
  m.fine_edge_norm_ = nn::Normalizer::from_state(c.get("norm.fine_edge"));
  m.coarse_edge_norm_ = nn::Normalizer::from_state(c.get("norm.coarse_edge"));
  m.down_edge_norm_ = nn::Normalizer::from_state(c.get("norm.down_edge"));
  m.up_edge_norm_ = nn::Normalizer::from_state(c.get("norm.up_edge"));
  return m;
}

}  // namespace msmgn
