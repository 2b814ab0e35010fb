#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "msmgn/mesh.hpp"
#include "msmgn/nn/layers.hpp"

namespace msmgn {

using IndexList = std::shared_ptr<const std::vector<int>>;

/// Raw edge feature width: [dx, dy, |d|] with d = x_sender - x_receiver.
inline constexpr int kEdgeFeatureWidth = 3;

/// One level's topology: nodes, tags and directed edges with raw features.
struct GraphGeometry {
  std::vector<Vec2> positions;
  std::vector<NodeKind> kinds;
  IndexList senders;
  IndexList receivers;
  /// Edge visiting order for aggregation: sorted by (receiver, sender), so
  /// sums do not depend on how edges are stored.
  IndexList order;
  Matrix edge_features;  // edges x 3

  std::size_t node_count() const { return positions.size(); }
  std::size_t edge_count() const { return senders ? senders->size() : 0; }
};

/// Permutation of edges sorted by (receiver, sender, storage index).
IndexList aggregation_order(const std::vector<int>& senders, const std::vector<int>& receivers);

/// Raw features of the directed edges s -> r over the given positions.
Matrix edge_features(std::span<const Vec2> sender_pos, std::span<const Vec2> receiver_pos,
                     const std::vector<int>& senders, const std::vector<int>& receivers);

/// Each undirected mesh edge (i < j) becomes i -> j followed by j -> i.
GraphGeometry mesh_graph(const TriMesh& mesh);

/// One-hot node kinds, N x kNodeKindCount.
Matrix node_kind_onehot(std::span<const NodeKind> kinds);

/// Uniform lattice over the channel. Lattice points strictly inside the
/// obstacle are excluded from the node set.
struct UniformGrid {
  Vec2 origin;
  double dx = 0.0;
  double dy = 0.0;
  int nx = 0;  // cells along x
  int ny = 0;
  std::vector<int> node_of_point;  // (ny + 1) * (nx + 1), -1 when excluded
  GraphGeometry graph;
};

/// Lattice with cells of size close to `spacing` (at least 2 x 2 cells).
UniformGrid make_grid(const ChannelDomain& domain, double spacing);

enum class TransferDirection { down, up };

/// Cross-level directed edges. Senders index the source level, receivers the
/// target level. Edges are grouped by source node in ascending order.
struct TransferGeometry {
  TransferDirection direction = TransferDirection::down;
  std::size_t source_nodes = 0;
  std::size_t target_nodes = 0;
  IndexList senders;
  IndexList receivers;
  IndexList order;
  Matrix edge_features;
  /// Source nodes that received no edges (grid variant only).
  std::vector<int> dropped;

  std::size_t edge_count() const { return senders ? senders->size() : 0; }
};

/// For each source point, locate its triangle in `target` and emit three
/// edges source -> corner in corner order.
TransferGeometry build_transfer(std::span<const Vec2> source, const TriMesh& target,
                                TransferDirection direction);

/// Grid variant. Down: each fine node connects to the non-excluded corners of
/// its lattice cell. Up: the reverse of the down edges (corner -> fine node).
/// Fine nodes whose four corners are all excluded are dropped with a warning.
TransferGeometry build_grid_transfer(const TriMesh& fine, const UniformGrid& grid,
                                     TransferDirection direction);

/// Everything a processor pass needs besides weights: the fine graph, and when
/// a coarse level is present, the coarse graph with its transfer graphs.
struct MultiGraph {
  GraphGeometry fine;
  std::optional<GraphGeometry> coarse;
  TransferGeometry down;
  TransferGeometry up;
  /// Rows of the fine graph with prescribed values.
  std::shared_ptr<const std::vector<bool>> prescribed;
  /// Rows of the fine graph that enter the loss (not prescribed).
  std::shared_ptr<const std::vector<bool>> loss_mask;

  bool has_coarse() const { return coarse.has_value(); }
};

/// Single-level graph (MGN).
MultiGraph make_multigraph(const TriMesh& fine);
/// Two levels from a coarse mesh of the same domain.
MultiGraph make_multigraph(const TriMesh& fine, const TriMesh& coarse);
/// Two levels with a uniform lattice as the coarse level.
MultiGraph make_multigraph(const TriMesh& fine, const UniformGrid& grid);

/// Latent graph on a tape.
struct EncodedGraph {
  nn::Var nodes;
  nn::Var edges;
  const GraphGeometry* geometry = nullptr;
};

/// Node latent = MLP(one-hot kind + normalized fields), edge latent =
/// MLP(normalized raw edge features).
EncodedGraph encode_fine(nn::Tape& tape, const GraphGeometry& g, nn::Var normalized_fields,
                         const nn::Normalizer& edge_norm, nn::Mlp& node_encoder, nn::Mlp& edge_encoder);
/// As encode_fine with node features reduced to the one-hot kind.
EncodedGraph encode_coarse(nn::Tape& tape, const GraphGeometry& g, const nn::Normalizer& edge_norm,
                           nn::Mlp& node_encoder, nn::Mlp& edge_encoder);
/// Transfer-edge latents from normalized raw features.
nn::Var encode_transfer(nn::Tape& tape, const TransferGeometry& t, const nn::Normalizer& edge_norm,
                        nn::Mlp& edge_encoder);

}  // namespace msmgn
