#ifndef SUBCON_GRAPH_HPP
#define SUBCON_GRAPH_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace subcon {

using NodeId = std::uint64_t;
using ClassId = std::uint32_t;

/// Raised by the GFB1 reader. `offset()` is the byte position of the
/// offending field.
class GraphFormatError : public std::runtime_error {
 public:
  GraphFormatError(const std::string& what, std::uint64_t offset);
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

/// Immutable undirected, unweighted, attributed graph in CSR form.
///
/// Rows are sorted, duplicate-free, symmetric and contain no self-loops.
/// Features are kept in f32 (the storage precision); every consumer widens
/// to f64 on slicing.
class Graph {
 public:
  Graph() = default;

  /// Builds a canonical graph from an arbitrary edge list. Edges may be
  /// given in one or both directions; duplicates and self-loops are dropped.
  static Graph from_edges(std::size_t num_nodes,
                          std::span<const std::pair<NodeId, NodeId>> edges,
                          std::size_t feature_dim, std::vector<float> features,
                          std::vector<ClassId> labels, std::size_t num_classes);

  /// Builds from raw CSR arrays, canonicalizing (sort, dedupe, strip
  /// self-loops, symmetrize).
  static Graph from_csr(std::size_t num_nodes, std::vector<std::uint64_t> offsets,
                        std::vector<NodeId> columns, std::size_t feature_dim,
                        std::vector<float> features, std::vector<ClassId> labels,
                        std::size_t num_classes);

  std::size_t num_nodes() const { return offsets_.empty() ? 0 : offsets_.size() - 1; }
  /// Stored (directed) adjacency entries; twice the undirected edge count.
  std::size_t num_directed_edges() const { return columns_.size(); }
  std::size_t num_edges() const { return columns_.size() / 2; }
  std::size_t feature_dim() const { return feature_dim_; }
  std::size_t num_classes() const { return num_classes_; }

  std::size_t degree(NodeId v) const { return offsets_[v + 1] - offsets_[v]; }
  std::span<const NodeId> neighbors(NodeId v) const {
    return {columns_.data() + offsets_[v], columns_.data() + offsets_[v + 1]};
  }
  bool has_edge(NodeId u, NodeId v) const;

  std::span<const float> features(NodeId v) const {
    return {features_.data() + v * feature_dim_, feature_dim_};
  }
  ClassId label(NodeId v) const { return labels_[v]; }

  std::span<const std::uint64_t> offsets() const { return offsets_; }
  std::span<const NodeId> columns() const { return columns_; }
  std::span<const float> feature_matrix() const { return features_; }
  std::span<const ClassId> labels() const { return labels_; }

  std::vector<std::string> class_names;

 private:
  std::vector<std::uint64_t> offsets_;
  std::vector<NodeId> columns_;
  std::vector<float> features_;
  std::vector<ClassId> labels_;
  std::size_t feature_dim_ = 0;
  std::size_t num_classes_ = 0;
};

/// Disjoint partition of the label space into pretraining and test classes.
struct ClassSplit {
  std::vector<ClassId> base_classes;
  std::vector<ClassId> novel_classes;

  /// Throws std::invalid_argument unless the two sets are disjoint and
  /// together cover every label that occurs in `g`.
  void validate(const Graph& g) const;
  bool is_base(ClassId c) const;
  bool is_novel(ClassId c) const;
};

Graph load_graph(const std::filesystem::path& path);
Graph parse_graph(std::span<const std::uint8_t> bytes);
void save_graph(const Graph& g, const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_graph(const Graph& g);

/// 64-bit FNV-1a of the canonical serialization. Used to key score caches.
std::uint64_t graph_hash(const Graph& g);

ClassSplit load_split(const std::filesystem::path& path);
void save_split(const ClassSplit& split, const std::filesystem::path& path);
/// `<graph path>.split.json`
std::filesystem::path default_split_path(const std::filesystem::path& graph_path);

/// 2|E| / M.
double average_degree(const Graph& g);

/// Per-class node lists, indexed by class id.
std::vector<std::vector<NodeId>> nodes_by_class(const Graph& g);

/// Connected-component id per node (BFS order, ids ascend with the smallest
/// member).
std::vector<std::size_t> connected_components(const Graph& g);

// ---------------------------------------------------------------------------
// Synthetic stochastic block model graphs.

struct SyntheticSpec {
  std::vector<std::size_t> blocks;   // nodes per class
  double p_in = 0.1;
  double p_out = 0.005;
  std::size_t feature_dim = 16;
  double feature_noise = 1.0;
  /// Scale of the per-class mean vectors.
  double feature_signal = 1.0;
  /// Dimensions carrying class signal; 0 means all of them. Remaining
  /// dimensions are pure noise.
  std::size_t signal_dim = 0;
  std::uint64_t seed = 0;

  void validate() const;
};

Graph generate_sbm(const SyntheticSpec& spec);

}  // namespace subcon

#endif  // SUBCON_GRAPH_HPP
