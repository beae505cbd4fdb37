#ifndef SUBCON_CONNECTIVITY_HPP
#define SUBCON_CONNECTIVITY_HPP

#include <cstdint>
#include <filesystem>
#include <mutex>
#include <shared_mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "subcon/graph.hpp"

namespace subcon {

enum class ScoreMethod { nad, ppr };

std::string to_string(ScoreMethod m);
ScoreMethod parse_score_method(const std::string& s);

/// What nad_iterate does with nodes that have no neighbours.
enum class IsolatedPolicy {
  keep_value,  // u_i is left at its initial value
  error,
};

struct NadParams {
  double eta = 0.5;
  std::size_t iterations = 50;
  /// Independent random value vectors; distances are averaged across them.
  std::size_t vectors = 5;
  double epsilon = 0.01;
  std::uint64_t seed = 0;
  IsolatedPolicy isolated = IsolatedPolicy::keep_value;
};

struct PprParams {
  double phi = 0.15;
  /// L1 change between successive iterates at which power iteration stops.
  double tolerance = 1e-12;
  std::size_t max_iterations = 10000;
  /// Debug: use phi * (I - (1 - phi) A D^-1) without the inverse.
  bool literal_formula = false;
};

class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, double residual)
      : std::runtime_error(what), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

/// Relaxation u <- (1 - eta) u + eta * (neighbour mean of u), applied
/// `iterations` times from `init`.
std::vector<double> nad_iterate(const Graph& g, std::vector<double> init, double eta,
                                std::size_t iterations,
                                IsolatedPolicy isolated = IsolatedPolicy::keep_value);

/// Same, from values drawn uniformly in (0, 1) with `seed`.
std::vector<double> nad_iterate(const Graph& g, double eta, std::size_t iterations,
                                std::uint64_t seed,
                                IsolatedPolicy isolated = IsolatedPolicy::keep_value);

/// 1 / (mean_k |u_k[i] - u_k[j]| + epsilon) for every i, before finalization.
std::vector<double> nad_raw_scores(std::span<const std::vector<double>> value_vectors,
                                   NodeId j, double epsilon);

/// Personalized PageRank of seed `j`: the fixed point of
/// s = phi e_j + (1 - phi) A D^-1 s. Sums to 1. An isolated seed keeps all
/// its mass.
std::vector<double> ppr_vector(const Graph& g, NodeId j, const PprParams& params,
                               std::size_t* iterations_used = nullptr);

/// Scales the off-diagonal entries of column `j` to sum to 1 - gamma and sets
/// the diagonal to gamma. A column with no off-diagonal mass keeps zeros.
void finalize_column(std::span<double> column, NodeId j, double gamma);

/// Connectivity score provider. Immutable once built; `column` is pure and
/// may be called concurrently.
class ScoreSource {
 public:
  /// Runs the relaxation for every value vector up front.
  static ScoreSource nad(const Graph& g, const NadParams& params, double gamma = 0.3);
  static ScoreSource ppr(const PprParams& params, double gamma = 0.3);

  ScoreMethod method() const { return method_; }
  double gamma() const { return gamma_; }
  const NadParams& nad_params() const { return nad_; }
  const PprParams& ppr_params() const { return ppr_; }
  std::span<const std::vector<double>> value_vectors() const { return values_; }

  std::vector<double> raw_column(const Graph& g, NodeId j) const;
  std::vector<double> column(const Graph& g, NodeId j) const;

  /// Parameters as a canonical JSON string (stored in score caches).
  std::string params_json() const;
  static ScoreSource from_params_json(const Graph& g, const std::string& json);

 private:
  ScoreMethod method_ = ScoreMethod::nad;
  double gamma_ = 0.3;
  NadParams nad_;
  PprParams ppr_;
  std::vector<std::vector<double>> values_;
};

std::vector<double> nad_scores(const ScoreSource& source, NodeId j);
std::vector<double> ppr_scores(const ScoreSource& source, const Graph& g, NodeId j);

/// Ids of the `alpha` highest scores other than `exclude`, descending, ties
/// broken by ascending id.
std::vector<NodeId> top_rank(std::span<const double> scores, std::size_t alpha,
                             NodeId exclude);

/// A centric node with its top-alpha neighbourhood (the augmented view).
struct SubgraphView {
  NodeId centric = 0;
  std::vector<NodeId> members;     // centric first
  std::vector<double> adjacency;   // n x n, self-looped, symmetric-normalized
  std::vector<double> features;    // n x d
  std::vector<double> weights;     // n, sums to 1
  std::size_t feature_dim = 0;

  std::size_t size() const { return members.size(); }
};

/// Assembles a view from a precomputed ranking. `top_scores` are finalized
/// scores of `top_ids`; the centric node is weighted by gamma.
SubgraphView make_subgraph_view(const Graph& g, NodeId j, std::span<const NodeId> top_ids,
                                std::span<const double> top_scores, double gamma);

SubgraphView build_subgraph(const Graph& g, const ScoreSource& source, NodeId j,
                            std::size_t alpha);

struct TopList {
  std::vector<NodeId> ids;
  std::vector<double> scores;
};

/// Builds subgraph views with a lazily filled per-node ranking cache.
/// Lookups take a shared lock; inserts are serialized.
class SubgraphSampler {
 public:
  SubgraphSampler(const Graph& g, ScoreSource source, std::size_t alpha);

  const Graph& graph() const { return *graph_; }
  const ScoreSource& source() const { return source_; }
  std::size_t alpha() const { return alpha_; }

  TopList top(NodeId j) const;
  SubgraphView view(NodeId j) const;
  std::vector<SubgraphView> views(std::span<const NodeId> nodes, std::size_t threads = 1) const;

  void precompute(std::span<const NodeId> nodes, std::size_t threads = 1) const;
  std::size_t cached_count() const;

  /// Writes every cached ranking (ascending node id).
  void save_cache(const std::filesystem::path& path) const;
  /// Merges rankings from a cache file. Throws if the file was produced
  /// for another graph, method, gamma or parameter set, or stores fewer
  /// than alpha neighbours.
  void load_cache(const std::filesystem::path& path);

 private:
  const Graph* graph_;
  ScoreSource source_;
  std::size_t alpha_;
  mutable std::shared_mutex mu_;
  mutable std::unordered_map<NodeId, TopList> cache_;
};

struct ScoreCacheHeader {
  std::uint64_t graph_hash = 0;
  ScoreMethod method = ScoreMethod::nad;
  double gamma = 0.3;
  std::uint64_t alpha_max = 0;
  std::string params_json;
  std::uint64_t records = 0;
};

ScoreCacheHeader read_score_cache_header(const std::filesystem::path& path);

}  // namespace subcon

#endif  // SUBCON_CONNECTIVITY_HPP
