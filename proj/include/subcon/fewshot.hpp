#ifndef SUBCON_FEWSHOT_HPP
#define SUBCON_FEWSHOT_HPP

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "subcon/autodiff.hpp"
#include "subcon/connectivity.hpp"
#include "subcon/encoder.hpp"
#include "subcon/graph.hpp"

namespace subcon {

/// One N-way K-shot task on novel classes. Support and query are laid out
/// class-major: entries [i*K, (i+1)*K) of `support` belong to classes[i].
struct Episode {
  std::vector<ClassId> classes;
  std::vector<NodeId> support;
  std::vector<NodeId> query;
  std::size_t kshot = 0;
  std::size_t qsize = 0;

  /// Position of the class of support/query entry `k` within `classes`.
  std::size_t support_label(std::size_t k) const { return k / kshot; }
  std::size_t query_label(std::size_t k) const { return k / qsize; }
};

std::vector<Episode> sample_episodes(const Graph& g, const ClassSplit& split, std::size_t nway,
                                     std::size_t kshot, std::size_t qsize, std::size_t count,
                                     std::uint64_t seed);

struct LogRegConfig {
  /// Objective: mean cross-entropy + l2 / (2n) * |W|^2 (bias unpenalized).
  double l2 = 1.0;
  std::size_t max_iterations = 500;
  /// Stop once the max-abs gradient entry falls below this.
  double tolerance = 1e-6;
};

/// Multinomial logistic regression over embeddings.
struct LinearClassifier {
  Tensor weight;  // N x F
  Tensor bias;    // 1 x N
  double l2 = 1.0;
  std::size_t iterations = 0;
  bool converged = false;

  /// Arg-max class per row; ties go to the lower index.
  std::vector<std::size_t> predict(const Tensor& x) const;
};

/// Full-batch gradient descent with step 1/L. Encoder state is not touched;
/// the only input is the embedding matrix.
LinearClassifier finetune(const Tensor& x, std::span<const std::size_t> labels,
                          std::size_t num_classes, const LogRegConfig& config = {});

double accuracy(std::span<const std::size_t> predicted, std::span<const std::size_t> truth);

struct EvalProtocol {
  std::size_t nway = 5;
  std::size_t kshot = 5;
  std::size_t qsize = 10;
  std::size_t episodes = 50;
  std::size_t seeds = 10;
  std::uint64_t seed = 0;
  LogRegConfig logreg;
  std::size_t threads = 1;
};

struct EpisodeRecord {
  std::size_t seed_index = 0;
  std::size_t episode = 0;
  std::vector<ClassId> classes;
  double accuracy = 0.0;
};

struct EvalResult {
  double mean = 0.0;
  /// Standard deviation of per-episode accuracy.
  double std = 0.0;
  /// Half-width of the normal-approximation 95% interval of the mean.
  double ci95 = 0.0;
  std::vector<double> seed_means;
  std::vector<EpisodeRecord> records;
  std::size_t nonconverged = 0;
};

/// Maps node ids to embedding rows (one row per id, same order).
using EmbedFn = std::function<Tensor(std::span<const NodeId>)>;

/// Runs the protocol with an arbitrary embedding provider.
EvalResult evaluate_with(const Graph& g, const ClassSplit& split, const EmbedFn& embed,
                         const EvalProtocol& protocol);

/// Frozen-encoder evaluation: centric-node embeddings of each node's view.
EvalResult evaluate(const Graph& g, const ClassSplit& split, const EncoderParams& encoder,
                    const SubgraphSampler& subgraphs, const EvalProtocol& protocol);

/// Embedding provider backed by an encoder and subgraph sampler, memoizing
/// rows per node.
EmbedFn encoder_embedding(const EncoderParams& encoder, const SubgraphSampler& subgraphs,
                          std::size_t threads = 1);

nlohmann::ordered_json to_json(const EvalResult& result, const EvalProtocol& protocol);

// ---------------------------------------------------------------------------
// Clustering quality.

struct KMeansResult {
  std::vector<std::size_t> assignment;
  Tensor centroids;
  double inertia = 0.0;
};

/// Lloyd's algorithm from k-means++ seeds; best of `restarts` by inertia.
KMeansResult kmeans(const Tensor& x, std::size_t k, std::uint64_t seed, std::size_t restarts = 10,
                    std::size_t max_iterations = 300);

/// Mutual information normalized by the arithmetic mean of the entropies.
double normalized_mutual_info(std::span<const std::size_t> truth,
                              std::span<const std::size_t> predicted);
double adjusted_rand_index(std::span<const std::size_t> truth,
                           std::span<const std::size_t> predicted);

struct ClusterMetrics {
  double nmi = 0.0;
  double ari = 0.0;
};

ClusterMetrics cluster_metrics(const Tensor& embeddings, std::span<const std::size_t> labels,
                               std::size_t k, std::uint64_t seed = 0);

}  // namespace subcon

#endif  // SUBCON_FEWSHOT_HPP
