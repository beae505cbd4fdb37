#ifndef SUBCON_CONTRAST_HPP
#define SUBCON_CONTRAST_HPP

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "subcon/autodiff.hpp"
#include "subcon/encoder.hpp"
#include "subcon/graph.hpp"

namespace subcon {

/// Centric nodes for one pretraining step.
struct BatchPlan {
  std::vector<NodeId> nodes;
  /// Nodes per base class; 0 for a non-balanced plan.
  std::size_t quota = 0;
  std::vector<std::string> warnings;
};

/// Draws exactly `quota` = floor(B / |C_base|) centric nodes per base class
/// (without replacement inside a batch unless the class is too small).
class BalancedSampler {
 public:
  BalancedSampler(const Graph& g, const ClassSplit& split, std::size_t batch_size);

  std::size_t quota() const { return quota_; }
  std::size_t effective_batch() const { return quota_ * pools_.size(); }
  BatchPlan sample(std::mt19937_64& rng) const;

 private:
  std::vector<ClassId> classes_;
  std::vector<std::vector<NodeId>> pools_;
  std::size_t quota_;
};

/// Draws B centric nodes uniformly from all base-class nodes, so the batch
/// follows the natural class frequencies.
class UniformSampler {
 public:
  UniformSampler(const Graph& g, const ClassSplit& split, std::size_t batch_size);

  std::size_t effective_batch() const { return batch_; }
  BatchPlan sample(std::mt19937_64& rng) const;

 private:
  std::vector<NodeId> pool_;
  std::size_t batch_;
};

BatchPlan balanced_sample(const Graph& g, const ClassSplit& split, std::size_t batch_size,
                          std::uint64_t seed);

/// beta / sqrt(average degree).
double temperature(double beta, const Graph& g);

/// 2B representations, subgraph readouts first, then the centric rows in the
/// same order. labels[b] == labels[b + B].
struct DuoBatch {
  Var h;
  std::vector<ClassId> labels;
  double tau = 1.0;

  std::size_t pairs() const { return labels.size() / 2; }
};

/// With `normalize_readout` the sigmoid readouts are L2-normalized like the
/// centric rows; otherwise they enter the dot products as produced.
DuoBatch make_duo_batch(const BatchEmbedding& emb, std::span<const ClassId> labels, double tau,
                        bool normalize_readout = true);

/// Supervised contrastive loss summed over all 2B anchors; positives are
/// every other row with the anchor's label.
Var gsupcon_loss(const DuoBatch& batch);

/// Same form with the paired view as the only positive.
Var simclr_loss(const DuoBatch& batch);

/// sum_b [ lse_{a != b}(h_b . h_a / tau) - sum_p w_bp h_b . h_p / tau ] for
/// a constant positive-weight matrix whose non-zero rows sum to 1.
Var contrastive_loss(Var h, const Tensor& positive_weights, double tau);

/// Row-normalized positive weights: w_bp = 1/|P(b)| for p in P(b).
Tensor supervised_positive_weights(std::span<const ClassId> labels);
Tensor paired_positive_weights(std::size_t pairs);

/// Linear classifier over the base classes used by cross-entropy
/// pretraining. Columns follow `classes`.
struct LinearHead {
  Tensor weight;  // F x C
  Tensor bias;    // 1 x C
  std::vector<ClassId> classes;

  static LinearHead init(std::size_t input_dim, std::vector<ClassId> classes,
                         std::uint64_t seed);
};

/// Mean softmax cross-entropy of (z W + b) against labels. Throws if a
/// label is not one of `classes`.
Var ce_pretrain_loss(Var z, std::span<const ClassId> labels,
                     std::span<const ClassId> classes, Var weight, Var bias);

}  // namespace subcon

#endif  // SUBCON_CONTRAST_HPP
