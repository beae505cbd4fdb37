#include "subcon/contrast.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace subcon {

namespace {

// k distinct draws from pool: a partial Fisher-Yates shuffle over a virtual
// index array, touching O(k) entries.
std::vector<NodeId> draw_without_replacement(std::span<const NodeId> pool, std::size_t k,
                                             std::mt19937_64& rng) {
  std::unordered_map<std::size_t, std::size_t> moved;
  auto at = [&](std::size_t i) {
    auto it = moved.find(i);
    return it == moved.end() ? i : it->second;
  };
  std::vector<NodeId> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    const std::size_t j = pick(rng);
    const std::size_t vi = at(i), vj = at(j);
    moved[j] = vi;
    moved[i] = vj;
    out.push_back(pool[vj]);
  }
  return out;
}

}  // namespace

BalancedSampler::BalancedSampler(const Graph& g, const ClassSplit& split,
                                 std::size_t batch_size) {
  if (split.base_classes.empty()) throw std::invalid_argument("no base classes to sample from");
  classes_ = split.base_classes;
  const auto by_class = nodes_by_class(g);
  for (ClassId c : classes_) {
    if (c >= by_class.size() || by_class[c].empty()) {
      throw std::invalid_argument("base class " + std::to_string(c) + " has no nodes");
    }
    pools_.push_back(by_class[c]);
  }
  quota_ = batch_size / classes_.size();
  if (quota_ == 0) {
    throw std::invalid_argument("batch size " + std::to_string(batch_size) +
                                " is smaller than the number of base classes");
  }
}

BatchPlan BalancedSampler::sample(std::mt19937_64& rng) const {
  BatchPlan plan;
  plan.quota = quota_;
  plan.nodes.reserve(effective_batch());
  for (std::size_t c = 0; c < pools_.size(); ++c) {
    const auto& pool = pools_[c];
    if (pool.size() >= quota_) {
      const auto picked = draw_without_replacement(pool, quota_, rng);
      plan.nodes.insert(plan.nodes.end(), picked.begin(), picked.end());
    } else {
      plan.warnings.push_back("base class " + std::to_string(classes_[c]) + " has " +
                              std::to_string(pool.size()) + " nodes, fewer than the quota " +
                              std::to_string(quota_) + "; sampling with replacement");
      std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
      for (std::size_t i = 0; i < quota_; ++i) plan.nodes.push_back(pool[pick(rng)]);
    }
  }
  return plan;
}

UniformSampler::UniformSampler(const Graph& g, const ClassSplit& split, std::size_t batch_size) {
  for (NodeId v = 0; v < g.num_nodes(); ++v) {
    if (split.is_base(g.label(v))) pool_.push_back(v);
  }
  if (pool_.empty()) throw std::invalid_argument("no base-class nodes to sample from");
  batch_ = std::min(batch_size, pool_.size());
  if (batch_ == 0) throw std::invalid_argument("batch size must be positive");
}

BatchPlan UniformSampler::sample(std::mt19937_64& rng) const {
  BatchPlan plan;
  plan.nodes = draw_without_replacement(pool_, batch_, rng);
  return plan;
}

BatchPlan balanced_sample(const Graph& g, const ClassSplit& split, std::size_t batch_size,
                          std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return BalancedSampler(g, split, batch_size).sample(rng);
}

double temperature(double beta, const Graph& g) {
  if (!(beta > 0.0)) throw std::invalid_argument("temperature beta must be positive");
  const double deg = average_degree(g);
  if (deg == 0.0) throw std::invalid_argument("temperature undefined for a graph with no edges");
  return beta / std::sqrt(deg);
}

// ---------------------------------------------------------------------------

DuoBatch make_duo_batch(const BatchEmbedding& emb, std::span<const ClassId> labels, double tau,
                        bool normalize_readout) {
  if (labels.size() != emb.centric.rows()) {
    throw ShapeError("make_duo_batch: label count differs from batch size");
  }
  if (!(tau > 0.0)) throw std::invalid_argument("temperature must be positive");
  const Var readouts = normalize_readout ? ad::l2_normalize_rows(emb.readouts) : emb.readouts;
  const Var parts[] = {readouts, emb.centric};
  DuoBatch batch;
  batch.h = ad::concat_rows(parts);
  batch.labels.assign(labels.begin(), labels.end());
  batch.labels.insert(batch.labels.end(), labels.begin(), labels.end());
  batch.tau = tau;
  return batch;
}

Tensor supervised_positive_weights(std::span<const ClassId> labels) {
  const std::size_t n = labels.size();
  Tensor w(n, n);
  for (std::size_t b = 0; b < n; ++b) {
    std::size_t count = 0;
    for (std::size_t p = 0; p < n; ++p) count += (p != b && labels[p] == labels[b]);
    for (std::size_t p = 0; p < n; ++p) {
      if (p != b && labels[p] == labels[b]) w(b, p) = 1.0 / static_cast<double>(count);
    }
  }
  return w;
}

Tensor paired_positive_weights(std::size_t pairs) {
  Tensor w(2 * pairs, 2 * pairs);
  for (std::size_t b = 0; b < pairs; ++b) {
    w(b, b + pairs) = 1.0;
    w(b + pairs, b) = 1.0;
  }
  return w;
}

Var contrastive_loss(Var h, const Tensor& positive_weights, double tau) {
  const std::size_t n = h.rows();
  if (positive_weights.rows() != n || positive_weights.cols() != n) {
    throw ShapeError("contrastive_loss: positive weights must be n x n");
  }
  if (n < 2) throw ShapeError("contrastive_loss needs at least two rows");
  Tensor denominator(n, n, 1.0);
  for (std::size_t i = 0; i < n; ++i) denominator(i, i) = 0.0;
  auto logits = ad::scale(ad::dot_products_matrix(h), 1.0 / tau);
  auto lse = ad::masked_log_sum_exp(logits, denominator);
  return ad::sub(ad::sum(lse), ad::weighted_sum(logits, positive_weights));
}

Var gsupcon_loss(const DuoBatch& batch) {
  return contrastive_loss(batch.h, supervised_positive_weights(batch.labels), batch.tau);
}

Var simclr_loss(const DuoBatch& batch) {
  return contrastive_loss(batch.h, paired_positive_weights(batch.pairs()), batch.tau);
}

// ---------------------------------------------------------------------------

LinearHead LinearHead::init(std::size_t input_dim, std::vector<ClassId> classes,
                            std::uint64_t seed) {
  LinearHead head;
  head.classes = std::move(classes);
  const std::size_t c = head.classes.size();
  head.weight = Tensor(input_dim, c);
  head.bias = Tensor(1, c);
  const double bound = std::sqrt(6.0 / static_cast<double>(input_dim + c));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(-bound, bound);
  for (auto& w : head.weight.data()) w = unif(rng);
  return head;
}

Var ce_pretrain_loss(Var z, std::span<const ClassId> labels, std::span<const ClassId> classes,
                     Var weight, Var bias) {
  const std::size_t n = z.rows();
  if (labels.size() != n) throw ShapeError("ce_pretrain_loss: label count differs from rows");
  if (weight.cols() != classes.size()) {
    throw ShapeError("ce_pretrain_loss: head width differs from class count");
  }
  auto logits = ad::add_row_broadcast(ad::matmul(z, weight), bias);
  Tensor target(n, classes.size());
  for (std::size_t i = 0; i < n; ++i) {
    const auto it = std::find(classes.begin(), classes.end(), labels[i]);
    if (it == classes.end()) {
      throw std::invalid_argument("label " + std::to_string(labels[i]) +
                                  " is not one of the head's classes");
    }
    target(i, static_cast<std::size_t>(it - classes.begin())) = 1.0 / static_cast<double>(n);
  }
  const Tensor all(n, classes.size(), 1.0);
  auto lse = ad::masked_log_sum_exp(logits, all);
  return ad::sub(ad::scale(ad::sum(lse), 1.0 / static_cast<double>(n)),
                 ad::weighted_sum(logits, target));
}

}  // namespace subcon
