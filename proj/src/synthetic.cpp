#include <cmath>
#include <random>

#include "subcon/graph.hpp"

namespace subcon {

void SyntheticSpec::validate() const {
  if (blocks.empty()) throw std::invalid_argument("synthetic spec has no blocks");
  for (auto n : blocks) {
    if (n == 0) throw std::invalid_argument("synthetic spec has an empty block");
  }
  if (!(0.0 <= p_out && p_out <= p_in && p_in <= 1.0)) {
    throw std::invalid_argument("synthetic spec needs 0 <= p_out <= p_in <= 1");
  }
  if (feature_dim == 0) throw std::invalid_argument("synthetic spec needs feature_dim > 0");
  if (signal_dim > feature_dim) {
    throw std::invalid_argument("signal_dim exceeds feature_dim");
  }
  if (feature_noise < 0.0 || feature_signal < 0.0) {
    throw std::invalid_argument("feature scales must be non-negative");
  }
}

namespace {

// Calls emit(k) for each index k in [0, len) kept independently with
// probability p, skipping geometrically so the cost is O(kept).
template <typename Rng, typename Emit>
void bernoulli_indices(std::size_t len, double p, Rng& rng, Emit&& emit) {
  if (p <= 0.0 || len == 0) return;
  if (p >= 1.0) {
    for (std::size_t k = 0; k < len; ++k) emit(k);
    return;
  }
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double log_q = std::log1p(-p);
  double pos = -1.0;
  while (true) {
    double u = unif(rng);
    while (u <= 0.0) u = unif(rng);
    pos += 1.0 + std::floor(std::log(u) / log_q);
    if (pos >= static_cast<double>(len)) return;
    emit(static_cast<std::size_t>(pos));
  }
}

}  // namespace

Graph generate_sbm(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);

  std::vector<std::size_t> start(spec.blocks.size() + 1, 0);
  for (std::size_t b = 0; b < spec.blocks.size(); ++b) start[b + 1] = start[b] + spec.blocks[b];
  const std::size_t n = start.back();

  std::vector<ClassId> labels(n);
  for (std::size_t b = 0; b < spec.blocks.size(); ++b) {
    for (auto v = start[b]; v < start[b + 1]; ++v) labels[v] = static_cast<ClassId>(b);
  }

  std::vector<std::pair<NodeId, NodeId>> edges;
  for (std::size_t b = 0; b < spec.blocks.size(); ++b) {
    for (auto i = start[b]; i < start[b + 1]; ++i) {
      // Same block, j > i.
      bernoulli_indices(start[b + 1] - i - 1, spec.p_in, rng,
                        [&](std::size_t k) { edges.emplace_back(i, i + 1 + k); });
      // Every later block.
      bernoulli_indices(n - start[b + 1], spec.p_out, rng,
                        [&](std::size_t k) { edges.emplace_back(i, start[b + 1] + k); });
    }
  }

  const std::size_t d = spec.feature_dim;
  const std::size_t signal = spec.signal_dim == 0 ? d : spec.signal_dim;
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> means(spec.blocks.size() * d, 0.0);
  for (std::size_t b = 0; b < spec.blocks.size(); ++b) {
    for (std::size_t k = 0; k < signal; ++k) means[b * d + k] = spec.feature_signal * normal(rng);
  }
  std::vector<float> features(n * d);
  for (std::size_t v = 0; v < n; ++v) {
    for (std::size_t k = 0; k < d; ++k) {
      features[v * d + k] =
          static_cast<float>(means[labels[v] * d + k] + spec.feature_noise * normal(rng));
    }
  }

  return Graph::from_edges(n, edges, d, std::move(features), std::move(labels),
                           spec.blocks.size());
}

}  // namespace subcon
