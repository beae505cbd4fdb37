#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <stdexcept>

#include "subcon/fewshot.hpp"

namespace subcon {

namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

KMeansResult lloyd(const Tensor& x, std::size_t k, std::mt19937_64& rng,
                   std::size_t max_iterations) {
  const std::size_t n = x.rows(), f = x.cols();
  Tensor c(k, f);
  auto set_centroid = [&](std::size_t slot, std::size_t point) {
    const auto r = x.row(point);
    std::copy(r.begin(), r.end(), c.data().begin() + static_cast<std::ptrdiff_t>(slot * f));
  };

  // k-means++ seeding.
  std::uniform_int_distribution<std::size_t> first(0, n - 1);
  set_centroid(0, first(rng));
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = sq_dist(x.row(i), c.row(0));
  for (std::size_t s = 1; s < k; ++s) {
    double total = 0.0;
    for (double v : d2) total += v;
    std::size_t pick = 0;
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double target = u(rng);
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        target -= d2[i];
        if (target < 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = first(rng);
    }
    set_centroid(s, pick);
    for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], sq_dist(x.row(i), c.row(s)));
  }

  KMeansResult r;
  r.assignment.assign(n, 0);
  for (std::size_t it = 0; it < max_iterations; ++it) {
    bool changed = it == 0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t s = 0; s < k; ++s) {
        const double d = sq_dist(x.row(i), c.row(s));
        if (d < best_d) {
          best_d = d;
          best = s;
        }
      }
      if (r.assignment[i] != best) changed = true;
      r.assignment[i] = best;
    }
    if (!changed) break;
    Tensor sum(k, f);
    std::vector<std::size_t> count(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++count[r.assignment[i]];
      for (std::size_t j = 0; j < f; ++j) sum(r.assignment[i], j) += x(i, j);
    }
    for (std::size_t s = 0; s < k; ++s) {
      if (count[s] == 0) continue;  // empty cluster keeps its centroid
      for (std::size_t j = 0; j < f; ++j) c(s, j) = sum(s, j) / static_cast<double>(count[s]);
    }
  }
  r.inertia = 0.0;
  for (std::size_t i = 0; i < n; ++i) r.inertia += sq_dist(x.row(i), c.row(r.assignment[i]));
  r.centroids = std::move(c);
  return r;
}

struct Contingency {
  std::vector<std::vector<double>> table;
  std::vector<double> rows, cols;
  double n = 0.0;
};

Contingency contingency(std::span<const std::size_t> a, std::span<const std::size_t> b) {
  if (a.size() != b.size()) throw std::invalid_argument("label vectors differ in length");
  if (a.empty()) throw std::invalid_argument("label vectors are empty");
  std::map<std::size_t, std::size_t> ia, ib;
  for (auto v : a) ia.emplace(v, ia.size());
  for (auto v : b) ib.emplace(v, ib.size());
  Contingency t;
  t.table.assign(ia.size(), std::vector<double>(ib.size(), 0.0));
  t.rows.assign(ia.size(), 0.0);
  t.cols.assign(ib.size(), 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto r = ia[a[i]], c = ib[b[i]];
    t.table[r][c] += 1.0;
    t.rows[r] += 1.0;
    t.cols[c] += 1.0;
  }
  t.n = static_cast<double>(a.size());
  return t;
}

double entropy(std::span<const double> counts, double n) {
  double h = 0.0;
  for (double c : counts) {
    if (c > 0.0) h -= (c / n) * std::log(c / n);
  }
  return h;
}

double comb2(double x) { return x * (x - 1.0) / 2.0; }

}  // namespace

KMeansResult kmeans(const Tensor& x, std::size_t k, std::uint64_t seed, std::size_t restarts,
                    std::size_t max_iterations) {
  if (k == 0) throw std::invalid_argument("kmeans: k must be positive");
  if (x.rows() < k) {
    throw std::invalid_argument("kmeans: " + std::to_string(x.rows()) +
                                " points cannot form " + std::to_string(k) + " clusters");
  }
  if (restarts == 0) throw std::invalid_argument("kmeans: need at least one restart");
  std::mt19937_64 rng(seed);
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < restarts; ++r) {
    auto run = lloyd(x, k, rng, max_iterations);
    if (run.inertia < best.inertia) best = std::move(run);
  }
  return best;
}

double normalized_mutual_info(std::span<const std::size_t> truth,
                              std::span<const std::size_t> predicted) {
  const auto t = contingency(truth, predicted);
  const double ha = entropy(t.rows, t.n), hb = entropy(t.cols, t.n);
  if (ha == 0.0 && hb == 0.0) return 1.0;
  double mi = 0.0;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    for (std::size_t c = 0; c < t.cols.size(); ++c) {
      const double nij = t.table[r][c];
      if (nij > 0.0) mi += (nij / t.n) * std::log(nij * t.n / (t.rows[r] * t.cols[c]));
    }
  }
  return std::clamp(mi / (0.5 * (ha + hb)), 0.0, 1.0);
}

double adjusted_rand_index(std::span<const std::size_t> truth,
                           std::span<const std::size_t> predicted) {
  const auto t = contingency(truth, predicted);
  const std::size_t nr = t.rows.size(), nc = t.cols.size();
  const auto n = static_cast<std::size_t>(t.n);
  // Degenerate partitions where the expected index equals the maximum.
  if ((nr == 1 && nc == 1) || (nr == n && nc == n)) return 1.0;
  double index = 0.0, sum_rows = 0.0, sum_cols = 0.0;
  for (const auto& row : t.table) {
    for (double v : row) index += comb2(v);
  }
  for (double v : t.rows) sum_rows += comb2(v);
  for (double v : t.cols) sum_cols += comb2(v);
  const double expected = sum_rows * sum_cols / comb2(t.n);
  const double maximum = 0.5 * (sum_rows + sum_cols);
  if (maximum == expected) return 1.0;
  return (index - expected) / (maximum - expected);
}

ClusterMetrics cluster_metrics(const Tensor& embeddings, std::span<const std::size_t> labels,
                               std::size_t k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("cluster_metrics: k must be at least 2");
  if (labels.size() != embeddings.rows()) {
    throw ShapeError("cluster_metrics: label count differs from embedding rows");
  }
  const auto km = kmeans(embeddings, k, seed);
  return {normalized_mutual_info(labels, km.assignment),
          adjusted_rand_index(labels, km.assignment)};
}

}  // namespace subcon
