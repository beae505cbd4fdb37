#include "subcon/fewshot.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <limits>
#include <memory>
#include <mutex>
#include <numeric>
#include <random>
#include <stdexcept>
#include <unordered_map>

#include "subcon/parallel.hpp"
#include "subcon/trainer.hpp"

namespace subcon {

std::vector<Episode> sample_episodes(const Graph& g, const ClassSplit& split, std::size_t nway,
                                     std::size_t kshot, std::size_t qsize, std::size_t count,
                                     std::uint64_t seed) {
  if (nway == 0 || kshot == 0 || qsize == 0) {
    throw std::invalid_argument("nway, kshot and qsize must be positive");
  }
  if (split.novel_classes.size() < nway) {
    throw std::invalid_argument("need " + std::to_string(nway) + " novel classes, split has " +
                                std::to_string(split.novel_classes.size()));
  }
  const auto by_class = nodes_by_class(g);
  for (ClassId c : split.novel_classes) {
    const std::size_t have = c < by_class.size() ? by_class[c].size() : 0;
    if (have < kshot + qsize) {
      throw std::invalid_argument("novel class " + std::to_string(c) + " has " +
                                  std::to_string(have) + " nodes, episodes need " +
                                  std::to_string(kshot + qsize));
    }
  }

  std::mt19937_64 rng(seed);
  std::vector<ClassId> classes = split.novel_classes;
  std::vector<Episode> out;
  out.reserve(count);
  for (std::size_t e = 0; e < count; ++e) {
    // Partial shuffles: the first nway classes, then the first K+Q members.
    for (std::size_t i = 0; i < nway; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, classes.size() - 1);
      std::swap(classes[i], classes[pick(rng)]);
    }
    Episode ep;
    ep.kshot = kshot;
    ep.qsize = qsize;
    ep.classes.assign(classes.begin(), classes.begin() + static_cast<std::ptrdiff_t>(nway));
    for (ClassId c : ep.classes) {
      std::vector<NodeId> pool = by_class[c];
      for (std::size_t i = 0; i < kshot + qsize; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
        std::swap(pool[i], pool[pick(rng)]);
      }
      ep.support.insert(ep.support.end(), pool.begin(), pool.begin() + kshot);
      ep.query.insert(ep.query.end(), pool.begin() + kshot, pool.begin() + kshot + qsize);
    }
    out.push_back(std::move(ep));
  }
  return out;
}

std::vector<std::size_t> LinearClassifier::predict(const Tensor& x) const {
  if (x.cols() != weight.cols()) throw ShapeError("predict: feature width differs from classifier");
  const std::size_t n = x.rows(), k = weight.rows();
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      double s = bias[c];
      for (std::size_t f = 0; f < x.cols(); ++f) s += weight(c, f) * x(i, f);
      if (s > best_score) {
        best_score = s;
        best = c;
      }
    }
    out[i] = best;
  }
  return out;
}

LinearClassifier finetune(const Tensor& x, std::span<const std::size_t> labels,
                          std::size_t num_classes, const LogRegConfig& config) {
  const std::size_t n = x.rows(), f = x.cols(), k = num_classes;
  if (labels.size() != n) throw ShapeError("finetune: label count differs from rows");
  if (n == 0 || k == 0) throw std::invalid_argument("finetune needs samples and classes");
  if (config.l2 < 0.0) throw std::invalid_argument("finetune: l2 must be non-negative");
  std::vector<std::size_t> per_class(k, 0);
  for (auto y : labels) {
    if (y >= k) throw std::invalid_argument("finetune: label out of range");
    ++per_class[y];
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (per_class[c] == 0) {
      throw std::invalid_argument("finetune: class " + std::to_string(c) + " has no samples");
    }
  }
  if (!x.all_finite()) throw NonFiniteError("finetune input", 0);

  const double dn = static_cast<double>(n);
  const double reg = config.l2 / dn;
  double sq = 0.0;
  for (double v : x.data()) sq += v * v;
  const double lipschitz = 0.5 * (sq / dn + 1.0) + reg;
  const double step = 1.0 / lipschitz;

  LinearClassifier clf;
  clf.weight = Tensor(k, f);
  clf.bias = Tensor(1, k);
  clf.l2 = config.l2;
  Tensor gw(k, f), gb(1, k);
  std::vector<double> logits(k);

  for (std::size_t it = 0; it < config.max_iterations; ++it) {
    std::fill(gw.data().begin(), gw.data().end(), 0.0);
    std::fill(gb.data().begin(), gb.data().end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < k; ++c) {
        double s = clf.bias[c];
        for (std::size_t j = 0; j < f; ++j) s += clf.weight(c, j) * x(i, j);
        logits[c] = s;
      }
      const double lse = log_sum_exp(logits);
      for (std::size_t c = 0; c < k; ++c) {
        const double r = (std::exp(logits[c] - lse) - (labels[i] == c ? 1.0 : 0.0)) / dn;
        gb[c] += r;
        for (std::size_t j = 0; j < f; ++j) gw(c, j) += r * x(i, j);
      }
    }
    double gmax = 0.0;
    for (std::size_t q = 0; q < gw.size(); ++q) {
      gw[q] += reg * clf.weight[q];
      gmax = std::max(gmax, std::abs(gw[q]));
    }
    for (std::size_t c = 0; c < k; ++c) gmax = std::max(gmax, std::abs(gb[c]));
    clf.iterations = it;
    if (gmax < config.tolerance) {
      clf.converged = true;
      break;
    }
    for (std::size_t q = 0; q < gw.size(); ++q) clf.weight[q] -= step * gw[q];
    for (std::size_t c = 0; c < k; ++c) clf.bias[c] -= step * gb[c];
    clf.iterations = it + 1;
  }
  if (!clf.weight.all_finite() || !clf.bias.all_finite()) {
    throw NonFiniteError("finetune", clf.iterations);
  }
  return clf;
}

double accuracy(std::span<const std::size_t> predicted, std::span<const std::size_t> truth) {
  if (predicted.size() != truth.size() || truth.empty()) {
    throw std::invalid_argument("accuracy: size mismatch or empty input");
  }
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hit += predicted[i] == truth[i];
  return static_cast<double>(hit) / static_cast<double>(truth.size());
}

namespace {

Tensor gather_rows(const Tensor& table, const std::unordered_map<NodeId, std::size_t>& index,
                   std::span<const NodeId> nodes) {
  Tensor out(nodes.size(), table.cols());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto src = table.row(index.at(nodes[i]));
    std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * out.cols()));
  }
  return out;
}

}  // namespace

EvalResult evaluate_with(const Graph& g, const ClassSplit& split, const EmbedFn& embed,
                         const EvalProtocol& protocol) {
  if (protocol.seeds == 0 || protocol.episodes == 0) {
    throw std::invalid_argument("evaluation needs at least one seed and one episode");
  }
  EvalResult result;
  std::vector<double> all;
  for (std::size_t s = 0; s < protocol.seeds; ++s) {
    const auto episodes =
        sample_episodes(g, split, protocol.nway, protocol.kshot, protocol.qsize,
                        protocol.episodes, derive_seed(protocol.seed, 100 + s));
    std::vector<NodeId> needed;
    for (const auto& ep : episodes) {
      needed.insert(needed.end(), ep.support.begin(), ep.support.end());
      needed.insert(needed.end(), ep.query.begin(), ep.query.end());
    }
    std::sort(needed.begin(), needed.end());
    needed.erase(std::unique(needed.begin(), needed.end()), needed.end());
    const Tensor table = embed(needed);
    if (table.rows() != needed.size()) throw ShapeError("embedding provider returned wrong rows");
    std::unordered_map<NodeId, std::size_t> index;
    for (std::size_t i = 0; i < needed.size(); ++i) index.emplace(needed[i], i);

    std::vector<double> acc(episodes.size());
    std::vector<char> converged(episodes.size());
    parallel_for(episodes.size(), protocol.threads, [&](std::size_t e) {
      const auto& ep = episodes[e];
      std::vector<std::size_t> ys(ep.support.size()), yq(ep.query.size());
      for (std::size_t i = 0; i < ys.size(); ++i) ys[i] = ep.support_label(i);
      for (std::size_t i = 0; i < yq.size(); ++i) yq[i] = ep.query_label(i);
      const auto clf = finetune(gather_rows(table, index, ep.support), ys, protocol.nway,
                                protocol.logreg);
      acc[e] = accuracy(clf.predict(gather_rows(table, index, ep.query)), yq);
      converged[e] = clf.converged;
    });

    double seed_sum = 0.0;
    for (std::size_t e = 0; e < episodes.size(); ++e) {
      result.records.push_back({s, e, episodes[e].classes, acc[e]});
      result.nonconverged += !converged[e];
      seed_sum += acc[e];
      all.push_back(acc[e]);
    }
    result.seed_means.push_back(seed_sum / static_cast<double>(episodes.size()));
  }
  const double n = static_cast<double>(all.size());
  result.mean = std::accumulate(all.begin(), all.end(), 0.0) / n;
  double var = 0.0;
  for (double a : all) var += (a - result.mean) * (a - result.mean);
  result.std = all.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
  result.ci95 = 1.96 * result.std / std::sqrt(n);
  return result;
}

EmbedFn encoder_embedding(const EncoderParams& encoder, const SubgraphSampler& subgraphs,
                          std::size_t threads) {
  struct Memo {
    std::mutex mu;
    std::unordered_map<NodeId, std::vector<double>> rows;
  };
  auto memo = std::make_shared<Memo>();
  return [memo, &encoder, &subgraphs, threads](std::span<const NodeId> nodes) {
    std::lock_guard lock(memo->mu);
    std::vector<NodeId> missing;
    for (auto v : nodes) {
      if (!memo->rows.count(v)) missing.push_back(v);
    }
    std::sort(missing.begin(), missing.end());
    missing.erase(std::unique(missing.begin(), missing.end()), missing.end());
    if (!missing.empty()) {
      const auto views = subgraphs.views(missing, threads);
      const Tensor z = centric_embeddings(encoder, views);
      for (std::size_t i = 0; i < missing.size(); ++i) {
        const auto r = z.row(i);
        memo->rows.emplace(missing[i], std::vector<double>(r.begin(), r.end()));
      }
    }
    Tensor out(nodes.size(), encoder.embedding_dim());
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const auto& r = memo->rows.at(nodes[i]);
      std::copy(r.begin(), r.end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * out.cols()));
    }
    return out;
  };
}

EvalResult evaluate(const Graph& g, const ClassSplit& split, const EncoderParams& encoder,
                    const SubgraphSampler& subgraphs, const EvalProtocol& protocol) {
  if (encoder.input_dim() != g.feature_dim()) {
    throw ShapeError("encoder input width differs from graph feature dimension");
  }
  return evaluate_with(g, split, encoder_embedding(encoder, subgraphs, protocol.threads),
                       protocol);
}

nlohmann::ordered_json to_json(const EvalResult& result, const EvalProtocol& protocol) {
  nlohmann::ordered_json meta = {
      {"nway", protocol.nway},
      {"kshot", protocol.kshot},
      {"qsize", protocol.qsize},
      {"episodes_per_seed", protocol.episodes},
      {"seeds", protocol.seeds},
      {"seed", protocol.seed},
      {"aggregation", "mean/std over all episodes pooled across seeds; ci95 = 1.96 std / sqrt(n)"},
      {"logreg", {{"l2", protocol.logreg.l2},
                  {"max_iterations", protocol.logreg.max_iterations},
                  {"tolerance", protocol.logreg.tolerance}}},
  };
  nlohmann::ordered_json records = nlohmann::ordered_json::array();
  for (const auto& r : result.records) {
    records.push_back({{"seed_index", r.seed_index},
                       {"episode", r.episode},
                       {"classes", r.classes},
                       {"accuracy", r.accuracy}});
  }
  nlohmann::ordered_json out = {
      {"protocol", meta},
      {"mean", result.mean},
      {"std", result.std},
      {"ci95", result.ci95},
      {"seed_means", result.seed_means},
      {"nonconverged", result.nonconverged},
      {"episodes", records},
  };
  return out;
}

}  // namespace subcon
