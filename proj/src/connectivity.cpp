#include "subcon/connectivity.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "json.hpp"

namespace subcon {

std::string to_string(ScoreMethod m) { return m == ScoreMethod::nad ? "nad" : "ppr"; }

ScoreMethod parse_score_method(const std::string& s) {
  if (s == "nad") return ScoreMethod::nad;
  if (s == "ppr") return ScoreMethod::ppr;
  throw std::invalid_argument("unknown score method '" + s + "' (expected nad or ppr)");
}

// ---------------------------------------------------------------------------
// Node algebraic distance

std::vector<double> nad_iterate(const Graph& g, std::vector<double> init, double eta,
                                std::size_t iterations, IsolatedPolicy isolated) {
  if (!(eta > 0.0 && eta < 1.0)) throw std::invalid_argument("eta must lie in (0, 1)");
  if (init.size() != g.num_nodes()) {
    throw std::invalid_argument("initial value vector length differs from node count");
  }
  if (isolated == IsolatedPolicy::error) {
    for (NodeId v = 0; v < g.num_nodes(); ++v) {
      if (g.degree(v) == 0) {
        throw std::invalid_argument("node " + std::to_string(v) +
                                    " is isolated and no fallback policy is configured");
      }
    }
  }
  std::vector<double> u = std::move(init);
  std::vector<double> next(u.size());
  for (std::size_t t = 0; t < iterations; ++t) {
    for (NodeId i = 0; i < g.num_nodes(); ++i) {
      const auto nbrs = g.neighbors(i);
      if (nbrs.empty()) {
        next[i] = u[i];
        continue;
      }
      double acc = 0.0;
      for (auto k : nbrs) acc += u[k];
      const double mean = acc / static_cast<double>(nbrs.size());
      next[i] = (1.0 - eta) * u[i] + eta * mean;
    }
    u.swap(next);
  }
  return u;
}

std::vector<double> nad_iterate(const Graph& g, double eta, std::size_t iterations,
                                std::uint64_t seed, IsolatedPolicy isolated) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<double> init(g.num_nodes());
  for (auto& x : init) {
    do {
      x = unif(rng);
    } while (x <= 0.0);
  }
  return nad_iterate(g, std::move(init), eta, iterations, isolated);
}

std::vector<double> nad_raw_scores(std::span<const std::vector<double>> value_vectors,
                                   NodeId j, double epsilon) {
  if (value_vectors.empty()) throw std::invalid_argument("no NAD value vectors");
  const std::size_t n = value_vectors.front().size();
  std::vector<double> dist(n, 0.0);
  for (const auto& u : value_vectors) {
    const double uj = u[j];
    for (std::size_t i = 0; i < n; ++i) dist[i] += std::abs(u[i] - uj);
  }
  const double k = static_cast<double>(value_vectors.size());
  for (auto& x : dist) x = 1.0 / (x / k + epsilon);
  return dist;
}

// ---------------------------------------------------------------------------
// Personalized PageRank

std::vector<double> ppr_vector(const Graph& g, NodeId j, const PprParams& params,
                               std::size_t* iterations_used) {
  const std::size_t n = g.num_nodes();
  if (j >= n) throw std::out_of_range("seed node out of range");
  if (!(params.phi > 0.0 && params.phi < 1.0)) {
    throw std::invalid_argument("teleport probability phi must lie in (0, 1)");
  }

  if (params.literal_formula) {
    // Column j of phi * (I - (1 - phi) A D^-1).
    std::vector<double> s(n, 0.0);
    s[j] = params.phi;
    const auto deg = static_cast<double>(g.degree(j));
    for (auto i : g.neighbors(j)) s[i] = -params.phi * (1.0 - params.phi) / deg;
    if (iterations_used) *iterations_used = 0;
    return s;
  }

  const double walk = 1.0 - params.phi;
  std::vector<double> s(n, 0.0);
  std::vector<double> next(n, 0.0);
  s[j] = 1.0;
  double residual = 0.0;
  for (std::size_t it = 1; it <= params.max_iterations; ++it) {
    std::fill(next.begin(), next.end(), 0.0);
    next[j] = params.phi;
    for (NodeId k = 0; k < n; ++k) {
      if (s[k] == 0.0) continue;
      const auto nbrs = g.neighbors(k);
      if (nbrs.empty()) {
        next[k] += walk * s[k];
        continue;
      }
      const double share = walk * s[k] / static_cast<double>(nbrs.size());
      for (auto i : nbrs) next[i] += share;
    }
    residual = 0.0;
    for (std::size_t i = 0; i < n; ++i) residual += std::abs(next[i] - s[i]);
    s.swap(next);
    if (residual < params.tolerance) {
      if (iterations_used) *iterations_used = it;
      return s;
    }
  }
  throw ConvergenceError("PPR power iteration for node " + std::to_string(j) +
                             " did not converge in " + std::to_string(params.max_iterations) +
                             " iterations (residual " + std::to_string(residual) + ")",
                         residual);
}

// ---------------------------------------------------------------------------

void finalize_column(std::span<double> column, NodeId j, double gamma) {
  double off = 0.0;
  for (std::size_t i = 0; i < column.size(); ++i) {
    if (i != j) off += column[i];
  }
  const double scale = off != 0.0 ? (1.0 - gamma) / off : 0.0;
  for (auto& x : column) x *= scale;
  column[j] = gamma;
}

ScoreSource ScoreSource::nad(const Graph& g, const NadParams& params, double gamma) {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("gamma must lie in (0, 1]");
  if (params.vectors == 0) throw std::invalid_argument("NAD needs at least one value vector");
  if (!(params.epsilon > 0.0)) throw std::invalid_argument("NAD epsilon must be positive");
  ScoreSource s;
  s.method_ = ScoreMethod::nad;
  s.gamma_ = gamma;
  s.nad_ = params;
  // One seed stream per vector so adding vectors leaves earlier ones intact.
  std::seed_seq seq{params.seed, std::uint64_t{0x4e4144}};
  std::vector<std::uint64_t> seeds(params.vectors);
  seq.generate(seeds.begin(), seeds.end());
  for (auto vs : seeds) {
    s.values_.push_back(nad_iterate(g, params.eta, params.iterations, vs, params.isolated));
  }
  return s;
}

ScoreSource ScoreSource::ppr(const PprParams& params, double gamma) {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("gamma must lie in (0, 1]");
  if (!(params.phi > 0.0 && params.phi < 1.0)) {
    throw std::invalid_argument("teleport probability phi must lie in (0, 1)");
  }
  ScoreSource s;
  s.method_ = ScoreMethod::ppr;
  s.gamma_ = gamma;
  s.ppr_ = params;
  return s;
}

std::vector<double> ScoreSource::raw_column(const Graph& g, NodeId j) const {
  if (j >= g.num_nodes()) throw std::out_of_range("node id out of range");
  if (method_ == ScoreMethod::nad) {
    if (values_.empty() || values_.front().size() != g.num_nodes()) {
      throw std::invalid_argument("NAD score source was built for a different graph");
    }
    return nad_raw_scores(values_, j, nad_.epsilon);
  }
  return ppr_vector(g, j, ppr_);
}

std::vector<double> ScoreSource::column(const Graph& g, NodeId j) const {
  auto s = raw_column(g, j);
  finalize_column(s, j, gamma_);
  return s;
}

std::string ScoreSource::params_json() const {
  nlohmann::ordered_json doc;
  doc["method"] = to_string(method_);
  doc["gamma"] = gamma_;
  if (method_ == ScoreMethod::nad) {
    doc["eta"] = nad_.eta;
    doc["iterations"] = nad_.iterations;
    doc["vectors"] = nad_.vectors;
    doc["epsilon"] = nad_.epsilon;
    doc["seed"] = nad_.seed;
    doc["isolated"] = nad_.isolated == IsolatedPolicy::keep_value ? "keep" : "error";
  } else {
    doc["phi"] = ppr_.phi;
    doc["tolerance"] = ppr_.tolerance;
    doc["max_iterations"] = ppr_.max_iterations;
    doc["literal_formula"] = ppr_.literal_formula;
  }
  return doc.dump();
}

ScoreSource ScoreSource::from_params_json(const Graph& g, const std::string& json) {
  const auto doc = nlohmann::json::parse(json);
  const auto method = parse_score_method(doc.at("method").get<std::string>());
  const double gamma = doc.at("gamma").get<double>();
  if (method == ScoreMethod::nad) {
    NadParams p;
    p.eta = doc.at("eta").get<double>();
    p.iterations = doc.at("iterations").get<std::size_t>();
    p.vectors = doc.at("vectors").get<std::size_t>();
    p.epsilon = doc.at("epsilon").get<double>();
    p.seed = doc.at("seed").get<std::uint64_t>();
    p.isolated = doc.at("isolated").get<std::string>() == "error" ? IsolatedPolicy::error
                                                                  : IsolatedPolicy::keep_value;
    return nad(g, p, gamma);
  }
  PprParams p;
  p.phi = doc.at("phi").get<double>();
  p.tolerance = doc.at("tolerance").get<double>();
  p.max_iterations = doc.at("max_iterations").get<std::size_t>();
  p.literal_formula = doc.at("literal_formula").get<bool>();
  return ppr(p, gamma);
}

std::vector<double> nad_scores(const ScoreSource& source, NodeId j) {
  if (source.method() != ScoreMethod::nad) throw std::invalid_argument("not a NAD source");
  const auto values = source.value_vectors();
  if (values.empty() || j >= values.front().size()) {
    throw std::out_of_range("node id out of range");
  }
  auto s = nad_raw_scores(values, j, source.nad_params().epsilon);
  finalize_column(s, j, source.gamma());
  return s;
}

std::vector<double> ppr_scores(const ScoreSource& source, const Graph& g, NodeId j) {
  if (source.method() != ScoreMethod::ppr) throw std::invalid_argument("not a PPR source");
  return source.column(g, j);
}

// ---------------------------------------------------------------------------

std::vector<NodeId> top_rank(std::span<const double> scores, std::size_t alpha,
                             NodeId exclude) {
  if (alpha == 0) throw std::invalid_argument("top_rank needs alpha >= 1");
  if (alpha >= scores.size()) {
    throw std::invalid_argument("top_rank alpha (" + std::to_string(alpha) +
                                ") must be below the node count (" +
                                std::to_string(scores.size()) + ")");
  }
  std::vector<NodeId> ids;
  ids.reserve(scores.size() - 1);
  for (NodeId i = 0; i < scores.size(); ++i) {
    if (i != exclude) ids.push_back(i);
  }
  const auto better = [&](NodeId a, NodeId b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
  };
  const auto k = std::min(alpha, ids.size());
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(),
                    better);
  ids.resize(k);
  return ids;
}

SubgraphView make_subgraph_view(const Graph& g, NodeId j, std::span<const NodeId> top_ids,
                                std::span<const double> top_scores, double gamma) {
  if (top_ids.size() != top_scores.size()) {
    throw std::invalid_argument("ranking ids and scores differ in length");
  }
  SubgraphView view;
  view.centric = j;
  view.feature_dim = g.feature_dim();
  view.members.reserve(top_ids.size() + 1);
  view.members.push_back(j);
  view.members.insert(view.members.end(), top_ids.begin(), top_ids.end());
  const std::size_t n = view.members.size();

  view.adjacency.assign(n * n, 0.0);
  std::vector<double> deg(n, 0.0);
  for (std::size_t a = 0; a < n; ++a) {
    view.adjacency[a * n + a] = 1.0;
    for (std::size_t b = a + 1; b < n; ++b) {
      if (g.has_edge(view.members[a], view.members[b])) {
        view.adjacency[a * n + b] = 1.0;
        view.adjacency[b * n + a] = 1.0;
      }
    }
  }
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) deg[a] += view.adjacency[a * n + b];
  }
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) {
      if (view.adjacency[a * n + b] != 0.0) {
        view.adjacency[a * n + b] /= std::sqrt(deg[a] * deg[b]);
      }
    }
  }

  const std::size_t d = g.feature_dim();
  view.features.resize(n * d);
  for (std::size_t a = 0; a < n; ++a) {
    const auto row = g.features(view.members[a]);
    std::copy(row.begin(), row.end(), view.features.begin() + static_cast<std::ptrdiff_t>(a * d));
  }

  view.weights.resize(n);
  view.weights[0] = gamma;
  for (std::size_t a = 1; a < n; ++a) view.weights[a] = std::max(0.0, top_scores[a - 1]);
  const double total = std::accumulate(view.weights.begin(), view.weights.end(), 0.0);
  for (auto& w : view.weights) w /= total;
  return view;
}

SubgraphView build_subgraph(const Graph& g, const ScoreSource& source, NodeId j,
                            std::size_t alpha) {
  if (alpha + 1 > g.num_nodes()) {
    throw std::invalid_argument("subgraph size alpha + 1 exceeds the node count");
  }
  const auto column = source.column(g, j);
  const auto ids = top_rank(column, alpha, j);
  std::vector<double> scores(ids.size());
  for (std::size_t k = 0; k < ids.size(); ++k) scores[k] = column[ids[k]];
  return make_subgraph_view(g, j, ids, scores, source.gamma());
}

}  // namespace subcon
