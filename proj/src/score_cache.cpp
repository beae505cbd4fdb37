#include <algorithm>
#include <cstring>
#include <fstream>
#include <iterator>

#include "subcon/connectivity.hpp"
#include "subcon/parallel.hpp"

namespace subcon {

namespace {

constexpr char kCacheMagic[4] = {'S', 'C', 'S', '1'};

template <typename T>
void write_pod(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const char* field) {
  T value;
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw std::runtime_error(std::string("score cache truncated while reading ") + field);
  }
  return value;
}

ScoreCacheHeader read_header(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kCacheMagic, 4) != 0) {
    throw std::runtime_error("not a score cache file (bad magic)");
  }
  ScoreCacheHeader h;
  h.graph_hash = read_pod<std::uint64_t>(in, "graph hash");
  const auto method = read_pod<std::uint32_t>(in, "method");
  if (method > 1) throw std::runtime_error("score cache has unknown method tag");
  h.method = method == 0 ? ScoreMethod::nad : ScoreMethod::ppr;
  h.gamma = read_pod<double>(in, "gamma");
  h.alpha_max = read_pod<std::uint64_t>(in, "alpha_max");
  const auto len = read_pod<std::uint32_t>(in, "params length");
  h.params_json.resize(len);
  if (!in.read(h.params_json.data(), len)) {
    throw std::runtime_error("score cache truncated while reading params");
  }
  h.records = read_pod<std::uint64_t>(in, "record count");
  return h;
}

}  // namespace

ScoreCacheHeader read_score_cache_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open score cache " + path.string());
  return read_header(in);
}

SubgraphSampler::SubgraphSampler(const Graph& g, ScoreSource source, std::size_t alpha)
    : graph_(&g), source_(std::move(source)), alpha_(alpha) {
  if (alpha == 0) throw std::invalid_argument("subgraph alpha must be >= 1");
  if (alpha + 1 > g.num_nodes()) {
    throw std::invalid_argument("subgraph size alpha + 1 exceeds the node count");
  }
}

TopList SubgraphSampler::top(NodeId j) const {
  {
    std::shared_lock lock(mu_);
    auto it = cache_.find(j);
    if (it != cache_.end()) return it->second;
  }
  const auto column = source_.column(*graph_, j);
  TopList entry;
  entry.ids = top_rank(column, alpha_, j);
  entry.scores.reserve(entry.ids.size());
  for (auto i : entry.ids) entry.scores.push_back(column[i]);
  std::unique_lock lock(mu_);
  return cache_.try_emplace(j, std::move(entry)).first->second;
}

SubgraphView SubgraphSampler::view(NodeId j) const {
  if (j >= graph_->num_nodes()) throw std::out_of_range("node id out of range");
  const auto t = top(j);
  return make_subgraph_view(*graph_, j, t.ids, t.scores, source_.gamma());
}

std::vector<SubgraphView> SubgraphSampler::views(std::span<const NodeId> nodes,
                                                 std::size_t threads) const {
  std::vector<SubgraphView> out(nodes.size());
  parallel_for(nodes.size(), threads, [&](std::size_t i) { out[i] = view(nodes[i]); });
  return out;
}

void SubgraphSampler::precompute(std::span<const NodeId> nodes, std::size_t threads) const {
  parallel_for(nodes.size(), threads, [&](std::size_t i) { (void)top(nodes[i]); });
}

std::size_t SubgraphSampler::cached_count() const {
  std::shared_lock lock(mu_);
  return cache_.size();
}

void SubgraphSampler::save_cache(const std::filesystem::path& path) const {
  std::vector<std::pair<NodeId, const TopList*>> entries;
  std::shared_lock lock(mu_);
  entries.reserve(cache_.size());
  for (const auto& [node, list] : cache_) entries.emplace_back(node, &list);
  std::sort(entries.begin(), entries.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write score cache " + path.string());
  const auto params = source_.params_json();
  out.write(kCacheMagic, 4);
  write_pod<std::uint64_t>(out, graph_hash(*graph_));
  write_pod<std::uint32_t>(out, source_.method() == ScoreMethod::nad ? 0 : 1);
  write_pod<double>(out, source_.gamma());
  write_pod<std::uint64_t>(out, alpha_);
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  out.write(params.data(), static_cast<std::streamsize>(params.size()));
  write_pod<std::uint64_t>(out, entries.size());
  for (const auto& [node, list] : entries) {
    write_pod<std::uint64_t>(out, node);
    for (auto id : list->ids) write_pod<std::uint64_t>(out, id);
    for (auto s : list->scores) write_pod<float>(out, static_cast<float>(s));
  }
}

void SubgraphSampler::load_cache(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open score cache " + path.string());
  const auto h = read_header(in);
  if (h.graph_hash != graph_hash(*graph_)) {
    throw std::runtime_error("score cache " + path.string() + " was built for a different graph");
  }
  if (h.params_json != source_.params_json()) {
    throw std::runtime_error("score cache parameters " + h.params_json +
                             " do not match the configured " + source_.params_json());
  }
  if (h.alpha_max < alpha_) {
    throw std::runtime_error("score cache stores " + std::to_string(h.alpha_max) +
                             " neighbours per node, alpha is " + std::to_string(alpha_));
  }
  std::unordered_map<NodeId, TopList> loaded;
  loaded.reserve(h.records);
  std::vector<NodeId> ids(h.alpha_max);
  std::vector<float> scores(h.alpha_max);
  for (std::uint64_t r = 0; r < h.records; ++r) {
    const auto node = read_pod<std::uint64_t>(in, "record node id");
    for (auto& id : ids) id = read_pod<std::uint64_t>(in, "record ids");
    for (auto& s : scores) s = read_pod<float>(in, "record scores");
    if (node >= graph_->num_nodes()) throw std::runtime_error("score cache node id out of range");
    TopList t;
    t.ids.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(alpha_));
    t.scores.assign(scores.begin(), scores.begin() + static_cast<std::ptrdiff_t>(alpha_));
    for (auto id : t.ids) {
      if (id >= graph_->num_nodes()) throw std::runtime_error("score cache id out of range");
    }
    loaded.emplace(node, std::move(t));
  }
  std::unique_lock lock(mu_);
  for (auto& [node, t] : loaded) cache_.insert_or_assign(node, std::move(t));
}

}  // namespace subcon
