#include "subcon/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <numeric>
#include <queue>
#include <set>

#include "json.hpp"

namespace subcon {

namespace {

constexpr char kMagic[4] = {'G', 'F', 'B', '1'};
constexpr std::size_t kHeaderBytes = 4 + 4 * 8;

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint64_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  template <typename T>
  T read(const char* field) {
    if (remaining() < sizeof(T)) {
      throw GraphFormatError(std::string("truncated file while reading ") + field, pos_);
    }
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

template <typename T>
void put(std::vector<std::uint8_t>& out, T value) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
  out.insert(out.end(), p, p + sizeof(T));
}

// Sort, dedupe and symmetrize adjacency lists; drops self-loops.
void canonicalize(std::size_t n, std::vector<std::vector<NodeId>>& adj) {
  std::vector<std::vector<NodeId>> reverse(n);
  for (NodeId u = 0; u < n; ++u) {
    for (NodeId v : adj[u]) {
      if (v != u) reverse[v].push_back(u);
    }
  }
  for (NodeId u = 0; u < n; ++u) {
    auto& row = adj[u];
    row.insert(row.end(), reverse[u].begin(), reverse[u].end());
    std::erase(row, u);
    std::sort(row.begin(), row.end());
    row.erase(std::unique(row.begin(), row.end()), row.end());
  }
}

}  // namespace

GraphFormatError::GraphFormatError(const std::string& what, std::uint64_t offset)
    : std::runtime_error(what + " (byte offset " + std::to_string(offset) + ")"),
      offset_(offset) {}

Graph Graph::from_edges(std::size_t num_nodes,
                        std::span<const std::pair<NodeId, NodeId>> edges,
                        std::size_t feature_dim, std::vector<float> features,
                        std::vector<ClassId> labels, std::size_t num_classes) {
  std::vector<std::vector<NodeId>> adj(num_nodes);
  for (auto [u, v] : edges) {
    if (u >= num_nodes || v >= num_nodes) {
      throw std::out_of_range("edge (" + std::to_string(u) + "," + std::to_string(v) +
                              ") out of range for " + std::to_string(num_nodes) + " nodes");
    }
    adj[u].push_back(v);
  }
  canonicalize(num_nodes, adj);

  std::vector<std::uint64_t> offsets(num_nodes + 1, 0);
  std::vector<NodeId> columns;
  for (std::size_t u = 0; u < num_nodes; ++u) {
    offsets[u + 1] = offsets[u] + adj[u].size();
  }
  columns.reserve(offsets.back());
  for (auto& row : adj) columns.insert(columns.end(), row.begin(), row.end());

  if (features.size() != num_nodes * feature_dim) {
    throw std::invalid_argument("feature matrix has " + std::to_string(features.size()) +
                                " entries, expected " +
                                std::to_string(num_nodes * feature_dim));
  }
  if (labels.size() != num_nodes) {
    throw std::invalid_argument("label array length differs from node count");
  }
  for (ClassId c : labels) {
    if (c >= num_classes) {
      throw std::invalid_argument("label " + std::to_string(c) + " >= class count " +
                                  std::to_string(num_classes));
    }
  }
  for (float f : features) {
    if (!std::isfinite(f)) throw std::invalid_argument("non-finite feature value");
  }

  Graph g;
  g.offsets_ = std::move(offsets);
  g.columns_ = std::move(columns);
  g.features_ = std::move(features);
  g.labels_ = std::move(labels);
  g.feature_dim_ = feature_dim;
  g.num_classes_ = num_classes;
  return g;
}

Graph Graph::from_csr(std::size_t num_nodes, std::vector<std::uint64_t> offsets,
                      std::vector<NodeId> columns, std::size_t feature_dim,
                      std::vector<float> features, std::vector<ClassId> labels,
                      std::size_t num_classes) {
  if (offsets.size() != num_nodes + 1) {
    throw std::invalid_argument("offset array must have num_nodes + 1 entries");
  }
  std::vector<std::pair<NodeId, NodeId>> edges;
  edges.reserve(columns.size());
  for (NodeId u = 0; u < num_nodes; ++u) {
    for (auto k = offsets[u]; k < offsets[u + 1]; ++k) edges.emplace_back(u, columns[k]);
  }
  return from_edges(num_nodes, edges, feature_dim, std::move(features), std::move(labels),
                    num_classes);
}

bool Graph::has_edge(NodeId u, NodeId v) const {
  auto row = neighbors(u);
  return std::binary_search(row.begin(), row.end(), v);
}

// ---------------------------------------------------------------------------

void ClassSplit::validate(const Graph& g) const {
  std::set<ClassId> base(base_classes.begin(), base_classes.end());
  for (ClassId c : novel_classes) {
    if (base.count(c)) {
      throw std::invalid_argument("class " + std::to_string(c) + " is both base and novel");
    }
  }
  std::vector<bool> present(g.num_classes(), false);
  for (ClassId c : g.labels()) present[c] = true;
  for (ClassId c = 0; c < present.size(); ++c) {
    if (present[c] && !is_base(c) && !is_novel(c)) {
      throw std::invalid_argument("class " + std::to_string(c) +
                                  " occurs in the graph but is in neither split");
    }
  }
}

bool ClassSplit::is_base(ClassId c) const {
  return std::find(base_classes.begin(), base_classes.end(), c) != base_classes.end();
}

bool ClassSplit::is_novel(ClassId c) const {
  return std::find(novel_classes.begin(), novel_classes.end(), c) != novel_classes.end();
}

// ---------------------------------------------------------------------------

Graph parse_graph(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw GraphFormatError("bad magic, expected GFB1", 0);
  }
  in.read<std::uint32_t>("magic");
  const auto m = in.read<std::uint64_t>("node count");
  const auto e = in.read<std::uint64_t>("edge count");
  const auto d = in.read<std::uint64_t>("feature dim");
  const auto c = in.read<std::uint64_t>("class count");

  // Reject sizes that cannot fit before allocating anything.
  const std::uint64_t body = (m + 1) * 8 + e * 8 + m * d * 4 + m * 4;
  if (m > bytes.size() || e > bytes.size() || (m > 0 && d > bytes.size()) ||
      body != in.remaining()) {
    throw GraphFormatError("header sizes (M=" + std::to_string(m) + ", E=" +
                               std::to_string(e) + ", d=" + std::to_string(d) +
                               ") disagree with file length",
                           4);
  }
  if (c > std::numeric_limits<ClassId>::max()) {
    throw GraphFormatError("class count too large", 28);
  }

  std::vector<std::uint64_t> offsets(m + 1);
  for (auto& o : offsets) {
    const auto at = in.offset();
    o = in.read<std::uint64_t>("row offset");
    if (o > e) throw GraphFormatError("row offset exceeds edge count", at);
  }
  if (offsets.front() != 0) throw GraphFormatError("first row offset must be 0", kHeaderBytes);
  if (offsets.back() != e) {
    throw GraphFormatError("last row offset must equal edge count", kHeaderBytes + m * 8);
  }
  for (std::size_t i = 0; i < m; ++i) {
    if (offsets[i + 1] < offsets[i]) {
      throw GraphFormatError("row offsets decrease", kHeaderBytes + (i + 1) * 8);
    }
  }

  std::vector<NodeId> columns(e);
  for (auto& col : columns) {
    const auto at = in.offset();
    col = in.read<std::uint64_t>("column index");
    if (col >= m) {
      throw GraphFormatError("column index " + std::to_string(col) + " out of range for " +
                                 std::to_string(m) + " nodes",
                             at);
    }
  }

  std::vector<float> features(m * d);
  for (auto& f : features) {
    const auto at = in.offset();
    f = in.read<float>("feature");
    if (!std::isfinite(f)) throw GraphFormatError("non-finite feature value", at);
  }

  std::vector<ClassId> labels(m);
  for (auto& l : labels) {
    const auto at = in.offset();
    l = in.read<std::uint32_t>("label");
    if (l >= c) {
      throw GraphFormatError("label " + std::to_string(l) + " >= class count " +
                                 std::to_string(c),
                             at);
    }
  }

  return Graph::from_csr(m, std::move(offsets), std::move(columns), d, std::move(features),
                         std::move(labels), c);
}

Graph load_graph(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open graph file " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return parse_graph(bytes);
}

std::vector<std::uint8_t> serialize_graph(const Graph& g) {
  std::vector<std::uint8_t> out;
  out.reserve(kHeaderBytes + (g.num_nodes() + 1) * 8 + g.num_directed_edges() * 8 +
              g.feature_matrix().size() * 4 + g.num_nodes() * 4);
  out.insert(out.end(), kMagic, kMagic + 4);
  put<std::uint64_t>(out, g.num_nodes());
  put<std::uint64_t>(out, g.num_directed_edges());
  put<std::uint64_t>(out, g.feature_dim());
  put<std::uint64_t>(out, g.num_classes());
  for (auto o : g.offsets()) put<std::uint64_t>(out, o);
  for (auto c : g.columns()) put<std::uint64_t>(out, c);
  for (auto f : g.feature_matrix()) put<float>(out, f);
  for (auto l : g.labels()) put<std::uint32_t>(out, l);
  return out;
}

void save_graph(const Graph& g, const std::filesystem::path& path) {
  const auto bytes = serialize_graph(g);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write graph file " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

std::uint64_t graph_hash(const Graph& g) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : serialize_graph(g)) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

ClassSplit load_split(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open split file " + path.string());
  const auto doc = nlohmann::json::parse(in);
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    if (it.key() != "base_classes" && it.key() != "novel_classes") {
      throw std::runtime_error("unknown key '" + it.key() + "' in split file " + path.string());
    }
  }
  ClassSplit split;
  split.base_classes = doc.at("base_classes").get<std::vector<ClassId>>();
  split.novel_classes = doc.at("novel_classes").get<std::vector<ClassId>>();
  return split;
}

void save_split(const ClassSplit& split, const std::filesystem::path& path) {
  nlohmann::json doc;
  doc["base_classes"] = split.base_classes;
  doc["novel_classes"] = split.novel_classes;
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write split file " + path.string());
  out << doc.dump(2) << "\n";
}

std::filesystem::path default_split_path(const std::filesystem::path& graph_path) {
  return std::filesystem::path(graph_path.string() + ".split.json");
}

double average_degree(const Graph& g) {
  if (g.num_nodes() == 0) throw std::invalid_argument("average_degree of an empty graph");
  return static_cast<double>(g.num_directed_edges()) / static_cast<double>(g.num_nodes());
}

std::vector<std::vector<NodeId>> nodes_by_class(const Graph& g) {
  std::vector<std::vector<NodeId>> out(g.num_classes());
  for (NodeId v = 0; v < g.num_nodes(); ++v) out[g.label(v)].push_back(v);
  return out;
}

std::vector<std::size_t> connected_components(const Graph& g) {
  constexpr auto kUnset = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> comp(g.num_nodes(), kUnset);
  std::size_t next = 0;
  std::queue<NodeId> frontier;
  for (NodeId s = 0; s < g.num_nodes(); ++s) {
    if (comp[s] != kUnset) continue;
    comp[s] = next;
    frontier.push(s);
    while (!frontier.empty()) {
      const auto u = frontier.front();
      frontier.pop();
      for (auto v : g.neighbors(u)) {
        if (comp[v] == kUnset) {
          comp[v] = next;
          frontier.push(v);
        }
      }
    }
    ++next;
  }
  return comp;
}

}  // namespace subcon
