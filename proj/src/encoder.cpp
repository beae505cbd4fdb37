#include "subcon/encoder.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

namespace subcon {

EncoderParams EncoderParams::init(std::size_t input_dim, const EncoderConfig& config,
                                  std::uint64_t seed) {
  if (config.embedding_dim < 2) throw std::invalid_argument("embedding_dim must be >= 2");
  if (input_dim == 0) throw std::invalid_argument("input_dim must be > 0");
  EncoderParams p;
  p.weight = Tensor(input_dim, config.embedding_dim);
  const double bound =
      std::sqrt(6.0 / static_cast<double>(input_dim + config.embedding_dim));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(-bound, bound);
  for (auto& w : p.weight.data()) w = unif(rng);
  p.slope = Tensor::scalar(config.prelu_init);
  return p;
}

std::uint64_t EncoderParams::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const Tensor& t) {
    for (double v : t.data()) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &v, sizeof(double));
      for (auto b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
      }
    }
  };
  mix(weight);
  mix(slope);
  return h;
}

BoundEncoder bind(Tape& tape, const EncoderParams& params, bool trainable) {
  if (trainable) {
    return {tape.parameter(params.weight, "encoder.weight"),
            tape.parameter(params.slope, "encoder.prelu_slope")};
  }
  return {tape.constant(params.weight), tape.constant(params.slope)};
}

Var encode(const BoundEncoder& enc, const SubgraphView& view) {
  Tape& tape = *enc.weight.tape;
  const std::size_t n = view.size();
  if (view.feature_dim != enc.weight.rows()) {
    throw ShapeError("encode: view has " + std::to_string(view.feature_dim) +
                     " feature columns, encoder expects " + std::to_string(enc.weight.rows()));
  }
  auto x = tape.constant(Tensor(n, view.feature_dim, view.features));
  auto a = tape.constant(Tensor(n, n, view.adjacency));
  auto h = ad::matmul(a, ad::matmul(x, enc.weight));
  return ad::l2_normalize_rows(ad::prelu(h, enc.slope));
}

Var readout(Var embeddings, std::span<const double> weights) {
  if (weights.size() != embeddings.rows()) {
    throw ShapeError("readout: " + std::to_string(weights.size()) + " weights for " +
                     std::to_string(embeddings.rows()) + " rows");
  }
  auto w = embeddings.tape->constant(
      Tensor(1, weights.size(), std::vector<double>(weights.begin(), weights.end())));
  return ad::sigmoid(ad::row_weighted_sum(w, embeddings));
}

DuoEmbedding embed_duo(const BoundEncoder& enc, const SubgraphView& view, const Graph& g) {
  auto z_all = encode(enc, view);
  const std::size_t first[] = {0};
  return {ad::select_rows(z_all, first), readout(z_all, view.weights), g.label(view.centric)};
}

BatchEmbedding embed_batch(const BoundEncoder& enc, std::span<const SubgraphView> views) {
  Tape& tape = *enc.weight.tape;
  const std::size_t d = enc.weight.rows();
  std::size_t total = 0;
  for (const auto& v : views) {
    if (v.feature_dim != d) throw ShapeError("embed_batch: feature dimension mismatch");
    total += v.size();
  }

  Tensor x(total, d);
  SparseMatrix prop{total, total, {0}, {}, {}};
  SparseMatrix pool{views.size(), total, {0}, {}, {}};
  std::vector<std::size_t> centric_rows;
  centric_rows.reserve(views.size());
  std::size_t base = 0;
  for (std::size_t b = 0; b < views.size(); ++b) {
    const auto& v = views[b];
    const std::size_t n = v.size();
    std::copy(v.features.begin(), v.features.end(),
              x.data().begin() + static_cast<std::ptrdiff_t>(base * d));
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < n; ++c) {
        const double a = v.adjacency[r * n + c];
        if (a != 0.0) {
          prop.indices.push_back(base + c);
          prop.values.push_back(a);
        }
      }
      prop.offsets.push_back(prop.indices.size());
      pool.indices.push_back(base + r);
      pool.values.push_back(v.weights[r]);
    }
    pool.offsets.push_back(pool.indices.size());
    centric_rows.push_back(base);
    base += n;
  }

  auto xs = tape.constant(std::move(x));
  auto z = ad::l2_normalize_rows(ad::prelu(ad::spmm(prop, ad::matmul(xs, enc.weight)), enc.slope));
  return {ad::select_rows(z, centric_rows), ad::sigmoid(ad::spmm(pool, z))};
}

Tensor centric_embeddings(const EncoderParams& params, std::span<const SubgraphView> views) {
  Tape tape;
  auto enc = bind(tape, params, false);
  return embed_batch(enc, views).centric.value();
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kCkptMagic[4] = {'S', 'C', 'K', 'P'};

template <typename T>
void write_pod(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T value;
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw std::runtime_error("checkpoint truncated");
  }
  return value;
}

void write_string(std::ostream& out, const std::string& s) {
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
  const auto len = read_pod<std::uint32_t>(in);
  std::string s(len, '\0');
  if (!in.read(s.data(), len)) throw std::runtime_error("checkpoint truncated");
  return s;
}

void write_tensor(std::ostream& out, const std::string& name, const Tensor& t) {
  write_string(out, name);
  write_pod<std::uint64_t>(out, t.rows());
  write_pod<std::uint64_t>(out, t.cols());
  for (double v : t.data()) write_pod<double>(out, v);
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out.write(kCkptMagic, 4);
  write_pod<std::uint32_t>(out, Checkpoint::kVersion);
  write_pod<std::uint64_t>(out, 2);
  write_tensor(out, "encoder.weight", ckpt.params.weight);
  write_tensor(out, "encoder.prelu_slope", ckpt.params.slope);
  write_string(out, ckpt.rng_state);
  write_pod<std::uint64_t>(out, ckpt.step);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kCkptMagic, 4) != 0) {
    throw std::runtime_error(path.string() + " is not a checkpoint (bad magic)");
  }
  const auto version = read_pod<std::uint32_t>(in);
  if (version != Checkpoint::kVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  const auto count = read_pod<std::uint64_t>(in);
  bool have_weight = false, have_slope = false;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name = read_string(in);
    const auto rows = read_pod<std::uint64_t>(in);
    const auto cols = read_pod<std::uint64_t>(in);
    if (rows * cols > (1ULL << 32)) throw std::runtime_error("checkpoint tensor too large");
    std::vector<double> data(rows * cols);
    for (auto& v : data) v = read_pod<double>(in);
    if (name == "encoder.weight") {
      ckpt.params.weight = Tensor(rows, cols, std::move(data));
      have_weight = true;
    } else if (name == "encoder.prelu_slope") {
      ckpt.params.slope = Tensor(rows, cols, std::move(data));
      have_slope = true;
    } else {
      throw std::runtime_error("unknown checkpoint tensor '" + name + "'");
    }
  }
  if (!have_weight || !have_slope) throw std::runtime_error("checkpoint is missing tensors");
  ckpt.rng_state = read_string(in);
  ckpt.step = read_pod<std::uint64_t>(in);
  return ckpt;
}

}  // namespace subcon
