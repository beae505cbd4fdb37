#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "subcon/encoder.hpp"

using namespace subcon;

namespace {

struct Fixture {
  Graph g;
  std::vector<SubgraphView> views;

  explicit Fixture(std::uint64_t seed, std::size_t n = 30, std::size_t alpha = 5) {
    std::mt19937_64 rng(seed);
    g = oracle::random_graph(rng, n, 0.15, 6, 3);
    const auto src = ScoreSource::nad(g, NadParams{}, 0.3);
    for (NodeId j = 0; j < 8; ++j) views.push_back(build_subgraph(g, src, j, alpha));
  }
};

// Dense reference for one view: rownorm(PReLU(A X W)), then sigmoid(w^T Z).
std::pair<std::vector<double>, std::vector<double>> reference(const EncoderParams& p,
                                                              const SubgraphView& v) {
  const std::size_t n = v.size(), d = v.feature_dim, f = p.embedding_dim();
  std::vector<double> ax(n * d, 0.0), z(n * f, 0.0);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t k = 0; k < d; ++k) ax[a * d + k] += v.adjacency[a * n + b] * v.features[b * d + k];
    }
  }
  const double slope = p.slope.item();
  for (std::size_t a = 0; a < n; ++a) {
    double norm = 0.0;
    for (std::size_t c = 0; c < f; ++c) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += ax[a * d + k] * p.weight(k, c);
      s = s > 0 ? s : slope * s;
      z[a * f + c] = s;
      norm += s * s;
    }
    norm = std::sqrt(norm);
    for (std::size_t c = 0; c < f; ++c) z[a * f + c] /= norm;
  }
  std::vector<double> centric(z.begin(), z.begin() + f), read(f, 0.0);
  for (std::size_t c = 0; c < f; ++c) {
    double s = 0.0;
    for (std::size_t a = 0; a < n; ++a) s += v.weights[a] * z[a * f + c];
    read[c] = 1.0 / (1.0 + std::exp(-s));
  }
  return {centric, read};
}

}  // namespace

TEST_CASE("parameter init") {
  EncoderConfig cfg;
  cfg.embedding_dim = 16;
  const auto p = EncoderParams::init(10, cfg, 3);
  CHECK(p.weight.rows() == 10);
  CHECK(p.weight.cols() == 16);
  CHECK(p.slope.item() == 0.25);
  const double bound = std::sqrt(6.0 / 26.0);
  for (double w : p.weight.data()) CHECK(std::abs(w) <= bound);
  CHECK(EncoderParams::init(10, cfg, 3).checksum() == p.checksum());
  CHECK(EncoderParams::init(10, cfg, 4).checksum() != p.checksum());
}

TEST_CASE("single view matches a dense reference") {
  Fixture fx(1);
  EncoderConfig cfg;
  cfg.embedding_dim = 8;
  const auto p = EncoderParams::init(6, cfg, 9);
  for (const auto& v : fx.views) {
    Tape t;
    const auto enc = bind(t, p);
    const auto duo = embed_duo(enc, v, fx.g);
    const auto [centric, read] = reference(p, v);
    CHECK(duo.label == fx.g.label(v.centric));
    double norm = 0.0;
    for (std::size_t c = 0; c < 8; ++c) {
      CHECK(duo.z.value()[c] == doctest::Approx(centric[c]).epsilon(1e-12));
      CHECK(duo.z_readout.value()[c] == doctest::Approx(read[c]).epsilon(1e-12));
      CHECK((duo.z_readout.value()[c] > 0.0 && duo.z_readout.value()[c] < 1.0));
      norm += duo.z.value()[c] * duo.z.value()[c];
    }
    CHECK(norm == doctest::Approx(1.0));
  }
}

TEST_CASE("batched path is bit-identical to the per-view path") {
  Fixture fx(2);
  EncoderConfig cfg;
  cfg.embedding_dim = 7;
  const auto p = EncoderParams::init(6, cfg, 1);
  Tape t;
  const auto enc = bind(t, p);
  const auto batch = embed_batch(enc, fx.views);
  REQUIRE(batch.centric.rows() == fx.views.size());
  for (std::size_t b = 0; b < fx.views.size(); ++b) {
    const auto duo = embed_duo(enc, fx.views[b], fx.g);
    for (std::size_t c = 0; c < 7; ++c) {
      CHECK(batch.centric.value()(b, c) == duo.z.value()[c]);
      CHECK(batch.readouts.value()(b, c) == duo.z_readout.value()[c]);
    }
  }
  const auto frozen = centric_embeddings(p, fx.views);
  for (std::size_t i = 0; i < frozen.size(); ++i) CHECK(frozen[i] == batch.centric.value()[i]);
}

TEST_CASE("frozen binding has no gradient path") {
  Fixture fx(3);
  const auto p = EncoderParams::init(6, EncoderConfig{}, 1);
  Tape t;
  const auto enc = bind(t, p, false);
  CHECK_FALSE(t.requires_grad(enc.weight));
  CHECK(t.parameters().empty());
}

TEST_CASE("checkpoint round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "subcon_test_encoder";
  std::filesystem::create_directories(dir);
  const auto path = dir / "model.ckpt";
  Checkpoint ck{EncoderParams::init(5, EncoderConfig{}, 7), "1 2 3", 42};
  save_checkpoint(ck, path);
  const auto back = load_checkpoint(path);
  CHECK(back.params.checksum() == ck.params.checksum());
  CHECK(back.rng_state == "1 2 3");
  CHECK(back.step == 42);

  std::ofstream(path, std::ios::trunc | std::ios::binary) << "SCKPjunk";
  CHECK_THROWS(load_checkpoint(path));
  CHECK_THROWS(load_checkpoint(dir / "missing.ckpt"));
}
