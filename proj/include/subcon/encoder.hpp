#ifndef SUBCON_ENCODER_HPP
#define SUBCON_ENCODER_HPP

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>

#include "subcon/autodiff.hpp"
#include "subcon/connectivity.hpp"
#include "subcon/graph.hpp"

namespace subcon {

struct EncoderConfig {
  std::size_t embedding_dim = 64;
  double prelu_init = 0.25;
};

/// One graph-convolution layer followed by a shared-slope PReLU.
struct EncoderParams {
  Tensor weight;  // d x F
  Tensor slope;   // 1 x 1

  /// Glorot-uniform weight in +-sqrt(6 / (d + F)).
  static EncoderParams init(std::size_t input_dim, const EncoderConfig& config,
                            std::uint64_t seed);

  std::size_t input_dim() const { return weight.rows(); }
  std::size_t embedding_dim() const { return weight.cols(); }
  /// FNV-1a over the raw parameter bytes.
  std::uint64_t checksum() const;
};

/// Encoder parameters placed on a tape.
struct BoundEncoder {
  Var weight;
  Var slope;
};

/// Registers the parameters as differentiable leaves, or as constants when
/// `trainable` is false.
BoundEncoder bind(Tape& tape, const EncoderParams& params, bool trainable = true);

/// Z' = rownorm(PReLU(A_norm X' W)) over one view; (alpha + 1) x F.
Var encode(const BoundEncoder& enc, const SubgraphView& view);

/// sigmoid(weights^T Z'); 1 x F.
Var readout(Var embeddings, std::span<const double> weights);

struct DuoEmbedding {
  Var z;          // centric row of Z', unit norm
  Var z_readout;  // subgraph summary
  ClassId label = 0;
};

DuoEmbedding embed_duo(const BoundEncoder& enc, const SubgraphView& view, const Graph& g);

/// All views encoded in one pass: stacked features, a block-diagonal sparse
/// propagation matrix and a sparse readout matrix.
struct BatchEmbedding {
  Var centric;   // B x F
  Var readouts;  // B x F
};

BatchEmbedding embed_batch(const BoundEncoder& enc, std::span<const SubgraphView> views);

/// Frozen-encoder centric embeddings, one row per view.
Tensor centric_embeddings(const EncoderParams& params, std::span<const SubgraphView> views);

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  EncoderParams params;
  /// Textual mt19937_64 state of the sampling stream.
  std::string rng_state;
  std::uint64_t step = 0;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace subcon

#endif  // SUBCON_ENCODER_HPP
