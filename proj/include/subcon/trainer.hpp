#ifndef SUBCON_TRAINER_HPP
#define SUBCON_TRAINER_HPP

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "subcon/autodiff.hpp"
#include "subcon/connectivity.hpp"
#include "subcon/contrast.hpp"
#include "subcon/encoder.hpp"
#include "subcon/graph.hpp"

namespace subcon {

enum class LossKind { gsupcon, simclr, ce };

std::string to_string(LossKind k);
LossKind parse_loss_kind(const std::string& s);

struct TrainConfig {
  double lr = 1e-3;
  /// Added to the gradient as an L2 term (coupled, not AdamW).
  double weight_decay = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t batch_size = 500;
  /// An epoch is ceil(|base nodes| / B) steps.
  std::size_t epochs = 100;
  /// When non-zero, run exactly this many steps and skip early stopping.
  std::size_t steps = 0;
  std::size_t patience = 10;
  double plateau_tol = 1e-4;
  /// Graph temperature hyperparameter; tau = beta / sqrt(avg degree).
  double beta = 1.0;
  std::size_t alpha = 19;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::gsupcon;
  bool balanced_sampling = true;
  /// L2-normalize subgraph readouts before the contrastive dot products.
  /// Unnormalized sigmoid readouts all share a large positive component,
  /// which rewards collapsing every embedding onto one direction.
  bool normalize_readout = true;
  std::size_t threads = 1;
  /// Steps per window for the "loss stopped decreasing" warning.
  std::size_t warn_window = 200;

  void validate() const;
};

struct AdamState {
  std::vector<Tensor> first;
  std::vector<Tensor> second;
  std::uint64_t step = 0;
};

/// One bias-corrected Adam update. Throws NonFiniteError, leaving params and
/// state untouched, if any gradient entry is not finite.
void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state,
               const TrainConfig& config);

struct StepRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double wall_ms = 0.0;
};

struct TrainResult {
  EncoderParams params;
  std::vector<StepRecord> trace;
  std::vector<std::string> warnings;
  std::string rng_state;
  bool early_stopped = false;
};

/// balanced_sample -> subgraphs -> duo embeddings -> loss -> backward -> Adam,
/// repeated. Deterministic for a fixed config. `on_step` sees every record.
TrainResult pretrain(const Graph& g, const ClassSplit& split, const SubgraphSampler& subgraphs,
                     const TrainConfig& config, const EncoderConfig& encoder = {},
                     const std::function<void(const StepRecord&)>& on_step = {});

/// Loss for one planned batch under `config.loss`; exposed for tests.
double batch_loss(const Graph& g, const SubgraphSampler& subgraphs, const EncoderParams& params,
                  std::span<const NodeId> nodes, const TrainConfig& config);

void write_loss_trace_csv(std::span<const StepRecord> trace, const std::filesystem::path& path);

/// Independent generator for one purpose ("init", "sampling", ...).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace subcon

#endif  // SUBCON_TRAINER_HPP
