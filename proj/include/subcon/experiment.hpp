#ifndef SUBCON_EXPERIMENT_HPP
#define SUBCON_EXPERIMENT_HPP

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "subcon/connectivity.hpp"
#include "subcon/encoder.hpp"
#include "subcon/fewshot.hpp"
#include "subcon/graph.hpp"
#include "subcon/trainer.hpp"

namespace subcon {

/// Invalid or inconsistent experiment configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ScoresConfig {
  ScoreMethod method = ScoreMethod::nad;
  double gamma = 0.3;
  std::size_t alpha = 19;
  NadParams nad;
  PprParams ppr;
  /// Optional precomputed score cache.
  std::optional<std::filesystem::path> cache;
};

/// A single JSON document describing graph, augmentation, encoder,
/// pretraining and evaluation. Unknown keys are rejected at every level.
///
///   {"graph": "g.gfb" | "synthetic": {...}, "split": "g.split.json" | {...},
///    "scores": {...}, "encoder": {...}, "train": {...}, "eval": {...},
///    "output_dir": "out"}
struct ExperimentConfig {
  std::optional<std::filesystem::path> graph;
  std::optional<SyntheticSpec> synthetic;
  std::optional<std::filesystem::path> split_path;
  std::optional<ClassSplit> split;
  ScoresConfig scores;
  EncoderConfig encoder;
  TrainConfig train;
  EvalProtocol eval;
  std::filesystem::path output_dir = ".";

  /// Range checks (gamma in (0, 1], alpha >= 1, beta > 0, ...) and that
  /// every referenced input file exists.
  void validate() const;
};

/// Relative paths are resolved against `base_dir`.
ExperimentConfig parse_experiment_config(const nlohmann::json& doc,
                                         const std::filesystem::path& base_dir = {});
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
nlohmann::ordered_json to_json(const ExperimentConfig& config);

SyntheticSpec parse_synthetic_spec(const nlohmann::json& doc);
nlohmann::ordered_json to_json(const SyntheticSpec& spec);

ScoreSource make_score_source(const Graph& g, const ScoresConfig& config);

struct ExperimentData {
  Graph graph;
  ClassSplit split;
};

/// Loads or generates the graph and resolves the split (explicit object,
/// explicit path, or the graph's sidecar).
ExperimentData load_experiment_data(const ExperimentConfig& config);

struct ExperimentResult {
  TrainResult train;
  EvalResult eval;
};

/// Pretrain then evaluate with the given sampler (shared across runs so the
/// score cache is reused).
ExperimentResult run_experiment(const ExperimentData& data, const SubgraphSampler& subgraphs,
                                const ExperimentConfig& config);

enum class SweepAxis { beta, batch, loss };

SweepAxis parse_sweep_axis(const std::string& s);

/// One grid value; "loss" values are "<loss>/<bs|no-bs>".
struct SweepRow {
  std::string value;
  bool ok = false;
  double mean = 0.0;
  double ci95 = 0.0;
  std::string error;
};

/// The five loss/sampling combinations of the loss ablation.
std::vector<std::string> loss_ablation_grid();

/// One pretrain + eval per grid value. A failing point is recorded in its
/// row and the sweep moves on.
std::vector<SweepRow> run_sweep(const ExperimentConfig& config, SweepAxis axis,
                                const std::vector<std::string>& values,
                                const std::function<void(const SweepRow&)>& on_row = {});

/// Columns: value, mean_acc, ci95, status.
void write_sweep_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path);
std::string sweep_csv(const std::vector<SweepRow>& rows);

}  // namespace subcon

#endif  // SUBCON_EXPERIMENT_HPP
