#include "subcon/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>

namespace subcon {

std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::gsupcon: return "gsupcon";
    case LossKind::simclr: return "simclr";
    case LossKind::ce: return "ce";
  }
  return "?";
}

LossKind parse_loss_kind(const std::string& s) {
  if (s == "gsupcon") return LossKind::gsupcon;
  if (s == "simclr") return LossKind::simclr;
  if (s == "ce") return LossKind::ce;
  throw std::invalid_argument("unknown loss '" + s + "' (expected gsupcon, simclr or ce)");
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("Adam betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw std::invalid_argument("eps must be positive");
  if (weight_decay < 0.0) throw std::invalid_argument("weight_decay must be non-negative");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (!(beta > 0.0)) throw std::invalid_argument("beta must be positive");
  if (alpha == 0) throw std::invalid_argument("alpha must be >= 1");
  if (steps == 0 && epochs == 0) throw std::invalid_argument("need steps or epochs");
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), 0x5ecd5u};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state,
               const TrainConfig& config) {
  if (params.size() != grads.size()) throw ShapeError("adam_step: parameter/gradient count");
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (!params[p]->same_shape(grads[p])) throw ShapeError("adam_step: gradient shape");
    if (!grads[p].all_finite()) throw NonFiniteError("adam_step gradient", p);
  }
  if (state.first.empty()) {
    for (auto* p : params) {
      state.first.emplace_back(p->rows(), p->cols());
      state.second.emplace_back(p->rows(), p->cols());
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& theta = *params[p];
    auto& m = state.first[p];
    auto& v = state.second[p];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double g = grads[p][i] + config.weight_decay * theta[i];
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
      theta[i] -= config.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config.eps);
    }
  }
}

namespace {

struct StepOutput {
  double loss;
  std::vector<Tensor> grads;  // encoder weight, slope, [head weight, head bias]
};

StepOutput run_step(const Graph& g, const SubgraphSampler& subgraphs,
                    const EncoderParams& params, const LinearHead* head,
                    std::span<const NodeId> nodes, const TrainConfig& config, double tau,
                    bool want_grads) {
  const auto views = subgraphs.views(nodes, config.threads);
  std::vector<ClassId> labels(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) labels[i] = g.label(nodes[i]);

  Tape tape;
  auto enc = bind(tape, params, want_grads);
  const auto emb = embed_batch(enc, views);
  Var loss;
  Var head_w, head_b;
  switch (config.loss) {
    case LossKind::gsupcon:
      loss = gsupcon_loss(make_duo_batch(emb, labels, tau, config.normalize_readout));
      break;
    case LossKind::simclr:
      loss = simclr_loss(make_duo_batch(emb, labels, tau, config.normalize_readout));
      break;
    case LossKind::ce:
      head_w = want_grads ? tape.parameter(head->weight, "head.weight") : tape.constant(head->weight);
      head_b = want_grads ? tape.parameter(head->bias, "head.bias") : tape.constant(head->bias);
      loss = ce_pretrain_loss(emb.centric, labels, head->classes, head_w, head_b);
      break;
  }
  StepOutput out{loss.value().item(), {}};
  if (want_grads) {
    tape.backward(loss);
    out.grads.push_back(tape.grad(enc.weight));
    out.grads.push_back(tape.grad(enc.slope));
    if (config.loss == LossKind::ce) {
      out.grads.push_back(tape.grad(head_w));
      out.grads.push_back(tape.grad(head_b));
    }
  }
  return out;
}

}  // namespace

double batch_loss(const Graph& g, const SubgraphSampler& subgraphs, const EncoderParams& params,
                  std::span<const NodeId> nodes, const TrainConfig& config) {
  LinearHead head;
  if (config.loss == LossKind::ce) {
    std::vector<ClassId> classes;
    for (auto v : nodes) {
      if (std::find(classes.begin(), classes.end(), g.label(v)) == classes.end()) {
        classes.push_back(g.label(v));
      }
    }
    std::sort(classes.begin(), classes.end());
    head = LinearHead::init(params.embedding_dim(), classes, derive_seed(config.seed, 3));
  }
  return run_step(g, subgraphs, params, &head, nodes, config, temperature(config.beta, g), false)
      .loss;
}

TrainResult pretrain(const Graph& g, const ClassSplit& split, const SubgraphSampler& subgraphs,
                     const TrainConfig& config, const EncoderConfig& encoder,
                     const std::function<void(const StepRecord&)>& on_step) {
  config.validate();
  split.validate(g);
  if (split.base_classes.empty()) throw std::invalid_argument("pretraining needs base classes");
  if (subgraphs.alpha() != config.alpha) {
    throw std::invalid_argument("subgraph sampler alpha differs from the training config");
  }
  const double tau = temperature(config.beta, g);

  TrainResult result;
  result.params = EncoderParams::init(g.feature_dim(), encoder, derive_seed(config.seed, 1));
  LinearHead head;
  if (config.loss == LossKind::ce) {
    head = LinearHead::init(encoder.embedding_dim, split.base_classes, derive_seed(config.seed, 3));
  }
  std::mt19937_64 rng(derive_seed(config.seed, 2));

  std::optional<BalancedSampler> balanced;
  std::optional<UniformSampler> uniform;
  std::size_t base_nodes = 0;
  for (ClassId c : g.labels()) base_nodes += split.is_base(c);
  if (config.balanced_sampling) {
    balanced.emplace(g, split, config.batch_size);
  } else {
    uniform.emplace(g, split, config.batch_size);
  }
  const std::size_t effective = balanced ? balanced->effective_batch() : uniform->effective_batch();
  const std::size_t steps_per_epoch = (base_nodes + effective - 1) / effective;
  const std::size_t total_steps = config.steps > 0 ? config.steps : config.epochs * steps_per_epoch;

  AdamState state;
  double best_epoch = std::numeric_limits<double>::infinity();
  std::size_t stale_epochs = 0;
  double epoch_sum = 0.0;
  bool warned_plateau = false;
  bool warned_small_class = false;

  for (std::size_t step = 0; step < total_steps; ++step) {
    const auto start = std::chrono::steady_clock::now();
    auto plan = balanced ? balanced->sample(rng) : uniform->sample(rng);
    if (!plan.warnings.empty() && !warned_small_class) {
      result.warnings.insert(result.warnings.end(), plan.warnings.begin(), plan.warnings.end());
      warned_small_class = true;
    }
    auto out = run_step(g, subgraphs, result.params, &head, plan.nodes, config, tau, true);
    std::vector<Tensor*> params = {&result.params.weight, &result.params.slope};
    if (config.loss == LossKind::ce) {
      params.push_back(&head.weight);
      params.push_back(&head.bias);
    }
    adam_step(params, out.grads, state, config);
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    StepRecord rec{step, out.loss, ms};
    result.trace.push_back(rec);
    if (on_step) on_step(rec);

    const std::size_t w = config.warn_window;
    if (!warned_plateau && w > 0 && result.trace.size() >= 2 * w && result.trace.size() % w == 0) {
      double recent = 0.0, previous = 0.0;
      const std::size_t n = result.trace.size();
      for (std::size_t i = n - w; i < n; ++i) recent += result.trace[i].loss;
      for (std::size_t i = n - 2 * w; i < n - w; ++i) previous += result.trace[i].loss;
      if (recent >= previous) {
        result.warnings.push_back("loss did not decrease over steps " + std::to_string(n - w) +
                                  ".." + std::to_string(n - 1));
        warned_plateau = true;
      }
    }

    if (config.steps == 0) {
      epoch_sum += out.loss;
      if ((step + 1) % steps_per_epoch == 0) {
        const double mean = epoch_sum / static_cast<double>(steps_per_epoch);
        epoch_sum = 0.0;
        if (best_epoch - mean > config.plateau_tol * std::abs(best_epoch) ||
            !std::isfinite(best_epoch)) {
          best_epoch = mean;
          stale_epochs = 0;
        } else if (++stale_epochs >= config.patience) {
          result.early_stopped = true;
          break;
        }
      }
    }
  }

  std::ostringstream rng_state;
  rng_state << rng;
  result.rng_state = rng_state.str();
  return result;
}

void write_loss_trace_csv(std::span<const StepRecord> trace, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write loss trace " + path.string());
  out << "step,loss,wall_ms\n";
  out.precision(17);
  for (const auto& r : trace) out << r.step << ',' << r.loss << ',' << r.wall_ms << '\n';
}

}  // namespace subcon
