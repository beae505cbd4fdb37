#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "subcon/connectivity.hpp"
#include "subcon/contrast.hpp"
#include "subcon/encoder.hpp"
#include "subcon/experiment.hpp"
#include "subcon/fewshot.hpp"
#include "subcon/graph.hpp"
#include "subcon/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace subcon;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::size_t threads = 1;
  std::string format = "json";
};

// Flat key/value output for --format csv; nested values are dumped as JSON.
void emit(const ordered_json& doc, const Globals& g, std::ostream& out = std::cout) {
  if (g.format == "json") {
    out << doc.dump(2) << '\n';
    return;
  }
  out << "key,value\n";
  for (const auto& [k, v] : doc.items()) {
    out << k << ',' << (v.is_string() ? v.get<std::string>() : v.dump()) << '\n';
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::vector<ClassId> parse_id_list(const std::string& s) {
  std::vector<ClassId> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    const unsigned long v = std::stoul(item, &used);
    if (used != item.size()) throw CLI::ValidationError("--novel", "bad class id '" + item + "'");
    out.push_back(static_cast<ClassId>(v));
  }
  return out;
}

ClassSplit resolve_split(const fs::path& graph_path, const std::string& split_path) {
  return load_split(split_path.empty() ? default_split_path(graph_path) : fs::path(split_path));
}

// The score source recorded in a cache header, so the cache always matches.
ScoreSource source_from_cache(const Graph& g, const fs::path& cache) {
  const auto header = read_score_cache_header(cache);
  if (header.graph_hash != graph_hash(g)) {
    throw std::runtime_error("score cache " + cache.string() + " was built for another graph");
  }
  return ScoreSource::from_params_json(g, header.params_json);
}

// ---------------------------------------------------------------------------

void cmd_graph_info(const Globals& glob, const std::string& path, const std::string& split_path) {
  const auto g = load_graph(path);
  std::vector<std::size_t> per_class(g.num_classes(), 0);
  for (ClassId c : g.labels()) ++per_class[c];
  const auto comps = connected_components(g);
  const std::size_t ncomp =
      comps.empty() ? 0 : *std::max_element(comps.begin(), comps.end()) + 1;
  ordered_json doc = {
      {"nodes", g.num_nodes()},
      {"edges", g.num_edges()},
      {"directed_edges", g.num_directed_edges()},
      {"feature_dim", g.feature_dim()},
      {"classes", g.num_classes()},
      {"average_degree", g.num_nodes() ? average_degree(g) : 0.0},
      {"components", ncomp},
      {"class_sizes", per_class},
      {"hash", graph_hash(g)},
  };
  const fs::path sp = split_path.empty() ? default_split_path(path) : fs::path(split_path);
  if (fs::exists(sp)) {
    const auto split = load_split(sp);
    split.validate(g);
    doc["base_classes"] = split.base_classes;
    doc["novel_classes"] = split.novel_classes;
  }
  emit(doc, glob);
}

void cmd_graph_synth(const Globals& glob, const std::string& spec_path, const std::string& out,
                     const std::string& novel) {
  std::ifstream in(spec_path);
  if (!in) throw std::runtime_error("cannot open spec " + spec_path);
  auto spec = parse_synthetic_spec(nlohmann::json::parse(in));
  if (glob.seed_given) spec.seed = glob.seed;
  const auto g = generate_sbm(spec);
  if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
  save_graph(g, out);
  ordered_json doc = {{"path", out}, {"nodes", g.num_nodes()}, {"edges", g.num_edges()},
                      {"hash", graph_hash(g)}};
  if (!novel.empty()) {
    ClassSplit split;
    split.novel_classes = parse_id_list(novel);
    for (ClassId c = 0; c < g.num_classes(); ++c) {
      if (!split.is_novel(c)) split.base_classes.push_back(c);
    }
    split.validate(g);
    save_split(split, default_split_path(out));
    doc["split"] = default_split_path(out).string();
  }
  emit(doc, glob);
}

struct ScoresArgs {
  std::string method = "nad";
  std::string graph;
  std::string out;
  std::size_t alpha_max = 50;
  double gamma = 0.3;
};

void cmd_scores(const Globals& glob, const ScoresArgs& a) {
  const auto g = load_graph(a.graph);
  ScoresConfig cfg;
  cfg.method = parse_score_method(a.method);
  cfg.gamma = a.gamma;
  cfg.alpha = a.alpha_max;
  cfg.nad.seed = glob.seed;
  if (!(cfg.gamma > 0.0 && cfg.gamma <= 1.0)) throw CLI::ValidationError("--gamma", "must lie in (0, 1]");
  if (a.alpha_max == 0 || a.alpha_max >= g.num_nodes()) {
    throw CLI::ValidationError("--alpha-max", "must lie in [1, M)");
  }
  SubgraphSampler sampler(g, make_score_source(g, cfg), a.alpha_max);
  std::vector<NodeId> all(g.num_nodes());
  for (NodeId v = 0; v < all.size(); ++v) all[v] = v;
  sampler.precompute(all, glob.threads);
  if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
  sampler.save_cache(a.out);
  emit({{"path", a.out}, {"method", a.method}, {"alpha_max", a.alpha_max}, {"records", all.size()}},
       glob);
}

// Reads the config document, letting --graph replace the graph entry.
ExperimentConfig config_with_overrides(const std::string& config_path, const std::string& graph,
                                       const std::string& split) {
  nlohmann::json doc = nlohmann::json::object();
  fs::path base;
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw ConfigError("cannot open config " + config_path);
    try {
      doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
    base = fs::path(config_path).parent_path();
  }
  if (!graph.empty()) {
    doc.erase("synthetic");
    doc["graph"] = fs::absolute(graph).string();
  }
  if (!split.empty()) doc["split"] = fs::absolute(split).string();
  auto c = parse_experiment_config(doc, base);
  c.validate();
  return c;
}

struct PretrainArgs {
  std::string graph, scores, config, out, trace, split;
};

void cmd_pretrain(const Globals& glob, const PretrainArgs& a) {
  auto cfg = config_with_overrides(a.config, a.graph, a.split);
  if (glob.seed_given) cfg.train.seed = glob.seed;
  cfg.train.threads = glob.threads;
  const auto data = load_experiment_data(cfg);
  auto source = a.scores.empty() ? make_score_source(data.graph, cfg.scores)
                                 : source_from_cache(data.graph, a.scores);
  SubgraphSampler sampler(data.graph, std::move(source), cfg.scores.alpha);
  if (!a.scores.empty()) sampler.load_cache(a.scores);

  const auto result = pretrain(data.graph, data.split, sampler, cfg.train, cfg.encoder);
  for (const auto& w : result.warnings) std::cerr << "warning: " << w << '\n';

  if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
  Checkpoint ckpt{result.params, result.rng_state, result.trace.size()};
  save_checkpoint(ckpt, a.out);
  const fs::path trace = a.trace.empty() ? fs::path(a.out + ".loss.csv") : fs::path(a.trace);
  write_loss_trace_csv(result.trace, trace);
  emit({{"checkpoint", a.out},
        {"trace", trace.string()},
        {"steps", result.trace.size()},
        {"final_loss", result.trace.empty() ? 0.0 : result.trace.back().loss},
        {"early_stopped", result.early_stopped},
        {"checksum", result.params.checksum()}},
       glob);
}

struct EvalArgs {
  std::string graph, scores, ckpt, split, out, config;
  EvalProtocol protocol;
};

struct Loaded {
  Graph graph;
  ClassSplit split;
  Checkpoint ckpt;
};

// Without a cache, rankings use default NAD settings and are computed lazily.
std::unique_ptr<SubgraphSampler> make_sampler(const Loaded& l, const std::string& scores,
                                              std::size_t alpha) {
  if (scores.empty()) {
    return std::make_unique<SubgraphSampler>(l.graph, ScoreSource::nad(l.graph, NadParams{}, 0.3),
                                             alpha);
  }
  auto s = std::make_unique<SubgraphSampler>(l.graph, source_from_cache(l.graph, scores), alpha);
  s->load_cache(scores);
  return s;
}

void cmd_eval(const Globals& glob, EvalArgs a, std::size_t alpha) {
  Loaded l{load_graph(a.graph), {}, load_checkpoint(a.ckpt)};
  l.split = resolve_split(a.graph, a.split);
  l.split.validate(l.graph);
  if (glob.seed_given) a.protocol.seed = glob.seed;
  a.protocol.threads = glob.threads;
  const auto sampler = make_sampler(l, a.scores, alpha);
  const auto result = evaluate(l.graph, l.split, l.ckpt.params, *sampler, a.protocol);
  if (result.nonconverged > 0) {
    std::cerr << "warning: logistic regression hit max_iterations in " << result.nonconverged
              << " episodes\n";
  }
  const auto doc = to_json(result, a.protocol);
  if (!a.out.empty()) write_text(a.out, doc.dump(2) + "\n");
  emit({{"mean", result.mean},
        {"std", result.std},
        {"ci95", result.ci95},
        {"episodes", result.records.size()},
        {"nonconverged", result.nonconverged}},
       glob);
}

struct ClusterArgs {
  std::string graph, scores, ckpt, split, out;
  std::size_t classes = 0;
  std::size_t per_class = 0;
};

void cmd_cluster(const Globals& glob, const ClusterArgs& a, std::size_t alpha) {
  Loaded l{load_graph(a.graph), {}, load_checkpoint(a.ckpt)};
  l.split = resolve_split(a.graph, a.split);
  l.split.validate(l.graph);
  const auto sampler = make_sampler(l, a.scores, alpha);

  std::vector<ClassId> classes = l.split.novel_classes;
  std::mt19937_64 rng(derive_seed(glob.seed, 7));
  std::shuffle(classes.begin(), classes.end(), rng);
  if (a.classes > 0 && a.classes < classes.size()) classes.resize(a.classes);
  std::sort(classes.begin(), classes.end());
  if (classes.size() < 2) throw std::invalid_argument("clustering needs at least two classes");

  const auto by_class = nodes_by_class(l.graph);
  std::vector<NodeId> nodes;
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < classes.size(); ++i) {
    auto pool = by_class[classes[i]];
    if (a.per_class > 0 && a.per_class < pool.size()) {
      std::shuffle(pool.begin(), pool.end(), rng);
      pool.resize(a.per_class);
      std::sort(pool.begin(), pool.end());
    }
    for (auto v : pool) {
      nodes.push_back(v);
      labels.push_back(i);
    }
  }
  const auto embed = encoder_embedding(l.ckpt.params, *sampler, glob.threads);
  const auto m = cluster_metrics(embed(nodes), labels, classes.size(), glob.seed);
  ordered_json doc = {{"nmi", m.nmi}, {"ari", m.ari}, {"k", classes.size()},
                      {"points", nodes.size()}, {"classes", classes}};
  if (!a.out.empty()) write_text(a.out, doc.dump(2) + "\n");
  emit(doc, glob);
}

struct SweepArgs {
  std::string config, axis, values, out;
};

void cmd_sweep(const Globals& glob, const SweepArgs& a) {
  auto cfg = config_with_overrides(a.config, "", "");
  if (glob.seed_given) {
    cfg.train.seed = glob.seed;
    cfg.eval.seed = glob.seed;
  }
  cfg.train.threads = glob.threads;
  cfg.eval.threads = glob.threads;
  const auto axis = parse_sweep_axis(a.axis);
  std::vector<std::string> values;
  if (a.values.empty()) {
    if (axis != SweepAxis::loss) throw CLI::ValidationError("--values", "required for this axis");
    values = loss_ablation_grid();
  } else {
    std::stringstream in(a.values);
    std::string item;
    while (std::getline(in, item, ',')) {
      if (!item.empty()) values.push_back(item);
    }
  }
  const auto rows = run_sweep(cfg, axis, values, [](const SweepRow& r) {
    std::cerr << r.value << ": " << (r.ok ? "ok" : "error: " + r.error) << '\n';
  });
  const fs::path out = a.out.empty() ? cfg.output_dir / ("sweep_" + a.axis + ".csv") : fs::path(a.out);
  write_text(out, sweep_csv(rows));
  if (glob.format == "csv") {
    std::cout << sweep_csv(rows);
  } else {
    ordered_json doc = ordered_json::array();
    for (const auto& r : rows) {
      ordered_json row = {{"value", r.value}, {"ok", r.ok}};
      if (r.ok) {
        row["mean"] = r.mean;
        row["ci95"] = r.ci95;
      } else {
        row["error"] = r.error;
      }
      doc.push_back(row);
    }
    std::cout << doc.dump(2) << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"subcon: supervised subgraph contrastive pretraining for few-shot node classification"};
  app.require_subcommand(1);
  Globals glob;
  auto* seed_opt = app.add_option("--seed", glob.seed, "Random seed")->capture_default_str();
  app.add_option("--threads", glob.threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--format", glob.format, "Output format")->check(CLI::IsMember({"json", "csv"}));

  auto* graph = app.add_subcommand("graph", "Inspect or generate graphs");
  graph->require_subcommand(1);
  std::string info_path, info_split;
  auto* info = graph->add_subcommand("info", "Print graph statistics");
  info->add_option("path", info_path, "GFB1 file")->required()->check(CLI::ExistingFile);
  info->add_option("--split", info_split, "Split JSON (default: sidecar)");
  std::string synth_spec, synth_out, synth_novel;
  auto* synth = graph->add_subcommand("synth", "Generate a stochastic block model graph");
  synth->add_option("--spec", synth_spec, "Synthetic spec JSON")->required()->check(CLI::ExistingFile);
  synth->add_option("-o,--output", synth_out, "Output GFB1 path")->required();
  synth->add_option("--novel", synth_novel, "Comma-separated novel class ids; writes the split sidecar");

  ScoresArgs sa;
  auto* scores = app.add_subcommand("scores", "Precompute connectivity rankings for every node");
  scores->add_option("--method", sa.method, "Score method")->check(CLI::IsMember({"nad", "ppr"}));
  scores->add_option("--graph", sa.graph, "GFB1 file")->required()->check(CLI::ExistingFile);
  scores->add_option("-o,--output", sa.out, "Score cache path")->required();
  scores->add_option("--alpha-max", sa.alpha_max, "Neighbours stored per node")->capture_default_str();
  scores->add_option("--gamma", sa.gamma, "Self score")->capture_default_str();

  PretrainArgs pa;
  auto* pre = app.add_subcommand("pretrain", "Pretrain the encoder");
  pre->add_option("--graph", pa.graph, "GFB1 file (overrides the config)")->check(CLI::ExistingFile);
  pre->add_option("--scores", pa.scores, "Score cache")->check(CLI::ExistingFile);
  pre->add_option("--config", pa.config, "Experiment config JSON")->check(CLI::ExistingFile);
  pre->add_option("--split", pa.split, "Split JSON (default: sidecar)")->check(CLI::ExistingFile);
  pre->add_option("-o,--output", pa.out, "Checkpoint path")->required();
  pre->add_option("--trace", pa.trace, "Loss trace CSV (default: <ckpt>.loss.csv)");

  EvalArgs ea;
  std::size_t eval_alpha = 19;
  auto* ev = app.add_subcommand("eval", "Few-shot evaluation of a checkpoint");
  ev->add_option("--graph", ea.graph, "GFB1 file")->required()->check(CLI::ExistingFile);
  ev->add_option("--scores", ea.scores, "Score cache")->check(CLI::ExistingFile);
  ev->add_option("--ckpt", ea.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  ev->add_option("--split", ea.split, "Split JSON (default: sidecar)")->check(CLI::ExistingFile);
  ev->add_option("--alpha", eval_alpha, "Subgraph size minus one")->capture_default_str();
  ev->add_option("--nway", ea.protocol.nway)->capture_default_str();
  ev->add_option("--kshot", ea.protocol.kshot)->capture_default_str();
  ev->add_option("--qsize", ea.protocol.qsize)->capture_default_str();
  ev->add_option("--episodes", ea.protocol.episodes)->capture_default_str();
  ev->add_option("--seeds", ea.protocol.seeds)->capture_default_str();
  ev->add_option("--l2", ea.protocol.logreg.l2)->capture_default_str();
  ev->add_option("-o,--output", ea.out, "Results JSON");

  ClusterArgs ca;
  std::size_t cluster_alpha = 19;
  auto* cl = app.add_subcommand("cluster", "NMI/ARI of novel-class embeddings");
  cl->add_option("--graph", ca.graph, "GFB1 file")->required()->check(CLI::ExistingFile);
  cl->add_option("--scores", ca.scores, "Score cache")->check(CLI::ExistingFile);
  cl->add_option("--ckpt", ca.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  cl->add_option("--split", ca.split, "Split JSON (default: sidecar)")->check(CLI::ExistingFile);
  cl->add_option("--alpha", cluster_alpha, "Subgraph size minus one")->capture_default_str();
  cl->add_option("--classes", ca.classes, "Novel classes to sample (0 = all)")->capture_default_str();
  cl->add_option("--per-class", ca.per_class, "Nodes per class (0 = all)")->capture_default_str();
  cl->add_option("-o,--output", ca.out, "Metrics JSON");

  SweepArgs sw;
  auto* sweep = app.add_subcommand("sweep", "Pretrain + eval over a parameter grid");
  sweep->add_option("--config", sw.config, "Experiment config JSON")->required()->check(CLI::ExistingFile);
  sweep->add_option("--axis", sw.axis, "beta, batch or loss")->required()->check(CLI::IsMember({"beta", "batch", "loss"}));
  sweep->add_option("--values", sw.values, "Comma-separated grid (loss default: full ablation)");
  sweep->add_option("-o,--output", sw.out, "CSV path (default: <output_dir>/sweep_<axis>.csv)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }
  glob.seed_given = seed_opt->count() > 0;

  try {
    if (info->parsed()) cmd_graph_info(glob, info_path, info_split);
    if (synth->parsed()) cmd_graph_synth(glob, synth_spec, synth_out, synth_novel);
    if (scores->parsed()) cmd_scores(glob, sa);
    if (pre->parsed()) {
      if (pa.config.empty() && pa.graph.empty()) {
        throw CLI::ValidationError("pretrain", "need --config or --graph");
      }
      cmd_pretrain(glob, pa);
    }
    if (ev->parsed()) cmd_eval(glob, ea, eval_alpha);
    if (cl->parsed()) cmd_cluster(glob, ca, cluster_alpha);
    if (sweep->parsed()) cmd_sweep(glob, sw);
  } catch (const CLI::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
