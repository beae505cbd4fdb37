#include "subcon/experiment.hpp"

#include <fstream>
#include <sstream>

namespace subcon {

namespace {

using nlohmann::json;

void check_keys(const json& obj, std::initializer_list<const char*> allowed,
                const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (const auto& [key, _] : obj.items()) {
    bool known = false;
    for (const char* a : allowed) known = known || key == a;
    if (!known) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  if (path.is_relative() && !base.empty()) return base / path;
  return path;
}

ClassSplit parse_split_object(const json& doc) {
  check_keys(doc, {"base_classes", "novel_classes"}, "split");
  ClassSplit s;
  if (!doc.contains("base_classes") || !doc.contains("novel_classes")) {
    throw ConfigError("split: needs base_classes and novel_classes");
  }
  read(doc, "base_classes", s.base_classes, "split");
  read(doc, "novel_classes", s.novel_classes, "split");
  return s;
}

void parse_scores(const json& doc, ScoresConfig& s, const std::filesystem::path& base) {
  check_keys(doc, {"method", "gamma", "alpha", "nad", "ppr", "cache"}, "scores");
  if (doc.contains("method")) {
    try {
      s.method = parse_score_method(doc.at("method").get<std::string>());
    } catch (const std::exception& e) {
      throw ConfigError(std::string("scores.method: ") + e.what());
    }
  }
  read(doc, "gamma", s.gamma, "scores");
  read(doc, "alpha", s.alpha, "scores");
  if (doc.contains("cache")) {
    std::string p;
    read(doc, "cache", p, "scores");
    s.cache = resolve(base, p);
  }
  if (doc.contains("nad")) {
    const auto& n = doc.at("nad");
    check_keys(n, {"eta", "iterations", "vectors", "epsilon", "seed", "isolated"}, "scores.nad");
    read(n, "eta", s.nad.eta, "scores.nad");
    read(n, "iterations", s.nad.iterations, "scores.nad");
    read(n, "vectors", s.nad.vectors, "scores.nad");
    read(n, "epsilon", s.nad.epsilon, "scores.nad");
    read(n, "seed", s.nad.seed, "scores.nad");
    std::string iso = "keep";
    read(n, "isolated", iso, "scores.nad");
    if (iso != "keep" && iso != "error") {
      throw ConfigError("scores.nad.isolated: expected 'keep' or 'error'");
    }
    s.nad.isolated = iso == "keep" ? IsolatedPolicy::keep_value : IsolatedPolicy::error;
  }
  if (doc.contains("ppr")) {
    const auto& p = doc.at("ppr");
    check_keys(p, {"phi", "tolerance", "max_iterations", "literal_formula"}, "scores.ppr");
    read(p, "phi", s.ppr.phi, "scores.ppr");
    read(p, "tolerance", s.ppr.tolerance, "scores.ppr");
    read(p, "max_iterations", s.ppr.max_iterations, "scores.ppr");
    read(p, "literal_formula", s.ppr.literal_formula, "scores.ppr");
  }
}

void parse_train(const json& doc, TrainConfig& t) {
  check_keys(doc,
             {"lr", "weight_decay", "beta1", "beta2", "eps", "batch_size", "epochs", "steps",
              "patience", "plateau_tol", "beta", "seed", "loss", "balanced_sampling",
              "normalize_readout", "threads", "warn_window"},
             "train");
  read(doc, "lr", t.lr, "train");
  read(doc, "weight_decay", t.weight_decay, "train");
  read(doc, "beta1", t.beta1, "train");
  read(doc, "beta2", t.beta2, "train");
  read(doc, "eps", t.eps, "train");
  read(doc, "batch_size", t.batch_size, "train");
  read(doc, "epochs", t.epochs, "train");
  read(doc, "steps", t.steps, "train");
  read(doc, "patience", t.patience, "train");
  read(doc, "plateau_tol", t.plateau_tol, "train");
  read(doc, "beta", t.beta, "train");
  read(doc, "seed", t.seed, "train");
  read(doc, "balanced_sampling", t.balanced_sampling, "train");
  read(doc, "normalize_readout", t.normalize_readout, "train");
  read(doc, "threads", t.threads, "train");
  read(doc, "warn_window", t.warn_window, "train");
  if (doc.contains("loss")) {
    try {
      t.loss = parse_loss_kind(doc.at("loss").get<std::string>());
    } catch (const std::exception& e) {
      throw ConfigError(std::string("train.loss: ") + e.what());
    }
  }
}

void parse_eval(const json& doc, EvalProtocol& e) {
  check_keys(doc,
             {"nway", "kshot", "qsize", "episodes", "seeds", "seed", "l2", "max_iterations",
              "tolerance", "threads"},
             "eval");
  read(doc, "nway", e.nway, "eval");
  read(doc, "kshot", e.kshot, "eval");
  read(doc, "qsize", e.qsize, "eval");
  read(doc, "episodes", e.episodes, "eval");
  read(doc, "seeds", e.seeds, "eval");
  read(doc, "seed", e.seed, "eval");
  read(doc, "l2", e.logreg.l2, "eval");
  read(doc, "max_iterations", e.logreg.max_iterations, "eval");
  read(doc, "tolerance", e.logreg.tolerance, "eval");
  read(doc, "threads", e.threads, "eval");
}

}  // namespace

SyntheticSpec parse_synthetic_spec(const json& doc) {
  check_keys(doc,
             {"blocks", "p_in", "p_out", "feature_dim", "feature_noise", "feature_signal",
              "signal_dim", "seed"},
             "synthetic");
  SyntheticSpec s;
  if (!doc.contains("blocks")) throw ConfigError("synthetic: 'blocks' is required");
  read(doc, "blocks", s.blocks, "synthetic");
  read(doc, "p_in", s.p_in, "synthetic");
  read(doc, "p_out", s.p_out, "synthetic");
  read(doc, "feature_dim", s.feature_dim, "synthetic");
  read(doc, "feature_noise", s.feature_noise, "synthetic");
  read(doc, "feature_signal", s.feature_signal, "synthetic");
  read(doc, "signal_dim", s.signal_dim, "synthetic");
  read(doc, "seed", s.seed, "synthetic");
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("synthetic: ") + e.what());
  }
  return s;
}

nlohmann::ordered_json to_json(const SyntheticSpec& s) {
  return {{"blocks", s.blocks},
          {"p_in", s.p_in},
          {"p_out", s.p_out},
          {"feature_dim", s.feature_dim},
          {"feature_noise", s.feature_noise},
          {"feature_signal", s.feature_signal},
          {"signal_dim", s.signal_dim},
          {"seed", s.seed}};
}

ExperimentConfig parse_experiment_config(const json& doc, const std::filesystem::path& base_dir) {
  check_keys(doc,
             {"graph", "synthetic", "split", "scores", "encoder", "train", "eval", "output_dir"},
             "config");
  ExperimentConfig c;
  if (doc.contains("graph") == doc.contains("synthetic")) {
    throw ConfigError("config: give exactly one of 'graph' and 'synthetic'");
  }
  if (doc.contains("graph")) {
    std::string p;
    read(doc, "graph", p, "config");
    c.graph = resolve(base_dir, p);
  } else {
    c.synthetic = parse_synthetic_spec(doc.at("synthetic"));
  }
  if (doc.contains("split")) {
    const auto& s = doc.at("split");
    if (s.is_string()) {
      c.split_path = resolve(base_dir, s.get<std::string>());
    } else {
      c.split = parse_split_object(s);
    }
  }
  if (doc.contains("scores")) parse_scores(doc.at("scores"), c.scores, base_dir);
  if (doc.contains("encoder")) {
    const auto& e = doc.at("encoder");
    check_keys(e, {"embedding_dim", "prelu_init"}, "encoder");
    read(e, "embedding_dim", c.encoder.embedding_dim, "encoder");
    read(e, "prelu_init", c.encoder.prelu_init, "encoder");
  }
  if (doc.contains("train")) parse_train(doc.at("train"), c.train);
  if (doc.contains("eval")) parse_eval(doc.at("eval"), c.eval);
  if (doc.contains("output_dir")) {
    std::string p;
    read(doc, "output_dir", p, "config");
    c.output_dir = resolve(base_dir, p);
  }
  c.train.alpha = c.scores.alpha;
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  auto c = parse_experiment_config(doc, path.parent_path());
  c.validate();
  return c;
}

void ExperimentConfig::validate() const {
  if (graph && !std::filesystem::exists(*graph)) {
    throw ConfigError("graph file not found: " + graph->string());
  }
  if (split_path && !std::filesystem::exists(*split_path)) {
    throw ConfigError("split file not found: " + split_path->string());
  }
  if (graph && !split_path && !split && !std::filesystem::exists(default_split_path(*graph))) {
    throw ConfigError("no split given and no sidecar at " + default_split_path(*graph).string());
  }
  if (synthetic && !split) throw ConfigError("a synthetic graph needs an inline split object");
  if (scores.cache && !std::filesystem::exists(*scores.cache)) {
    throw ConfigError("score cache not found: " + scores.cache->string());
  }
  if (!(scores.gamma > 0.0 && scores.gamma <= 1.0)) throw ConfigError("scores.gamma must lie in (0, 1]");
  if (scores.alpha < 1) throw ConfigError("scores.alpha must be >= 1");
  if (scores.nad.vectors == 0) throw ConfigError("scores.nad.vectors must be >= 1");
  if (!(scores.ppr.phi > 0.0 && scores.ppr.phi < 1.0)) throw ConfigError("scores.ppr.phi must lie in (0, 1)");
  if (encoder.embedding_dim == 0) throw ConfigError("encoder.embedding_dim must be >= 1");
  if (eval.nway < 2) throw ConfigError("eval.nway must be >= 2");
  try {
    train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("train: ") + e.what());
  }
}

nlohmann::ordered_json to_json(const ExperimentConfig& c) {
  nlohmann::ordered_json doc;
  if (c.graph) doc["graph"] = c.graph->string();
  if (c.synthetic) doc["synthetic"] = to_json(*c.synthetic);
  if (c.split_path) doc["split"] = c.split_path->string();
  if (c.split) {
    doc["split"] = {{"base_classes", c.split->base_classes},
                    {"novel_classes", c.split->novel_classes}};
  }
  nlohmann::ordered_json scores = {
      {"method", to_string(c.scores.method)},
      {"gamma", c.scores.gamma},
      {"alpha", c.scores.alpha},
      {"nad", {{"eta", c.scores.nad.eta},
               {"iterations", c.scores.nad.iterations},
               {"vectors", c.scores.nad.vectors},
               {"epsilon", c.scores.nad.epsilon},
               {"seed", c.scores.nad.seed},
               {"isolated", c.scores.nad.isolated == IsolatedPolicy::keep_value ? "keep" : "error"}}},
      {"ppr", {{"phi", c.scores.ppr.phi},
               {"tolerance", c.scores.ppr.tolerance},
               {"max_iterations", c.scores.ppr.max_iterations},
               {"literal_formula", c.scores.ppr.literal_formula}}},
  };
  if (c.scores.cache) scores["cache"] = c.scores.cache->string();
  doc["scores"] = scores;
  doc["encoder"] = {{"embedding_dim", c.encoder.embedding_dim},
                    {"prelu_init", c.encoder.prelu_init}};
  const auto& t = c.train;
  doc["train"] = {{"lr", t.lr},
                  {"weight_decay", t.weight_decay},
                  {"beta1", t.beta1},
                  {"beta2", t.beta2},
                  {"eps", t.eps},
                  {"batch_size", t.batch_size},
                  {"epochs", t.epochs},
                  {"steps", t.steps},
                  {"patience", t.patience},
                  {"plateau_tol", t.plateau_tol},
                  {"beta", t.beta},
                  {"seed", t.seed},
                  {"loss", to_string(t.loss)},
                  {"balanced_sampling", t.balanced_sampling},
                  {"normalize_readout", t.normalize_readout},
                  {"threads", t.threads},
                  {"warn_window", t.warn_window}};
  const auto& e = c.eval;
  doc["eval"] = {{"nway", e.nway},
                 {"kshot", e.kshot},
                 {"qsize", e.qsize},
                 {"episodes", e.episodes},
                 {"seeds", e.seeds},
                 {"seed", e.seed},
                 {"l2", e.logreg.l2},
                 {"max_iterations", e.logreg.max_iterations},
                 {"tolerance", e.logreg.tolerance},
                 {"threads", e.threads}};
  doc["output_dir"] = c.output_dir.string();
  return doc;
}

ScoreSource make_score_source(const Graph& g, const ScoresConfig& config) {
  return config.method == ScoreMethod::nad ? ScoreSource::nad(g, config.nad, config.gamma)
                                           : ScoreSource::ppr(config.ppr, config.gamma);
}

ExperimentData load_experiment_data(const ExperimentConfig& config) {
  ExperimentData data{config.graph ? load_graph(*config.graph) : generate_sbm(*config.synthetic),
                      {}};
  if (config.split) {
    data.split = *config.split;
  } else if (config.split_path) {
    data.split = load_split(*config.split_path);
  } else if (config.graph) {
    data.split = load_split(default_split_path(*config.graph));
  } else {
    throw ConfigError("no class split available");
  }
  data.split.validate(data.graph);
  return data;
}

ExperimentResult run_experiment(const ExperimentData& data, const SubgraphSampler& subgraphs,
                                const ExperimentConfig& config) {
  ExperimentResult r;
  r.train = pretrain(data.graph, data.split, subgraphs, config.train, config.encoder);
  r.eval = evaluate(data.graph, data.split, r.train.params, subgraphs, config.eval);
  return r;
}

SweepAxis parse_sweep_axis(const std::string& s) {
  if (s == "beta") return SweepAxis::beta;
  if (s == "batch") return SweepAxis::batch;
  if (s == "loss") return SweepAxis::loss;
  throw std::invalid_argument("unknown sweep axis '" + s + "' (expected beta, batch or loss)");
}

std::vector<std::string> loss_ablation_grid() {
  // G-SupCon is only defined with class-balanced batches here.
  return {"ce/no-bs", "ce/bs", "simclr/no-bs", "simclr/bs", "gsupcon/bs"};
}

namespace {

void apply_point(ExperimentConfig& c, SweepAxis axis, const std::string& value) {
  std::size_t used = 0;
  switch (axis) {
    case SweepAxis::beta:
      c.train.beta = std::stod(value, &used);
      if (used != value.size()) throw std::invalid_argument("bad beta value '" + value + "'");
      break;
    case SweepAxis::batch: {
      const long long b = std::stoll(value, &used);
      if (used != value.size() || b <= 0) {
        throw std::invalid_argument("bad batch value '" + value + "'");
      }
      c.train.batch_size = static_cast<std::size_t>(b);
      break;
    }
    case SweepAxis::loss: {
      const auto slash = value.find('/');
      if (slash == std::string::npos) {
        throw std::invalid_argument("loss value '" + value + "' must look like gsupcon/bs");
      }
      c.train.loss = parse_loss_kind(value.substr(0, slash));
      const auto bs = value.substr(slash + 1);
      if (bs != "bs" && bs != "no-bs") throw std::invalid_argument("expected bs or no-bs in '" + value + "'");
      c.train.balanced_sampling = bs == "bs";
      break;
    }
  }
  c.train.validate();
}

}  // namespace

std::vector<SweepRow> run_sweep(const ExperimentConfig& config, SweepAxis axis,
                                const std::vector<std::string>& values,
                                const std::function<void(const SweepRow&)>& on_row) {
  if (values.empty()) throw std::invalid_argument("sweep grid is empty");
  const auto data = load_experiment_data(config);
  SubgraphSampler subgraphs(data.graph, make_score_source(data.graph, config.scores),
                            config.scores.alpha);
  if (config.scores.cache) subgraphs.load_cache(*config.scores.cache);

  std::vector<SweepRow> rows;
  for (const auto& value : values) {
    SweepRow row;
    row.value = value;
    try {
      auto point = config;
      apply_point(point, axis, value);
      const auto r = run_experiment(data, subgraphs, point);
      row.ok = true;
      row.mean = r.eval.mean;
      row.ci95 = r.eval.ci95;
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    if (on_row) on_row(row);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out.precision(17);
  out << "value,mean_acc,ci95,status\n";
  for (const auto& r : rows) {
    out << r.value << ',';
    if (r.ok) {
      out << r.mean << ',' << r.ci95 << ",ok\n";
    } else {
      std::string msg = r.error;
      for (auto& ch : msg) {
        if (ch == ',' || ch == '\n' || ch == '"') ch = ' ';
      }
      out << ",,error: " << msg << '\n';
    }
  }
  return out.str();
}

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << sweep_csv(rows);
}

}  // namespace subcon
