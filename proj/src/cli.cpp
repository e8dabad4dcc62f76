// SPDX-License-Identifier: Apache-2.0
#include "convernet/cli.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"

#include "convernet/config.hpp"
#include "convernet/dataset.hpp"
#include "convernet/error.hpp"
#include "convernet/linear.hpp"
#include "convernet/log.hpp"
#include "convernet/metrics.hpp"
#include "convernet/model.hpp"
#include "convernet/synth.hpp"
#include "convernet/train.hpp"

namespace convernet {

namespace fs = std::filesystem;

namespace {

struct Args {
  std::string corpus = "reddit";
  std::vector<std::string> inputs;
  std::string out;
  std::uint64_t seed = 1;
  bool seed_given = false;
  std::string model = "convernet";
  std::string attention;
  std::vector<std::string> ablate;
  std::string config;
  std::size_t rounds = 10000;
  std::string metric = "auc";
  std::string checkpoint;
  std::string split = "test";
  std::string lexicon;
  std::string embeddings;
  std::size_t threads = 1000;
  std::size_t workers = 0;
  bool verbose = false;
};

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string join(const std::vector<std::string>& items, const char* sep = ",") {
  std::string out;
  for (const auto& s : items) out += (out.empty() ? "" : sep) + s;
  return out;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

std::string path_in(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

void write_metrics_csv(const std::string& path, const std::vector<std::pair<std::string, std::string>>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "metric,value\n";
  for (const auto& [k, v] : rows) out << k << ',' << v << '\n';
}

void print_rows(const std::vector<std::pair<std::string, std::string>>& rows) {
  std::cout << "metric,value\n";
  for (const auto& [k, v] : rows) std::cout << k << ',' << v << '\n';
}

std::vector<std::pair<std::string, std::string>> metric_rows(const metrics::PredictionSet& p) {
  const EvalMetrics m = evaluate_scores(p);
  std::size_t positives = 0;
  for (int l : p.labels) positives += static_cast<std::size_t>(l == 1);
  return {{"accuracy", fmt(m.accuracy)},
          {"auc", fmt(m.auc)},
          {"map", fmt(m.map)},
          {"instances", std::to_string(p.size())},
          {"positives", std::to_string(positives)}};
}

void write_predictions_csv(const std::string& path, const metrics::PredictionSet& p) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "instance_id,score,label\n";
  char buf[64];
  for (std::size_t i = 0; i < p.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", p.scores[i]);
    out << p.ids[i] << ',' << buf << ',' << p.labels[i] << '\n';
  }
}

metrics::PredictionSet read_predictions_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read predictions " + path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("instance_id,score,label", 0) != 0)
    throw DataError(path + ": expected header instance_id,score,label");
  metrics::PredictionSet p;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto c2 = line.rfind(',');
    const auto c1 = c2 == std::string::npos || c2 == 0 ? std::string::npos : line.rfind(',', c2 - 1);
    if (c1 == std::string::npos) throw DataError(path + ":" + std::to_string(lineno) + ": malformed row");
    try {
      const std::string label = line.substr(c2 + 1);
      if (label != "0" && label != "1") throw std::invalid_argument(label);
      p.add(line.substr(0, c1), std::stod(line.substr(c1 + 1, c2 - c1 - 1)), label == "1" ? 1 : 0);
    } catch (const std::exception&) {
      throw DataError(path + ":" + std::to_string(lineno) + ": malformed row");
    }
  }
  p.validate();
  return p;
}

/// Name of a predictions file for report keys: its stem, or the directory
/// name when the file is the default predictions.csv.
std::string system_name(const std::string& path) {
  const fs::path p(path);
  if (p.stem() == "predictions" && p.has_parent_path() && !p.parent_path().filename().empty())
    return p.parent_path().filename().string();
  return p.stem().string();
}

const std::string& single_input(const Args& a, const char* what) {
  if (a.inputs.size() != 1) throw ConfigError(std::string("--input takes exactly one ") + what);
  return a.inputs[0];
}

void require_out(const Args& a) {
  if (a.out.empty()) throw ConfigError("--out is required");
}

// --------------------------------------------------------------- commands --

int cmd_synth(const Args& a) {
  require_out(a);
  synth::ConversationOptions opts;
  opts.threads = a.threads;
  opts.seed = a.seed;
  synth::write_conversation_corpus(a.out, opts);
  dataset::write_key_values(path_in(a.out, "config.txt"), {{"command", "synth"},
                                                           {"threads", std::to_string(opts.threads)},
                                                           {"seed", std::to_string(opts.seed)}});
  std::cout << "wrote " << opts.threads << " synthetic threads to " << a.out << '\n';
  return kExitOk;
}

int cmd_prepare(const Args& a) {
  require_out(a);
  dataset::PrepareOptions opts;
  opts.corpus = dataset::parse_corpus(a.corpus);
  if (!a.config.empty())
    for (const auto& [k, v] : read_key_values(a.config)) opts.set(k, v);
  if (a.seed_given) opts.seed = a.seed;
  if (!a.lexicon.empty()) opts.lexicon = a.lexicon;
  opts.inputs = a.inputs;
  auto threads = dataset::load_corpus(opts);
  const dataset::Prepared p = dataset::prepare(std::move(threads), opts);
  dataset::write_prepared(a.out, p, opts);
  std::ifstream stats(path_in(a.out, "stats.csv"));
  std::cout << stats.rdbuf();
  return kExitOk;
}

struct Ablation {
  bool drop_context = false;
  std::vector<features::Family> context_families;
  std::vector<linear::Family> linear_families;
};

Ablation parse_ablation(const std::vector<std::string>& items, bool linear_model) {
  Ablation ab;
  for (const auto& item : items) {
    if (linear_model) {
      ab.linear_families.push_back(linear::parse_family(item));
    } else if (item == "context") {
      ab.drop_context = true;
    } else {
      ab.context_families.push_back(features::parse_family(item));
    }
  }
  return ab;
}

int train_convernet(const Args& a, const std::string& data_dir, const dataset::DatasetInfo& info) {
  ModelConfig cfg;
  cfg.max_len = info.max_len;
  if (!a.config.empty())
    for (const auto& [k, v] : read_key_values(a.config)) cfg.set(k, v);
  cfg.vocab_size = info.vocab_size;
  cfg.context_dim = info.context_dim;
  cfg.background_size = info.background_size;
  if (cfg.max_len < info.max_len) throw ConfigError("max_len is below the dataset's truncation length");
  if (!a.attention.empty()) cfg.attention = parse_attention(a.attention);
  if (a.seed_given) cfg.seed = a.seed;
  if (a.workers) cfg.workers = a.workers;
  const Ablation ab = parse_ablation(a.ablate, false);
  if (ab.drop_context) cfg.use_context = false;

  auto train_set = dataset::load_split(data_dir, "train");
  auto val_set = dataset::load_split(data_dir, "val");
  dataset::ablate(train_set, ab.context_families);
  dataset::ablate(val_set, ab.context_families);

  ConverNet model(cfg);
  const TrainResult result = train(model, train_set, val_set, cfg);
  save_checkpoint(model, path_in(a.out, "model"), result.history);
  write_history_csv(path_in(a.out, "history.csv"), result.history);

  const auto scores = model.predict_all(val_set, cfg.workers);
  auto rows = metric_rows(make_predictions(val_set, scores));
  rows.emplace_back("best_epoch", std::to_string(result.best_epoch));
  rows.emplace_back("epochs", std::to_string(result.history.size()));
  write_metrics_csv(path_in(a.out, "val_metrics.csv"), rows);

  auto kv = cfg.to_map();
  kv["model"] = "convernet";
  kv["ablate"] = join(a.ablate);
  kv["dataset"] = data_dir;
  dataset::write_key_values(path_in(a.out, "config.txt"), kv);
  print_rows(rows);
  return kExitOk;
}

struct LinearSettings {
  double c = 1.0;
  linear::TrainOptions train;
  linear::FeatureSpec spec;
};

LinearSettings linear_settings(const std::map<std::string, std::string>& kv) {
  LinearSettings s;
  auto num = [](const std::string& key, const std::string& v) {
    try {
      std::size_t used = 0;
      const double d = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return d;
    } catch (const std::exception&) {
      throw ConfigError("invalid value '" + v + "' for " + key);
    }
  };
  for (const auto& [k, v] : kv) {
    if (k == "C") s.c = num(k, v);
    else if (k == "epochs") s.train.epochs = static_cast<std::size_t>(num(k, v));
    else if (k == "eta0") s.train.eta0 = num(k, v);
    else if (k == "seed") s.train.seed = static_cast<std::uint64_t>(num(k, v));
    else if (k == "hash_dim") s.spec.hash_dim = static_cast<std::size_t>(num(k, v));
    else if (k == "background_buckets") s.spec.background_buckets = static_cast<std::size_t>(num(k, v));
    else if (k == "ngram_orders") {
      s.spec.ngram_orders.clear();
      for (const auto& o : split_list(v)) s.spec.ngram_orders.push_back(static_cast<int>(num(k, o)));
    } else {
      throw ConfigError("unknown linear baseline option '" + k + "'");
    }
  }
  return s;
}

std::vector<linear::SparseVector> featurize_all(const std::vector<Instance>& xs, const linear::FeatureSpec& spec,
                                                const data::Vocabulary& vocab, const linear::Embeddings* emb) {
  std::vector<linear::SparseVector> out;
  out.reserve(xs.size());
  for (const auto& inst : xs) out.push_back(linear::featurize(inst, spec, vocab, emb));
  return out;
}

int train_linear_model(const Args& a, const std::string& data_dir, const dataset::DatasetInfo& info) {
  LinearSettings s = linear_settings(a.config.empty() ? std::map<std::string, std::string>{}
                                                      : read_key_values(a.config));
  if (a.seed_given) s.train.seed = a.seed;
  s.spec.max_len = info.max_len;
  std::optional<linear::Embeddings> emb;
  if (!a.embeddings.empty()) {
    emb = linear::Embeddings::load(a.embeddings);
    s.spec.embedding_dim = emb->dim();
    s.spec.set(linear::Family::Embeddings, true);
  }
  for (linear::Family f : parse_ablation(a.ablate, true).linear_families) s.spec.set(f, false);
  s.spec.validate();

  const auto vocab = data::Vocabulary::load(path_in(data_dir, "vocab.txt"));
  const auto train_set = dataset::load_split(data_dir, "train");
  const auto val_set = dataset::load_split(data_dir, "val");
  std::vector<int> labels;
  for (const auto& inst : train_set) labels.push_back(inst.label);
  s.train.lambda = linear::lambda_from_c(s.c, train_set.size());
  const linear::LinearModel model =
      linear::train_linear(featurize_all(train_set, s.spec, vocab, emb ? &*emb : nullptr), labels, s.spec, s.train);
  model.save(path_in(a.out, "linear.model"));

  metrics::PredictionSet p;
  const auto val_x = featurize_all(val_set, s.spec, vocab, emb ? &*emb : nullptr);
  for (std::size_t i = 0; i < val_set.size(); ++i)
    p.add(val_set[i].thread_id, linear::squash(model.margin(val_x[i])), val_set[i].label);
  const auto rows = metric_rows(p);
  write_metrics_csv(path_in(a.out, "val_metrics.csv"), rows);

  auto kv = s.spec.to_map();
  kv["model"] = "linear";
  kv["C"] = fmt(s.c);
  kv["lambda"] = fmt(s.train.lambda);
  kv["epochs"] = std::to_string(s.train.epochs);
  kv["eta0"] = fmt(s.train.eta0);
  kv["seed"] = std::to_string(s.train.seed);
  kv["ablate"] = join(a.ablate);
  kv["embeddings"] = a.embeddings;
  kv["dataset"] = data_dir;
  dataset::write_key_values(path_in(a.out, "config.txt"), kv);
  print_rows(rows);
  return kExitOk;
}

int cmd_train(const Args& a) {
  require_out(a);
  const std::string& data_dir = single_input(a, "prepared dataset directory");
  const auto info = dataset::read_info(data_dir);
  fs::create_directories(a.out);
  if (a.model == "convernet") return train_convernet(a, data_dir, info);
  if (a.model == "linear") return train_linear_model(a, data_dir, info);
  throw ConfigError("unknown model '" + a.model + "' (expected convernet or linear)");
}

/// Scores a split with a trained run directory.
metrics::PredictionSet score_split(const Args& a, std::map<std::string, std::string>& run_config) {
  if (a.checkpoint.empty()) throw ConfigError("--checkpoint (a training output directory) is required");
  const std::string& data_dir = single_input(a, "prepared dataset directory");
  run_config = read_key_values(path_in(a.checkpoint, "config.txt"));
  const auto info = dataset::read_info(data_dir);
  auto instances = dataset::load_split(data_dir, a.split);
  const std::string kind = run_config.count("model") ? run_config["model"] : "";

  std::vector<double> scores;
  if (kind == "convernet") {
    LoadedCheckpoint ck = load_checkpoint(path_in(a.checkpoint, "model"));
    const ModelConfig& cfg = ck.model->config();
    if (cfg.vocab_size != info.vocab_size || cfg.context_dim != info.context_dim ||
        cfg.background_size != info.background_size)
      throw VersionError("checkpoint " + a.checkpoint + " was trained on a dataset with a different schema");
    dataset::ablate(instances, parse_ablation(split_list(run_config["ablate"]), false).context_families);
    scores = ck.model->predict_all(instances, a.workers ? a.workers : cfg.workers);
  } else if (kind == "linear") {
    const auto model = linear::LinearModel::load(path_in(a.checkpoint, "linear.model"));
    if (model.spec.max_len != info.max_len)
      throw VersionError("linear model " + a.checkpoint + " was trained on a dataset with a different schema");
    std::optional<linear::Embeddings> emb;
    if (model.spec.has(linear::Family::Embeddings)) emb = linear::Embeddings::load(run_config["embeddings"]);
    const auto vocab = data::Vocabulary::load(path_in(data_dir, "vocab.txt"));
    for (const auto& inst : instances)
      scores.push_back(linear::squash(model.margin(linear::featurize(inst, model.spec, vocab, emb ? &*emb : nullptr))));
  } else {
    throw CorruptionError(a.checkpoint + "/config.txt does not name a model kind");
  }
  return make_predictions(instances, scores);
}

int cmd_score(const Args& a, bool with_report) {
  require_out(a);
  std::map<std::string, std::string> run_config;
  const metrics::PredictionSet p = score_split(a, run_config);
  fs::create_directories(a.out);
  write_predictions_csv(path_in(a.out, "predictions.csv"), p);
  auto kv = run_config;
  kv["checkpoint"] = a.checkpoint;
  kv["dataset"] = a.inputs[0];
  kv["split"] = a.split;
  dataset::write_key_values(path_in(a.out, "config.txt"), kv);
  if (with_report) {
    const auto rows = metric_rows(p);
    write_metrics_csv(path_in(a.out, "report.csv"), rows);
    print_rows(rows);
  } else {
    std::cout << "wrote " << p.size() << " predictions to " << path_in(a.out, "predictions.csv") << '\n';
  }
  return kExitOk;
}

int cmd_compare(const Args& a) {
  if (a.inputs.size() != 2) throw ConfigError("compare takes exactly two prediction files via --input");
  const auto pa = read_predictions_csv(a.inputs[0]);
  const auto pb = read_predictions_csv(a.inputs[1]);
  const metrics::Metric metric = metrics::parse_metric(a.metric);
  const auto r = metrics::permutation_test(pa, pb, metric, a.rounds, a.seed);
  const std::string m = metrics::to_string(metric);
  const std::string name_a = system_name(a.inputs[0]);
  const std::string name_b = system_name(a.inputs[1]);
  const std::vector<std::pair<std::string, std::string>> rows = {
      {m + "_" + name_a, fmt(metrics::compute(metric, pa))},
      {m + "_" + name_b, fmt(metrics::compute(metric, pb))},
      {"delta_" + m, fmt(r.observed_delta)},
      {"pvalue_vs_" + name_b, fmt(r.p_value)},
      {"stars_vs_" + name_b, metrics::significance_stars(r.p_value)},
      {"rounds", std::to_string(r.rounds)},
  };
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    write_metrics_csv(path_in(a.out, "report.csv"), rows);
    dataset::write_key_values(path_in(a.out, "config.txt"), {{"command", "compare"},
                                                             {"input_a", a.inputs[0]},
                                                             {"input_b", a.inputs[1]},
                                                             {"metric", m},
                                                             {"rounds", std::to_string(a.rounds)},
                                                             {"seed", std::to_string(a.seed)}});
  }
  print_rows(rows);
  return kExitOk;
}

int exit_code(const Error& e) {
  switch (e.category()) {
    case Error::Category::Config: return kExitUsage;
    case Error::Category::Data: return kExitData;
    case Error::Category::Internal: return kExitInternal;
  }
  return kExitInternal;
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"ConverNet: predicting thread-ending posts in conversations"};
  app.require_subcommand(1);
  app.fallthrough();
  Args a;
  app.add_flag("--verbose", a.verbose, "Log progress to stderr");

  auto add_seed = [&](CLI::App* cmd) {
    cmd->add_option_function<std::uint64_t>(
        "--seed", [&](const std::uint64_t& s) { a.seed = s; a.seed_given = true; }, "Random seed");
  };

  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic forum corpus and lexicon");
  synth_cmd->add_option("--out", a.out, "Output directory")->required();
  synth_cmd->add_option("--threads", a.threads, "Number of threads");
  add_seed(synth_cmd);

  auto* prepare = app.add_subcommand("prepare", "Build instance caches, vocabulary and feature tables");
  prepare->add_option("--corpus", a.corpus, "reddit or movie")->check(CLI::IsMember({"reddit", "movie"}));
  prepare->add_option("--input", a.inputs, "Posts file, or movie lines and conversations files")->required();
  prepare->add_option("--out", a.out, "Output directory")->required();
  prepare->add_option("--config", a.config, "key=value overrides");
  prepare->add_option("--lexicon", a.lexicon, "Sentiment lexicon (token TAB score)");
  add_seed(prepare);

  auto* train_cmd = app.add_subcommand("train", "Train ConverNet or the linear baseline");
  train_cmd->add_option("--input", a.inputs, "Prepared dataset directory")->required();
  train_cmd->add_option("--out", a.out, "Output directory")->required();
  train_cmd->add_option("--model", a.model, "convernet or linear")->check(CLI::IsMember({"convernet", "linear"}));
  train_cmd->add_option("--attention", a.attention, "dwdl, standard or none")
      ->check(CLI::IsMember({"dwdl", "standard", "none"}));
  train_cmd->add_option("--ablate", a.ablate, "Feature families to switch off")->delimiter(',');
  train_cmd->add_option("--config", a.config, "key=value overrides");
  train_cmd->add_option("--embeddings", a.embeddings, "Pretrained word vectors for the linear baseline");
  train_cmd->add_option("--workers", a.workers, "Evaluation threads");
  add_seed(train_cmd);

  auto add_scoring = [&](CLI::App* cmd) {
    cmd->add_option("--input", a.inputs, "Prepared dataset directory")->required();
    cmd->add_option("--checkpoint", a.checkpoint, "Training output directory")->required();
    cmd->add_option("--split", a.split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
    cmd->add_option("--out", a.out, "Output directory")->required();
    cmd->add_option("--workers", a.workers, "Inference threads");
  };
  auto* evaluate = app.add_subcommand("evaluate", "Score a split and report accuracy, AUC and MAP");
  add_scoring(evaluate);
  auto* predict = app.add_subcommand("predict", "Score a split and write predictions");
  add_scoring(predict);

  auto* compare = app.add_subcommand("compare", "Paired permutation test between two prediction files");
  compare->add_option("--input", a.inputs, "Two predictions CSV files")->required()->expected(2);
  compare->add_option("--metric", a.metric, "auc, accuracy or map")->check(CLI::IsMember({"auc", "accuracy", "map"}));
  compare->add_option("--rounds", a.rounds, "Permutation rounds")->check(CLI::PositiveNumber);
  compare->add_option("--out", a.out, "Output directory");
  add_seed(compare);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }
  log::set_level(a.verbose ? log::Level::Info : log::Level::Warn);

  try {
    if (*synth_cmd) return cmd_synth(a);
    if (*prepare) return cmd_prepare(a);
    if (*train_cmd) return cmd_train(a);
    if (*evaluate) return cmd_score(a, true);
    if (*predict) return cmd_score(a, false);
    if (*compare) return cmd_compare(a);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kExitInternal;
  }
  return kExitUsage;
}

}  // namespace convernet
