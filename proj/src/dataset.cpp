// SPDX-License-Identifier: Apache-2.0
#include "convernet/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "json.hpp"

#include "convernet/error.hpp"
#include "convernet/log.hpp"

namespace convernet::dataset {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::size_t parse_count(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(value, &used);
    if (used != value.size() || v < 0) throw std::invalid_argument(value);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw ConfigError("invalid value '" + value + "' for " + key);
  }
}

}  // namespace

std::string to_string(Corpus c) { return c == Corpus::Movie ? "movie" : "reddit"; }

Corpus parse_corpus(const std::string& name) {
  if (name == "reddit") return Corpus::Reddit;
  if (name == "movie") return Corpus::Movie;
  throw ConfigError("unknown corpus '" + name + "' (expected reddit or movie)");
}

// --------------------------------------------------------------- options --

void PrepareOptions::set(const std::string& key, const std::string& value) {
  if (key == "max_len") {
    max_len = parse_count(key, value);
    if (max_len == 0) throw ConfigError("max_len must be at least 1");
  } else if (key == "min_freq") {
    min_freq = parse_count(key, value);
  } else if (key == "split") {
    if (value != "proportional" && value != "reddit_table" && value != "reddit_text" && value != "movie" &&
        value != "custom")
      throw ConfigError("unknown split preset '" + value + "'");
    split = value;
  } else if (key == "split_train") {
    sizes.train = parse_count(key, value);
    split = "custom";
  } else if (key == "split_val") {
    sizes.val = parse_count(key, value);
    split = "custom";
  } else if (key == "split_test") {
    sizes.test = parse_count(key, value);
    split = "custom";
  } else if (key == "seed") {
    seed = parse_count(key, value);
  } else if (key == "lexicon") {
    lexicon = value;
  } else if (key == "corpus") {
    corpus = parse_corpus(value);
  } else {
    throw ConfigError("unknown prepare option '" + key + "'");
  }
}

data::SplitSizes PrepareOptions::resolved_sizes() const {
  if (split == "reddit_table") return data::SplitSizes::reddit_table();
  if (split == "reddit_text") return data::SplitSizes::reddit_text();
  if (split == "movie") return data::SplitSizes::movie();
  if (split == "custom") return sizes;
  return {};
}

std::map<std::string, std::string> PrepareOptions::to_map() const {
  const data::SplitSizes s = resolved_sizes();
  std::map<std::string, std::string> kv{
      {"corpus", to_string(corpus)},
      {"lexicon", lexicon.empty() ? "builtin" : lexicon},
      {"seed", std::to_string(seed)},
      {"max_len", std::to_string(max_len)},
      {"min_freq", std::to_string(min_freq)},
      {"split", split},
      {"split_train", std::to_string(s.train)},
      {"split_val", std::to_string(s.val)},
      {"split_test", std::to_string(s.test)},
  };
  for (std::size_t i = 0; i < inputs.size(); ++i) kv["input_" + std::to_string(i)] = inputs[i];
  return kv;
}

// ------------------------------------------------------------- pipeline --

std::vector<data::Thread> load_corpus(const PrepareOptions& opts) {
  if (opts.corpus == Corpus::Reddit) {
    if (opts.inputs.size() != 1) throw ConfigError("reddit corpus takes exactly one posts file");
    data::ParseReport pr;
    auto posts = data::parse_posts_jsonl(opts.inputs[0], &pr);
    data::BuildReport br;
    auto threads = data::build_threads(std::move(posts), &br);
    log::info("parsed ", pr.parsed, " posts (", pr.skipped, " skipped); kept ", br.threads_kept, " threads");
    return threads;
  }
  if (opts.inputs.size() != 2) throw ConfigError("movie corpus takes the lines file and the conversations file");
  data::ParseReport pr;
  auto threads = data::parse_movie_corpus(opts.inputs[0], opts.inputs[1], &pr);
  log::info("parsed ", pr.parsed, " conversations (", pr.skipped, " skipped)");
  return threads;
}

Instance make_instance(const data::Thread& thread, const data::Sample& sample, const data::Vocabulary& vocab,
                       const features::Tables& tables, features::FeatureMask mask) {
  Instance inst;
  inst.thread_id = thread.thread_id;
  inst.target_post_id = thread.posts[sample.target].id;
  inst.label = sample.label;
  const std::size_t bg = features::background_id(thread, tables, mask);
  for (std::size_t idx : sample.posts) {
    inst.tokens.push_back(vocab.encode(data::tokenize(thread.posts[idx].body)));
    inst.context.push_back(features::assemble_context(thread, idx, sample.target, tables, mask));
    inst.background.push_back(bg);
  }
  return inst;
}

Prepared prepare(std::vector<data::Thread> threads, const PrepareOptions& opts) {
  if (threads.empty()) throw DataError("corpus produced no usable threads");
  Prepared p;
  const bool dialog = opts.corpus == Corpus::Movie;
  p.mask = features::FeatureMask::for_corpus(dialog);

  Stats& st = p.stats;
  st.threads = threads.size();
  std::size_t words = 0;
  for (const auto& t : threads)
    for (const auto& post : t.posts) {
      const std::size_t n = data::word_count(data::tokenize(post.body));
      words += n;
      st.max_post_len = std::max(st.max_post_len, n);
      ++st.posts;
    }
  st.avg_post_len = st.posts ? static_cast<double>(words) / static_cast<double>(st.posts) : 0.0;

  data::Splits splits = dialog ? data::split_random(std::move(threads), opts.seed, opts.resolved_sizes())
                               : data::split_reddit(std::move(threads), opts.resolved_sizes());
  if (splits.train.empty()) throw DataError("training split is empty");

  std::map<std::string, std::size_t> counts;
  for (const auto& t : splits.train)
    for (const auto& post : t.posts)
      for (auto& tok : data::tokenize(post.body)) ++counts[tok];
  p.vocab = data::Vocabulary::build(counts, opts.min_freq);
  st.vocab_size = p.vocab.size();

  p.tables.lexicon = opts.lexicon.empty() ? features::SentimentLexicon::builtin()
                                          : features::SentimentLexicon::load(opts.lexicon);
  p.tables.authors = features::AuthorTable::build(splits.train);
  if (dialog) p.tables.backgrounds = features::BackgroundTable::build(splits.train);

  std::size_t positives = 0;
  auto build = [&](const std::vector<data::Thread>& ts, std::vector<Instance>& out, std::vector<std::string>& ids) {
    for (const auto& t : ts) {
      const data::Sample s = data::sample_target(t, data::thread_seed(opts.seed, t.thread_id), opts.max_len);
      out.push_back(make_instance(t, s, p.vocab, p.tables, p.mask));
      ids.push_back(t.thread_id);
      positives += static_cast<std::size_t>(s.label);
    }
  };
  build(splits.train, p.train, p.train_threads);
  build(splits.val, p.val, p.val_threads);
  build(splits.test, p.test, p.test_threads);
  st.train = p.train.size();
  st.val = p.val.size();
  st.test = p.test.size();
  const std::size_t total = st.train + st.val + st.test;
  st.positive_rate = total ? static_cast<double>(positives) / static_cast<double>(total) : 0.0;
  return p;
}

DatasetInfo info_of(const Prepared& p, const PrepareOptions& opts) {
  DatasetInfo info;
  info.corpus = opts.corpus;
  info.vocab_size = p.vocab.size();
  info.background_size = opts.corpus == Corpus::Movie ? p.tables.backgrounds.size() : 0;
  info.max_len = opts.max_len;
  info.mask = p.mask;
  return info;
}

// ------------------------------------------------------------------ cache --

void save_instances(const std::string& path, const std::vector<Instance>& instances) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write instance cache " + path);
  json header{{"format", "convernet-instances"}, {"format_version", kCacheVersion}, {"count", instances.size()}};
  out << header.dump() << '\n';
  for (const auto& inst : instances) {
    json j{{"thread_id", inst.thread_id},   {"target_post_id", inst.target_post_id},
           {"label", inst.label},           {"tokens", inst.tokens},
           {"context", inst.context},       {"background", inst.background}};
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("failed writing instance cache " + path);
}

std::vector<Instance> load_instances(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read instance cache " + path);
  std::string line;
  if (!std::getline(in, line)) throw CorruptionError("instance cache " + path + " is empty");
  std::size_t count = 0;
  try {
    const json header = json::parse(line);
    if (header.value("format", "") != "convernet-instances")
      throw CorruptionError(path + " is not an instance cache");
    if (header.value("format_version", -1) != kCacheVersion)
      throw VersionError("instance cache " + path + " has format version " +
                         std::to_string(header.value("format_version", -1)) + ", expected " +
                         std::to_string(kCacheVersion));
    count = header.at("count").get<std::size_t>();
  } catch (const json::exception& e) {
    throw CorruptionError("bad instance cache header in " + path + ": " + e.what());
  }
  std::vector<Instance> out;
  out.reserve(count);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      Instance inst;
      inst.thread_id = j.at("thread_id").get<std::string>();
      inst.target_post_id = j.at("target_post_id").get<std::string>();
      inst.label = j.at("label").get<int>();
      inst.tokens = j.at("tokens").get<std::vector<std::vector<std::size_t>>>();
      inst.context = j.at("context").get<std::vector<std::vector<double>>>();
      inst.background = j.at("background").get<std::vector<std::size_t>>();
      if (inst.tokens.empty() || inst.context.size() != inst.tokens.size() ||
          inst.background.size() != inst.tokens.size())
        throw CorruptionError("ragged instance " + inst.thread_id);
      if (inst.label != 0 && inst.label != 1) throw DataError("label of " + inst.thread_id + " is not 0 or 1");
      out.push_back(std::move(inst));
    } catch (const json::exception& e) {
      throw CorruptionError("bad instance record in " + path + ": " + e.what());
    }
  }
  if (out.size() != count)
    throw CorruptionError("instance cache " + path + " holds " + std::to_string(out.size()) + " records, header says " +
                          std::to_string(count));
  return out;
}

void write_key_values(const std::string& path, const std::map<std::string, std::string>& kv) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  for (const auto& [k, v] : kv) out << k << '=' << v << '\n';
}

void write_stats_csv(const std::string& path, const Stats& s) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  char avg[64], rate[64];
  std::snprintf(avg, sizeof avg, "%.4f", s.avg_post_len);
  std::snprintf(rate, sizeof rate, "%.4f", s.positive_rate);
  out << "statistic,value\n"
      << "threads," << s.threads << '\n'
      << "posts," << s.posts << '\n'
      << "vocabulary," << s.vocab_size << '\n'
      << "max_post_len," << s.max_post_len << '\n'
      << "avg_post_len," << avg << '\n'
      << "train," << s.train << '\n'
      << "val," << s.val << '\n'
      << "test," << s.test << '\n'
      << "positive_rate," << rate << '\n';
}

namespace {

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  for (const auto& l : lines) out << l << '\n';
}

}  // namespace

void write_prepared(const std::string& dir, const Prepared& p, const PrepareOptions& opts) {
  fs::create_directories(dir);
  const fs::path d(dir);
  write_key_values((d / "config.txt").string(), opts.to_map());
  const DatasetInfo info = info_of(p, opts);
  json meta{{"format", "convernet-dataset"},
            {"format_version", kCacheVersion},
            {"corpus", to_string(info.corpus)},
            {"vocab_size", info.vocab_size},
            {"context_dim", info.context_dim},
            {"background_size", info.background_size},
            {"max_len", info.max_len},
            {"feature_mask", info.mask.bits}};
  std::ofstream((d / "dataset.json").string()) << meta.dump(2) << '\n';
  p.vocab.save((d / "vocab.txt").string());
  p.tables.authors.save((d / "authors.tsv").string());
  p.tables.backgrounds.save((d / "backgrounds.txt").string());
  write_lines((d / "train_threads.txt").string(), p.train_threads);
  write_lines((d / "val_threads.txt").string(), p.val_threads);
  write_lines((d / "test_threads.txt").string(), p.test_threads);
  save_instances((d / "train.jsonl").string(), p.train);
  save_instances((d / "val.jsonl").string(), p.val);
  save_instances((d / "test.jsonl").string(), p.test);
  write_stats_csv((d / "stats.csv").string(), p.stats);
}

DatasetInfo read_info(const std::string& dir) {
  const std::string path = (fs::path(dir) / "dataset.json").string();
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path + " (not a prepared dataset directory?)");
  try {
    const json meta = json::parse(in);
    if (meta.value("format_version", -1) != kCacheVersion)
      throw VersionError(path + " has an unsupported format version");
    DatasetInfo info;
    info.corpus = parse_corpus(meta.at("corpus").get<std::string>());
    info.vocab_size = meta.at("vocab_size").get<std::size_t>();
    info.context_dim = meta.at("context_dim").get<std::size_t>();
    info.background_size = meta.at("background_size").get<std::size_t>();
    info.max_len = meta.at("max_len").get<std::size_t>();
    info.mask.bits = meta.at("feature_mask").get<std::uint32_t>();
    return info;
  } catch (const json::exception& e) {
    throw CorruptionError("bad dataset description " + path + ": " + e.what());
  }
}

std::vector<Instance> load_split(const std::string& dir, const std::string& split) {
  if (split != "train" && split != "val" && split != "test")
    throw ConfigError("unknown split '" + split + "' (expected train, val or test)");
  return load_instances((fs::path(dir) / (split + ".jsonl")).string());
}

void ablate(std::vector<Instance>& instances, const std::vector<features::Family>& families) {
  for (features::Family f : families) {
    const auto [begin, end] = features::family_slots(f);
    for (auto& inst : instances) {
      if (f == features::Family::Background) std::fill(inst.background.begin(), inst.background.end(), 0);
      for (auto& row : inst.context)
        for (std::size_t k = begin; k < end && k < row.size(); ++k) row[k] = 0.0;
    }
  }
}

}  // namespace convernet::dataset
