// SPDX-License-Identifier: Apache-2.0
//
// Corpus -> instances: thread recovery, splitting, target sampling,
// vocabulary and feature tables, plus the on-disk instance cache.
#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "convernet/data.hpp"
#include "convernet/features.hpp"
#include "convernet/instance.hpp"

namespace convernet::dataset {

enum class Corpus { Reddit, Movie };

std::string to_string(Corpus c);
Corpus parse_corpus(const std::string& name);

struct PrepareOptions {
  Corpus corpus = Corpus::Reddit;
  std::vector<std::string> inputs;  // posts file, or movie lines + conversations
  std::string lexicon;              // empty selects the built-in word list
  std::uint64_t seed = 1;
  std::size_t max_len = 20;
  std::size_t min_freq = 5;
  std::string split = "proportional";  // or reddit_table, reddit_text, movie, custom
  data::SplitSizes sizes;              // used when split == custom

  /// Keys: max_len, min_freq, split, split_train, split_val, split_test, seed,
  /// lexicon.
  void set(const std::string& key, const std::string& value);
  data::SplitSizes resolved_sizes() const;
  std::map<std::string, std::string> to_map() const;
};

struct Stats {
  std::size_t threads = 0;
  std::size_t posts = 0;
  std::size_t vocab_size = 0;
  std::size_t max_post_len = 0;
  double avg_post_len = 0.0;
  std::size_t train = 0, val = 0, test = 0;
  double positive_rate = 0.0;  // over all sampled instances
};

struct Prepared {
  data::Vocabulary vocab;
  features::Tables tables;
  features::FeatureMask mask;
  std::vector<std::string> train_threads, val_threads, test_threads;
  std::vector<Instance> train, val, test;
  Stats stats;
};

/// Reads the corpus files named in `opts.inputs` and rebuilds threads.
std::vector<data::Thread> load_corpus(const PrepareOptions& opts);

/// Builds one instance from a sampled target.
Instance make_instance(const data::Thread& thread, const data::Sample& sample, const data::Vocabulary& vocab,
                       const features::Tables& tables, features::FeatureMask mask);

/// Splits threads, fits the vocabulary and author counts on the training
/// split and samples one target per thread.
Prepared prepare(std::vector<data::Thread> threads, const PrepareOptions& opts);

/// Shape information a model needs about a prepared dataset.
struct DatasetInfo {
  Corpus corpus = Corpus::Reddit;
  std::size_t vocab_size = 2;
  std::size_t context_dim = features::kContextDim;
  std::size_t background_size = 0;  // 0 when the corpus has no background tags
  std::size_t max_len = 20;
  features::FeatureMask mask;
};

DatasetInfo info_of(const Prepared& p, const PrepareOptions& opts);

inline constexpr int kCacheVersion = 1;

void save_instances(const std::string& path, const std::vector<Instance>& instances);
std::vector<Instance> load_instances(const std::string& path);

/// Writes config.txt, dataset.json, vocab.txt, authors.tsv, backgrounds.txt,
/// {train,val,test}_threads.txt, {train,val,test}.jsonl and stats.csv.
void write_prepared(const std::string& dir, const Prepared& p, const PrepareOptions& opts);
DatasetInfo read_info(const std::string& dir);
/// Loads "train", "val" or "test" from a prepared directory.
std::vector<Instance> load_split(const std::string& dir, const std::string& split);

void write_stats_csv(const std::string& path, const Stats& s);

/// Zeroes the context slots (and background ids) of the listed families.
void ablate(std::vector<Instance>& instances, const std::vector<features::Family>& families);

/// Writes "key=value" lines sorted by key.
void write_key_values(const std::string& path, const std::map<std::string, std::string>& kv);

}  // namespace convernet::dataset
