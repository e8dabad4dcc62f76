// SPDX-License-Identifier: Apache-2.0
//
// Corpus ingestion: posts, thread trees, labels, target sampling, splits,
// tokenization and vocabularies.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace convernet::data {

struct Post {
  std::string id;
  std::optional<std::string> parent_id;
  std::string author;
  std::int64_t created_utc = 0;
  std::string body;
  std::string thread_id;
};

/// Posts of one conversation sorted by time (parents before children on
/// equal timestamps), with the reply tree as index lists.
struct Thread {
  std::string thread_id;
  std::vector<Post> posts;
  std::vector<std::optional<std::size_t>> parent;  // index into posts
  std::vector<std::vector<std::size_t>> children;
  std::string background;  // e.g. movie id; empty when absent
  bool dialog = false;     // linear chain: only the last post ends it

  std::size_t size() const { return posts.size(); }
  std::size_t index_of(const std::string& post_id) const;  // LookupError if absent
  std::size_t depth(std::size_t index) const;
};

struct ParseReport {
  std::size_t parsed = 0;
  std::size_t skipped = 0;
};

/// One JSON object per line with id, parent_id (string|null), author,
/// created_utc (integer), body, thread_id. Bad records are skipped and counted.
std::vector<Post> parse_posts_jsonl(const std::string& path, ParseReport* report = nullptr);

inline constexpr std::string_view kCornellSeparator = " +++$+++ ";

/// Cornell movie-dialog files. Each conversation becomes a chain thread with
/// ordinal timestamps and the movie id as background.
std::vector<Thread> parse_movie_corpus(const std::string& lines_path, const std::string& conversations_path,
                                       ParseReport* report = nullptr);

struct BuildReport {
  std::size_t threads_kept = 0;
  std::size_t too_small = 0;
  std::size_t orphans = 0;
  std::size_t rejected = 0;  // cycles, multiple roots, duplicate ids
};

/// Groups posts by thread_id and rebuilds reply trees. Orphans are dropped;
/// threads with cycles or several roots are rejected; threads left with
/// fewer than two posts are discarded. Output is sorted by thread_id.
std::vector<Thread> build_threads(std::vector<Post> posts, BuildReport* report = nullptr);

/// Builds the tree structure of an already-ordered chain (dialog) thread.
Thread make_chain_thread(std::string thread_id, std::vector<Post> posts, std::string background);

/// 1 when the post ends the thread: a leaf of the reply tree, or the final
/// post of a dialog.
int label_post(const Thread& thread, const std::string& post_id);
int label_index(const Thread& thread, std::size_t index);

/// The chosen target and the (truncated) time-ordered prefix ending at it.
struct Sample {
  std::size_t target = 0;
  std::vector<std::size_t> posts;  // indices into thread.posts, target last
  std::size_t prefix_length = 0;   // posts up to the target before truncation
  int label = 0;
};

/// Uniformly picks one post as target, keeps the posts up to it and then only
/// the most recent `max_len`.
Sample sample_target(const Thread& thread, std::uint64_t seed, std::size_t max_len);

/// Seed for one thread derived from a run seed and the thread id, so samples
/// do not depend on processing order.
std::uint64_t thread_seed(std::uint64_t seed, std::string_view thread_id);

/// Explicit split sizes; all zero selects 80/10/10 proportions.
struct SplitSizes {
  std::size_t train = 0, val = 0, test = 0;

  bool proportional() const { return train == 0 && val == 0 && test == 0; }
  static SplitSizes reddit_table() { return {63097, 10000, 10000}; }
  static SplitSizes reddit_text() { return {80000, 10000, 10000}; }
  static SplitSizes movie() { return {80000, 10000, 10000}; }
};

struct Splits {
  std::vector<Thread> train, val, test;
};

/// Chronological split by the first post's time.
Splits split_reddit(std::vector<Thread> threads, SplitSizes sizes = {});
/// Split of a seeded random permutation.
Splits split_random(std::vector<Thread> threads, std::uint64_t seed, SplitSizes sizes = {});

/// Lowercases, isolates ASCII punctuation as single tokens and splits on
/// whitespace.
std::vector<std::string> tokenize(std::string_view text);

/// Number of tokens containing a letter or digit.
std::size_t word_count(const std::vector<std::string>& tokens);

/// token <-> id map with 0 = PAD and 1 = UNK. Ids are assigned by descending
/// frequency, ties broken lexicographically.
class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;

  Vocabulary();
  static Vocabulary build(const std::map<std::string, std::size_t>& counts, std::size_t min_freq);

  std::size_t size() const { return tokens_.size(); }
  std::size_t id(const std::string& token) const;
  const std::string& token(std::size_t id) const;
  std::vector<std::size_t> encode(const std::vector<std::string>& tokens) const;

  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace convernet::data
