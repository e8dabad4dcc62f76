// SPDX-License-Identifier: Apache-2.0
//
// Seeded synthetic corpora and tasks for smoke tests and scaled experiments.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "convernet/data.hpp"
#include "convernet/features.hpp"
#include "convernet/instance.hpp"

namespace convernet::synth {

struct ConversationOptions {
  std::size_t threads = 1000;
  std::size_t min_posts = 2;
  std::size_t max_posts = 14;
  std::size_t authors = 200;
  double killer_author_share = 0.1;
  std::uint64_t seed = 1;
};

/// Forum-style posts. Reply trees are random recursive trees; thread-ending
/// posts lean towards closing words, slow replies and a small set of authors
/// who habitually end threads, so both content and context carry signal.
std::vector<data::Post> conversation_posts(const ConversationOptions& opts);

/// Writes posts.jsonl and lexicon.tsv (the built-in word list) into `dir`.
void write_conversation_corpus(const std::string& dir, const ConversationOptions& opts);

/// One post per line as JSON.
void write_posts_jsonl(const std::string& path, const std::vector<data::Post>& posts);
void write_lexicon(const std::string& path, const features::SentimentLexicon& lexicon);

/// Token ids used by the instance-level tasks below.
inline constexpr std::size_t kPositiveMarker = 2;
inline constexpr std::size_t kNegativeMarker = 3;
inline constexpr std::size_t kFirstNoiseToken = 4;

struct TaskOptions {
  std::size_t instances = 64;
  std::size_t vocab_size = 40;   // ids 0..vocab_size-1
  std::size_t min_length = 1;
  std::size_t max_length = 5;
  std::size_t tokens_per_post = 4;
  std::uint64_t seed = 1;
};

/// The target (last) post carries the positive or negative marker token;
/// earlier posts are noise. Context rows are empty.
std::vector<Instance> planted_token_task(const TaskOptions& opts);

/// Every post carries a random marker; the label is the marker of the post at
/// position s-1 (the one before the target). Context rows are empty.
std::vector<Instance> position_task(const TaskOptions& opts);

}  // namespace convernet::synth
