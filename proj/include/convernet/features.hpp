// SPDX-License-Identifier: Apache-2.0
//
// Hand-crafted per-post context: lengths, sentiment, reply latency, reply
// structure, author history and conversation background.
#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "convernet/data.hpp"

namespace convernet::features {

/// token -> valence. Lookup is case-insensitive; unknown tokens score 0.
class SentimentLexicon {
 public:
  /// Lines "token<TAB>score[<TAB>...]"; '#' lines and blanks are ignored.
  static SentimentLexicon load(const std::string& path);
  /// A small built-in word list used when no lexicon file is supplied.
  static SentimentLexicon builtin();

  void add(const std::string& token, double score);
  double score(const std::string& token) const;
  std::size_t size() const { return scores_.size(); }
  const std::map<std::string, double>& entries() const { return scores_; }

 private:
  std::map<std::string, double> scores_;
};

struct Sentiment {
  double neg = 0.0, neu = 1.0, pos = 0.0;
};

/// pos = sum of positive scores, neg = sum of magnitudes of negative scores,
/// neu = number of zero-score tokens; normalized to sum 1. Nothing scored
/// gives (0, 1, 0).
Sentiment sentiment_scores(const std::vector<std::string>& tokens, const SentimentLexicon& lexicon);

enum class TimeBucket { Hour = 0, Day = 1, Week = 2, Month = 3 };

/// Latency category; everything past a week is "month". Negative deltas raise
/// DataError.
TimeBucket time_bucket(std::int64_t delta_seconds);

struct ReplyFeatures {
  std::size_t depth = 0;
  bool replies_to_target_author = false;
};

/// Depth of `index` in the reply tree and whether its parent was written by
/// the author of the target post.
ReplyFeatures reply_features(const data::Thread& thread, std::size_t index, std::size_t target);

/// Number of thread-ending posts per author over a fixed set of threads.
class AuthorTable {
 public:
  static AuthorTable build(const std::vector<data::Thread>& threads);
  std::size_t end_count(const std::string& author) const;

  void set(const std::string& author, std::size_t count) { counts_[author] = count; }
  const std::map<std::string, std::size_t>& counts() const { return counts_; }
  void save(const std::string& path) const;
  static AuthorTable load(const std::string& path);

 private:
  std::map<std::string, std::size_t> counts_;
};

/// Background tag -> id, 0 meaning absent or unseen.
class BackgroundTable {
 public:
  static BackgroundTable build(const std::vector<data::Thread>& threads);
  std::size_t id(const std::string& tag) const;
  /// Number of ids including the reserved 0.
  std::size_t size() const { return tags_.size() + 1; }

  void save(const std::string& path) const;
  static BackgroundTable load(const std::string& path);

 private:
  std::vector<std::string> tags_;
  std::map<std::string, std::size_t> index_;
};

enum class Family { Lengths, Sentiment, Background, PostTime, ReplyStructure, Author };

inline constexpr std::array<Family, 6> kContextFamilies = {Family::Lengths,    Family::Sentiment,
                                                          Family::Background, Family::PostTime,
                                                          Family::ReplyStructure, Family::Author};

std::string to_string(Family f);
/// Accepts "lengths", "sentiment", "background", "post_time",
/// "reply_structure" and "author".
Family parse_family(const std::string& name);

/// Which context families are switched on.
struct FeatureMask {
  std::uint32_t bits = 0x3F;

  bool has(Family f) const { return bits & (1u << static_cast<unsigned>(f)); }
  void set(Family f, bool on);
  static FeatureMask all() { return {}; }
  static FeatureMask none() { return {0}; }
  /// Families available for a corpus: dialogs have no reply latency and forum
  /// threads have no background tag.
  static FeatureMask for_corpus(bool dialog);
};

// Slot layout of the numeric context row.
inline constexpr std::size_t kSlotPostLength = 0;
inline constexpr std::size_t kSlotThreadLength = 1;
inline constexpr std::size_t kSlotSentiment = 2;  // neg, neu, pos
inline constexpr std::size_t kSlotTime = 5;       // hour, day, week, month
inline constexpr std::size_t kSlotDepth = 9;
inline constexpr std::size_t kSlotReplyFlag = 10;
inline constexpr std::size_t kSlotAuthor = 11;
inline constexpr std::size_t kContextDim = 12;

/// Slot range [begin, end) of a numeric family; Background has none.
std::pair<std::size_t, std::size_t> family_slots(Family f);

struct Tables {
  SentimentLexicon lexicon;
  AuthorTable authors;
  BackgroundTable backgrounds;
};

/// Context row of post `index` when `target` is the post being predicted.
/// Reads nothing later than the target in time order.
std::vector<double> assemble_context(const data::Thread& thread, std::size_t index, std::size_t target,
                                     const Tables& tables, FeatureMask mask);

/// Background id of the thread under `mask` (0 when disabled or unseen).
std::size_t background_id(const data::Thread& thread, const Tables& tables, FeatureMask mask);

}  // namespace convernet::features
