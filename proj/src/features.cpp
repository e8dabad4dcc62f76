// SPDX-License-Identifier: Apache-2.0
#include "convernet/features.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "convernet/error.hpp"
#include "convernet/log.hpp"

namespace convernet::features {

namespace {

std::string lower(std::string s) {
  for (char& c : s)
    if (static_cast<unsigned char>(c) < 0x80) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace

// ------------------------------------------------------------- sentiment --

SentimentLexicon SentimentLexicon::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read sentiment lexicon " + path);
  SentimentLexicon lex;
  std::string line;
  std::size_t lineno = 0, bad = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) {
      ++bad;
      continue;
    }
    const auto end = line.find('\t', tab + 1);
    const std::string value = line.substr(tab + 1, end == std::string::npos ? std::string::npos : end - tab - 1);
    try {
      std::size_t used = 0;
      const double score = std::stod(value, &used);
      if (used != value.size() || !std::isfinite(score)) throw std::invalid_argument(value);
      lex.add(line.substr(0, tab), score);
    } catch (const std::exception&) {
      ++bad;
    }
  }
  if (bad) log::warn(path, ": ignored ", bad, " malformed lexicon line(s)");
  return lex;
}

SentimentLexicon SentimentLexicon::builtin() {
  static const std::pair<const char*, double> kWords[] = {
      {"good", 1.9},     {"great", 3.1},     {"love", 3.2},      {"nice", 1.8},     {"thanks", 1.9},
      {"thank", 1.5},    {"awesome", 3.1},   {"agree", 1.5},     {"agreed", 1.5},   {"happy", 2.7},
      {"cool", 1.3},     {"best", 3.2},      {"glad", 2.0},      {"fun", 2.3},      {"like", 1.5},
      {"yes", 1.7},      {"excellent", 2.7}, {"wonderful", 2.7}, {"perfect", 2.7},  {"helpful", 1.8},
      {"bad", -2.5},     {"hate", -2.7},     {"terrible", -2.1}, {"awful", -2.0},   {"wrong", -2.1},
      {"stupid", -2.4},  {"sad", -2.1},      {"no", -1.2},       {"worst", -3.1},   {"angry", -2.3},
      {"boring", -1.3},  {"annoying", -1.7}, {"sorry", -0.3},    {"ugly", -2.3},    {"fail", -2.5},
      {"problem", -1.7}, {"useless", -1.8},  {"whatever", -0.6}, {"bye", 0.4},      {"goodbye", 0.3},
  };
  SentimentLexicon lex;
  for (const auto& [w, s] : kWords) lex.add(w, s);
  return lex;
}

void SentimentLexicon::add(const std::string& token, double score) { scores_[lower(token)] = score; }

double SentimentLexicon::score(const std::string& token) const {
  auto it = scores_.find(lower(token));
  return it == scores_.end() ? 0.0 : it->second;
}

Sentiment sentiment_scores(const std::vector<std::string>& tokens, const SentimentLexicon& lexicon) {
  double pos = 0.0, neg = 0.0, neu = 0.0;
  for (const auto& t : tokens) {
    const double s = lexicon.score(t);
    if (s > 0) pos += s;
    else if (s < 0) neg -= s;
    else neu += 1.0;
  }
  const double total = pos + neg + neu;
  if (total == 0.0) return {};
  return {neg / total, neu / total, pos / total};
}

// ------------------------------------------------------------------- time --

TimeBucket time_bucket(std::int64_t delta) {
  if (delta < 0) throw DataError("negative reply latency " + std::to_string(delta));
  if (delta <= 3600) return TimeBucket::Hour;
  if (delta <= 86400) return TimeBucket::Day;
  if (delta <= 604800) return TimeBucket::Week;
  return TimeBucket::Month;
}

// ------------------------------------------------------------ structure --

ReplyFeatures reply_features(const data::Thread& thread, std::size_t index, std::size_t target) {
  if (index >= thread.size() || target >= thread.size())
    throw LookupError("post index outside thread " + thread.thread_id);
  ReplyFeatures r;
  r.depth = thread.depth(index);
  if (const auto p = thread.parent[index])
    r.replies_to_target_author = thread.posts[*p].author == thread.posts[target].author;
  return r;
}

// ---------------------------------------------------------------- tables --

AuthorTable AuthorTable::build(const std::vector<data::Thread>& threads) {
  AuthorTable t;
  for (const auto& th : threads)
    for (std::size_t i = 0; i < th.size(); ++i)
      if (data::label_index(th, i) == 1) ++t.counts_[th.posts[i].author];
  return t;
}

std::size_t AuthorTable::end_count(const std::string& author) const {
  auto it = counts_.find(author);
  return it == counts_.end() ? 0 : it->second;
}

void AuthorTable::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write author table " + path);
  for (const auto& [a, n] : counts_) out << a << '\t' << n << '\n';
}

AuthorTable AuthorTable::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read author table " + path);
  AuthorTable t;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos) throw CorruptionError("malformed author table line in " + path);
    try {
      t.counts_[line.substr(0, tab)] = std::stoull(line.substr(tab + 1));
    } catch (const std::exception&) {
      throw CorruptionError("malformed author count in " + path);
    }
  }
  return t;
}

BackgroundTable BackgroundTable::build(const std::vector<data::Thread>& threads) {
  BackgroundTable t;
  std::vector<std::string> tags;
  for (const auto& th : threads)
    if (!th.background.empty()) tags.push_back(th.background);
  std::sort(tags.begin(), tags.end());
  tags.erase(std::unique(tags.begin(), tags.end()), tags.end());
  for (auto& tag : tags) {
    t.index_.emplace(tag, t.tags_.size() + 1);
    t.tags_.push_back(std::move(tag));
  }
  return t;
}

std::size_t BackgroundTable::id(const std::string& tag) const {
  auto it = index_.find(tag);
  return it == index_.end() ? 0 : it->second;
}

void BackgroundTable::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write background table " + path);
  for (const auto& tag : tags_) out << tag << '\n';
}

BackgroundTable BackgroundTable::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read background table " + path);
  BackgroundTable t;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    t.index_.emplace(line, t.tags_.size() + 1);
    t.tags_.push_back(line);
  }
  return t;
}

// ---------------------------------------------------------------- families --

std::string to_string(Family f) {
  switch (f) {
    case Family::Lengths: return "lengths";
    case Family::Sentiment: return "sentiment";
    case Family::Background: return "background";
    case Family::PostTime: return "post_time";
    case Family::ReplyStructure: return "reply_structure";
    case Family::Author: return "author";
  }
  return "lengths";
}

Family parse_family(const std::string& name) {
  for (Family f : kContextFamilies)
    if (to_string(f) == name) return f;
  throw ConfigError("unknown context feature family '" + name + "'");
}

void FeatureMask::set(Family f, bool on) {
  const std::uint32_t bit = 1u << static_cast<unsigned>(f);
  bits = on ? (bits | bit) : (bits & ~bit);
}

FeatureMask FeatureMask::for_corpus(bool dialog) {
  FeatureMask m;
  m.set(dialog ? Family::PostTime : Family::Background, false);
  return m;
}

std::pair<std::size_t, std::size_t> family_slots(Family f) {
  switch (f) {
    case Family::Lengths: return {kSlotPostLength, kSlotSentiment};
    case Family::Sentiment: return {kSlotSentiment, kSlotTime};
    case Family::PostTime: return {kSlotTime, kSlotDepth};
    case Family::ReplyStructure: return {kSlotDepth, kSlotAuthor};
    case Family::Author: return {kSlotAuthor, kContextDim};
    case Family::Background: return {0, 0};
  }
  return {0, 0};
}

std::vector<double> assemble_context(const data::Thread& thread, std::size_t index, std::size_t target,
                                     const Tables& tables, FeatureMask mask) {
  if (index > target || target >= thread.size())
    throw LookupError("context requested for a post after the target in thread " + thread.thread_id);
  std::vector<double> v(kContextDim, 0.0);
  const data::Post& post = thread.posts[index];
  if (mask.has(Family::Lengths) || mask.has(Family::Sentiment)) {
    const auto tokens = data::tokenize(post.body);
    if (mask.has(Family::Lengths)) {
      v[kSlotPostLength] = std::log1p(static_cast<double>(data::word_count(tokens)));
      v[kSlotThreadLength] = std::log1p(static_cast<double>(index + 1));
    }
    if (mask.has(Family::Sentiment)) {
      const Sentiment s = sentiment_scores(tokens, tables.lexicon);
      v[kSlotSentiment] = s.neg;
      v[kSlotSentiment + 1] = s.neu;
      v[kSlotSentiment + 2] = s.pos;
    }
  }
  if (mask.has(Family::PostTime)) {
    const std::int64_t delta = index == 0 ? 0 : post.created_utc - thread.posts[index - 1].created_utc;
    v[kSlotTime + static_cast<std::size_t>(time_bucket(delta))] = 1.0;
  }
  if (mask.has(Family::ReplyStructure)) {
    const ReplyFeatures r = reply_features(thread, index, target);
    v[kSlotDepth] = static_cast<double>(r.depth);
    v[kSlotReplyFlag] = r.replies_to_target_author ? 1.0 : 0.0;
  }
  if (mask.has(Family::Author))
    v[kSlotAuthor] = std::log1p(static_cast<double>(tables.authors.end_count(post.author)));
  return v;
}

std::size_t background_id(const data::Thread& thread, const Tables& tables, FeatureMask mask) {
  if (!mask.has(Family::Background) || thread.background.empty()) return 0;
  return tables.backgrounds.id(thread.background);
}

}  // namespace convernet::features
