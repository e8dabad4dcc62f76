// SPDX-License-Identifier: Apache-2.0
#include "convernet/synth.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>

#include "json.hpp"

#include "convernet/error.hpp"

namespace convernet::synth {

using json = nlohmann::json;

namespace {

constexpr const char* kClosing[] = {"thanks", "bye", "agreed", "cheers", "goodnight", "done"};
constexpr const char* kNegative[] = {"whatever", "useless", "boring", "wrong"};
constexpr const char* kPositive[] = {"great", "good", "nice", "love"};
constexpr std::size_t kFiller = 300;

std::string filler(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, kFiller - 1);
  return "w" + std::to_string(pick(rng));
}

template <std::size_t N>
const char* pick_from(const char* const (&words)[N], std::mt19937_64& rng) {
  return words[std::uniform_int_distribution<std::size_t>(0, N - 1)(rng)];
}

}  // namespace

std::vector<data::Post> conversation_posts(const ConversationOptions& opts) {
  if (opts.min_posts < 2 || opts.max_posts < opts.min_posts) throw ConfigError("invalid synthetic thread sizes");
  if (opts.authors < 2) throw ConfigError("synthetic corpus needs at least two authors");
  std::mt19937_64 rng(opts.seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const std::size_t killers = std::max<std::size_t>(1, static_cast<std::size_t>(opts.authors * opts.killer_author_share));
  std::uniform_int_distribution<std::size_t> killer_author(0, killers - 1);
  std::uniform_int_distribution<std::size_t> regular_author(killers, opts.authors - 1);
  std::uniform_int_distribution<std::size_t> size_dist(opts.min_posts, opts.max_posts);
  std::uniform_int_distribution<std::size_t> words_dist(4, 12);

  std::vector<data::Post> posts;
  for (std::size_t t = 0; t < opts.threads; ++t) {
    const std::string thread_id = "t" + std::to_string(t);
    const std::size_t n = size_dist(rng);
    // Random recursive tree, biased towards recent posts.
    std::vector<std::size_t> parent(n, 0);
    std::vector<std::size_t> out_degree(n, 0);
    for (std::size_t i = 1; i < n; ++i) {
      const std::size_t lo = i > 3 ? i - 3 : 0;
      parent[i] = u01(rng) < 0.7 ? std::uniform_int_distribution<std::size_t>(lo, i - 1)(rng)
                                 : std::uniform_int_distribution<std::size_t>(0, i - 1)(rng);
      ++out_degree[parent[i]];
    }
    const std::int64_t start = 1'500'000'000 + static_cast<std::int64_t>(t) * 3600 +
                               std::uniform_int_distribution<std::int64_t>(0, 1800)(rng);
    std::vector<std::int64_t> time(n, start);
    for (std::size_t i = 0; i < n; ++i) {
      const bool ends = out_degree[i] == 0;
      const std::size_t author_id =
          (ends ? u01(rng) < 0.45 : u01(rng) < 0.04) ? killer_author(rng) : regular_author(rng);
      if (i > 0) {
        const bool slow = ends ? u01(rng) < 0.6 : u01(rng) < 0.1;
        const double mean = slow ? 3.0 * 86400.0 : 900.0;
        const auto delay = static_cast<std::int64_t>(std::exponential_distribution<double>(1.0 / mean)(rng)) + 1;
        time[i] = time[parent[i]] + delay;
      }
      std::vector<std::string> words;
      const std::size_t len = words_dist(rng);
      for (std::size_t w = 0; w < len; ++w) words.push_back(filler(rng));
      if (u01(rng) < (ends ? 0.35 : 0.08)) words.push_back(pick_from(kClosing, rng));
      if (u01(rng) < (ends ? 0.2 : 0.1)) words.push_back(pick_from(kNegative, rng));
      if (u01(rng) < 0.2) words.push_back(pick_from(kPositive, rng));
      std::shuffle(words.begin(), words.end(), rng);
      std::string body;
      for (const auto& w : words) body += (body.empty() ? "" : " ") + w;
      if (u01(rng) < (ends ? 0.1 : 0.4)) body += "?";

      data::Post p;
      p.id = thread_id + "_p" + std::to_string(i);
      if (i > 0) p.parent_id = thread_id + "_p" + std::to_string(parent[i]);
      p.author = (author_id < killers ? "k" : "u") + std::to_string(author_id);
      p.created_utc = time[i];
      p.body = std::move(body);
      p.thread_id = thread_id;
      posts.push_back(std::move(p));
    }
  }
  return posts;
}

void write_posts_jsonl(const std::string& path, const std::vector<data::Post>& posts) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  for (const auto& p : posts) {
    json j{{"id", p.id},
           {"parent_id", p.parent_id ? json(*p.parent_id) : json(nullptr)},
           {"author", p.author},
           {"created_utc", p.created_utc},
           {"body", p.body},
           {"thread_id", p.thread_id}};
    out << j.dump() << '\n';
  }
}

void write_lexicon(const std::string& path, const features::SentimentLexicon& lexicon) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "# token\tscore\n";
  for (const auto& [tok, s] : lexicon.entries()) out << tok << '\t' << s << '\n';
}

void write_conversation_corpus(const std::string& dir, const ConversationOptions& opts) {
  std::filesystem::create_directories(dir);
  write_posts_jsonl((std::filesystem::path(dir) / "posts.jsonl").string(), conversation_posts(opts));
  write_lexicon((std::filesystem::path(dir) / "lexicon.tsv").string(), features::SentimentLexicon::builtin());
}

namespace {

void check_task(const TaskOptions& o, std::size_t min_length) {
  if (o.vocab_size <= kFirstNoiseToken) throw ConfigError("task vocabulary too small");
  if (o.min_length < min_length || o.max_length < o.min_length) throw ConfigError("invalid task lengths");
  if (o.tokens_per_post == 0) throw ConfigError("tokens_per_post must be positive");
}

std::vector<std::size_t> noise_post(std::mt19937_64& rng, const TaskOptions& o, std::size_t count) {
  std::uniform_int_distribution<std::size_t> noise(kFirstNoiseToken, o.vocab_size - 1);
  std::vector<std::size_t> ids(count);
  for (auto& id : ids) id = noise(rng);
  return ids;
}

Instance blank(std::size_t i, std::size_t length) {
  Instance inst;
  inst.thread_id = "task" + std::to_string(i);
  inst.target_post_id = inst.thread_id + "_target";
  inst.context.assign(length, {});
  inst.background.assign(length, 0);
  return inst;
}

}  // namespace

std::vector<Instance> planted_token_task(const TaskOptions& o) {
  check_task(o, 1);
  std::mt19937_64 rng(o.seed);
  std::uniform_int_distribution<std::size_t> len(o.min_length, o.max_length);
  std::vector<Instance> out;
  for (std::size_t i = 0; i < o.instances; ++i) {
    const std::size_t s = len(rng);
    Instance inst = blank(i, s);
    inst.label = static_cast<int>(i % 2);
    for (std::size_t p = 0; p < s; ++p) inst.tokens.push_back(noise_post(rng, o, o.tokens_per_post));
    auto& target = inst.tokens.back();
    target[std::uniform_int_distribution<std::size_t>(0, target.size() - 1)(rng)] =
        inst.label ? kPositiveMarker : kNegativeMarker;
    out.push_back(std::move(inst));
  }
  return out;
}

std::vector<Instance> position_task(const TaskOptions& o) {
  check_task(o, 2);
  std::mt19937_64 rng(o.seed);
  std::uniform_int_distribution<std::size_t> len(o.min_length, o.max_length);
  std::bernoulli_distribution coin(0.5);
  std::vector<Instance> out;
  for (std::size_t i = 0; i < o.instances; ++i) {
    const std::size_t s = len(rng);
    Instance inst = blank(i, s);
    inst.label = coin(rng) ? 1 : 0;
    for (std::size_t p = 0; p < s; ++p) {
      auto ids = noise_post(rng, o, o.tokens_per_post);
      const bool positive = p + 2 == s ? inst.label == 1 : coin(rng);
      ids[std::uniform_int_distribution<std::size_t>(0, ids.size() - 1)(rng)] =
          positive ? kPositiveMarker : kNegativeMarker;
      inst.tokens.push_back(std::move(ids));
    }
    out.push_back(std::move(inst));
  }
  return out;
}

}  // namespace convernet::synth
