// SPDX-License-Identifier: Apache-2.0
#include "convernet/data.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <unordered_map>

#include "json.hpp"

#include "convernet/error.hpp"
#include "convernet/log.hpp"

namespace convernet::data {

using json = nlohmann::json;

// ----------------------------------------------------------------- Thread --

std::size_t Thread::index_of(const std::string& post_id) const {
  for (std::size_t i = 0; i < posts.size(); ++i)
    if (posts[i].id == post_id) return i;
  throw LookupError("post " + post_id + " not in thread " + thread_id);
}

std::size_t Thread::depth(std::size_t index) const {
  std::size_t d = 0;
  for (auto p = parent.at(index); p; p = parent[*p]) ++d;
  return d;
}

// ---------------------------------------------------------------- parsing --

namespace {

bool read_string(const json& obj, const char* key, std::string& out) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_string()) return false;
  out = it->get<std::string>();
  return true;
}

bool read_time(const json& obj, std::int64_t& out) {
  auto it = obj.find("created_utc");
  if (it == obj.end()) return false;
  if (it->is_number_integer()) {
    out = it->get<std::int64_t>();
    return true;
  }
  if (it->is_number_float()) {
    const double d = it->get<double>();
    if (d != static_cast<double>(static_cast<std::int64_t>(d))) return false;
    out = static_cast<std::int64_t>(d);
    return true;
  }
  if (it->is_string()) {
    const std::string s = it->get<std::string>();
    if (s.empty() || s.find_first_not_of("-0123456789") != std::string::npos) return false;
    try {
      out = std::stoll(s);
    } catch (const std::exception&) {
      return false;
    }
    return true;
  }
  return false;
}

std::string_view strip_cr(std::string_view s) {
  if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
  return s;
}

/// Splits on the separator at most `max_fields - 1` times.
std::vector<std::string> split_fields(std::string_view line, std::string_view sep, std::size_t max_fields) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (out.size() + 1 < max_fields) {
    const auto pos = line.find(sep, start);
    if (pos == std::string_view::npos) break;
    out.emplace_back(line.substr(start, pos - start));
    start = pos + sep.size();
  }
  out.emplace_back(line.substr(start));
  return out;
}

}  // namespace

std::vector<Post> parse_posts_jsonl(const std::string& path, ParseReport* report) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read posts file " + path);
  std::vector<Post> posts;
  ParseReport rep;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Post p;
    bool ok = false;
    try {
      const json obj = json::parse(line);
      ok = obj.is_object() && read_string(obj, "id", p.id) && read_string(obj, "author", p.author) &&
           read_string(obj, "body", p.body) && read_string(obj, "thread_id", p.thread_id) && read_time(obj, p.created_utc);
      if (ok) {
        auto it = obj.find("parent_id");
        if (it == obj.end()) ok = false;
        else if (it->is_string()) p.parent_id = it->get<std::string>();
        else if (!it->is_null()) ok = false;
      }
    } catch (const json::exception&) {
      ok = false;
    }
    if (!ok) {
      ++rep.skipped;
      log::debug(path, ":", lineno, ": malformed post record skipped");
      continue;
    }
    ++rep.parsed;
    posts.push_back(std::move(p));
  }
  if (rep.skipped) log::warn(path, ": skipped ", rep.skipped, " malformed record(s)");
  if (report) *report = rep;
  return posts;
}

Thread make_chain_thread(std::string thread_id, std::vector<Post> posts, std::string background) {
  Thread t;
  t.thread_id = std::move(thread_id);
  t.background = std::move(background);
  t.dialog = true;
  t.posts = std::move(posts);
  t.parent.resize(t.posts.size());
  t.children.resize(t.posts.size());
  for (std::size_t i = 1; i < t.posts.size(); ++i) {
    t.parent[i] = i - 1;
    t.children[i - 1].push_back(i);
  }
  return t;
}

std::vector<Thread> parse_movie_corpus(const std::string& lines_path, const std::string& conversations_path,
                                       ParseReport* report) {
  std::ifstream lines_in(lines_path, std::ios::binary);
  if (!lines_in) throw IoError("cannot read movie lines file " + lines_path);
  std::ifstream conv_in(conversations_path, std::ios::binary);
  if (!conv_in) throw IoError("cannot read movie conversations file " + conversations_path);

  struct Line {
    std::string character, movie, text;
  };
  std::unordered_map<std::string, Line> lines;
  ParseReport rep;
  std::string raw;
  while (std::getline(lines_in, raw)) {
    const std::string_view l = strip_cr(raw);
    if (l.empty()) continue;
    auto f = split_fields(l, kCornellSeparator, 5);
    if (f.size() != 5) {
      ++rep.skipped;
      continue;
    }
    lines[f[0]] = Line{f[1], f[2], f[4]};
  }

  std::vector<Thread> threads;
  std::size_t conv_no = 0;
  while (std::getline(conv_in, raw)) {
    const std::string_view l = strip_cr(raw);
    if (l.empty()) continue;
    ++conv_no;
    auto f = split_fields(l, kCornellSeparator, 4);
    if (f.size() != 4) {
      ++rep.skipped;
      continue;
    }
    // The last field looks like ['L194', 'L195', 'L196'].
    std::vector<std::string> ids;
    const std::string& list = f[3];
    for (std::size_t i = 0; i < list.size(); ++i) {
      if (list[i] != '\'' && list[i] != '"') continue;
      const auto close = list.find(list[i], i + 1);
      if (close == std::string::npos) break;
      ids.push_back(list.substr(i + 1, close - i - 1));
      i = close;
    }
    std::vector<Post> posts;
    bool dangling = false;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      auto it = lines.find(ids[k]);
      if (it == lines.end()) {
        dangling = true;
        break;
      }
      Post p;
      p.id = ids[k];
      p.parent_id = k ? std::optional<std::string>(ids[k - 1]) : std::nullopt;
      p.author = it->second.character;
      p.created_utc = static_cast<std::int64_t>(k);
      p.body = it->second.text;
      p.thread_id = "conv" + std::to_string(conv_no);
      posts.push_back(std::move(p));
    }
    if (dangling) {
      ++rep.skipped;
      log::debug(conversations_path, ": conversation ", conv_no, " references an unknown line; dropped");
      continue;
    }
    if (posts.size() < 2) continue;
    ++rep.parsed;
    threads.push_back(make_chain_thread("conv" + std::to_string(conv_no), std::move(posts), f[2]));
  }
  if (rep.skipped) log::warn(conversations_path, ": dropped ", rep.skipped, " malformed or dangling record(s)");
  if (report) *report = rep;
  std::sort(threads.begin(), threads.end(), [](const Thread& a, const Thread& b) { return a.thread_id < b.thread_id; });
  return threads;
}

// ---------------------------------------------------------- thread trees --

namespace {

/// Rebuilds one thread; returns nullopt when it has to be rejected.
std::optional<Thread> assemble(const std::string& thread_id, std::vector<Post> posts, BuildReport& rep) {
  std::unordered_map<std::string, std::size_t> by_id;
  std::vector<Post> unique;
  for (auto& p : posts) {
    if (by_id.count(p.id)) {
      log::warn("thread ", thread_id, ": duplicate post id ", p.id, "; thread rejected");
      ++rep.rejected;
      return std::nullopt;
    }
    by_id.emplace(p.id, unique.size());
    unique.push_back(std::move(p));
  }
  // Drop orphans until every remaining parent reference resolves.
  std::vector<char> alive(unique.size(), 1);
  for (bool changed = true; changed;) {
    changed = false;
    for (std::size_t i = 0; i < unique.size(); ++i) {
      if (!alive[i] || !unique[i].parent_id) continue;
      auto it = by_id.find(*unique[i].parent_id);
      if (it == by_id.end() || !alive[it->second]) {
        alive[i] = 0;
        changed = true;
        ++rep.orphans;
        log::debug("thread ", thread_id, ": orphan post ", unique[i].id, " dropped");
      }
    }
  }
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < unique.size(); ++i)
    if (alive[i]) keep.push_back(i);
  std::size_t roots = 0;
  for (std::size_t i : keep) roots += !unique[i].parent_id;
  if (keep.empty()) return std::nullopt;
  if (roots != 1) {
    log::warn("thread ", thread_id, ": ", roots == 0 ? "parent cycle" : "several roots", "; thread rejected");
    ++rep.rejected;
    return std::nullopt;
  }
  // Depth via parent walks; a walk longer than the thread means a cycle.
  std::unordered_map<std::string, std::size_t> depth;
  for (std::size_t i : keep) {
    std::size_t d = 0;
    for (const Post* p = &unique[i]; p->parent_id; p = &unique[by_id.at(*p->parent_id)]) {
      if (++d > keep.size()) {
        log::warn("thread ", thread_id, ": parent cycle; thread rejected");
        ++rep.rejected;
        return std::nullopt;
      }
    }
    depth[unique[i].id] = d;
  }
  std::sort(keep.begin(), keep.end(), [&](std::size_t a, std::size_t b) {
    const Post& pa = unique[a];
    const Post& pb = unique[b];
    if (pa.created_utc != pb.created_utc) return pa.created_utc < pb.created_utc;
    if (depth[pa.id] != depth[pb.id]) return depth[pa.id] < depth[pb.id];
    return pa.id < pb.id;
  });

  Thread t;
  t.thread_id = thread_id;
  std::unordered_map<std::string, std::size_t> pos;
  for (std::size_t i : keep) {
    pos[unique[i].id] = t.posts.size();
    t.posts.push_back(std::move(unique[i]));
  }
  t.parent.resize(t.posts.size());
  t.children.resize(t.posts.size());
  for (std::size_t i = 0; i < t.posts.size(); ++i) {
    if (!t.posts[i].parent_id) continue;
    const std::size_t p = pos.at(*t.posts[i].parent_id);
    t.parent[i] = p;
    t.children[p].push_back(i);
  }
  return t;
}

}  // namespace

std::vector<Thread> build_threads(std::vector<Post> posts, BuildReport* report) {
  std::map<std::string, std::vector<Post>> groups;
  for (auto& p : posts) groups[p.thread_id].push_back(std::move(p));
  BuildReport rep;
  std::vector<Thread> out;
  for (auto& [id, group] : groups) {
    auto t = assemble(id, std::move(group), rep);
    if (!t) continue;
    if (t->size() < 2) {
      ++rep.too_small;
      continue;
    }
    out.push_back(std::move(*t));
  }
  rep.threads_kept = out.size();
  if (rep.orphans) log::warn("dropped ", rep.orphans, " orphan post(s)");
  if (report) *report = rep;
  return out;
}

// ---------------------------------------------------------------- labels --

int label_index(const Thread& thread, std::size_t index) {
  if (index >= thread.size())
    throw LookupError("post index " + std::to_string(index) + " outside thread " + thread.thread_id);
  if (thread.dialog) return index + 1 == thread.size() ? 1 : 0;
  return thread.children[index].empty() ? 1 : 0;
}

int label_post(const Thread& thread, const std::string& post_id) {
  return label_index(thread, thread.index_of(post_id));
}

std::uint64_t thread_seed(std::uint64_t seed, std::string_view thread_id) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : thread_id) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h ^ (seed * 0x9E3779B97F4A7C15ULL);
}

Sample sample_target(const Thread& thread, std::uint64_t seed, std::size_t max_len) {
  if (thread.size() == 0) throw DataError("cannot sample from empty thread " + thread.thread_id);
  if (max_len == 0) throw ConfigError("max_len must be at least 1");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, thread.size() - 1);
  Sample s;
  s.target = pick(rng);
  s.prefix_length = s.target + 1;
  const std::size_t first = s.prefix_length > max_len ? s.prefix_length - max_len : 0;
  for (std::size_t i = first; i <= s.target; ++i) s.posts.push_back(i);
  s.label = label_index(thread, s.target);
  return s;
}

// ----------------------------------------------------------------- splits --

namespace {

SplitSizes resolve(SplitSizes sizes, std::size_t n) {
  if (!sizes.proportional() && sizes.train + sizes.val + sizes.test <= n) return sizes;
  if (!sizes.proportional())
    log::warn("requested split ", sizes.train, "/", sizes.val, "/", sizes.test, " exceeds ", n,
              " threads; using 80/10/10 proportions");
  SplitSizes s;
  s.val = n / 10;
  s.test = n / 10;
  s.train = n - s.val - s.test;
  return s;
}

Splits take(std::vector<Thread> ordered, SplitSizes sizes) {
  const SplitSizes s = resolve(sizes, ordered.size());
  Splits out;
  auto it = std::make_move_iterator(ordered.begin());
  out.train.assign(it, it + s.train);
  out.val.assign(it + s.train, it + s.train + s.val);
  out.test.assign(it + s.train + s.val, it + s.train + s.val + s.test);
  return out;
}

}  // namespace

Splits split_reddit(std::vector<Thread> threads, SplitSizes sizes) {
  std::stable_sort(threads.begin(), threads.end(), [](const Thread& a, const Thread& b) {
    const auto ta = a.posts.empty() ? 0 : a.posts.front().created_utc;
    const auto tb = b.posts.empty() ? 0 : b.posts.front().created_utc;
    if (ta != tb) return ta < tb;
    return a.thread_id < b.thread_id;
  });
  return take(std::move(threads), sizes);
}

Splits split_random(std::vector<Thread> threads, std::uint64_t seed, SplitSizes sizes) {
  std::sort(threads.begin(), threads.end(), [](const Thread& a, const Thread& b) { return a.thread_id < b.thread_id; });
  std::mt19937_64 rng(seed);
  std::shuffle(threads.begin(), threads.end(), rng);
  return take(std::move(threads), sizes);
}

// ------------------------------------------------------------- tokenizer --

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (c < 0x80 && std::ispunct(c)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  flush();
  return out;
}

std::size_t word_count(const std::vector<std::string>& tokens) {
  return static_cast<std::size_t>(std::count_if(tokens.begin(), tokens.end(), [](const std::string& t) {
    return std::any_of(t.begin(), t.end(), [](char ch) {
      const auto c = static_cast<unsigned char>(ch);
      return c >= 0x80 || std::isalnum(c);
    });
  }));
}

// ------------------------------------------------------------- vocabulary --

Vocabulary::Vocabulary() : tokens_{"<pad>", "<unk>"} {}

Vocabulary Vocabulary::build(const std::map<std::string, std::size_t>& counts, std::size_t min_freq) {
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (const auto& [tok, n] : counts)
    if (n >= min_freq && tok != "<pad>" && tok != "<unk>") kept.emplace_back(tok, n);
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocabulary v;
  for (auto& [tok, n] : kept) {
    v.index_.emplace(tok, v.tokens_.size());
    v.tokens_.push_back(tok);
  }
  return v;
}

std::size_t Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(std::size_t id) const {
  if (id >= tokens_.size()) throw VocabularyError("word id " + std::to_string(id) + " outside vocabulary");
  return tokens_[id];
}

std::vector<std::size_t> Vocabulary::encode(const std::vector<std::string>& tokens) const {
  std::vector<std::size_t> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write vocabulary " + path);
  for (std::size_t i = 2; i < tokens_.size(); ++i) out << tokens_[i] << '\n';
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read vocabulary " + path);
  Vocabulary v;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (v.index_.count(line)) throw CorruptionError("duplicate token '" + line + "' in " + path);
    v.index_.emplace(line, v.tokens_.size());
    v.tokens_.push_back(line);
  }
  return v;
}

}  // namespace convernet::data
