// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "convernet/data.hpp"
#include "convernet/dataset.hpp"
#include "convernet/error.hpp"
#include "convernet/features.hpp"
#include "support.hpp"

using namespace convernet;
using namespace convernet::features;
using data::Post;
using data::Thread;
using testing::ScratchDir;

namespace {

Post post(std::string id, std::optional<std::string> parent, std::int64_t t, std::string author,
          std::string body = "fine words") {
  Post p;
  p.id = std::move(id);
  p.parent_id = std::move(parent);
  p.created_utc = t;
  p.thread_id = "T";
  p.author = std::move(author);
  p.body = std::move(body);
  return p;
}

// r(alice) <- a(bob) <- c(alice); r <- b(carol)
Thread tree() {
  auto th = data::build_threads({post("r", std::nullopt, 0, "alice", "Hello all, good day"),
                                 post("a", std::string("r"), 100, "bob", "bad idea"),
                                 post("b", std::string("r"), 5000, "carol", "ok"),
                                 post("c", std::string("a"), 200000, "alice", "thanks, great")});
  return th.at(0);
}

}  // namespace

TEST_CASE("sentiment: normalized scores and neutral default") {
  SentimentLexicon lex;
  lex.add("Good", 2.0);
  lex.add("bad", -1.0);
  CHECK(lex.score("GOOD") == 2.0);
  CHECK(lex.score("unknown") == 0.0);
  const Sentiment s = sentiment_scores({"good", "bad", "the"}, lex);
  CHECK(s.pos == doctest::Approx(2.0 / 4.0));
  CHECK(s.neg == doctest::Approx(1.0 / 4.0));
  CHECK(s.neu == doctest::Approx(1.0 / 4.0));
  const Sentiment e = sentiment_scores({}, lex);
  CHECK(e.neg == 0.0);
  CHECK(e.neu == 1.0);
  CHECK(e.pos == 0.0);
  CHECK(SentimentLexicon::builtin().size() > 10);
}

TEST_CASE("sentiment lexicon file: comments, blanks and extra columns") {
  ScratchDir dir("lex");
  testing::write_text(dir.file("l.tsv"), "# header\n\nhappy\t2.5\textra\nsad\t-1\n");
  const auto lex = SentimentLexicon::load(dir.file("l.tsv"));
  CHECK(lex.size() == 2);
  CHECK(lex.score("happy") == 2.5);
  CHECK_THROWS_AS(SentimentLexicon::load(dir.file("none.tsv")), IoError);
}

TEST_CASE("time buckets: closed upper boundaries") {
  CHECK(time_bucket(0) == TimeBucket::Hour);
  CHECK(time_bucket(3600) == TimeBucket::Hour);
  CHECK(time_bucket(3601) == TimeBucket::Day);
  CHECK(time_bucket(86400) == TimeBucket::Day);
  CHECK(time_bucket(86401) == TimeBucket::Week);
  CHECK(time_bucket(604800) == TimeBucket::Week);
  CHECK(time_bucket(604801) == TimeBucket::Month);
  CHECK(time_bucket(100000000) == TimeBucket::Month);
  CHECK_THROWS_AS(time_bucket(-1), DataError);
}

TEST_CASE("reply features: depth and replies to the target author") {
  const Thread t = tree();
  const std::size_t c = t.index_of("c");
  const std::size_t a = t.index_of("a");
  const std::size_t b = t.index_of("b");
  CHECK(reply_features(t, c, c).depth == 2);
  CHECK(reply_features(t, a, c).replies_to_target_author);  // a answers alice, who wrote c
  CHECK_FALSE(reply_features(t, b, b).replies_to_target_author);
  CHECK_FALSE(reply_features(t, 0, c).replies_to_target_author);
}

TEST_CASE("author table: counts thread-ending posts and round trips") {
  const Thread t = tree();
  const AuthorTable table = AuthorTable::build({t});
  CHECK(table.end_count("alice") == 1);
  CHECK(table.end_count("carol") == 1);
  CHECK(table.end_count("bob") == 0);
  CHECK(table.end_count("nobody") == 0);
  ScratchDir dir("authors");
  table.save(dir.file("a.tsv"));
  CHECK(AuthorTable::load(dir.file("a.tsv")).counts() == table.counts());
}

TEST_CASE("background table: ids start at one and unseen maps to zero") {
  Thread m1 = data::make_chain_thread("c1", {post("1", std::nullopt, 0, "x"), post("2", std::nullopt, 1, "y")}, "m9");
  Thread m2 = data::make_chain_thread("c2", {post("3", std::nullopt, 0, "x"), post("4", std::nullopt, 1, "y")}, "m1");
  const BackgroundTable table = BackgroundTable::build({m1, m2});
  CHECK(table.size() == 3);
  CHECK(table.id("m1") == 1);
  CHECK(table.id("m9") == 2);
  CHECK(table.id("m5") == 0);
  ScratchDir dir("bg");
  table.save(dir.file("b.txt"));
  CHECK(BackgroundTable::load(dir.file("b.txt")).id("m9") == 2);
}

TEST_CASE("families: names, masks and slot ranges") {
  for (Family f : kContextFamilies) CHECK(parse_family(to_string(f)) == f);
  CHECK_THROWS_AS(parse_family("colour"), ConfigError);
  const FeatureMask forum = FeatureMask::for_corpus(false);
  CHECK_FALSE(forum.has(Family::Background));
  CHECK(forum.has(Family::PostTime));
  const FeatureMask dialog = FeatureMask::for_corpus(true);
  CHECK(dialog.has(Family::Background));
  CHECK_FALSE(dialog.has(Family::PostTime));
  CHECK(family_slots(Family::Sentiment) == std::pair<std::size_t, std::size_t>{2, 5});
  CHECK(family_slots(Family::PostTime) == std::pair<std::size_t, std::size_t>{5, 9});
  CHECK(family_slots(Family::Background).first == family_slots(Family::Background).second);
}

TEST_CASE("context row: slot values") {
  const Thread t = tree();
  Tables tables;
  tables.lexicon.add("good", 1.0);
  tables.lexicon.add("bad", -1.0);
  tables.authors.set("alice", 4);
  const std::size_t c = t.index_of("c");
  const std::size_t a = t.index_of("a");
  const auto row = assemble_context(t, a, c, tables, FeatureMask::all());
  REQUIRE(row.size() == kContextDim);
  CHECK(row[kSlotPostLength] == doctest::Approx(std::log1p(2.0)));
  CHECK(row[kSlotThreadLength] == doctest::Approx(std::log1p(static_cast<double>(a + 1))));
  CHECK(row[kSlotSentiment] == doctest::Approx(0.5));      // "bad"
  CHECK(row[kSlotSentiment + 1] == doctest::Approx(0.5));  // "idea"
  CHECK(row[kSlotTime] == 1.0);                            // 100 s after the root
  CHECK(row[kSlotDepth] == 1.0);
  CHECK(row[kSlotReplyFlag] == 1.0);
  CHECK(row[kSlotAuthor] == 0.0);
  const auto last = assemble_context(t, c, c, tables, FeatureMask::all());
  CHECK(last[kSlotTime + 2] == 1.0);  // 195000 s after b
  CHECK(last[kSlotAuthor] == doctest::Approx(std::log1p(4.0)));
  const auto root = assemble_context(t, 0, c, tables, FeatureMask::all());
  CHECK(root[kSlotTime] == 1.0);
  CHECK_THROWS_AS(assemble_context(t, c, a, tables, FeatureMask::all()), LookupError);
}

TEST_CASE("context row: disabled families stay zero") {
  const Thread t = tree();
  Tables tables;
  FeatureMask mask = FeatureMask::all();
  mask.set(Family::Sentiment, false);
  mask.set(Family::PostTime, false);
  const auto row = assemble_context(t, 1, 3, tables, mask);
  for (std::size_t s = kSlotSentiment; s < kSlotDepth; ++s) CHECK(row[s] == 0.0);
  const auto none = assemble_context(t, 1, 3, tables, FeatureMask::none());
  for (double v : none) CHECK(v == 0.0);
}

TEST_CASE("context rows never depend on posts after the target") {
  Thread t = tree();
  Tables tables;
  tables.lexicon = SentimentLexicon::builtin();
  const std::size_t target = 1;
  std::vector<std::vector<double>> before;
  for (std::size_t i = 0; i <= target; ++i) before.push_back(assemble_context(t, i, target, tables, FeatureMask::all()));
  for (std::size_t i = target + 1; i < t.size(); ++i) {
    t.posts[i].body = "completely different text with many many words";
    t.posts[i].author = "alice";
  }
  for (std::size_t i = 0; i <= target; ++i)
    CHECK(assemble_context(t, i, target, tables, FeatureMask::all()) == before[i]);
}

TEST_CASE("ablation zeroes exactly the family slots") {
  Instance inst;
  inst.tokens = {{2}, {3}};
  inst.context.assign(2, std::vector<double>(kContextDim, 1.0));
  inst.background = {4, 4};
  std::vector<Instance> set = {inst};
  dataset::ablate(set, {Family::Sentiment, Family::Background});
  for (const auto& row : set[0].context)
    for (std::size_t s = 0; s < kContextDim; ++s) CHECK(row[s] == ((s >= 2 && s < 5) ? 0.0 : 1.0));
  CHECK(set[0].background == std::vector<std::size_t>{0, 0});
}
