// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "convernet/config.hpp"
#include "convernet/error.hpp"
#include "convernet/layers.hpp"
#include "convernet/model.hpp"
#include "support.hpp"

using namespace convernet;
using namespace convernet::nn;
using testing::check_gradients;
using testing::project;
using testing::uniform;

namespace {

constexpr double kGradTol = 1e-6;

Tensor mat(std::size_t r, std::size_t c, std::vector<double> v) { return Tensor({r, c}, std::move(v)); }

ModelConfig small_config() {
  ModelConfig c;
  c.word_dim = 16;
  c.hidden = 16;
  c.merge_dim = 16;
  c.mlp_hidden = 16;
  c.max_len = 6;
  c.vocab_size = 12;
  c.context_dim = 3;
  c.seed = 5;
  return c;
}

Instance make_instance(std::size_t posts, std::size_t context_dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Instance inst;
  inst.thread_id = "t" + std::to_string(seed);
  inst.target_post_id = "p";
  for (std::size_t i = 0; i < posts; ++i) {
    inst.tokens.push_back({2 + rng() % 10, 2 + rng() % 10, 1});
    std::vector<double> ctx(context_dim);
    for (double& v : ctx) v = static_cast<double>(rng() % 100) / 100.0;
    inst.context.push_back(ctx);
    inst.background.push_back(0);
  }
  return inst;
}

}  // namespace

TEST_CASE("layer norm: zero mean and unit deviation per row") {
  Tape t;
  Var z = t.constant(uniform({1, 8}, 3, -5.0, 5.0));
  Var out = ln(z, t.constant(Tensor({8}, 1.0)), t.constant(Tensor({8}, 0.0)));
  double mean = 0.0;
  for (double v : out.value().storage()) mean += v;
  mean /= 8.0;
  double var = 0.0;
  for (double v : out.value().storage()) var += (v - mean) * (v - mean);
  CHECK(std::abs(mean) < 1e-9);
  CHECK(std::sqrt(var / 8.0) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("layer norm: a constant row maps to beta without NaN") {
  Tape t;
  Var z = t.constant(Tensor({1, 4}, 3.0));
  Var beta = t.constant(Tensor({4}, std::vector<double>{0.5, -1, 2, 0}));
  Var out = ln(z, t.constant(Tensor({4}, 1.0)), beta);
  for (std::size_t i = 0; i < 4; ++i) CHECK(out.value()[i] == doctest::Approx(beta.value()[i]));
}

TEST_CASE("layer norm: shift and scale invariance of the input") {
  Tape t;
  const Tensor base = uniform({1, 6}, 7);
  Tensor moved = base;
  for (double& v : moved.storage()) v = 3.5 * v - 11.0;
  Var alpha = t.constant(uniform({6}, 8, 0.5, 1.5));
  Var beta = t.constant(uniform({6}, 9));
  Var a = ln(t.constant(base), alpha, beta);
  Var b = ln(t.constant(moved), alpha, beta);
  for (std::size_t i = 0; i < 6; ++i) CHECK(a.value()[i] == doctest::Approx(b.value()[i]).epsilon(1e-9));
}

TEST_CASE("layer norm: fewer than two units is rejected") {
  Tape t;
  CHECK_THROWS_AS(ln(t.constant(Tensor({1, 1}, 1.0)), t.constant(Tensor({1}, 1.0)), t.constant(Tensor({1}))),
                  ShapeError);
}

TEST_CASE("dwdl: output lies in the convex hull of the first s rows") {
  Initializer init(1.0, 17);
  DwdlParams p(8, init);
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t s = 1 + rng() % 8;
    Tape t;
    const Tensor hv = uniform({8, 5}, 100 + trial);
    Var out = dwdl_attention(t, p, t.constant(hv), s);
    for (std::size_t c = 0; c < 5; ++c) {
      double lo = 1e300, hi = -1e300;
      for (std::size_t r = 0; r < s; ++r) {
        lo = std::min(lo, hv.at(r, c));
        hi = std::max(hi, hv.at(r, c));
      }
      CHECK(out.value()[c] >= lo - 1e-12);
      CHECK(out.value()[c] <= hi + 1e-12);
    }
  }
}

TEST_CASE("dwdl: length one returns the first row and rows past s are ignored") {
  Initializer init(1.0, 4);
  DwdlParams p(5, init);
  Tape t;
  const Tensor hv = uniform({5, 3}, 1);
  Var one = dwdl_attention(t, p, t.constant(hv), 1);
  for (std::size_t c = 0; c < 3; ++c) CHECK(one.value()[c] == doctest::Approx(hv.at(0, c)).epsilon(1e-14));
  Tensor altered = hv;
  for (std::size_t c = 0; c < 3; ++c) altered.at(4, c) = 1e6;
  Var a = dwdl_attention(t, p, t.constant(hv), 3);
  Var b = dwdl_attention(t, p, t.constant(altered), 3);
  CHECK(a.value().storage() == b.value().storage());
}

TEST_CASE("dwdl: equal logits give the plain mean") {
  DwdlParams p;
  p.weights = ad::Parameter("w", Tensor({4, 4}, 0.3));
  Tape t;
  Var h = t.constant(mat(4, 1, {1, 2, 3, 10}));
  CHECK(dwdl_attention(t, p, h, 3).value()[0] == doctest::Approx(2.0).epsilon(1e-14));
}

TEST_CASE("dwdl: weights are length specific") {
  DwdlParams p;
  p.weights = ad::Parameter("w", Tensor({3, 3}, 0.0));
  p.weights.value.at(0, 2) = 5.0;  // position 1 is favoured only when s = 3
  Tape t;
  Var h = t.constant(mat(3, 1, {1, 0, 0}));
  CHECK(dwdl_attention(t, p, h, 2).value()[0] == doctest::Approx(0.5));
  CHECK(dwdl_attention(t, p, h, 3).value()[0] > 0.95);
}

TEST_CASE("dwdl: only the active column receives gradient") {
  Initializer init(0.5, 2);
  DwdlParams p(4, init);
  p.weights.zero_grad();
  Tape t;
  Var out = dwdl_attention(t, p, t.constant(uniform({4, 3}, 5)), 3);
  t.backward(project(t, out));
  for (std::size_t k = 0; k < 4; ++k)
    for (std::size_t s = 0; s < 4; ++s) {
      if (s == 2 && k < 3) continue;
      CHECK(p.weights.grad.at(k, s) == 0.0);
    }
}

TEST_CASE("attention: lengths outside [1, L] are rejected") {
  Initializer init(0.1, 1);
  DwdlParams d(3, init);
  PositionalAttentionParams q(3, init);
  Tape t;
  Var h = t.constant(Tensor({4, 2}));
  CHECK_THROWS_AS(dwdl_attention(t, d, h, 0), LengthError);
  CHECK_THROWS_AS(dwdl_attention(t, d, h, 4), LengthError);
  CHECK_THROWS_AS(positional_attention(t, q, h, 4), LengthError);
}

TEST_CASE("layer gradients match central differences") {
  Initializer init(0.5, 33);
  LNLSTMParams lnp("ln", 3, 4, init);
  LSTMParams plain("plain", 3, 4, init);
  DwdlParams dw(4, init);
  PositionalAttentionParams pos(4, init);
  ad::Parameter x = testing::param("x", {4, 3}, 1, -1.0, 1.0);
  ad::Parameter merge_w = testing::param("merge", {16, 5}, 2, -0.5, 0.5);
  MLPParams mlp(5, 4, 2, 0.9, init);

  std::vector<ad::Parameter*> ln_params, plain_params, mlp_params;
  lnp.collect(ln_params);
  plain.collect(plain_params);
  mlp.collect(mlp_params);
  ln_params.push_back(&x);
  plain_params.push_back(&x);

  auto zero_state = [](Tape& t, std::size_t h) {
    return CellState{t.constant(Tensor({1, h})), t.constant(Tensor({1, h}))};
  };

  SUBCASE("ln-lstm step") {
    auto r = check_gradients(
        [&](Tape& t) {
          Var X = t.param(x);
          CellState s = ln_lstm_step(t, lnp, ad::row(X, 0), zero_state(t, 4));
          s = ln_lstm_step(t, lnp, ad::row(X, 1), s);
          return project(t, ad::concat({s.h, s.c}));
        },
        ln_params);
    CHECK_MESSAGE(r.max_rel < kGradTol, r.worst);
  }
  SUBCASE("plain lstm step") {
    auto r = check_gradients(
        [&](Tape& t) {
          Var X = t.param(x);
          CellState s = lstm_step(t, plain, ad::row(X, 0), zero_state(t, 4));
          s = lstm_step(t, plain, ad::row(X, 1), s);
          return project(t, ad::concat({s.h, s.c}));
        },
        plain_params);
    CHECK_MESSAGE(r.max_rel < kGradTol, r.worst);
  }
  SUBCASE("bilstm with attention and merge") {
    std::vector<ad::Parameter*> all = plain_params;
    dw.collect(all);
    pos.collect(all);
    all.push_back(&merge_w);
    auto r = check_gradients(
        [&](Tape& t) {
          StepFn f = [&](Var in, const CellState& prev) { return lstm_step(t, plain, in, prev); };
          Var H = bilstm_forward(t, f, f, t.param(x), 3, 4);
          Var att = dwdl_attention(t, dw, H, 3);
          Var patt = positional_attention(t, pos, H, 3);
          Var z = merge(t, att, ad::row(H, 2), merge_w);
          return ad::add(project(t, z), project(t, patt, 7));
        },
        all);
    CHECK_MESSAGE(r.max_rel < kGradTol, r.worst);
  }
  SUBCASE("mlp decoder in train mode") {
    ad::Parameter z = testing::param("z", {6, 5}, 3, -1.0, 1.0);
    std::vector<ad::Parameter*> all;
    for (ad::Parameter* p : mlp_params)
      if (p->trainable) all.push_back(p);
    all.push_back(&z);
    const auto snapshot = mlp;
    auto r = check_gradients(
        [&](Tape& t) {
          for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
            mlp.layers[l].running_mean = snapshot.layers[l].running_mean;
            mlp.layers[l].running_var = snapshot.layers[l].running_var;
          }
          return project(t, mlp_decode(t, mlp, t.param(z), Mode::Train));
        },
        all);
    CHECK_MESSAGE(r.max_rel < kGradTol, r.worst);
  }
}

TEST_CASE("bilstm: rows past the length are zero and empty input fails") {
  Initializer init(0.3, 1);
  LSTMParams p("p", 2, 3, init);
  Tape t;
  StepFn f = [&](Var in, const CellState& prev) { return lstm_step(t, p, in, prev); };
  Var H = bilstm_forward(t, f, f, t.constant(uniform({5, 2}, 2)), 2, 3);
  CHECK(H.shape() == ad::Shape{5, 6});
  for (std::size_t r = 2; r < 5; ++r)
    for (std::size_t c = 0; c < 6; ++c) CHECK(H.value().at(r, c) == 0.0);
  CHECK_THROWS_AS(bilstm_forward(t, f, f, t.constant(uniform({5, 2}, 2)), 0, 3), EmptyInputError);
}

TEST_CASE("embed_and_pool: PAD is ignored and an empty post pools to zeros") {
  Initializer init(0.5, 2);
  EmbeddingTable emb("w", 6, 4, init);
  Tape t;
  const std::vector<std::size_t> with_pad = {3, 0, 4};
  const std::vector<std::size_t> without = {3, 4};
  Var a = embed_and_pool(t, emb, with_pad, Var{});
  Var b = embed_and_pool(t, emb, without, Var{});
  CHECK(a.value().storage() == b.value().storage());
  Var e = embed_and_pool(t, emb, std::vector<std::size_t>{}, t.constant(Tensor({1, 2}, 1.0)));
  CHECK(e.shape() == ad::Shape{1, 6});
  for (std::size_t i = 0; i < 4; ++i) CHECK(e.value()[i] == 0.0);
  CHECK(e.value()[4] == 1.0);
  CHECK_THROWS_AS(embed_and_pool(t, emb, std::vector<std::size_t>{6}, Var{}), VocabularyError);
  for (std::size_t c = 0; c < 4; ++c) CHECK(emb.table.value.at(kPadId, c) == 0.0);
}

TEST_CASE("mlp: eval mode uses running statistics and is batch independent") {
  Initializer init(0.3, 9);
  MLPParams mlp(4, 6, 2, 0.9, init);
  const Tensor batch = uniform({8, 4}, 4);
  for (int i = 0; i < 5; ++i) {
    Tape t;
    mlp_decode(t, mlp, t.constant(batch), Mode::Train);
  }
  Tape t;
  Var full = mlp_decode(t, mlp, t.constant(batch), Mode::Eval);
  CHECK(full.shape() == ad::Shape{8, 1});
  Tensor first({1, 4});
  for (std::size_t c = 0; c < 4; ++c) first.at(0, c) = batch.at(0, c);
  Var single = mlp_decode(t, mlp, t.constant(first), Mode::Eval);
  CHECK(single.value()[0] == doctest::Approx(full.value()[0]).epsilon(1e-12));
  for (double v : full.value().storage()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("model: deterministic initialization and prediction") {
  ConverNet a(small_config());
  ConverNet b(small_config());
  REQUIRE(a.parameters().size() == b.parameters().size());
  for (std::size_t i = 0; i < a.parameters().size(); ++i)
    CHECK(a.parameters()[i]->value.storage() == b.parameters()[i]->value.storage());
  const Instance inst = make_instance(4, 3, 1);
  const double p = a.predict(inst);
  CHECK(p > 0.0);
  CHECK(p < 1.0);
  CHECK(p == b.predict(inst));
}

TEST_CASE("model: parallel prediction matches sequential") {
  ConverNet net(small_config());
  std::vector<Instance> batch;
  for (std::size_t i = 0; i < 9; ++i) batch.push_back(make_instance(1 + i % 6, 3, i));
  const auto seq = net.predict_all(batch, 1);
  const auto par = net.predict_all(batch, 3);
  CHECK(seq == par);
}

TEST_CASE("model: every attention and normalization variant runs") {
  for (AttentionKind kind : {AttentionKind::Dwdl, AttentionKind::Positional, AttentionKind::None}) {
    for (bool ln_on : {true, false}) {
      ModelConfig c = small_config();
      c.attention = kind;
      c.layer_norm = ln_on;
      c.stack_depth = 2;
      ConverNet net(c);
      const double p = net.predict(make_instance(3, 3, 2));
      CHECK(std::isfinite(p));
    }
  }
}

TEST_CASE("model: malformed instances are rejected") {
  ConverNet net(small_config());
  Instance empty;
  CHECK_THROWS_AS(net.predict(empty), EmptyInputError);
  CHECK_THROWS_AS(net.predict(make_instance(7, 3, 1)), LengthError);
  CHECK_THROWS_AS(net.predict(make_instance(3, 2, 1)), ShapeError);
  Instance bad_word = make_instance(2, 3, 1);
  bad_word.tokens[0][0] = 99;
  CHECK_THROWS_AS(net.predict(bad_word), VocabularyError);
}

TEST_CASE("config: overrides, validation and round trip") {
  ModelConfig c;
  c.set("hidden", "64");
  c.set("attention", "standard");
  c.set("layer_norm", "false");
  CHECK(c.hidden == 64);
  CHECK(c.attention == AttentionKind::Positional);
  CHECK_FALSE(c.layer_norm);
  CHECK_THROWS_AS(c.set("nope", "1"), ConfigError);
  CHECK_THROWS_AS(c.set("hidden", "-3"), ConfigError);
  CHECK_THROWS_AS(c.set("learning_rate", "abc"), ConfigError);
  CHECK_THROWS_AS(parse_attention("cosine"), ConfigError);
  const ModelConfig back = ModelConfig::from_map(c.to_map());
  CHECK(back.to_map() == c.to_map());
  ModelConfig bad;
  bad.learning_rate = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  ModelConfig off;
  off.hidden = 24;
  CHECK_NOTHROW(off.validate());
}
