// SPDX-License-Identifier: Apache-2.0
#include "convernet/layers.hpp"

#include <atomic>
#include <cmath>

#include "convernet/error.hpp"
#include "convernet/log.hpp"

namespace convernet::nn {

namespace {

Parameter matrix(const std::string& name, std::size_t rows, std::size_t cols, Initializer& init) {
  return Parameter(name, init.gaussian({rows, cols}));
}

Parameter vec(const std::string& name, std::size_t n, Initializer& init) {
  return Parameter(name, init.gaussian({n}));
}

Parameter constant_vec(const std::string& name, std::size_t n, double v, bool trainable = true) {
  return Parameter(name, Tensor({n}, v), trainable);
}

LNSite ln_site(const std::string& name, std::size_t n) {
  return LNSite{constant_vec(name + ".alpha", n, 1.0), constant_vec(name + ".beta", n, 0.0)};
}

Var zeros_row(Tape& tape, std::size_t n) { return tape.constant(Tensor({1, n})); }

void check_row(Var x, std::size_t n, const char* what) {
  const auto& s = x.shape();
  if (s.size() != 2 || s[0] != 1 || s[1] != n)
    throw ShapeError(std::string(what) + ": expected [1," + std::to_string(n) + "], got " + ad::shape_str(s));
}

}  // namespace

Tensor Initializer::gaussian(const ad::Shape& shape) {
  // splitmix-style stream separation keeps each parameter independent of the
  // order other parameters happen to be drawn in.
  std::uint64_t z = seed_ + 0x9E3779B97F4A7C15ULL * (++counter_);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  z ^= z >> 31;
  return ad::gaussian_init(shape, stddev_, z);
}

// ----------------------------------------------------------- embeddings --

EmbeddingTable::EmbeddingTable(const std::string& name, std::size_t vocab, std::size_t dim, Initializer& init)
    : table(name, init.gaussian({vocab, dim})) {
  for (std::size_t c = 0; c < dim; ++c) table.value.at(kPadId, c) = 0.0;
}

Var embed_and_pool(Tape& tape, EmbeddingTable& emb, std::span<const std::size_t> tokens, Var context) {
  std::vector<std::size_t> ids;
  ids.reserve(tokens.size());
  for (std::size_t t : tokens) {
    if (t >= emb.vocab_size())
      throw VocabularyError("word id " + std::to_string(t) + " outside vocabulary of " +
                            std::to_string(emb.vocab_size()));
    if (t != kPadId) ids.push_back(t);
  }
  Var pooled = ad::gather_rows_mean(tape.param(emb.table), ids);
  if (!context.valid()) return pooled;
  return ad::concat({pooled, context});
}

// ----------------------------------------------------------------- LSTM --

LSTMParams::LSTMParams(const std::string& pre, std::size_t in, std::size_t h, Initializer& init)
    : input(in),
      hidden(h),
      W_ix(matrix(pre + ".W_ix", in, h, init)),
      W_im(matrix(pre + ".W_im", h, h, init)),
      W_fx(matrix(pre + ".W_fx", in, h, init)),
      W_fm(matrix(pre + ".W_fm", h, h, init)),
      W_ox(matrix(pre + ".W_ox", in, h, init)),
      W_om(matrix(pre + ".W_om", h, h, init)),
      W_cx(matrix(pre + ".W_cx", in, h, init)),
      W_cm(matrix(pre + ".W_cm", h, h, init)) {}

void LSTMParams::collect(std::vector<Parameter*>& out) {
  for (Parameter* p : {&W_ix, &W_im, &W_fx, &W_fm, &W_ox, &W_om, &W_cx, &W_cm}) out.push_back(p);
}

CellState lstm_step(Tape& tape, LSTMParams& p, Var x, const CellState& prev) {
  check_row(x, p.input, "lstm_step input");
  check_row(prev.h, p.hidden, "lstm_step m_prev");
  check_row(prev.c, p.hidden, "lstm_step c_prev");
  auto proj = [&](Parameter& Wx, Parameter& Wm) {
    return ad::add(ad::matmul(x, tape.param(Wx)), ad::matmul(prev.h, tape.param(Wm)));
  };
  Var i = ad::sigmoid(proj(p.W_ix, p.W_im));
  Var f = ad::sigmoid(proj(p.W_fx, p.W_fm));
  Var o = ad::sigmoid(proj(p.W_ox, p.W_om));
  Var c = ad::add(ad::mul(f, prev.c), ad::mul(i, ad::tanh(proj(p.W_cx, p.W_cm))));
  Var m = ad::mul(o, c);
  return {m, c};
}

// ------------------------------------------------------------ LN + LSTM --

Var ln(Var z, Var alpha, Var beta) { return ad::layer_norm(z, alpha, beta, 1e-8); }

LNLSTMParams::LNLSTMParams(const std::string& pre, std::size_t in, std::size_t h, Initializer& init)
    : input(in),
      hidden(h),
      W_xi(matrix(pre + ".W_xi", in, h, init)),
      W_hi(matrix(pre + ".W_hi", h, h, init)),
      W_xf(matrix(pre + ".W_xf", in, h, init)),
      W_hf(matrix(pre + ".W_hf", h, h, init)),
      W_xc(matrix(pre + ".W_xc", in, h, init)),
      W_hc(matrix(pre + ".W_hc", h, h, init)),
      W_xo(matrix(pre + ".W_xo", in, h, init)),
      W_ho(matrix(pre + ".W_ho", h, h, init)),
      w_ci(vec(pre + ".w_ci", h, init)),
      w_cf(vec(pre + ".w_cf", h, init)),
      w_co(vec(pre + ".w_co", h, init)),
      b_i(constant_vec(pre + ".b_i", h, 0.0)),
      b_f(constant_vec(pre + ".b_f", h, 0.0)),
      b_c(constant_vec(pre + ".b_c", h, 0.0)),
      b_o(constant_vec(pre + ".b_o", h, 0.0)),
      ln_xi(ln_site(pre + ".ln_xi", h)),
      ln_hi(ln_site(pre + ".ln_hi", h)),
      ln_xf(ln_site(pre + ".ln_xf", h)),
      ln_hf(ln_site(pre + ".ln_hf", h)),
      ln_xc(ln_site(pre + ".ln_xc", h)),
      ln_hc(ln_site(pre + ".ln_hc", h)),
      ln_xo(ln_site(pre + ".ln_xo", h)),
      ln_ho(ln_site(pre + ".ln_ho", h)),
      ln_c(ln_site(pre + ".ln_c", h)) {}

void LNLSTMParams::collect(std::vector<Parameter*>& out) {
  for (Parameter* p : {&W_xi, &W_hi, &W_xf, &W_hf, &W_xc, &W_hc, &W_xo, &W_ho, &w_ci, &w_cf, &w_co, &b_i, &b_f,
                       &b_c, &b_o})
    out.push_back(p);
  for (LNSite* s : {&ln_xi, &ln_hi, &ln_xf, &ln_hf, &ln_xc, &ln_hc, &ln_xo, &ln_ho, &ln_c}) {
    out.push_back(&s->alpha);
    out.push_back(&s->beta);
  }
}

CellState ln_lstm_step(Tape& tape, LNLSTMParams& p, Var x, const CellState& prev) {
  check_row(x, p.input, "ln_lstm_step input");
  check_row(prev.h, p.hidden, "ln_lstm_step h_prev");
  check_row(prev.c, p.hidden, "ln_lstm_step c_prev");
  auto norm = [&](Var v, Parameter& W, LNSite& site) {
    return ln(ad::matmul(v, tape.param(W)), tape.param(site.alpha), tape.param(site.beta));
  };
  auto pre = [&](Parameter& Wx, LNSite& sx, Parameter& Wh, LNSite& sh, Parameter& b) {
    return ad::add(ad::add(norm(x, Wx, sx), norm(prev.h, Wh, sh)), tape.param(b));
  };
  Var i = ad::sigmoid(ad::add(pre(p.W_xi, p.ln_xi, p.W_hi, p.ln_hi, p.b_i), ad::mul(prev.c, tape.param(p.w_ci))));
  Var f = ad::sigmoid(ad::add(pre(p.W_xf, p.ln_xf, p.W_hf, p.ln_hf, p.b_f), ad::mul(prev.c, tape.param(p.w_cf))));
  Var g = ad::tanh(pre(p.W_xc, p.ln_xc, p.W_hc, p.ln_hc, p.b_c));
  Var c = ad::add(ad::mul(f, prev.c), ad::mul(i, g));
  Var o = ad::sigmoid(ad::add(pre(p.W_xo, p.ln_xo, p.W_ho, p.ln_ho, p.b_o), ad::mul(c, tape.param(p.w_co))));
  Var h = ad::mul(o, ad::tanh(ln(c, tape.param(p.ln_c.alpha), tape.param(p.ln_c.beta))));
  return {h, c};
}

Var bilstm_forward(Tape& tape, const StepFn& forward, const StepFn& backward, Var seq, std::size_t length,
                   std::size_t hidden) {
  const ad::Shape shape = seq.shape();
  if (shape.size() != 2) throw ShapeError("bilstm_forward expects [T, d], got " + ad::shape_str(shape));
  if (length == 0) throw EmptyInputError("bilstm_forward over an empty sequence");
  if (length > shape[0])
    throw ShapeError("bilstm_forward length " + std::to_string(length) + " exceeds " + ad::shape_str(shape));

  std::vector<Var> fwd(length), bwd(length);
  CellState state{zeros_row(tape, hidden), zeros_row(tape, hidden)};
  for (std::size_t t = 0; t < length; ++t) {
    state = forward(ad::row(seq, t), state);
    fwd[t] = state.h;
  }
  state = CellState{zeros_row(tape, hidden), zeros_row(tape, hidden)};
  for (std::size_t t = length; t-- > 0;) {
    state = backward(ad::row(seq, t), state);
    bwd[t] = state.h;
  }
  std::vector<Var> rows;
  rows.reserve(length);
  for (std::size_t t = 0; t < length; ++t) rows.push_back(ad::concat({fwd[t], bwd[t]}));
  return ad::stack_rows(rows, shape[0]);
}

// ------------------------------------------------------------ attention --

DwdlParams::DwdlParams(std::size_t max_len, Initializer& init)
    : weights("attention.dwdl", init.gaussian({max_len, max_len})) {}

Var dwdl_attention(Tape& tape, DwdlParams& p, Var h, std::size_t s) {
  const std::size_t L = p.max_len();
  if (s == 0 || s > L)
    throw LengthError("sequence length " + std::to_string(s) + " outside [1, " + std::to_string(L) + "]");
  std::vector<std::size_t> idx(s);
  for (std::size_t k = 0; k < s; ++k) idx[k] = k * L + (s - 1);
  Var logits = ad::gather(tape.param(p.weights), idx);
  return ad::softmax_pool(h, logits, s);
}

PositionalAttentionParams::PositionalAttentionParams(std::size_t max_len, Initializer& init)
    : weights("attention.positional", init.gaussian({max_len})) {}

Var positional_attention(Tape& tape, PositionalAttentionParams& p, Var h, std::size_t s) {
  const std::size_t L = p.weights.value.size();
  if (s == 0 || s > L)
    throw LengthError("sequence length " + std::to_string(s) + " outside [1, " + std::to_string(L) + "]");
  std::vector<std::size_t> idx(s);
  for (std::size_t k = 0; k < s; ++k) idx[k] = k;
  return ad::softmax_pool(h, ad::gather(tape.param(p.weights), idx), s);
}

Var merge(Tape& tape, Var att, Var h_last, Parameter& W) {
  Var joined = att.valid() ? ad::concat({att, h_last}) : h_last;
  return ad::tanh(ad::matmul(joined, tape.param(W)));
}

// ------------------------------------------------------------------ MLP --

MLPParams::MLPParams(std::size_t input, std::size_t hidden, std::size_t depth, double mom, Initializer& init)
    : momentum(mom) {
  std::size_t in = input;
  for (std::size_t l = 0; l < depth; ++l) {
    const std::string pre = "decoder." + std::to_string(l);
    layers.push_back(MLPLayer{
        matrix(pre + ".weight", in, hidden, init),
        constant_vec(pre + ".bias", hidden, 0.0),
        constant_vec(pre + ".bn_gamma", hidden, 1.0),
        constant_vec(pre + ".bn_beta", hidden, 0.0),
        constant_vec(pre + ".bn_running_mean", hidden, 0.0, false),
        constant_vec(pre + ".bn_running_var", hidden, 1.0, false),
    });
    in = hidden;
  }
  out_weight = matrix("decoder.out.weight", in, 1, init);
  out_bias = constant_vec("decoder.out.bias", 1, 0.0);
}

void MLPParams::collect(std::vector<Parameter*>& out) {
  for (MLPLayer& l : layers)
    for (Parameter* p : {&l.weight, &l.bias, &l.gamma, &l.beta, &l.running_mean, &l.running_var}) out.push_back(p);
  out.push_back(&out_weight);
  out.push_back(&out_bias);
}

namespace {
std::atomic<bool> g_warned_untrained{false};
}

Var mlp_decode(Tape& tape, MLPParams& p, Var z0, Mode mode) {
  if (mode == Mode::Eval && p.train_batches == 0 && !p.layers.empty() && !g_warned_untrained.exchange(true))
    log::warn("decoder evaluated before any training batch; using initial batch-norm statistics");
  Var z = z0;
  for (MLPLayer& l : p.layers) {
    Var a = ad::relu(ad::add(ad::matmul(z, tape.param(l.weight)), tape.param(l.bias)));
    if (mode == Mode::Train) {
      ad::BatchStats stats;
      z = ad::batch_norm(a, tape.param(l.gamma), tape.param(l.beta), p.bn_std_floor, &stats);
      for (std::size_t c = 0; c < stats.mean.size(); ++c) {
        l.running_mean.value[c] = p.momentum * l.running_mean.value[c] + (1.0 - p.momentum) * stats.mean[c];
        l.running_var.value[c] = p.momentum * l.running_var.value[c] + (1.0 - p.momentum) * stats.var[c];
      }
    } else {
      const std::size_t n = l.running_mean.value.size();
      Tensor shift({n}), inv({n});
      for (std::size_t c = 0; c < n; ++c) {
        shift[c] = l.running_mean.value[c];
        inv[c] = 1.0 / std::max(std::sqrt(l.running_var.value[c]), p.bn_std_floor);
      }
      Var xhat = ad::mul(ad::sub(a, tape.constant(std::move(shift))), tape.constant(std::move(inv)));
      z = ad::add(ad::mul(xhat, tape.param(l.gamma)), tape.param(l.beta));
    }
  }
  if (mode == Mode::Train) ++p.train_batches;
  return ad::sigmoid(ad::add(ad::matmul(z, tape.param(p.out_weight)), tape.param(p.out_bias)));
}

}  // namespace convernet::nn
