// SPDX-License-Identifier: Apache-2.0
//
// Network building blocks. Every activation is a row vector [1, d]; weight
// matrices are laid out [in, out] so a projection is matmul(x, W).
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "convernet/autodiff.hpp"

namespace convernet::nn {

using ad::Parameter;
using ad::Tape;
using ad::Tensor;
using ad::Var;

inline constexpr std::size_t kPadId = 0;
inline constexpr std::size_t kUnkId = 1;

/// Deterministic source of per-parameter seeds.
class Initializer {
 public:
  Initializer(double stddev, std::uint64_t seed) : stddev_(stddev), seed_(seed) {}
  Tensor gaussian(const ad::Shape& shape);
  static Tensor zeros(const ad::Shape& shape) { return Tensor(shape); }
  static Tensor ones(const ad::Shape& shape) { return Tensor(shape, 1.0); }

 private:
  double stddev_;
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

struct EmbeddingTable {
  Parameter table;  // [V, d]; row kPadId stays zero

  EmbeddingTable() = default;
  EmbeddingTable(const std::string& name, std::size_t vocab, std::size_t dim, Initializer& init);
  std::size_t vocab_size() const { return table.value.shape()[0]; }
  std::size_t dim() const { return table.value.shape()[1]; }
  void collect(std::vector<Parameter*>& out) { out.push_back(&table); }
};

/// Mean of the post's word vectors (PAD ids dropped; an empty post pools to
/// zeros) concatenated with the post's context row. `context` may be an
/// invalid Var, in which case only the pooled embedding is returned.
Var embed_and_pool(Tape& tape, EmbeddingTable& emb, std::span<const std::size_t> tokens, Var context);

struct CellState {
  Var h;
  Var c;
};

using StepFn = std::function<CellState(Var x, const CellState& prev)>;

/// Plain LSTM kernel: i, f, o gates, tanh candidate, m = o * c.
struct LSTMParams {
  std::size_t input = 0, hidden = 0;
  Parameter W_ix, W_im, W_fx, W_fm, W_ox, W_om, W_cx, W_cm;

  LSTMParams() = default;
  LSTMParams(const std::string& prefix, std::size_t input, std::size_t hidden, Initializer& init);
  void collect(std::vector<Parameter*>& out);
};

CellState lstm_step(Tape& tape, LSTMParams& p, Var x, const CellState& prev);

struct LNSite {
  Parameter alpha, beta;
};

/// Layer-normalized LSTM with peepholes. One (alpha, beta) pair per LN site.
struct LNLSTMParams {
  std::size_t input = 0, hidden = 0;
  Parameter W_xi, W_hi, W_xf, W_hf, W_xc, W_hc, W_xo, W_ho;
  Parameter w_ci, w_cf, w_co;
  Parameter b_i, b_f, b_c, b_o;
  LNSite ln_xi, ln_hi, ln_xf, ln_hf, ln_xc, ln_hc, ln_xo, ln_ho, ln_c;

  LNLSTMParams() = default;
  LNLSTMParams(const std::string& prefix, std::size_t input, std::size_t hidden, Initializer& init);
  void collect(std::vector<Parameter*>& out);
};

/// LN(z; alpha, beta) over the last dim with an std floor of 1e-8.
Var ln(Var z, Var alpha, Var beta);

CellState ln_lstm_step(Tape& tape, LNLSTMParams& p, Var x, const CellState& prev);

/// Runs `forward` over rows 0..length-1 and `backward` over length-1..0 of
/// seq [T, d], returning [T, 2H] aligned by position; rows >= length are zero.
Var bilstm_forward(Tape& tape, const StepFn& forward, const StepFn& backward, Var seq, std::size_t length,
                   std::size_t hidden);

/// Attention logits indexed by (position k, sequence length s).
struct DwdlParams {
  Parameter weights;  // [L_max, L_max]; entry (k-1, s-1) is w_ks

  DwdlParams() = default;
  DwdlParams(std::size_t max_len, Initializer& init);
  std::size_t max_len() const { return weights.value.shape()[0]; }
  void collect(std::vector<Parameter*>& out) { out.push_back(&weights); }
};

/// softmax(w_1s..w_ss)-weighted mean of rows 0..s-1 of h.
Var dwdl_attention(Tape& tape, DwdlParams& p, Var h, std::size_t s);

/// Position-only logits shared across all lengths.
struct PositionalAttentionParams {
  Parameter weights;  // [L_max]

  PositionalAttentionParams() = default;
  PositionalAttentionParams(std::size_t max_len, Initializer& init);
  void collect(std::vector<Parameter*>& out) { out.push_back(&weights); }
};

Var positional_attention(Tape& tape, PositionalAttentionParams& p, Var h, std::size_t s);

/// z0 = tanh([att; h_T] W). `att` may be invalid (attention disabled).
Var merge(Tape& tape, Var att, Var h_last, Parameter& W);

enum class Mode { Train, Eval };

struct MLPLayer {
  Parameter weight, bias, gamma, beta;
  Parameter running_mean, running_var;  // buffers, not trainable
};

struct MLPParams {
  std::vector<MLPLayer> layers;
  Parameter out_weight, out_bias;
  double momentum = 0.9;
  double bn_std_floor = 1e-3;
  std::uint64_t train_batches = 0;

  MLPParams() = default;
  MLPParams(std::size_t input, std::size_t hidden, std::size_t depth, double momentum, Initializer& init);
  void collect(std::vector<Parameter*>& out);
};

/// Linear -> ReLU -> batch norm per hidden layer, then a sigmoid unit.
/// z0 is [B, D]; returns [B, 1]. Train mode normalizes with batch statistics
/// and folds them into the running estimates.
Var mlp_decode(Tape& tape, MLPParams& p, Var z0, Mode mode);

}  // namespace convernet::nn
