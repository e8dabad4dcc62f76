// SPDX-License-Identifier: Apache-2.0
#include "convernet/model.hpp"

#include <thread>

#include "convernet/error.hpp"

namespace convernet {

using ad::Tape;
using ad::Tensor;
using ad::Var;

ConverNet::ConverNet(const ModelConfig& config) : config_(config) {
  config_.validate();
  nn::Initializer init(config_.init_std, config_.seed);
  words_ = nn::EmbeddingTable("embedding.words", config_.vocab_size, config_.word_dim, init);
  if (config_.use_context && config_.background_size > 0)
    backgrounds_.emplace("embedding.background", config_.background_size, config_.background_dim, init);

  const std::size_t H = config_.hidden;
  for (std::size_t l = 0; l < config_.stack_depth; ++l) {
    const std::size_t in = l == 0 ? input_dim() : 2 * H;
    const std::string pre = "encoder." + std::to_string(l);
    if (config_.layer_norm) {
      ln_fwd_.emplace_back(pre + ".fwd", in, H, init);
      ln_bwd_.emplace_back(pre + ".bwd", in, H, init);
    } else {
      fwd_.emplace_back(pre + ".fwd", in, H, init);
      bwd_.emplace_back(pre + ".bwd", in, H, init);
    }
  }
  std::size_t merge_in = 2 * H;
  switch (config_.attention) {
    case AttentionKind::Dwdl: dwdl_.emplace(config_.max_len, init); merge_in += 2 * H; break;
    case AttentionKind::Positional: positional_.emplace(config_.max_len, init); merge_in += 2 * H; break;
    case AttentionKind::None: break;
  }
  merge_weight_ = ad::Parameter("merge.weight", init.gaussian({merge_in, config_.merge_dim}));
  decoder_ = nn::MLPParams(config_.merge_dim, config_.mlp_hidden, config_.mlp_depth, config_.bn_momentum, init);

  words_.collect(params_);
  if (backgrounds_) backgrounds_->collect(params_);
  for (std::size_t l = 0; l < config_.stack_depth; ++l) {
    if (config_.layer_norm) {
      ln_fwd_[l].collect(params_);
      ln_bwd_[l].collect(params_);
    } else {
      fwd_[l].collect(params_);
      bwd_[l].collect(params_);
    }
  }
  if (dwdl_) dwdl_->collect(params_);
  if (positional_) positional_->collect(params_);
  params_.push_back(&merge_weight_);
  decoder_.collect(params_);
}

std::size_t ConverNet::input_dim() const {
  std::size_t d = config_.word_dim;
  if (config_.use_context) {
    d += config_.context_dim;
    if (config_.background_size > 0) d += config_.background_dim;
  }
  return d;
}

void ConverNet::check_instance(const Instance& inst) const {
  const std::size_t s = inst.length();
  if (s == 0) throw EmptyInputError("instance " + inst.thread_id + " has no posts");
  if (s > config_.max_len)
    throw LengthError("instance " + inst.thread_id + " has " + std::to_string(s) + " posts, above max_len " +
                      std::to_string(config_.max_len));
  if (config_.use_context) {
    if (inst.context.size() != s) throw ShapeError("instance " + inst.thread_id + ": context rows != posts");
    for (const auto& row : inst.context)
      if (row.size() != config_.context_dim)
        throw ShapeError("instance " + inst.thread_id + ": context width " + std::to_string(row.size()) +
                         " != " + std::to_string(config_.context_dim));
    if (backgrounds_ && inst.background.size() != s)
      throw ShapeError("instance " + inst.thread_id + ": background ids != posts");
  }
}

Var ConverNet::encode(Tape& tape, const Instance& inst) {
  check_instance(inst);
  const std::size_t s = inst.length();
  std::vector<Var> rows;
  rows.reserve(s);
  for (std::size_t p = 0; p < s; ++p) {
    Var context;
    if (config_.use_context) {
      std::vector<Var> parts;
      if (config_.context_dim > 0) parts.push_back(tape.constant(Tensor({1, config_.context_dim}, inst.context[p])));
      if (backgrounds_) {
        const std::size_t id = inst.background[p] < config_.background_size ? inst.background[p] : 0;
        const std::size_t one[] = {id};
        parts.push_back(ad::gather_rows_mean(tape.param(backgrounds_->table), one));
      }
      if (!parts.empty()) context = parts.size() == 1 ? parts[0] : ad::concat(parts);
    }
    rows.push_back(nn::embed_and_pool(tape, words_, inst.tokens[p], context));
  }
  Var seq = ad::stack_rows(rows, s);

  const std::size_t H = config_.hidden;
  for (std::size_t l = 0; l < config_.stack_depth; ++l) {
    nn::StepFn f, b;
    if (config_.layer_norm) {
      f = [&tape, p = &ln_fwd_[l]](Var x, const nn::CellState& st) { return nn::ln_lstm_step(tape, *p, x, st); };
      b = [&tape, p = &ln_bwd_[l]](Var x, const nn::CellState& st) { return nn::ln_lstm_step(tape, *p, x, st); };
    } else {
      f = [&tape, p = &fwd_[l]](Var x, const nn::CellState& st) { return nn::lstm_step(tape, *p, x, st); };
      b = [&tape, p = &bwd_[l]](Var x, const nn::CellState& st) { return nn::lstm_step(tape, *p, x, st); };
    }
    seq = nn::bilstm_forward(tape, f, b, seq, s, H);
  }

  Var last = ad::row(seq, s - 1);
  Var att;
  if (dwdl_) att = nn::dwdl_attention(tape, *dwdl_, seq, s);
  else if (positional_) att = nn::positional_attention(tape, *positional_, seq, s);
  return nn::merge(tape, att, last, merge_weight_);
}

Var ConverNet::decode(Tape& tape, Var z0, nn::Mode mode) { return nn::mlp_decode(tape, decoder_, z0, mode); }

double ConverNet::predict(const Instance& inst) {
  Tape tape;
  Var z0 = encode(tape, inst);
  return decode(tape, z0, nn::Mode::Eval).value()[0];
}

std::vector<double> ConverNet::predict_all(std::span<const Instance> instances, std::size_t workers) {
  std::vector<double> out(instances.size());
  workers = std::max<std::size_t>(1, std::min(workers, instances.size()));
  if (workers == 1) {
    for (std::size_t i = 0; i < instances.size(); ++i) out[i] = predict(instances[i]);
    return out;
  }
  // Eval mode only reads parameters, so workers share the model; each writes
  // a disjoint slice of `out`.
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < instances.size(); i += workers) out[i] = predict(instances[i]);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

}  // namespace convernet
