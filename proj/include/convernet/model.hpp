// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <span>
#include <vector>

#include "convernet/autodiff.hpp"
#include "convernet/config.hpp"
#include "convernet/instance.hpp"
#include "convernet/layers.hpp"

namespace convernet {

/// Input pooling -> stacked (LN)BiLSTM -> attention + last output -> merge ->
/// batch-normalized MLP decoder.
class ConverNet {
 public:
  explicit ConverNet(const ModelConfig& config);

  ConverNet(const ConverNet&) = delete;
  ConverNet& operator=(const ConverNet&) = delete;

  const ModelConfig& config() const { return config_; }

  /// Encodes one instance into the decoder input z0, shape [1, merge_dim].
  ad::Var encode(ad::Tape& tape, const Instance& inst);
  /// Decodes stacked z0 rows [B, merge_dim] into probabilities [B, 1].
  ad::Var decode(ad::Tape& tape, ad::Var z0, nn::Mode mode);

  /// Eval-mode probability for one instance.
  double predict(const Instance& inst);
  /// Eval-mode probabilities; `workers` > 1 fans out over threads.
  std::vector<double> predict_all(std::span<const Instance> instances, std::size_t workers = 1);

  /// All parameters (trainable and buffers) in a stable order, each once.
  const std::vector<ad::Parameter*>& parameters() const { return params_; }
  ad::Parameter& word_embeddings() { return words_.table; }
  nn::MLPParams& decoder() { return decoder_; }

  /// Dimension of the per-post LSTM input.
  std::size_t input_dim() const;

 private:
  void check_instance(const Instance& inst) const;

  ModelConfig config_;
  nn::EmbeddingTable words_;
  std::optional<nn::EmbeddingTable> backgrounds_;
  std::vector<nn::LNLSTMParams> ln_fwd_, ln_bwd_;
  std::vector<nn::LSTMParams> fwd_, bwd_;
  std::optional<nn::DwdlParams> dwdl_;
  std::optional<nn::PositionalAttentionParams> positional_;
  ad::Parameter merge_weight_;
  nn::MLPParams decoder_;
  std::vector<ad::Parameter*> params_;
};

}  // namespace convernet
