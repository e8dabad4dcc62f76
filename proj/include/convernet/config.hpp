// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace convernet {

enum class AttentionKind { Dwdl, Positional, None };

std::string to_string(AttentionKind kind);
AttentionKind parse_attention(const std::string& text);

/// Every hyperparameter of a ConverNet run. Grid-checked fields accept
/// off-grid values with a warning.
struct ModelConfig {
  // network shape
  std::size_t word_dim = 32;          // {16,32,64,128,256}
  std::size_t hidden = 32;            // {16,32,64,128}
  std::size_t stack_depth = 1;        // {1,2,3}
  std::size_t background_dim = 8;     // {2,4,8,16,32,64}
  std::size_t merge_dim = 32;
  std::size_t mlp_depth = 2;
  std::size_t mlp_hidden = 32;
  std::size_t max_len = 20;
  AttentionKind attention = AttentionKind::Dwdl;
  bool layer_norm = true;
  bool use_context = true;
  double bn_momentum = 0.9;

  // data-derived sizes
  std::size_t vocab_size = 2;
  std::size_t context_dim = 0;
  std::size_t background_size = 0;   // 0 disables the background embedding

  // optimization
  double learning_rate = 1e-3;        // {1e-1..1e-5}
  double init_std = 0.1;              // {0.01,0.05,0.1,0.2}
  double rho = 0.9;
  double rms_eps = 1e-8;
  double pos_weight = 1.0;
  double min_delta = 1e-4;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 30;
  std::size_t patience = 3;
  std::size_t workers = 1;
  std::uint64_t seed = 1;

  /// Applies one key=value override; unknown keys and bad values raise
  /// ConfigError.
  void set(const std::string& key, const std::string& value);
  /// Validates ranges (errors) and grids (warnings).
  void validate() const;
  std::map<std::string, std::string> to_map() const;
  static ModelConfig from_map(const std::map<std::string, std::string>& kv);
};

/// Reads "key=value" lines; blank lines and '#' comments are skipped.
std::map<std::string, std::string> read_key_values(const std::string& path);

}  // namespace convernet
