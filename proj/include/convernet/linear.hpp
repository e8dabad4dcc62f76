// SPDX-License-Identifier: Apache-2.0
//
// Linear max-margin baseline over hashed n-grams, averaged pretrained word
// vectors and the context features, one block per post with the target last.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "convernet/data.hpp"
#include "convernet/instance.hpp"

namespace convernet::linear {

enum class Family { Ngrams, Embeddings, Lengths, Sentiment, Background, PostTime, ReplyStructure, Author };

inline constexpr std::size_t kFamilyCount = 8;

std::string to_string(Family f);
/// Names as in to_string, e.g. "ngrams", "post_time".
Family parse_family(const std::string& name);

/// Which families are on and how the per-post block is laid out. Disabled
/// families keep their slots (always zero) so ablations share one schema.
struct FeatureSpec {
  std::uint32_t families = 0xFF & ~(1u << static_cast<unsigned>(Family::Embeddings));
  std::vector<int> ngram_orders{1, 2, 3};
  std::size_t hash_dim = std::size_t{1} << 18;
  std::size_t max_len = 20;
  std::size_t background_buckets = 64;
  std::size_t embedding_dim = 0;  // set from the pretrained embedding file

  bool has(Family f) const { return families & (1u << static_cast<unsigned>(f)); }
  void set(Family f, bool on);

  std::size_t block_size() const;
  std::size_t total_dim() const { return block_size() * max_len; }

  /// Offsets inside one post block.
  std::size_t embedding_offset() const { return hash_dim; }
  std::size_t context_offset() const { return hash_dim + embedding_dim; }
  std::size_t background_offset() const { return context_offset() + 12; }

  /// Throws ConfigError when nothing is enabled or a value is out of range.
  void validate() const;
  std::map<std::string, std::string> to_map() const;
  static FeatureSpec from_map(const std::map<std::string, std::string>& kv);
};

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view text);

/// Signed feature hashing: the lowest hash bit picks the sign, the rest the
/// slot modulo `dim`.
std::pair<std::size_t, double> hash_feature(std::string_view feature, std::size_t dim);

/// "token v1 ... vd" per line; a first line of two integers (count, dim) is
/// skipped.
class Embeddings {
 public:
  static Embeddings load(const std::string& path);
  std::size_t dim() const { return dim_; }
  const std::vector<double>* find(const std::string& token) const;
  void add(const std::string& token, std::vector<double> vec);

 private:
  std::size_t dim_ = 0;
  std::map<std::string, std::vector<double>> vectors_;
};

/// Sorted (index, value) pairs with unique indices and no zeros.
using SparseVector = std::vector<std::pair<std::size_t, double>>;

/// Builds the per-post blocks of one instance. `embeddings` is required when
/// the embeddings family is enabled.
SparseVector featurize(const Instance& inst, const FeatureSpec& spec, const data::Vocabulary& vocab,
                       const Embeddings* embeddings = nullptr);

struct LinearModel {
  FeatureSpec spec;
  double lambda = 0.0;
  std::vector<double> weights;
  double bias = 0.0;

  /// Raw margin w.x + b; ShapeError when x indexes past the weights.
  double margin(const SparseVector& x) const;
  void save(const std::string& path) const;
  static LinearModel load(const std::string& path);
};

struct TrainOptions {
  double lambda = 1e-4;
  std::size_t epochs = 10;
  double eta0 = 0.1;
  std::uint64_t seed = 1;
};

/// lambda = 1 / (C n)
double lambda_from_c(double c, std::size_t n);

/// Averaged stochastic subgradient descent on the L2-regularized hinge loss
/// with an unregularized bias. Labels are 0/1. Single-class data raises
/// TrainingError.
LinearModel train_linear(const std::vector<SparseVector>& xs, const std::vector<int>& labels, const FeatureSpec& spec,
                         const TrainOptions& opts);

/// lambda/2 |w|^2 + max(0, 1 - y (w.x + b)) with y = 2 label - 1.
double hinge_objective(const std::vector<double>& w, double b, const SparseVector& x, int label, double lambda);
/// Subgradient of hinge_objective with respect to (w, b); b is the last entry.
std::vector<double> hinge_subgradient(const std::vector<double>& w, double b, const SparseVector& x, int label,
                                      double lambda);

/// Monotone squashing of a margin into (0, 1).
double squash(double margin);

}  // namespace convernet::linear
