// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace convernet::metrics {

/// Parallel columns of per-instance scores and gold labels.
struct PredictionSet {
  std::vector<std::string> ids;
  std::vector<double> scores;
  std::vector<int> labels;

  std::size_t size() const { return scores.size(); }
  void add(std::string id, double score, int label);
  /// Throws DataError on ragged columns, duplicate ids, labels outside {0,1}
  /// or an empty set.
  void validate() const;
};

enum class Metric { Accuracy, Auc, Map };

Metric parse_metric(const std::string& name);
std::string to_string(Metric m);

/// Fraction of instances where (score >= threshold) matches the label.
double accuracy(const PredictionSet& p, double threshold = 0.5);

/// Mann-Whitney AUC from mid-ranks; ties between a positive and a negative
/// count one half.
double auc(const PredictionSet& p);

/// Average precision over the whole ranking (scores descending, ties broken
/// by ascending instance id).
double average_precision(const PredictionSet& p);

double compute(Metric m, const PredictionSet& p);

struct PermutationResult {
  double observed_delta = 0.0;  // metric(a) - metric(b)
  double p_value = 1.0;
  std::size_t rounds = 0;
};

/// Paired two-sided randomization test: each round swaps the two systems'
/// scores per instance with probability 1/2. p = (1 + #extreme) / (rounds + 1).
PermutationResult permutation_test(const PredictionSet& a, const PredictionSet& b, Metric metric,
                                   std::size_t rounds = 10000, std::uint64_t seed = 1);

/// "*", "**", "***" for p below 0.05, 0.01, 0.001; empty otherwise.
std::string significance_stars(double p_value);

}  // namespace convernet::metrics
