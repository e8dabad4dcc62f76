// SPDX-License-Identifier: Apache-2.0
#include "convernet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <unordered_map>
#include <unordered_set>

#include "convernet/error.hpp"

namespace convernet::metrics {

void PredictionSet::add(std::string id, double score, int label) {
  ids.push_back(std::move(id));
  scores.push_back(score);
  labels.push_back(label);
}

void PredictionSet::validate() const {
  if (ids.size() != scores.size() || scores.size() != labels.size())
    throw DataError("prediction set columns have different lengths");
  if (scores.empty()) throw EmptyInputError("empty prediction set");
  std::unordered_set<std::string> seen;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!seen.insert(ids[i]).second) throw DataError("duplicate instance id " + ids[i]);
    if (labels[i] != 0 && labels[i] != 1) throw DataError("label of " + ids[i] + " is not 0 or 1");
    if (!std::isfinite(scores[i])) throw DataError("non-finite score for " + ids[i]);
  }
}

Metric parse_metric(const std::string& name) {
  if (name == "accuracy") return Metric::Accuracy;
  if (name == "auc") return Metric::Auc;
  if (name == "map") return Metric::Map;
  throw ConfigError("unknown metric '" + name + "' (expected auc, accuracy or map)");
}

std::string to_string(Metric m) {
  switch (m) {
    case Metric::Accuracy: return "accuracy";
    case Metric::Auc: return "auc";
    case Metric::Map: return "map";
  }
  return "auc";
}

double accuracy(const PredictionSet& p, double threshold) {
  if (p.size() == 0) throw EmptyInputError("accuracy of an empty prediction set");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < p.size(); ++i) correct += ((p.scores[i] >= threshold ? 1 : 0) == p.labels[i]);
  return static_cast<double>(correct) / static_cast<double>(p.size());
}

double auc(const PredictionSet& p) {
  const std::size_t n = p.size();
  std::size_t n_pos = 0;
  for (int l : p.labels) n_pos += (l == 1);
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw UndefinedMetricError("AUC needs at least one positive and one negative");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p.scores[a] < p.scores[b]; });
  // Sum of mid-ranks of the positives. Ranks are 1-based; doubling keeps the
  // tie averages integral so the result is exact.
  long double twice_rank_sum = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && p.scores[order[j + 1]] == p.scores[order[i]]) ++j;
    const long double twice_mid = static_cast<long double>(i + 1 + j + 1);
    for (std::size_t k = i; k <= j; ++k)
      if (p.labels[order[k]] == 1) twice_rank_sum += twice_mid;
    i = j + 1;
  }
  const long double u =
      twice_rank_sum / 2 - static_cast<long double>(n_pos) * static_cast<long double>(n_pos + 1) / 2;
  return static_cast<double>(u / (static_cast<long double>(n_pos) * static_cast<long double>(n_neg)));
}

double average_precision(const PredictionSet& p) {
  std::size_t n_pos = 0;
  for (int l : p.labels) n_pos += (l == 1);
  if (n_pos == 0) throw UndefinedMetricError("average precision needs at least one positive");
  std::vector<std::size_t> order(p.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (p.scores[a] != p.scores[b]) return p.scores[a] > p.scores[b];
    return p.ids[a] < p.ids[b];
  });
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (p.labels[order[k]] != 1) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(k + 1);
  }
  return sum / static_cast<double>(n_pos);
}

double compute(Metric m, const PredictionSet& p) {
  switch (m) {
    case Metric::Accuracy: return accuracy(p);
    case Metric::Auc: return auc(p);
    case Metric::Map: return average_precision(p);
  }
  return 0.0;
}

PermutationResult permutation_test(const PredictionSet& a, const PredictionSet& b, Metric metric, std::size_t rounds,
                                   std::uint64_t seed) {
  a.validate();
  b.validate();
  if (a.size() != b.size()) throw PairingError("prediction sets differ in size");
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < b.size(); ++i) index.emplace(b.ids[i], i);
  std::vector<double> b_scores(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto it = index.find(a.ids[i]);
    if (it == index.end()) throw PairingError("instance " + a.ids[i] + " missing from second prediction set");
    if (b.labels[it->second] != a.labels[i]) throw PairingError("instance " + a.ids[i] + " has conflicting labels");
    b_scores[i] = b.scores[it->second];
  }
  if (rounds == 0) throw ConfigError("permutation test needs at least one round");

  PermutationResult result;
  result.rounds = rounds;
  PredictionSet pa = a, pb = a;
  pb.scores = b_scores;
  result.observed_delta = compute(metric, pa) - compute(metric, pb);
  const double threshold = std::abs(result.observed_delta) - 1e-12;

  std::mt19937_64 rng(seed);
  std::size_t extreme = 0;
  for (std::size_t r = 0; r < rounds; ++r) {
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (i % 64 == 0) bits = rng();
      const bool swap = bits & 1u;
      bits >>= 1;
      pa.scores[i] = swap ? b_scores[i] : a.scores[i];
      pb.scores[i] = swap ? a.scores[i] : b_scores[i];
    }
    const double delta = compute(metric, pa) - compute(metric, pb);
    if (std::abs(delta) >= threshold) ++extreme;
  }
  result.p_value = static_cast<double>(1 + extreme) / static_cast<double>(rounds + 1);
  return result;
}

std::string significance_stars(double p) {
  if (p < 0.001) return "***";
  if (p < 0.01) return "**";
  if (p < 0.05) return "*";
  return "";
}

}  // namespace convernet::metrics
