// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "convernet/autodiff.hpp"
#include "convernet/instance.hpp"
#include "convernet/metrics.hpp"
#include "convernet/model.hpp"

namespace convernet {

inline constexpr double kPredictionClamp = 1e-7;

/// Batch-mean binary cross entropy; predictions are clamped to
/// [1e-7, 1 - 1e-7].
ad::Var bce_loss(ad::Var yhat, std::span<const double> labels, double pos_weight = 1.0);

/// v <- rho v + (1 - rho) g^2 ;  theta <- theta - lr g / sqrt(v + eps)
class RMSProp {
 public:
  RMSProp(double lr, double rho = 0.9, double eps = 1e-8) : lr_(lr), rho_(rho), eps_(eps) {}

  /// Rows of `p` listed here are never modified.
  void freeze_row(const ad::Parameter* p, std::size_t row);

  /// Applies one update to every trainable parameter using its grad. Throws
  /// NumericError, before touching anything, when a gradient is not finite.
  void step(std::span<ad::Parameter* const> params);

  const ad::Tensor* state(const ad::Parameter* p) const;

 private:
  double lr_, rho_, eps_;
  std::vector<std::pair<const ad::Parameter*, ad::Tensor>> state_;
  std::vector<std::pair<const ad::Parameter*, std::size_t>> frozen_;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
  double val_auc = 0.0;
  double val_map = 0.0;
};

struct EvalMetrics {
  double accuracy = 0.0;
  double auc = 0.0;  // NaN when the set has a single class
  double map = 0.0;  // NaN when the set has no positives
};

metrics::PredictionSet make_predictions(std::span<const Instance> instances, std::span<const double> scores);
EvalMetrics evaluate_scores(const metrics::PredictionSet& p);

/// Mini-batch training of one model with RMSProp. Batches are drawn from a
/// seeded shuffle; a trailing batch of one instance is folded into the
/// previous batch so batch normalization always sees two or more rows.
class Trainer {
 public:
  Trainer(ConverNet& model, const ModelConfig& config);

  /// One optimizer step; returns the batch loss (NaN if the step was
  /// aborted on a non-finite gradient).
  double train_batch(std::span<const Instance* const> batch);
  /// One pass over the data; returns the mean batch loss.
  double run_epoch(std::span<const Instance> data);
  EvalMetrics evaluate(std::span<const Instance> data);

  ConverNet& model() { return model_; }

 private:
  ConverNet& model_;
  ModelConfig config_;
  RMSProp optimizer_;
  std::vector<ad::Parameter*> trainable_;
  std::uint64_t epoch_counter_ = 0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_auc = 0.0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains until validation AUC stops improving by min_delta for
/// max(patience, 1) consecutive epochs or max_epochs is reached, then restores
/// the parameters of the best-AUC epoch into `model`.
TrainResult train(ConverNet& model, std::span<const Instance> train_set, std::span<const Instance> val_set,
                  const ModelConfig& config, const EpochCallback& on_epoch = {});

void write_history_csv(const std::string& path, const std::vector<EpochRecord>& history);

inline constexpr int kCheckpointVersion = 1;

struct LoadedCheckpoint {
  std::unique_ptr<ConverNet> model;
  std::vector<EpochRecord> history;
};

/// Writes `<prefix>.manifest` (JSON) and `<prefix>.bin` (little-endian f32).
void save_checkpoint(ConverNet& model, const std::string& prefix, const std::vector<EpochRecord>& history = {});
LoadedCheckpoint load_checkpoint(const std::string& prefix);

}  // namespace convernet
