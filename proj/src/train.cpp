// SPDX-License-Identifier: Apache-2.0
#include "convernet/train.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"

#include "convernet/error.hpp"
#include "convernet/log.hpp"

namespace convernet {

using json = nlohmann::json;

ad::Var bce_loss(ad::Var yhat, std::span<const double> labels, double pos_weight) {
  return ad::bce(yhat, labels, kPredictionClamp, pos_weight);
}

// --------------------------------------------------------------- RMSProp --

void RMSProp::freeze_row(const ad::Parameter* p, std::size_t row) { frozen_.emplace_back(p, row); }

const ad::Tensor* RMSProp::state(const ad::Parameter* p) const {
  for (const auto& [q, v] : state_)
    if (q == p) return &v;
  return nullptr;
}

void RMSProp::step(std::span<ad::Parameter* const> params) {
  for (const ad::Parameter* p : params) {
    if (!p->trainable) continue;
    if (p->grad.shape() != p->value.shape())
      throw ShapeError("gradient of " + p->name + " has shape " + ad::shape_str(p->grad.shape()));
    if (!p->grad.all_finite()) throw NumericError("non-finite gradient in " + p->name);
  }
  for (ad::Parameter* p : params) {
    if (!p->trainable) continue;
    auto it = std::find_if(state_.begin(), state_.end(), [&](const auto& e) { return e.first == p; });
    if (it == state_.end()) {
      state_.emplace_back(p, ad::Tensor(p->value.shape()));
      it = std::prev(state_.end());
    }
    ad::Tensor& v = it->second;
    const ad::Tensor& g = p->grad;
    std::vector<char> skip;
    for (const auto& [q, row] : frozen_) {
      if (q != p) continue;
      if (skip.empty()) skip.assign(p->value.rows(), 0);
      if (row < skip.size()) skip[row] = 1;
    }
    const std::size_t cols = p->value.cols();
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!skip.empty() && skip[i / cols]) continue;
      v[i] = rho_ * v[i] + (1.0 - rho_) * g[i] * g[i];
      p->value[i] -= lr_ * g[i] / std::sqrt(v[i] + eps_);
    }
  }
}

// ------------------------------------------------------------- evaluation --

metrics::PredictionSet make_predictions(std::span<const Instance> instances, std::span<const double> scores) {
  metrics::PredictionSet p;
  for (std::size_t i = 0; i < instances.size(); ++i) p.add(instances[i].thread_id, scores[i], instances[i].label);
  return p;
}

EvalMetrics evaluate_scores(const metrics::PredictionSet& p) {
  EvalMetrics m;
  m.accuracy = metrics::accuracy(p);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  try {
    m.auc = metrics::auc(p);
  } catch (const UndefinedMetricError&) {
    m.auc = nan;
  }
  try {
    m.map = metrics::average_precision(p);
  } catch (const UndefinedMetricError&) {
    m.map = nan;
  }
  return m;
}

// ---------------------------------------------------------------- Trainer --

Trainer::Trainer(ConverNet& model, const ModelConfig& config)
    : model_(model), config_(config), optimizer_(config.learning_rate, config.rho, config.rms_eps) {
  for (ad::Parameter* p : model_.parameters())
    if (p->trainable) trainable_.push_back(p);
  optimizer_.freeze_row(&model_.word_embeddings(), nn::kPadId);
}

double Trainer::train_batch(std::span<const Instance* const> batch) {
  if (batch.empty()) throw EmptyInputError("empty training batch");
  ad::Tape tape;
  std::vector<ad::Var> rows;
  std::vector<double> labels;
  rows.reserve(batch.size());
  for (const Instance* inst : batch) {
    rows.push_back(model_.encode(tape, *inst));
    labels.push_back(static_cast<double>(inst->label));
  }
  ad::Var yhat = model_.decode(tape, ad::stack_rows(rows, rows.size()), nn::Mode::Train);
  ad::Var loss = bce_loss(yhat, labels, config_.pos_weight);
  for (ad::Parameter* p : trainable_) p->zero_grad();
  tape.backward(loss);
  try {
    optimizer_.step(trainable_);
  } catch (const NumericError& e) {
    log::warn("batch skipped: ", e.what());
    return std::numeric_limits<double>::quiet_NaN();
  }
  return loss.value()[0];
}

double Trainer::run_epoch(std::span<const Instance> data) {
  if (data.empty()) throw ConfigError("empty training split");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(config_.seed * 1000003ULL + (++epoch_counter_));
  std::shuffle(order.begin(), order.end(), rng);

  const std::size_t B = config_.batch_size;
  std::vector<std::pair<std::size_t, std::size_t>> spans;
  for (std::size_t begin = 0; begin < order.size(); begin += B)
    spans.emplace_back(begin, std::min(order.size(), begin + B));
  if (spans.size() > 1 && spans.back().second - spans.back().first == 1) {
    spans.pop_back();
    spans.back().second = order.size();
  }

  double total = 0.0;
  std::size_t counted = 0;
  std::vector<const Instance*> batch;
  for (const auto& [begin, end] : spans) {
    batch.clear();
    for (std::size_t i = begin; i < end; ++i) batch.push_back(&data[order[i]]);
    const double loss = train_batch(batch);
    if (std::isfinite(loss)) {
      total += loss;
      ++counted;
    }
  }
  return counted ? total / static_cast<double>(counted) : std::numeric_limits<double>::quiet_NaN();
}

EvalMetrics Trainer::evaluate(std::span<const Instance> data) {
  const auto scores = model_.predict_all(data, config_.workers);
  return evaluate_scores(make_predictions(data, scores));
}

// ------------------------------------------------------------------ train --

TrainResult train(ConverNet& model, std::span<const Instance> train_set, std::span<const Instance> val_set,
                  const ModelConfig& config, const EpochCallback& on_epoch) {
  if (train_set.empty()) throw ConfigError("empty training split");
  if (val_set.empty()) throw ConfigError("empty validation split");
  Trainer trainer(model, config);

  struct Snapshot {
    std::vector<ad::Tensor> values;
    std::uint64_t train_batches = 0;
  } best;
  auto take_snapshot = [&] {
    best.values.clear();
    for (const ad::Parameter* p : model.parameters()) best.values.push_back(p->value);
    best.train_batches = model.decoder().train_batches;
  };

  TrainResult result;
  result.best_auc = std::numeric_limits<double>::quiet_NaN();
  bool have_best = false;
  double reference_auc = -std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  const std::size_t patience = std::max<std::size_t>(config.patience, 1);
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = trainer.run_epoch(train_set);
    const EvalMetrics m = trainer.evaluate(val_set);
    rec.val_accuracy = m.accuracy;
    rec.val_auc = m.auc;
    rec.val_map = m.map;
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    log::info("epoch ", epoch, " loss=", rec.train_loss, " val_auc=", rec.val_auc);

    // The kept snapshot is the maximum-AUC epoch; patience only counts
    // epochs that fail to beat the last reference by min_delta.
    const bool finite = std::isfinite(m.auc);
    if (!have_best || (finite && (!std::isfinite(result.best_auc) || m.auc > result.best_auc))) {
      have_best = true;
      result.best_epoch = epoch;
      result.best_auc = m.auc;
      take_snapshot();
    }
    if (finite && m.auc >= reference_auc + config.min_delta) {
      reference_auc = m.auc;
      stale = 0;
    } else if (++stale >= patience) {
      break;
    }
  }
  const auto& params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best.values[i];
  model.decoder().train_batches = best.train_batches;
  return result;
}

void write_history_csv(const std::string& path, const std::vector<EpochRecord>& history) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "epoch,train_loss,val_accuracy,val_auc,val_map\n";
  out.precision(17);
  for (const auto& r : history)
    out << r.epoch << ',' << r.train_loss << ',' << r.val_accuracy << ',' << r.val_auc << ',' << r.val_map << '\n';
}

// ------------------------------------------------------------ checkpoint --

namespace {

void put_f32(std::ostream& out, double v) {
  const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
  const char bytes[4] = {static_cast<char>(bits & 0xFF), static_cast<char>((bits >> 8) & 0xFF),
                         static_cast<char>((bits >> 16) & 0xFF), static_cast<char>((bits >> 24) & 0xFF)};
  out.write(bytes, 4);
}

double get_f32(const unsigned char* b) {
  const std::uint32_t bits = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                             (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  return static_cast<double>(std::bit_cast<float>(bits));
}

json history_json(const std::vector<EpochRecord>& history) {
  json arr = json::array();
  for (const auto& r : history)
    arr.push_back({{"epoch", r.epoch},
                   {"train_loss", r.train_loss},
                   {"val_accuracy", r.val_accuracy},
                   {"val_auc", r.val_auc},
                   {"val_map", r.val_map}});
  return arr;
}

double json_number(const json& j) { return j.is_number() ? j.get<double>() : std::numeric_limits<double>::quiet_NaN(); }

}  // namespace

void save_checkpoint(ConverNet& model, const std::string& prefix, const std::vector<EpochRecord>& history) {
  json manifest;
  manifest["format"] = "convernet-checkpoint";
  manifest["format_version"] = kCheckpointVersion;
  manifest["config"] = model.config().to_map();
  manifest["train_batches"] = model.decoder().train_batches;
  json table = json::array();
  std::uint64_t offset = 0;
  for (const ad::Parameter* p : model.parameters()) {
    table.push_back({{"name", p->name}, {"shape", p->value.shape()}, {"offset", offset}, {"trainable", p->trainable}});
    offset += 4 * p->value.size();
  }
  manifest["parameters"] = table;
  manifest["blob_bytes"] = offset;
  manifest["history"] = history_json(history);

  std::ofstream bin(prefix + ".bin", std::ios::binary);
  if (!bin) throw IoError("cannot write " + prefix + ".bin");
  for (const ad::Parameter* p : model.parameters())
    for (double v : p->value.data()) put_f32(bin, v);
  if (!bin) throw IoError("write failed for " + prefix + ".bin");

  std::ofstream man(prefix + ".manifest");
  if (!man) throw IoError("cannot write " + prefix + ".manifest");
  man << manifest.dump(2) << '\n';
}

LoadedCheckpoint load_checkpoint(const std::string& prefix) {
  std::ifstream man(prefix + ".manifest");
  if (!man) throw IoError("cannot read " + prefix + ".manifest");
  json manifest;
  try {
    man >> manifest;
  } catch (const json::exception& e) {
    throw CorruptionError("manifest " + prefix + ".manifest is not valid JSON: " + e.what());
  }
  if (manifest.value("format", "") != "convernet-checkpoint")
    throw CorruptionError(prefix + ".manifest is not a checkpoint manifest");
  if (manifest.value("format_version", -1) != kCheckpointVersion)
    throw VersionError("checkpoint format_version " + manifest["format_version"].dump() + ", expected " +
                       std::to_string(kCheckpointVersion));

  std::ifstream bin(prefix + ".bin", std::ios::binary);
  if (!bin) throw IoError("cannot read " + prefix + ".bin");
  std::vector<unsigned char> blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());

  LoadedCheckpoint out;
  try {
    out.model = std::make_unique<ConverNet>(ModelConfig::from_map(manifest.at("config").get<std::map<std::string, std::string>>()));
    const json& table = manifest.at("parameters");
    const auto& params = out.model->parameters();
    if (table.size() != params.size())
      throw CorruptionError("manifest lists " + std::to_string(table.size()) + " parameters, model has " +
                            std::to_string(params.size()));
    if (manifest.at("blob_bytes").get<std::uint64_t>() != blob.size())
      throw CorruptionError("blob has " + std::to_string(blob.size()) + " bytes, manifest expects " +
                            manifest.at("blob_bytes").dump());
    for (std::size_t i = 0; i < params.size(); ++i) {
      ad::Parameter& p = *params[i];
      const json& e = table[i];
      if (e.at("name").get<std::string>() != p.name || e.at("shape").get<ad::Shape>() != p.value.shape())
        throw CorruptionError("parameter " + std::to_string(i) + " (" + e.at("name").get<std::string>() +
                              ") does not match the model layout");
      const std::uint64_t off = e.at("offset").get<std::uint64_t>();
      if (off + 4 * p.value.size() > blob.size()) throw CorruptionError("blob truncated inside " + p.name);
      for (std::size_t k = 0; k < p.value.size(); ++k) p.value[k] = get_f32(&blob[off + 4 * k]);
    }
    out.model->decoder().train_batches = manifest.value("train_batches", std::uint64_t{0});
    for (const json& r : manifest.value("history", json::array()))
      out.history.push_back(EpochRecord{r.at("epoch").get<std::size_t>(), json_number(r.at("train_loss")),
                                        json_number(r.at("val_accuracy")), json_number(r.at("val_auc")),
                                        json_number(r.at("val_map"))});
  } catch (const json::exception& e) {
    throw CorruptionError("malformed manifest " + prefix + ".manifest: " + e.what());
  }
  return out;
}

}  // namespace convernet
