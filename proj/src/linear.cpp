// SPDX-License-Identifier: Apache-2.0
#include "convernet/linear.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "json.hpp"

#include "convernet/error.hpp"
#include "convernet/features.hpp"
#include "convernet/log.hpp"

namespace convernet::linear {

using json = nlohmann::json;

namespace {

constexpr const char* kFamilyNames[kFamilyCount] = {"ngrams",     "embeddings", "lengths",         "sentiment",
                                                    "background", "post_time",  "reply_structure", "author"};

std::size_t parse_size(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(value, &used);
    if (used != value.size() || v < 0) throw std::invalid_argument(value);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw ConfigError("invalid value '" + value + "' for " + key);
  }
}

}  // namespace

std::string to_string(Family f) { return kFamilyNames[static_cast<std::size_t>(f)]; }

Family parse_family(const std::string& name) {
  for (std::size_t i = 0; i < kFamilyCount; ++i)
    if (name == kFamilyNames[i]) return static_cast<Family>(i);
  throw ConfigError("unknown feature family '" + name + "'");
}

// ------------------------------------------------------------------ spec --

void FeatureSpec::set(Family f, bool on) {
  const std::uint32_t bit = 1u << static_cast<unsigned>(f);
  families = on ? (families | bit) : (families & ~bit);
}

std::size_t FeatureSpec::block_size() const { return background_offset() + background_buckets; }

void FeatureSpec::validate() const {
  if ((families & 0xFF) == 0) throw ConfigError("linear baseline needs at least one feature family");
  if (hash_dim == 0) throw ConfigError("hash_dim must be positive");
  if (max_len == 0) throw ConfigError("max_len must be positive");
  if (has(Family::Ngrams)) {
    if (ngram_orders.empty()) throw ConfigError("n-gram family enabled without orders");
    for (int n : ngram_orders)
      if (n < 1 || n > 3) throw ConfigError("n-gram orders must be 1, 2 or 3");
  }
  if (has(Family::Embeddings) && embedding_dim == 0)
    throw ConfigError("embeddings family enabled but no pretrained embedding file was given");
}

std::map<std::string, std::string> FeatureSpec::to_map() const {
  std::string enabled, orders;
  for (std::size_t i = 0; i < kFamilyCount; ++i)
    if (has(static_cast<Family>(i))) enabled += (enabled.empty() ? "" : ",") + std::string(kFamilyNames[i]);
  for (int n : ngram_orders) orders += (orders.empty() ? "" : ",") + std::to_string(n);
  return {{"families", enabled},
          {"ngram_orders", orders},
          {"hash_dim", std::to_string(hash_dim)},
          {"max_len", std::to_string(max_len)},
          {"background_buckets", std::to_string(background_buckets)},
          {"embedding_dim", std::to_string(embedding_dim)}};
}

FeatureSpec FeatureSpec::from_map(const std::map<std::string, std::string>& kv) {
  FeatureSpec s;
  auto get = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw CorruptionError(std::string("feature spec lacks ") + key);
    return it->second;
  };
  s.families = 0;
  std::stringstream fams(get("families"));
  for (std::string item; std::getline(fams, item, ',');)
    if (!item.empty()) s.set(parse_family(item), true);
  s.ngram_orders.clear();
  std::stringstream ords(get("ngram_orders"));
  for (std::string item; std::getline(ords, item, ',');)
    if (!item.empty()) s.ngram_orders.push_back(static_cast<int>(parse_size("ngram_orders", item)));
  s.hash_dim = parse_size("hash_dim", get("hash_dim"));
  s.max_len = parse_size("max_len", get("max_len"));
  s.background_buckets = parse_size("background_buckets", get("background_buckets"));
  s.embedding_dim = parse_size("embedding_dim", get("embedding_dim"));
  return s;
}

// --------------------------------------------------------------- hashing --

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::pair<std::size_t, double> hash_feature(std::string_view feature, std::size_t dim) {
  const std::uint64_t h = fnv1a(feature);
  return {static_cast<std::size_t>((h >> 1) % dim), (h & 1u) ? -1.0 : 1.0};
}

// ------------------------------------------------------------ embeddings --

Embeddings Embeddings::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read embedding file " + path);
  Embeddings e;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string token;
    if (!(ls >> token)) continue;
    std::vector<double> vec;
    for (double v; ls >> v;) vec.push_back(v);
    if (lineno == 1 && vec.size() == 1 && token.find_first_not_of("0123456789") == std::string::npos) continue;
    if (vec.empty()) throw DataError(path + ":" + std::to_string(lineno) + ": embedding line without values");
    e.add(token, std::move(vec));
  }
  if (e.dim_ == 0) throw DataError("embedding file " + path + " holds no vectors");
  return e;
}

void Embeddings::add(const std::string& token, std::vector<double> vec) {
  if (dim_ == 0) dim_ = vec.size();
  if (vec.size() != dim_)
    throw DataError("embedding for '" + token + "' has " + std::to_string(vec.size()) + " values, expected " +
                    std::to_string(dim_));
  vectors_[token] = std::move(vec);
}

const std::vector<double>* Embeddings::find(const std::string& token) const {
  auto it = vectors_.find(token);
  return it == vectors_.end() ? nullptr : &it->second;
}

// ------------------------------------------------------------ featurizer --

SparseVector featurize(const Instance& inst, const FeatureSpec& spec, const data::Vocabulary& vocab,
                       const Embeddings* embeddings) {
  spec.validate();
  if (spec.has(Family::Embeddings) && (!embeddings || embeddings->dim() != spec.embedding_dim))
    throw ConfigError("embeddings family enabled but the matching embedding file is missing");
  const std::size_t s = inst.length();
  if (s == 0) throw EmptyInputError("instance " + inst.thread_id + " has no posts");
  const std::size_t first = s > spec.max_len ? s - spec.max_len : 0;
  const std::size_t bs = spec.block_size();

  std::vector<std::pair<std::size_t, double>> raw;
  for (std::size_t p = first; p < s; ++p) {
    const std::size_t block = spec.max_len - (s - p);
    const std::size_t base = block * bs;
    std::vector<std::string> words;
    for (std::size_t id : inst.tokens[p])
      if (id != data::Vocabulary::kPad) words.push_back(vocab.token(id));

    if (spec.has(Family::Ngrams)) {
      for (int n : spec.ngram_orders) {
        const auto order = static_cast<std::size_t>(n);
        for (std::size_t i = 0; i + order <= words.size(); ++i) {
          std::string gram = words[i];
          for (std::size_t k = 1; k < order; ++k) gram += ' ' + words[i + k];
          const auto [slot, sign] = hash_feature(gram, spec.hash_dim);
          raw.emplace_back(base + slot, sign);
        }
      }
    }
    if (spec.has(Family::Embeddings)) {
      std::vector<double> mean(spec.embedding_dim, 0.0);
      std::size_t found = 0;
      for (const auto& w : words)
        if (const auto* v = embeddings->find(w)) {
          for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += (*v)[k];
          ++found;
        }
      if (found)
        for (std::size_t k = 0; k < mean.size(); ++k)
          raw.emplace_back(base + spec.embedding_offset() + k, mean[k] / static_cast<double>(found));
    }
    const auto& ctx = inst.context[p];
    auto copy_slots = [&](features::Family f) {
      const auto [b, e] = features::family_slots(f);
      for (std::size_t k = b; k < e && k < ctx.size(); ++k) raw.emplace_back(base + spec.context_offset() + k, ctx[k]);
    };
    if (spec.has(Family::Lengths)) copy_slots(features::Family::Lengths);
    if (spec.has(Family::Sentiment)) copy_slots(features::Family::Sentiment);
    if (spec.has(Family::PostTime)) copy_slots(features::Family::PostTime);
    if (spec.has(Family::ReplyStructure)) copy_slots(features::Family::ReplyStructure);
    if (spec.has(Family::Author)) copy_slots(features::Family::Author);
    if (spec.has(Family::Background) && spec.background_buckets > 0 && p < inst.background.size() &&
        inst.background[p] != 0)
      raw.emplace_back(base + spec.background_offset() + (inst.background[p] - 1) % spec.background_buckets, 1.0);
  }

  std::sort(raw.begin(), raw.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  SparseVector out;
  for (const auto& [i, v] : raw) {
    if (!out.empty() && out.back().first == i) out.back().second += v;
    else out.emplace_back(i, v);
  }
  out.erase(std::remove_if(out.begin(), out.end(), [](const auto& e) { return e.second == 0.0; }), out.end());
  return out;
}

// ----------------------------------------------------------------- model --

double LinearModel::margin(const SparseVector& x) const {
  double m = bias;
  for (const auto& [i, v] : x) {
    if (i >= weights.size())
      throw ShapeError("feature index " + std::to_string(i) + " outside model dimension " +
                       std::to_string(weights.size()));
    m += weights[i] * v;
  }
  return m;
}

inline constexpr int kLinearVersion = 1;

void LinearModel::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write linear model " + path);
  json header{{"format", "convernet-linear"}, {"format_version", kLinearVersion}, {"spec", spec.to_map()},
              {"lambda", lambda},             {"bias", bias},                   {"dim", weights.size()}};
  out << header.dump() << '\n';
  std::vector<unsigned char> bytes(weights.size() * 4);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(weights[i]));
    for (int k = 0; k < 4; ++k) bytes[i * 4 + k] = static_cast<unsigned char>(bits >> (8 * k));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing linear model " + path);
}

LinearModel LinearModel::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read linear model " + path);
  std::string line;
  if (!std::getline(in, line)) throw CorruptionError("linear model " + path + " is empty");
  LinearModel m;
  std::size_t dim = 0;
  try {
    const json header = json::parse(line);
    if (header.value("format", "") != "convernet-linear") throw CorruptionError(path + " is not a linear model");
    if (header.value("format_version", -1) != kLinearVersion)
      throw VersionError("linear model " + path + " has an unsupported format version");
    m.spec = FeatureSpec::from_map(header.at("spec").get<std::map<std::string, std::string>>());
    m.lambda = header.at("lambda").get<double>();
    m.bias = header.at("bias").get<double>();
    dim = header.at("dim").get<std::size_t>();
  } catch (const json::exception& e) {
    throw CorruptionError("bad linear model header in " + path + ": " + e.what());
  }
  if (dim != m.spec.total_dim()) throw CorruptionError("linear model " + path + ": dimension does not match spec");
  std::vector<unsigned char> bytes(dim * 4);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(in.gcount()) != bytes.size()) throw CorruptionError("linear model " + path + " is truncated");
  if (in.peek() != std::char_traits<char>::eof()) throw CorruptionError("linear model " + path + " has trailing bytes");
  m.weights.resize(dim);
  for (std::size_t i = 0; i < dim; ++i) {
    std::uint32_t bits = 0;
    for (int k = 0; k < 4; ++k) bits |= static_cast<std::uint32_t>(bytes[i * 4 + k]) << (8 * k);
    m.weights[i] = std::bit_cast<float>(bits);
  }
  return m;
}

// -------------------------------------------------------------- training --

double lambda_from_c(double c, std::size_t n) {
  if (!(c > 0) || n == 0) throw ConfigError("C must be positive and the training set non-empty");
  return 1.0 / (c * static_cast<double>(n));
}

LinearModel train_linear(const std::vector<SparseVector>& xs, const std::vector<int>& labels, const FeatureSpec& spec,
                         const TrainOptions& opts) {
  spec.validate();
  if (xs.size() != labels.size()) throw DataError("feature rows and labels differ in count");
  if (xs.empty()) throw TrainingError("no training instances");
  const bool has_pos = std::count(labels.begin(), labels.end(), 1) > 0;
  const bool has_neg = std::count(labels.begin(), labels.end(), 0) > 0;
  if (!has_pos || !has_neg) throw TrainingError("linear baseline needs both classes in the training data");
  if (!(opts.lambda > 0) || !(opts.eta0 > 0)) throw ConfigError("lambda and eta0 must be positive");
  const std::size_t dim = spec.total_dim();
  for (const auto& x : xs)
    if (!x.empty() && x.back().first >= dim) throw ShapeError("feature index outside the spec dimension");

  // w_t = scale * v. The running sum of w_t is sum_scale * v - U, where U
  // collects each sparse change of v times the scale sum before it.
  std::vector<double> v(dim, 0.0), U(dim, 0.0);
  double scale = 1.0, sum_scale = 0.0, bias = 0.0, bias_sum = 0.0;
  std::uint64_t t = 0;
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(opts.seed);
  const double lambda = opts.lambda;

  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t idx : order) {
      ++t;
      double eta = opts.eta0 / (1.0 + opts.eta0 * lambda * static_cast<double>(t));
      eta = std::min(eta, 0.5 / lambda);
      const SparseVector& x = xs[idx];
      const double y = labels[idx] == 1 ? 1.0 : -1.0;
      double dot = 0.0;
      for (const auto& [i, val] : x) dot += v[i] * val;
      const double margin = y * (scale * dot + bias);
      scale *= 1.0 - eta * lambda;
      if (margin < 1.0) {
        const double step = eta * y / scale;
        for (const auto& [i, val] : x) {
          v[i] += step * val;
          U[i] += step * val * sum_scale;
        }
        bias += eta * y;
      }
      sum_scale += scale;
      bias_sum += bias;
      if (scale < 1e-9) {
        for (double& e : v) e *= scale;
        sum_scale /= scale;
        scale = 1.0;
      }
    }
  }

  LinearModel m;
  m.spec = spec;
  m.lambda = lambda;
  m.weights.resize(dim);
  const double T = static_cast<double>(t);
  for (std::size_t i = 0; i < dim; ++i) m.weights[i] = (sum_scale * v[i] - U[i]) / T;
  m.bias = bias_sum / T;
  return m;
}

double hinge_objective(const std::vector<double>& w, double b, const SparseVector& x, int label, double lambda) {
  const double y = label == 1 ? 1.0 : -1.0;
  double dot = b;
  for (const auto& [i, v] : x) dot += w.at(i) * v;
  double reg = 0.0;
  for (double e : w) reg += e * e;
  return 0.5 * lambda * reg + std::max(0.0, 1.0 - y * dot);
}

std::vector<double> hinge_subgradient(const std::vector<double>& w, double b, const SparseVector& x, int label,
                                      double lambda) {
  const double y = label == 1 ? 1.0 : -1.0;
  double dot = b;
  for (const auto& [i, v] : x) dot += w.at(i) * v;
  std::vector<double> g(w.size() + 1, 0.0);
  for (std::size_t i = 0; i < w.size(); ++i) g[i] = lambda * w[i];
  if (y * dot < 1.0) {
    for (const auto& [i, v] : x) g[i] -= y * v;
    g.back() = -y;
  }
  return g;
}

double squash(double margin) { return 1.0 / (1.0 + std::exp(-margin)); }

}  // namespace convernet::linear
