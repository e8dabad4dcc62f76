// SPDX-License-Identifier: Apache-2.0
#include "convernet/config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <type_traits>

#include "convernet/error.hpp"
#include "convernet/log.hpp"

namespace convernet {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    long long n = std::stoll(v, &pos);
    if (pos != v.size() || n < 0) throw std::invalid_argument(v);
    return static_cast<std::size_t>(n);
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' expects a non-negative integer, got '" + v + "'");
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size() || !std::isfinite(d)) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' expects a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key '" + key + "' expects true/false, got '" + v + "'");
}

template <typename T>
void grid_warn(const char* name, T value, std::initializer_list<T> grid) {
  const bool on = std::any_of(grid.begin(), grid.end(), [&](T g) {
    if constexpr (std::is_floating_point_v<T>) return std::abs(g - value) <= 1e-12 * std::abs(g);
    else return g == value;
  });
  if (!on) log::warn("config ", name, "=", value, " is outside the tuning grid");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::string to_string(AttentionKind kind) {
  switch (kind) {
    case AttentionKind::Dwdl: return "dwdl";
    case AttentionKind::Positional: return "standard";
    case AttentionKind::None: return "none";
  }
  return "dwdl";
}

AttentionKind parse_attention(const std::string& text) {
  if (text == "dwdl") return AttentionKind::Dwdl;
  if (text == "standard") return AttentionKind::Positional;
  if (text == "none") return AttentionKind::None;
  throw ConfigError("unknown attention '" + text + "' (expected dwdl, standard or none)");
}

void ModelConfig::set(const std::string& key, const std::string& v) {
  if (key == "word_dim") word_dim = parse_size(key, v);
  else if (key == "hidden") hidden = parse_size(key, v);
  else if (key == "stack_depth") stack_depth = parse_size(key, v);
  else if (key == "background_dim") background_dim = parse_size(key, v);
  else if (key == "merge_dim") merge_dim = parse_size(key, v);
  else if (key == "mlp_depth") mlp_depth = parse_size(key, v);
  else if (key == "mlp_hidden") mlp_hidden = parse_size(key, v);
  else if (key == "max_len") max_len = parse_size(key, v);
  else if (key == "attention") attention = parse_attention(v);
  else if (key == "layer_norm") layer_norm = parse_bool(key, v);
  else if (key == "use_context") use_context = parse_bool(key, v);
  else if (key == "bn_momentum") bn_momentum = parse_double(key, v);
  else if (key == "vocab_size") vocab_size = parse_size(key, v);
  else if (key == "context_dim") context_dim = parse_size(key, v);
  else if (key == "background_size") background_size = parse_size(key, v);
  else if (key == "learning_rate") learning_rate = parse_double(key, v);
  else if (key == "init_std") init_std = parse_double(key, v);
  else if (key == "rho") rho = parse_double(key, v);
  else if (key == "rms_eps") rms_eps = parse_double(key, v);
  else if (key == "pos_weight") pos_weight = parse_double(key, v);
  else if (key == "min_delta") min_delta = parse_double(key, v);
  else if (key == "batch_size") batch_size = parse_size(key, v);
  else if (key == "max_epochs") max_epochs = parse_size(key, v);
  else if (key == "patience") patience = parse_size(key, v);
  else if (key == "workers") workers = parse_size(key, v);
  else if (key == "seed") seed = parse_size(key, v);
  else throw ConfigError("unknown model config key '" + key + "'");
}

void ModelConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  require(word_dim > 0 && hidden >= 2 && merge_dim > 0, "word_dim, merge_dim must be positive and hidden >= 2");
  require(stack_depth >= 1, "stack_depth must be at least 1");
  require(mlp_depth == 0 || mlp_hidden > 0, "mlp_hidden must be positive");
  require(max_len >= 1, "max_len must be at least 1");
  require(vocab_size >= 2, "vocab_size must cover PAD and UNK");
  require(learning_rate > 0.0, "learning_rate must be positive");
  require(init_std > 0.0, "init_std must be positive");
  require(rho >= 0.0 && rho < 1.0, "rho must lie in [0, 1)");
  require(rms_eps > 0.0, "rms_eps must be positive");
  require(pos_weight > 0.0, "pos_weight must be positive");
  require(bn_momentum >= 0.0 && bn_momentum < 1.0, "bn_momentum must lie in [0, 1)");
  require(batch_size >= 1, "batch_size must be at least 1");
  require(max_epochs >= 1, "max_epochs must be at least 1");
  require(workers >= 1, "workers must be at least 1");

  grid_warn<std::size_t>("word_dim", word_dim, {16, 32, 64, 128, 256});
  grid_warn<std::size_t>("hidden", hidden, {16, 32, 64, 128});
  grid_warn<std::size_t>("stack_depth", stack_depth, {1, 2, 3});
  if (background_size > 0) grid_warn<std::size_t>("background_dim", background_dim, {2, 4, 8, 16, 32, 64});
  grid_warn<double>("learning_rate", learning_rate, {1e-1, 1e-2, 1e-3, 1e-4, 1e-5});
  grid_warn<double>("init_std", init_std, {0.01, 0.05, 0.1, 0.2});
}

std::map<std::string, std::string> ModelConfig::to_map() const {
  return {
      {"word_dim", std::to_string(word_dim)},
      {"hidden", std::to_string(hidden)},
      {"stack_depth", std::to_string(stack_depth)},
      {"background_dim", std::to_string(background_dim)},
      {"merge_dim", std::to_string(merge_dim)},
      {"mlp_depth", std::to_string(mlp_depth)},
      {"mlp_hidden", std::to_string(mlp_hidden)},
      {"max_len", std::to_string(max_len)},
      {"attention", to_string(attention)},
      {"layer_norm", layer_norm ? "true" : "false"},
      {"use_context", use_context ? "true" : "false"},
      {"bn_momentum", fmt_double(bn_momentum)},
      {"vocab_size", std::to_string(vocab_size)},
      {"context_dim", std::to_string(context_dim)},
      {"background_size", std::to_string(background_size)},
      {"learning_rate", fmt_double(learning_rate)},
      {"init_std", fmt_double(init_std)},
      {"rho", fmt_double(rho)},
      {"rms_eps", fmt_double(rms_eps)},
      {"pos_weight", fmt_double(pos_weight)},
      {"min_delta", fmt_double(min_delta)},
      {"batch_size", std::to_string(batch_size)},
      {"max_epochs", std::to_string(max_epochs)},
      {"patience", std::to_string(patience)},
      {"workers", std::to_string(workers)},
      {"seed", std::to_string(seed)},
  };
}

ModelConfig ModelConfig::from_map(const std::map<std::string, std::string>& kv) {
  ModelConfig c;
  for (const auto& [k, v] : kv) c.set(k, v);
  return c;
}

std::map<std::string, std::string> read_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path);
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
    out[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
  }
  return out;
}

}  // namespace convernet
