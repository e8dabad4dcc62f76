// SPDX-License-Identifier: Apache-2.0
//
// Shared helpers for the test binaries: central finite-difference gradient
// checks, random tensors and scratch directories.
#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "convernet/autodiff.hpp"

namespace testing {

using convernet::ad::Parameter;
using convernet::ad::Shape;
using convernet::ad::Tape;
using convernet::ad::Tensor;
using convernet::ad::Var;

inline Tensor uniform(const Shape& shape, std::uint64_t seed, double lo = -2.0, double hi = 2.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor t(shape);
  for (double& v : t.storage()) v = d(rng);
  return t;
}

/// sum(x * R) for a fixed random R: a scalar whose gradient exercises every
/// output element with a distinct weight.
inline Var project(Tape& tape, Var x, std::uint64_t seed = 99) {
  return convernet::ad::sum(convernet::ad::mul(x, tape.constant(uniform(x.shape(), seed, -1.0, 1.0))));
}

using LossFn = std::function<Var(Tape&)>;

struct GradReport {
  double max_rel = 0.0;
  std::string worst;
  std::size_t checked = 0;
};

/// Compares reverse-mode gradients of every element of `params` with central
/// differences of step h. Relative error is |a - n| / max(|a|, |n|, floor).
inline GradReport check_gradients(const LossFn& loss_fn, const std::vector<Parameter*>& params, double h = 1e-5,
                                  double floor = 1e-3) {
  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    Var loss = loss_fn(tape);
    tape.backward(loss);
  }
  auto eval = [&] {
    Tape tape;
    return loss_fn(tape).value()[0];
  };
  GradReport r;
  for (Parameter* p : params) {
    const Tensor analytic = p->grad;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double orig = p->value[i];
      p->value[i] = orig + h;
      const double up = eval();
      p->value[i] = orig - h;
      const double down = eval();
      p->value[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      ++r.checked;
      if (rel > r.max_rel) {
        r.max_rel = rel;
        r.worst = p->name + "[" + std::to_string(i) + "] analytic=" + std::to_string(a) +
                  " numeric=" + std::to_string(numeric);
      }
    }
  }
  return r;
}

inline Parameter param(const std::string& name, const Shape& shape, std::uint64_t seed, double lo = -2.0,
                       double hi = 2.0) {
  return Parameter(name, uniform(shape, seed, lo, hi));
}

/// A fresh directory under the system temp dir, removed on destruction.
class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("convernet_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;

  std::string file(const std::string& name) const { return (path_ / name).string(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace testing
