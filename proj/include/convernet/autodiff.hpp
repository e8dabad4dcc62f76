// SPDX-License-Identifier: Apache-2.0
//
// Dense f64 tensors with a dynamic tape for reverse-mode differentiation.
//
// A Tape is rebuilt for every batch. Values recorded on it are addressed by
// Var handles; every recorded op only ever references earlier entries, so the
// recording order is already a topological order and backward() is a single
// reverse sweep. Persistent trainable arrays live in Parameter objects and are
// bound to a tape with Tape::param(); gradients flowing into them accumulate
// in Parameter::grad until the caller clears it.
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace convernet::ad {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_size(const Shape& shape);

/// Row-major dense array of doubles, rank 0 to 3.
class Tensor {
 public:
  Tensor() : shape_{}, data_(1, 0.0) {}
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  /// Product of all dims but the last (1 for rank 0/1).
  std::size_t rows() const;
  /// Last dim (1 for rank 0).
  std::size_t cols() const;

  double& operator[](std::size_t i) { return data_[i]; }
  const double& operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  void fill(double v);
  bool all_finite() const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// A named trainable (or buffer) array that outlives tapes.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Tensor v, bool is_trainable = true)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()), trainable(is_trainable) {}

  void zero_grad() { grad = Tensor(value.shape()); }
};

class Tape;

/// Handle to a value recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool valid() const { return tape != nullptr && id >= 0; }
};

/// Turns on finiteness checks of every op output (off by default).
void set_debug_checks(bool on);
bool debug_checks();

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// A tape-local leaf whose gradient stays on the tape.
  Var leaf(Tensor value, bool requires_grad = true);
  /// Binds a parameter; binding the same parameter twice returns the same Var.
  Var param(Parameter& p);

  const Tensor& value(Var v) const { return nodes_[check(v)].value; }
  /// Null when no gradient was ever allocated for v.
  const Tensor* grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_[check(v)].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Reverse sweep from a rank-0 (or single-element) loss. May run once.
  void backward(Var loss);

  // --- op-author interface ---
  Var record(Tensor value, std::vector<int> inputs, BackwardFn fn);
  bool needs_grad(int id) const { return nodes_[id].requires_grad; }
  const Tensor& value_of(int id) const { return nodes_[id].value; }
  const Tensor& grad_of(int id) const { return nodes_[id].grad; }
  /// Lazily allocates a zero gradient of the node's shape.
  Tensor& grad_mut(int id);
  const std::vector<int>& inputs_of(int id) const { return nodes_[id].inputs; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::vector<int> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  int check(Var v) const;

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, int> bound_;
  bool backward_done_ = false;
};

// --- operations ---

Var matmul(Var a, Var b);

// Binary ops accept equal shapes, or b of shape [C] / [1, C] broadcast over
// the rows of a.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double k);

Var sigmoid(Var a);
Var tanh(Var a);
Var relu(Var a);
Var exp(Var a);
Var log(Var a);

/// Concatenates along the last dim; all other dims must agree.
Var concat(const std::vector<Var>& parts);
/// Mean of the first `count` rows of a [T, d] value, as [1, d].
Var mean_over_time(Var x, std::size_t count);
/// Sum of all elements, rank 0.
Var sum(Var x);

/// Row t of a [T, d] value, as [1, d].
Var row(Var x, std::size_t t);
/// Stacks [1, d] rows into [total_rows, d]; rows past parts.size() are zero.
Var stack_rows(const std::vector<Var>& parts, std::size_t total_rows);
Var slice_cols(Var x, std::size_t begin, std::size_t end);
/// Flat-index gather into a rank-1 result.
Var gather(Var x, std::span<const std::size_t> indices);
/// Mean of the selected rows of a [V, d] table as [1, d]; no ids gives zeros.
Var gather_rows_mean(Var table, std::span<const std::size_t> ids);

/// Row-wise ((z - mean) / max(std, floor)) * alpha + beta with population std.
Var layer_norm(Var z, Var alpha, Var beta, double std_floor = 1e-8);

/// Softmax over logits[0, s) weighting rows 0..s-1 of h; [1, D].
Var softmax_pool(Var h, Var logits, std::size_t s);

struct BatchStats {
  std::vector<double> mean;
  std::vector<double> var;
};
/// Column-wise standardization over the batch axis of [B, C], then affine.
Var batch_norm(Var x, Var gamma, Var beta, double std_floor, BatchStats* stats);

/// Mean binary cross entropy over predictions in (0,1) with clamping.
Var bce(Var yhat, std::span<const double> labels, double eps = 1e-7, double pos_weight = 1.0);

// --- initialization ---

/// Zero-mean Gaussian samples from a seeded 64-bit Mersenne twister.
/// std outside {0.01, 0.05, 0.1, 0.2} is accepted with a warning.
Tensor gaussian_init(const Shape& shape, double stddev, std::uint64_t seed);

}  // namespace convernet::ad
