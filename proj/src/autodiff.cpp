// SPDX-License-Identifier: Apache-2.0
#include "convernet/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <random>
#include <sstream>

#include "convernet/error.hpp"
#include "convernet/log.hpp"

namespace convernet::ad {

namespace {
std::atomic<bool> g_debug_checks{false};

void check_output(const Tensor& t, const char* op) {
  if (g_debug_checks.load(std::memory_order_relaxed) && !t.all_finite())
    throw NumericError(std::string("non-finite value produced by ") + op);
}

Tape& same_tape(Var a, Var b) {
  if (a.tape == nullptr || a.tape != b.tape) throw TapeError("operands recorded on different tapes");
  return *a.tape;
}

enum class Bcast { Same, Rows };

Bcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Bcast::Same;
  const bool b_is_row = (b.rank() == 1) || (b.rank() == 2 && b.shape()[0] == 1);
  if (b_is_row && a.rank() >= 1 && b.size() == a.cols()) return Bcast::Rows;
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                   shape_str(b.shape()));
}

template <typename F, typename G>
Var unary(Var a, const char* name, F forward, G derivative) {
  Tape& tape = *a.tape;
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = forward(x[i]);
  check_output(out, name);
  return tape.record(std::move(out), {a.id}, [derivative](Tape& t, int self) {
    const int in = t.inputs_of(self)[0];
    if (!t.needs_grad(in)) return;
    const Tensor& x = t.value_of(in);
    const Tensor& y = t.value_of(self);
    const Tensor& g = t.grad_of(self);
    Tensor& gx = t.grad_mut(in);
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g[i] * derivative(x[i], y[i]);
  });
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

// ---------------------------------------------------------------- Tensor --

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  if (shape_.size() > 3) throw ShapeError("tensor rank above 3: " + shape_str(shape_));
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_.size() > 3) throw ShapeError("tensor rank above 3: " + shape_str(shape_));
  if (data_.size() != shape_size(shape_))
    throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " + shape_str(shape_));
}

std::size_t Tensor::rows() const {
  if (shape_.size() <= 1) return 1;
  std::size_t n = 1;
  for (std::size_t i = 0; i + 1 < shape_.size(); ++i) n *= shape_[i];
  return n;
}

std::size_t Tensor::cols() const { return shape_.empty() ? 1 : shape_.back(); }

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

// ------------------------------------------------------------------ Tape --

const Tensor& Var::value() const {
  if (tape == nullptr) throw TapeError("unbound Var");
  return tape->value(*this);
}

void set_debug_checks(bool on) { g_debug_checks.store(on); }
bool debug_checks() { return g_debug_checks.load(); }

int Tape::check(Var v) const {
  if (v.tape != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size())
    throw TapeError("Var does not belong to this tape");
  return v.id;
}

Var Tape::constant(Tensor value) { return leaf(std::move(value), false); }

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::param(Parameter& p) {
  if (auto it = bound_.find(&p); it != bound_.end()) return Var{this, it->second};
  Node n;
  n.value = p.value;
  n.requires_grad = p.trainable;
  n.param = &p;
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size() - 1);
  bound_.emplace(&p, id);
  return Var{this, id};
}

const Tensor* Tape::grad(Var v) const {
  const Node& n = nodes_[check(v)];
  return n.has_grad ? &n.grad : nullptr;
}

Var Tape::record(Tensor value, std::vector<int> inputs, BackwardFn fn) {
  bool rg = false;
  for (int in : inputs) rg = rg || nodes_[in].requires_grad;
  Node n;
  n.value = std::move(value);
  n.inputs = std::move(inputs);
  n.requires_grad = rg;
  if (rg) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Tensor& Tape::grad_mut(int id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::backward(Var loss) {
  const int root = check(loss);
  if (nodes_[root].value.size() != 1)
    throw RankError("backward needs a scalar loss, got shape " + shape_str(nodes_[root].value.shape()));
  if (backward_done_) throw TapeError("backward already ran on this tape");
  backward_done_ = true;
  if (!nodes_[root].requires_grad) return;
  grad_mut(root)[0] = 1.0;
  for (int id = root; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.has_grad || !n.requires_grad) continue;
    if (n.backward) n.backward(*this, id);
    if (n.param != nullptr) {
      Tensor& pg = n.param->grad;
      if (pg.shape() != n.value.shape()) pg = Tensor(n.value.shape());
      for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += n.grad[i];
    }
  }
}

// ------------------------------------------------------------ operations --

Var matmul(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.shape()[1] != B.shape()[0])
    throw ShapeError("matmul: cannot multiply " + shape_str(A.shape()) + " by " + shape_str(B.shape()));
  const std::size_t m = A.shape()[0], k = A.shape()[1], n = B.shape()[1];
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = &out[i * n];
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      if (av == 0.0) continue;
      const double* brow = &B[p * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  check_output(out, "matmul");
  return tape.record(std::move(out), {a.id, b.id}, [m, k, n](Tape& t, int self) {
    const int ia = t.inputs_of(self)[0], ib = t.inputs_of(self)[1];
    const Tensor& G = t.grad_of(self);
    const Tensor& A = t.value_of(ia);
    const Tensor& B = t.value_of(ib);
    if (t.needs_grad(ia)) {
      Tensor& gA = t.grad_mut(ia);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += G[i * n + j] * B[p * n + j];
          gA[i * k + p] += acc;
        }
    }
    if (t.needs_grad(ib)) {
      Tensor& gB = t.grad_mut(ib);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double av = A[i * k + p];
          if (av == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) gB[p * n + j] += av * G[i * n + j];
        }
    }
  });
}

namespace {

enum class BinOp { Add, Sub, Mul };

Var binary(Var a, Var b, BinOp op, const char* name) {
  Tape& tape = same_tape(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  const Bcast kind = broadcast_kind(A, B, name);
  const std::size_t cols = A.cols();
  Tensor out(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) {
    const double bv = kind == Bcast::Same ? B[i] : B[i % cols];
    switch (op) {
      case BinOp::Add: out[i] = A[i] + bv; break;
      case BinOp::Sub: out[i] = A[i] - bv; break;
      case BinOp::Mul: out[i] = A[i] * bv; break;
    }
  }
  check_output(out, name);
  return tape.record(std::move(out), {a.id, b.id}, [kind, cols, op](Tape& t, int self) {
    const int ia = t.inputs_of(self)[0], ib = t.inputs_of(self)[1];
    const Tensor& G = t.grad_of(self);
    const Tensor& A = t.value_of(ia);
    const Tensor& B = t.value_of(ib);
    auto bidx = [&](std::size_t i) { return kind == Bcast::Same ? i : i % cols; };
    if (t.needs_grad(ia)) {
      Tensor& gA = t.grad_mut(ia);
      for (std::size_t i = 0; i < G.size(); ++i)
        gA[i] += op == BinOp::Mul ? G[i] * B[bidx(i)] : G[i];
    }
    if (t.needs_grad(ib)) {
      Tensor& gB = t.grad_mut(ib);
      for (std::size_t i = 0; i < G.size(); ++i) {
        const double d = op == BinOp::Mul ? A[i] : (op == BinOp::Sub ? -1.0 : 1.0);
        gB[bidx(i)] += G[i] * d;
      }
    }
  });
}

}  // namespace

Var add(Var a, Var b) { return binary(a, b, BinOp::Add, "add"); }
Var sub(Var a, Var b) { return binary(a, b, BinOp::Sub, "sub"); }
Var mul(Var a, Var b) { return binary(a, b, BinOp::Mul, "mul"); }

Var scale(Var a, double k) {
  return unary(a, "scale", [k](double x) { return k * x; }, [k](double, double) { return k; });
}

Var sigmoid(Var a) {
  return unary(a, "sigmoid", stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var a) {
  return unary(a, "tanh", [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var relu(Var a) {
  return unary(a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var exp(Var a) {
  for (double v : a.value().data())
    if (!std::isfinite(std::exp(v))) throw NumericError("exp overflow at input " + std::to_string(v));
  return unary(a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  for (double v : a.value().data())
    if (!(v > 0.0)) throw NumericError("log of non-positive value " + std::to_string(v));
  return unary(a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat of zero parts");
  Tape& tape = *parts.front().tape;
  const Tensor& first = parts.front().value();
  const std::size_t rows = first.rows();
  std::vector<std::size_t> widths;
  std::vector<int> ids;
  std::size_t total = 0;
  for (const Var& p : parts) {
    same_tape(parts.front(), p);
    const Tensor& v = p.value();
    Shape lead(v.shape().begin(), v.shape().end() - (v.rank() ? 1 : 0));
    Shape lead0(first.shape().begin(), first.shape().end() - (first.rank() ? 1 : 0));
    if (v.rank() != first.rank() || lead != lead0)
      throw ShapeError("concat: leading dims differ, " + shape_str(first.shape()) + " vs " + shape_str(v.shape()));
    widths.push_back(v.cols());
    ids.push_back(p.id);
    total += v.cols();
  }
  Shape shape = first.shape();
  if (shape.empty()) shape = {total};
  else shape.back() = total;
  Tensor out(shape);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < widths[k]; ++c) out[r * total + off + c] = v[r * widths[k] + c];
    off += widths[k];
  }
  return tape.record(std::move(out), ids, [widths, rows, total](Tape& t, int self) {
    const Tensor& G = t.grad_of(self);
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      const int in = t.inputs_of(self)[k];
      if (t.needs_grad(in)) {
        Tensor& g = t.grad_mut(in);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < widths[k]; ++c) g[r * widths[k] + c] += G[r * total + off + c];
      }
      off += widths[k];
    }
  });
}

Var mean_over_time(Var x, std::size_t count) {
  const Tensor& X = x.value();
  if (X.rank() != 2) throw ShapeError("mean_over_time expects [T, d], got " + shape_str(X.shape()));
  if (count == 0) throw EmptyInputError("mean_over_time over zero rows");
  if (count > X.shape()[0])
    throw ShapeError("mean_over_time: count " + std::to_string(count) + " exceeds " + shape_str(X.shape()));
  const std::size_t d = X.shape()[1];
  Tensor out({1, d});
  for (std::size_t r = 0; r < count; ++r)
    for (std::size_t c = 0; c < d; ++c) out[c] += X[r * d + c];
  for (std::size_t c = 0; c < d; ++c) out[c] /= static_cast<double>(count);
  return x.tape->record(std::move(out), {x.id}, [count, d](Tape& t, int self) {
    const int in = t.inputs_of(self)[0];
    const Tensor& G = t.grad_of(self);
    Tensor& g = t.grad_mut(in);
    const double inv = 1.0 / static_cast<double>(count);
    for (std::size_t r = 0; r < count; ++r)
      for (std::size_t c = 0; c < d; ++c) g[r * d + c] += G[c] * inv;
  });
}

Var sum(Var x) {
  const Tensor& X = x.value();
  double s = 0.0;
  for (double v : X.data()) s += v;
  return x.tape->record(Tensor({}, std::vector<double>{s}), {x.id}, [](Tape& t, int self) {
    const int in = t.inputs_of(self)[0];
    const double g = t.grad_of(self)[0];
    Tensor& gx = t.grad_mut(in);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
  });
}

Var row(Var x, std::size_t r) {
  const Tensor& X = x.value();
  if (X.rank() != 2 || r >= X.shape()[0])
    throw ShapeError("row " + std::to_string(r) + " out of range for " + shape_str(X.shape()));
  const std::size_t d = X.shape()[1];
  std::vector<double> data(X.data().begin() + r * d, X.data().begin() + (r + 1) * d);
  return x.tape->record(Tensor({1, d}, std::move(data)), {x.id}, [r, d](Tape& t, int self) {
    const int in = t.inputs_of(self)[0];
    const Tensor& G = t.grad_of(self);
    Tensor& g = t.grad_mut(in);
    for (std::size_t c = 0; c < d; ++c) g[r * d + c] += G[c];
  });
}

Var stack_rows(const std::vector<Var>& parts, std::size_t total_rows) {
  if (parts.empty()) throw ShapeError("stack_rows of zero parts");
  if (parts.size() > total_rows) throw ShapeError("stack_rows: more parts than rows");
  Tape& tape = *parts.front().tape;
  const std::size_t d = parts.front().value().cols();
  Tensor out({total_rows, d});
  std::vector<int> ids;
  for (std::size_t r = 0; r < parts.size(); ++r) {
    const Tensor& v = parts[r].value();
    same_tape(parts.front(), parts[r]);
    if (v.size() != d) throw ShapeError("stack_rows: row " + std::to_string(r) + " has shape " + shape_str(v.shape()));
    std::copy(v.data().begin(), v.data().end(), out.data().begin() + r * d);
    ids.push_back(parts[r].id);
  }
  return tape.record(std::move(out), ids, [d](Tape& t, int self) {
    const Tensor& G = t.grad_of(self);
    const auto& ins = t.inputs_of(self);
    for (std::size_t r = 0; r < ins.size(); ++r) {
      if (!t.needs_grad(ins[r])) continue;
      Tensor& g = t.grad_mut(ins[r]);
      for (std::size_t c = 0; c < d; ++c) g[c] += G[r * d + c];
    }
  });
}

Var slice_cols(Var x, std::size_t begin, std::size_t end) {
  const Tensor& X = x.value();
  if (X.rank() == 0 || begin >= end || end > X.cols())
    throw ShapeError("slice_cols [" + std::to_string(begin) + "," + std::to_string(end) + ") of " + shape_str(X.shape()));
  const std::size_t rows = X.rows(), cols = X.cols(), w = end - begin;
  Shape shape = X.shape();
  shape.back() = w;
  Tensor out(shape);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < w; ++c) out[r * w + c] = X[r * cols + begin + c];
  return x.tape->record(std::move(out), {x.id}, [rows, cols, begin, w](Tape& t, int self) {
    const int in = t.inputs_of(self)[0];
    const Tensor& G = t.grad_of(self);
    Tensor& g = t.grad_mut(in);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < w; ++c) g[r * cols + begin + c] += G[r * w + c];
  });
}

Var gather(Var x, std::span<const std::size_t> indices) {
  const Tensor& X = x.value();
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  Tensor out({idx.size()});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= X.size()) throw ShapeError("gather index " + std::to_string(idx[i]) + " out of range");
    out[i] = X[idx[i]];
  }
  return x.tape->record(std::move(out), {x.id}, [idx](Tape& t, int self) {
    const int in = t.inputs_of(self)[0];
    const Tensor& G = t.grad_of(self);
    Tensor& g = t.grad_mut(in);
    for (std::size_t i = 0; i < idx.size(); ++i) g[idx[i]] += G[i];
  });
}

Var gather_rows_mean(Var table, std::span<const std::size_t> ids) {
  const Tensor& E = table.value();
  if (E.rank() != 2) throw ShapeError("gather_rows_mean expects a [V, d] table");
  const std::size_t V = E.shape()[0], d = E.shape()[1];
  std::vector<std::size_t> rows(ids.begin(), ids.end());
  Tensor out({1, d});
  for (std::size_t r : rows) {
    if (r >= V) throw VocabularyError("word id " + std::to_string(r) + " outside vocabulary of " + std::to_string(V));
    for (std::size_t c = 0; c < d; ++c) out[c] += E[r * d + c];
  }
  if (!rows.empty())
    for (std::size_t c = 0; c < d; ++c) out[c] /= static_cast<double>(rows.size());
  return table.tape->record(std::move(out), {table.id}, [rows, d](Tape& t, int self) {
    if (rows.empty()) return;
    const int in = t.inputs_of(self)[0];
    const Tensor& G = t.grad_of(self);
    Tensor& g = t.grad_mut(in);
    const double inv = 1.0 / static_cast<double>(rows.size());
    for (std::size_t r : rows)
      for (std::size_t c = 0; c < d; ++c) g[r * d + c] += G[c] * inv;
  });
}

Var layer_norm(Var z, Var alpha, Var beta, double std_floor) {
  Tape& tape = same_tape(z, alpha);
  same_tape(z, beta);
  const Tensor& Z = z.value();
  const std::size_t rows = Z.rows(), n = Z.cols();
  if (n < 2) throw ShapeError("layer_norm needs at least 2 features, got " + shape_str(Z.shape()));
  if (alpha.value().size() != n || beta.value().size() != n)
    throw ShapeError("layer_norm gain/shift must have " + std::to_string(n) + " entries");
  const Tensor& A = alpha.value();
  const Tensor& B = beta.value();
  Tensor out(Z.shape());
  std::vector<double> xhat(Z.size());
  std::vector<double> inv_sigma(rows);
  std::vector<char> floored(rows, 0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* zr = &Z[r * n];
    double mu = 0.0;
    for (std::size_t i = 0; i < n; ++i) mu += zr[i];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (zr[i] - mu) * (zr[i] - mu);
    var /= static_cast<double>(n);
    double sigma = std::sqrt(var);
    if (sigma < std_floor) {
      sigma = std_floor;
      floored[r] = 1;
    }
    inv_sigma[r] = 1.0 / sigma;
    for (std::size_t i = 0; i < n; ++i) {
      xhat[r * n + i] = (zr[i] - mu) * inv_sigma[r];
      out[r * n + i] = xhat[r * n + i] * A[i] + B[i];
    }
  }
  check_output(out, "layer_norm");
  return tape.record(std::move(out), {z.id, alpha.id, beta.id},
                     [rows, n, xhat = std::move(xhat), inv_sigma = std::move(inv_sigma),
                      floored = std::move(floored)](Tape& t, int self) {
    const auto& ins = t.inputs_of(self);
    const Tensor& G = t.grad_of(self);
    const Tensor& A = t.value_of(ins[1]);
    if (t.needs_grad(ins[1])) {
      Tensor& gA = t.grad_mut(ins[1]);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t i = 0; i < n; ++i) gA[i] += G[r * n + i] * xhat[r * n + i];
    }
    if (t.needs_grad(ins[2])) {
      Tensor& gB = t.grad_mut(ins[2]);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t i = 0; i < n; ++i) gB[i] += G[r * n + i];
    }
    if (t.needs_grad(ins[0])) {
      Tensor& gZ = t.grad_mut(ins[0]);
      std::vector<double> dx(n);
      for (std::size_t r = 0; r < rows; ++r) {
        double mean_dx = 0.0, mean_dx_xhat = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          dx[i] = G[r * n + i] * A[i];
          mean_dx += dx[i];
          mean_dx_xhat += dx[i] * xhat[r * n + i];
        }
        mean_dx /= static_cast<double>(n);
        mean_dx_xhat /= static_cast<double>(n);
        // A floored sigma is a constant, so only the centering term remains.
        if (floored[r]) mean_dx_xhat = 0.0;
        for (std::size_t i = 0; i < n; ++i)
          gZ[r * n + i] += inv_sigma[r] * (dx[i] - mean_dx - xhat[r * n + i] * mean_dx_xhat);
      }
    }
  });
}

Var softmax_pool(Var h, Var logits, std::size_t s) {
  Tape& tape = same_tape(h, logits);
  const Tensor& H = h.value();
  const Tensor& L = logits.value();
  if (H.rank() != 2) throw ShapeError("softmax_pool expects [T, D] rows, got " + shape_str(H.shape()));
  if (s == 0 || s > H.shape()[0] || s > L.size())
    throw LengthError("softmax_pool length " + std::to_string(s) + " invalid for rows " + shape_str(H.shape()) +
                      " and logits " + shape_str(L.shape()));
  const std::size_t D = H.shape()[1];
  double mx = L[0];
  for (std::size_t k = 1; k < s; ++k) mx = std::max(mx, L[k]);
  std::vector<double> p(s);
  double z = 0.0;
  for (std::size_t k = 0; k < s; ++k) z += (p[k] = std::exp(L[k] - mx));
  for (double& v : p) v /= z;
  Tensor out({1, D});
  for (std::size_t k = 0; k < s; ++k)
    for (std::size_t j = 0; j < D; ++j) out[j] += p[k] * H[k * D + j];
  check_output(out, "softmax_pool");
  return tape.record(std::move(out), {h.id, logits.id}, [p = std::move(p), s, D](Tape& t, int self) {
    const auto& ins = t.inputs_of(self);
    const Tensor& G = t.grad_of(self);
    const Tensor& H = t.value_of(ins[0]);
    const Tensor& out = t.value_of(self);
    if (t.needs_grad(ins[0])) {
      Tensor& gH = t.grad_mut(ins[0]);
      for (std::size_t k = 0; k < s; ++k)
        for (std::size_t j = 0; j < D; ++j) gH[k * D + j] += p[k] * G[j];
    }
    if (t.needs_grad(ins[1])) {
      Tensor& gL = t.grad_mut(ins[1]);
      double g_out = 0.0;
      for (std::size_t j = 0; j < D; ++j) g_out += G[j] * out[j];
      for (std::size_t k = 0; k < s; ++k) {
        double g_hk = 0.0;
        for (std::size_t j = 0; j < D; ++j) g_hk += G[j] * H[k * D + j];
        gL[k] += p[k] * (g_hk - g_out);
      }
    }
  });
}

Var batch_norm(Var x, Var gamma, Var beta, double std_floor, BatchStats* stats) {
  Tape& tape = same_tape(x, gamma);
  same_tape(x, beta);
  const Tensor& X = x.value();
  if (X.rank() != 2) throw ShapeError("batch_norm expects [B, C], got " + shape_str(X.shape()));
  const std::size_t B = X.shape()[0], C = X.shape()[1];
  if (gamma.value().size() != C || beta.value().size() != C)
    throw ShapeError("batch_norm gain/shift must have " + std::to_string(C) + " entries");
  const Tensor& Gm = gamma.value();
  const Tensor& Bt = beta.value();
  std::vector<double> mean(C, 0.0), var(C, 0.0), inv_sigma(C);
  std::vector<char> floored(C, 0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) mean[c] += X[b * C + c];
  for (auto& m : mean) m /= static_cast<double>(B);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) var[c] += (X[b * C + c] - mean[c]) * (X[b * C + c] - mean[c]);
  for (auto& v : var) v /= static_cast<double>(B);
  for (std::size_t c = 0; c < C; ++c) {
    double sigma = std::sqrt(var[c]);
    if (sigma < std_floor) {
      sigma = std_floor;
      floored[c] = 1;
    }
    inv_sigma[c] = 1.0 / sigma;
  }
  std::vector<double> xhat(X.size());
  Tensor out(X.shape());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      xhat[b * C + c] = (X[b * C + c] - mean[c]) * inv_sigma[c];
      out[b * C + c] = xhat[b * C + c] * Gm[c] + Bt[c];
    }
  if (stats != nullptr) *stats = BatchStats{mean, var};
  check_output(out, "batch_norm");
  return tape.record(std::move(out), {x.id, gamma.id, beta.id},
                     [B, C, xhat = std::move(xhat), inv_sigma = std::move(inv_sigma),
                      floored = std::move(floored)](Tape& t, int self) {
    const auto& ins = t.inputs_of(self);
    const Tensor& G = t.grad_of(self);
    const Tensor& Gm = t.value_of(ins[1]);
    if (t.needs_grad(ins[1])) {
      Tensor& g = t.grad_mut(ins[1]);
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) g[c] += G[b * C + c] * xhat[b * C + c];
    }
    if (t.needs_grad(ins[2])) {
      Tensor& g = t.grad_mut(ins[2]);
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) g[c] += G[b * C + c];
    }
    if (t.needs_grad(ins[0])) {
      Tensor& gX = t.grad_mut(ins[0]);
      for (std::size_t c = 0; c < C; ++c) {
        double mean_dx = 0.0, mean_dx_xhat = 0.0;
        for (std::size_t b = 0; b < B; ++b) {
          const double dx = G[b * C + c] * Gm[c];
          mean_dx += dx;
          mean_dx_xhat += dx * xhat[b * C + c];
        }
        mean_dx /= static_cast<double>(B);
        mean_dx_xhat /= static_cast<double>(B);
        if (floored[c]) mean_dx_xhat = 0.0;
        for (std::size_t b = 0; b < B; ++b) {
          const double dx = G[b * C + c] * Gm[c];
          gX[b * C + c] += inv_sigma[c] * (dx - mean_dx - xhat[b * C + c] * mean_dx_xhat);
        }
      }
    }
  });
}

Var bce(Var yhat, std::span<const double> labels, double eps, double pos_weight) {
  const Tensor& Y = yhat.value();
  if (Y.size() != labels.size())
    throw ShapeError("bce: " + std::to_string(Y.size()) + " predictions for " + std::to_string(labels.size()) + " labels");
  if (Y.size() == 0) throw EmptyInputError("bce over an empty batch");
  std::vector<double> g(labels.begin(), labels.end());
  for (double l : g)
    if (l != 0.0 && l != 1.0) throw DataError("label " + std::to_string(l) + " is not 0 or 1");
  const double n = static_cast<double>(g.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double y = std::clamp(Y[i], eps, 1.0 - eps);
    loss -= pos_weight * g[i] * std::log(y) + (1.0 - g[i]) * std::log(1.0 - y);
  }
  loss /= n;
  return yhat.tape->record(Tensor({}, std::vector<double>{loss}), {yhat.id},
                           [g = std::move(g), eps, pos_weight, n](Tape& t, int self) {
    const int in = t.inputs_of(self)[0];
    const double G = t.grad_of(self)[0];
    const Tensor& Y = t.value_of(in);
    Tensor& gY = t.grad_mut(in);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double y = Y[i];
      if (y < eps || y > 1.0 - eps) continue;
      gY[i] += G * -(pos_weight * g[i] / y - (1.0 - g[i]) / (1.0 - y)) / n;
    }
  });
}

Tensor gaussian_init(const Shape& shape, double stddev, std::uint64_t seed) {
  if (!(stddev > 0.0)) throw ConfigError("init std must be positive, got " + std::to_string(stddev));
  static constexpr double kGrid[] = {0.01, 0.05, 0.1, 0.2};
  if (std::none_of(std::begin(kGrid), std::end(kGrid), [&](double g) { return std::abs(g - stddev) < 1e-12; }))
    log::warn("init std ", stddev, " is off the {0.01, 0.05, 0.1, 0.2} grid");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor t(shape);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

}  // namespace convernet::ad
