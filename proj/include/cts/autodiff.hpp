#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "cts/tensor.hpp"

namespace cts {

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Dynamic reverse-mode tape. Nodes are appended in evaluation order, so the
/// recording order is already topological. A tape belongs to one thread.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Records a value that never receives gradient.
  Var constant(Tensor value);
  /// Records a reference to `t`; backward() accumulates into t.grad() when
  /// t.requires_grad(). `t` must outlive the tape's backward pass.
  Var leaf(Tensor& t);

  /// Appends a node. `fn` is skipped during backward unless some input needs grad.
  Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn fn);

  /// Propagates d(loss)/d(node) to every node and adds the result into each
  /// requires_grad leaf. Calling it again adds the same gradients again.
  void backward(const Var& loss);

  std::size_t size() const { return nodes_.size(); }
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  /// Gradient buffer of node `id`, valid during backward().
  Eigen::VectorXd& grad(std::size_t id);
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_[id].inputs; }

 private:
  struct Node {
    Tensor value;
    Eigen::VectorXd grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Tensor* leaf = nullptr;
    bool needs_grad = false;
  };
  std::deque<Node> nodes_;
};

inline void backward(const Var& loss) { loss.tape().backward(loss); }

// ---------------------------------------------------------------------------
// Primitives. Rank-2 operands are row-major matrices; rank-1 operands act as
// 1×n rows where a matrix is expected.

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, double s);
/// x + s elementwise.
Var shift(const Var& x, double s);
/// s·x with s a differentiable one-element tensor.
Var scale_by(const Var& s, const Var& x);
Var transpose(const Var& x);
/// Concatenation of rank-2 operands along axis 0 (rows) or 1 (columns).
Var concat(std::span<const Var> parts, std::size_t axis);
Var reshape(const Var& x, Shape shape);
/// out[i] = x[index[i]] over the flat data; backward scatter-adds.
Var gather(const Var& x, std::vector<std::size_t> index, Shape shape);
/// Row gather from a |V|×d table.
Var embedding(const Var& table, std::span<const int> ids);
/// Rows [begin, end) of a rank-2 operand.
Var slice_rows(const Var& x, std::size_t begin, std::size_t end);
/// x[m×n] + bias[n] broadcast over rows.
Var add_row(const Var& x, const Var& bias);
/// x[m×n] with row i scaled by w[i].
Var mul_rows(const Var& x, const Var& w);
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);
Var gelu(const Var& x);
Var softmax_rows(const Var& x);
Var sum(const Var& x);
Var mean(const Var& x);
/// mean((a - b)^2)
Var mse(const Var& a, const Var& b);

// Value-level conveniences for callers without a tape.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor softmax_rows(const Tensor& x);

/// Max over elements of |analytic - central difference| / (|analytic| + 1e-8)
/// for the scalar function f at x.
double finite_diff_check(const std::function<Var(const Var&)>& f, const Tensor& x, double h = 1e-5);

}  // namespace cts
