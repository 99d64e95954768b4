#pragma once

// Reverse-mode differentiation over small dense tensors.
//
// A Tape records every operation of one forward pass. Each recorded node owns
// its output value, an optional gradient buffer and a closure that pushes the
// node's gradient into its inputs. Tapes are built fresh for every forward
// pass and thrown away after backward(); nothing is reused across steps.
//
// Binary elementwise ops broadcast their second operand only. Accepted
// shapes for `b` given `a`:
//   - identical shape
//   - a single element (scalar or any shape of size 1)
//   - a is (m, n) and b is (n) or (1, n): row broadcast
//   - a is (m, n) and b is (m) or (m, 1): column broadcast (checked after row)

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "shiftbench/tensor.hpp"

namespace shiftbench::ad {

// Probabilities below this are clamped before log/KL.
inline constexpr double kProbEpsilon = 1e-12;

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  // Zero tensor of the value's shape if nothing was propagated here.
  Tensor grad() const;
  bool requires_grad() const;
  const Shape& shape() const { return value().shape(); }

  Tape* tape() const noexcept { return tape_; }
  std::uint32_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);

  // Records an op. `backward` receives the output gradient and must call
  // accumulate() for each input that requires a gradient.
  Var record(Tensor value, bool requires_grad, BackwardFn backward);

  // Seeds d(loss)/d(loss) = 1 and runs every recorded backward rule once, in
  // reverse recording order. Throws ShapeError for a non-scalar loss.
  void backward(Var loss);

  void accumulate(Var target, const Tensor& grad);
  // Adds into the gradient buffer of `target` through a callback that
  // receives the (allocated, same-shape) buffer. Avoids a temporary.
  template <class F>
  void accumulate_with(Var target, F&& fn) {
    Node& n = nodes_[target.id()];
    if (!n.requires_grad) return;
    if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
    fn(n.grad);
  }

  const Tensor& value(std::uint32_t id) const { return nodes_[id].value; }
  Tensor grad(std::uint32_t id) const;
  bool requires_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Backward rule invocations in the last backward() call, for tests.
  std::size_t last_backward_visits() const noexcept { return visits_; }

 private:
  struct Node {
    Tensor value;
    bool requires_grad = false;
    std::vector<double> grad;  // empty until something flows in
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  std::size_t visits_ = 0;
};

// --- elementwise -----------------------------------------------------------
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var scale(Var x, double c);
Var add_scalar(Var x, double c);
Var relu(Var x);
Var exp(Var x);
Var log(Var x);  // log(max(x, kProbEpsilon))
Var sigmoid(Var x);

// --- linear algebra --------------------------------------------------------
Var matmul(Var a, Var b);
Var transpose(Var x);
// Rowwise outer product: (B, F) x (B, K) -> (B, F*K), entry [b, f*K + k] = z[b,f] * p[b,k].
Var outer_rows(Var z, Var p);
// Stacks along the leading axis.
Var concat_rows(Var a, Var b);
// Same values, new shape of equal size.
Var reshape(Var x, Shape shape);

// --- reductions ------------------------------------------------------------
Var sum(Var x);
Var mean(Var x);
// (B, K) -> (B)
Var sum_rows(Var x);

// --- probability -----------------------------------------------------------
// Rowwise softmax of x / temperature.
Var softmax(Var x, double temperature = 1.0);
Var log_softmax(Var x, double temperature = 1.0);
// Per-row cross-entropy of softmax(logits) against a target distribution
// (one-hot or soft). Returns (B).
Var cross_entropy(Var logits, const Tensor& targets);
// Per-row KL(p || q) for probability rows, clamped at kProbEpsilon. Returns (B).
Var kl_div(Var p, Var q);
// Per-row sum of squared differences. Returns (B).
Var squared_error(Var a, Var b);
// Elementwise binary cross-entropy of probabilities against {0,1} (or soft) targets.
Var binary_cross_entropy(Var prob, const Tensor& targets);

// --- gradient plumbing -----------------------------------------------------
// Identity forward; the output does not require a gradient.
Var stop_gradient(Var x);
// Identity forward; backward multiplies the incoming gradient by -lambda.
Var grad_reverse(Var x, double lambda);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(double c, Var x) { return scale(x, c); }

// Plain (tape-free) helpers used for targets and masks.
Tensor softmax_values(const Tensor& logits, double temperature = 1.0);

}  // namespace shiftbench::ad
