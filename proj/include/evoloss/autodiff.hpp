#pragma once

// Reverse-mode automatic differentiation over dense tensors.
//
// Every backward rule is itself written with differentiable Var operations,
// so a backward pass run with graph recording enabled returns gradients that
// are part of the graph and can be differentiated again. This is what lets
// the meta-optimizer push a task loss back through an inner SGD step.
//
// A graph is confined to the thread that built it. Recording can be switched
// off per thread with NoGradGuard; operations then produce constant leaves.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "evoloss/primitives.hpp"
#include "evoloss/tensor.hpp"

namespace evoloss {

namespace detail {
struct Node;
}

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);
  explicit Var(double value, bool requires_grad = false)
      : Var(Tensor::scalar(value), requires_grad) {}
  explicit Var(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  bool defined() const noexcept { return node_ != nullptr; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t numel() const { return value().numel(); }
  double item() const { return value().item(); }
  bool requires_grad() const noexcept;
  /// True when this Var was produced by a recorded operation.
  bool has_history() const noexcept;

  const detail::Node* id() const noexcept { return node_.get(); }
  const std::shared_ptr<detail::Node>& node() const noexcept { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_recording_enabled() noexcept;

// ---- elementwise (same shape, or one side holding a single element) ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var neg(const Var& x);
Var scale(const Var& x, double c);
Var add_scalar(const Var& x, double c);
Var aq(const Var& a, const Var& b);
Var minimum(const Var& a, const Var& b);
Var maximum(const Var& a, const Var& b);
/// Zero gradient everywhere.
Var sign(const Var& x);
Var square(const Var& x);
Var abs(const Var& x);
/// log(|x| + 1e-7)
Var protected_log(const Var& x);
/// sqrt(|x| + 1e-7)
Var protected_sqrt(const Var& x);
Var tanh(const Var& x);
Var exp(const Var& x);
Var log(const Var& x);
Var reciprocal(const Var& x);
Var pow(const Var& x, double exponent);
Var relu(const Var& x);
Var sigmoid(const Var& x);
Var softplus(const Var& x);
/// 1 - e^x, computed with expm1.
Var one_minus_exp(const Var& x);
/// max(x, lo); gradient flows only where x > lo.
Var clamp_min(const Var& x, double lo);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator-(const Var& x) { return neg(x); }

/// Table-1 primitive by symbol; `inputs` must match its arity.
Var apply_primitive(Symbol op, std::span<const Var> inputs);

// ---- shape and reduction ----
Var reshape(const Var& x, Shape shape);
/// Sum of all elements, rank-0 result.
Var sum(const Var& x);
Var mean(const Var& x);
/// Broadcast a single-element tensor to `shape`.
Var expand(const Var& x, Shape shape);

// ---- linear algebra over rank-2 tensors ----
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
/// (B x H) + bias of H elements, added to every row.
Var add_row(const Var& m, const Var& bias);
/// Column sums of (B x H) as (1 x H).
Var col_sum(const Var& m);
/// Row sums of (B x C) as (B x 1).
Var row_sum(const Var& m);
/// (1 x H) or (H) repeated into (rows x H).
Var broadcast_rows(const Var& v, std::size_t rows);
/// (B x 1) repeated into (B x cols).
Var broadcast_cols(const Var& v, std::size_t cols);
/// Row-wise log-softmax by max subtraction and log-sum-exp.
Var log_softmax(const Var& z);
Var softmax(const Var& z);
/// out[b] = m[b, index[b]], shape (B x 1).
Var gather(const Var& m, std::span<const std::size_t> index);
/// Inverse of gather: (B x 1) placed into zeros of (B x cols).
Var scatter(const Var& v, std::span<const std::size_t> index, std::size_t cols);

enum class LinearOp { MatMul, AddBias, Softmax, LogSoftmax };
Var linear_op(LinearOp kind, std::span<const Var> inputs);

struct GradientResult {
  std::vector<Var> grads;
  /// Set when the output or any returned gradient holds inf/NaN.
  bool non_finite = false;
};

/// d(output)/d(wrt[i]). `output` must hold one element unless `seed` (same
/// shape as output) is given. Nodes that do not influence the output get a
/// zero gradient. With `record_graph` the gradients are differentiable.
GradientResult backward(const Var& output, std::span<const Var> wrt, bool record_graph = false,
                        const Var& seed = Var());

inline Var grad(const Var& output, const Var& wrt, bool record_graph = false) {
  return backward(output, std::span<const Var>(&wrt, 1), record_graph).grads.front();
}

struct GradientCheckReport {
  std::vector<double> analytic;
  std::vector<double> numeric;
  /// |analytic - numeric| / max(1, |analytic|, |numeric|)
  std::vector<double> rel_error;
  double max_rel_error = 0.0;
  bool passed = false;
};

/// Compares backward() against central differences with step `h` at every
/// coordinate of `point`. `fn` must return a single-element Var.
GradientCheckReport check_gradients(const std::function<Var(const Var&)>& fn, const Tensor& point,
                                    double tol, double h = 1e-5);

}  // namespace evoloss
