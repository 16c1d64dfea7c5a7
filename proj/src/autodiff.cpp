#include "evoloss/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <unordered_map>
#include <utility>

#include "evoloss/errors.hpp"

namespace evoloss {

namespace detail {

using BackwardFn =
    std::function<std::vector<Var>(const Var& grad, const Var& out, std::span<const Var> in)>;

struct Node {
  Tensor value;
  std::vector<Var> parents;
  BackwardFn backward;
  bool requires_grad = false;
};

}  // namespace detail

namespace {

thread_local bool g_recording = true;

using detail::BackwardFn;
using detail::Node;

Var make_result(Tensor value, std::vector<Var> inputs, BackwardFn fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (g_recording) {
    const bool any = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Var& v) { return v.requires_grad(); });
    if (any) {
      node->parents = std::move(inputs);
      node->backward = std::move(fn);
      node->requires_grad = true;
    }
  }
  return Var(std::move(node));
}

Var constant(Tensor t) { return Var(std::move(t), false); }

const Shape& broadcast_shape(const Var& a, const Var& b, const char* op) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa == sb) return sa;
  if (b.numel() == 1 && (a.numel() != 1 || sa.size() >= sb.size())) return sa;
  if (a.numel() == 1) return sb;
  throw UsageError(std::string(op) + ": shapes " + shape_string(sa) + " and " + shape_string(sb) +
                   " are not broadcast-compatible");
}

template <typename F>
Tensor map_binary(const Tensor& a, const Tensor& b, const Shape& shape, F f) {
  std::vector<double> out(shape_numel(shape));
  const auto da = a.data();
  const auto db = b.data();
  if (da.size() == out.size() && db.size() == out.size()) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(da[i], db[i]);
  } else if (da.size() == out.size()) {
    const double s = db[0];
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(da[i], s);
  } else {
    const double s = da[0];
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(s, db[i]);
  }
  return Tensor(shape, std::move(out));
}

template <typename F>
Tensor map_unary(const Tensor& x, F f) {
  std::vector<double> out(x.numel());
  const auto d = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(d[i]);
  return Tensor(x.shape(), std::move(out));
}

/// Reduces a broadcast gradient back to the shape of a single-element input.
Var unbroadcast(const Var& g, const Shape& target) {
  if (g.shape() == target) return g;
  return reshape(sum(g), target);
}

void require_rank2(const Var& v, const char* op) {
  if (v.value().rank() != 2) {
    throw UsageError(std::string(op) + ": expected a matrix, got shape " + shape_string(v.shape()));
  }
}

}  // namespace

// ---------------------------------------------------------------- Var

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<detail::Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

const Tensor& Var::value() const {
  if (!node_) throw UsageError("use of an undefined Var");
  return node_->value;
}

bool Var::requires_grad() const noexcept { return node_ && node_->requires_grad; }

bool Var::has_history() const noexcept { return node_ && static_cast<bool>(node_->backward); }

NoGradGuard::NoGradGuard() : previous_(g_recording) { g_recording = false; }
NoGradGuard::~NoGradGuard() { g_recording = previous_; }

bool grad_recording_enabled() noexcept { return g_recording; }

// ---------------------------------------------------------------- elementwise

Var add(const Var& a, const Var& b) {
  const auto& shape = broadcast_shape(a, b, "add");
  return make_result(map_binary(a.value(), b.value(), shape, [](double x, double y) { return x + y; }),
                     {a, b}, [](const Var& g, const Var&, std::span<const Var> in) {
                       return std::vector<Var>{unbroadcast(g, in[0].shape()),
                                               unbroadcast(g, in[1].shape())};
                     });
}

Var sub(const Var& a, const Var& b) {
  const auto& shape = broadcast_shape(a, b, "sub");
  return make_result(map_binary(a.value(), b.value(), shape, [](double x, double y) { return x - y; }),
                     {a, b}, [](const Var& g, const Var&, std::span<const Var> in) {
                       return std::vector<Var>{unbroadcast(g, in[0].shape()),
                                               unbroadcast(neg(g), in[1].shape())};
                     });
}

Var mul(const Var& a, const Var& b) {
  const auto& shape = broadcast_shape(a, b, "mul");
  return make_result(map_binary(a.value(), b.value(), shape, [](double x, double y) { return x * y; }),
                     {a, b}, [](const Var& g, const Var&, std::span<const Var> in) {
                       std::vector<Var> out(2);
                       if (in[0].requires_grad()) out[0] = unbroadcast(mul(g, in[1]), in[0].shape());
                       if (in[1].requires_grad()) out[1] = unbroadcast(mul(g, in[0]), in[1].shape());
                       return out;
                     });
}

Var neg(const Var& x) {
  return make_result(map_unary(x.value(), [](double v) { return -v; }), {x},
                     [](const Var& g, const Var&, std::span<const Var>) {
                       return std::vector<Var>{neg(g)};
                     });
}

Var scale(const Var& x, double c) {
  return make_result(map_unary(x.value(), [c](double v) { return v * c; }), {x},
                     [c](const Var& g, const Var&, std::span<const Var>) {
                       return std::vector<Var>{scale(g, c)};
                     });
}

Var add_scalar(const Var& x, double c) {
  return make_result(map_unary(x.value(), [c](double v) { return v + c; }), {x},
                     [](const Var& g, const Var&, std::span<const Var>) {
                       return std::vector<Var>{g};
                     });
}

Var aq(const Var& a, const Var& b) {
  const auto& shape = broadcast_shape(a, b, "aq");
  return make_result(map_binary(a.value(), b.value(), shape, analytic_quotient), {a, b},
                     [](const Var& g, const Var& out, std::span<const Var> in) {
                       // d/da = 1/h, d/db = -(a/h) * (b/h^2) with h = hypot(1, b);
                       // both factors are themselves analytic quotients.
                       const Var& b = in[1];
                       std::vector<Var> res(2);
                       if (in[0].requires_grad()) {
                         res[0] = unbroadcast(mul(g, aq(Var(1.0), b)), in[0].shape());
                       }
                       if (b.requires_grad()) {
                         res[1] = unbroadcast(neg(mul(g, mul(out, aq(aq(b, b), b)))), b.shape());
                       }
                       return res;
                     });
}

namespace {

Tensor select_mask(const Tensor& a, const Tensor& b, const Shape& shape, bool take_min) {
  // 1 where the first argument was selected (ties go to the first argument).
  return map_binary(a, b, shape, [take_min](double x, double y) {
    return take_min ? (y < x ? 0.0 : 1.0) : (y > x ? 0.0 : 1.0);
  });
}

Var select_op(const Var& a, const Var& b, bool take_min) {
  const auto& shape = broadcast_shape(a, b, take_min ? "min" : "max");
  const Symbol s = take_min ? Symbol::Min : Symbol::Max;
  auto value = map_binary(a.value(), b.value(), shape,
                          [s](double x, double y) { return apply_binary(s, x, y); });
  return make_result(std::move(value), {a, b},
                     [take_min, shape](const Var& g, const Var&, std::span<const Var> in) {
                       const Tensor first = select_mask(in[0].value(), in[1].value(), shape, take_min);
                       const Tensor second = map_unary(first, [](double m) { return 1.0 - m; });
                       return std::vector<Var>{
                           unbroadcast(mul(g, constant(first)), in[0].shape()),
                           unbroadcast(mul(g, constant(second)), in[1].shape())};
                     });
}

}  // namespace

Var minimum(const Var& a, const Var& b) { return select_op(a, b, true); }
Var maximum(const Var& a, const Var& b) { return select_op(a, b, false); }

Var sign(const Var& x) { return constant(map_unary(x.value(), signum)); }

Var square(const Var& x) {
  return make_result(map_unary(x.value(), [](double v) { return v * v; }), {x},
                     [](const Var& g, const Var&, std::span<const Var> in) {
                       return std::vector<Var>{mul(g, scale(in[0], 2.0))};
                     });
}

Var abs(const Var& x) {
  return make_result(map_unary(x.value(), [](double v) { return std::fabs(v); }), {x},
                     [](const Var& g, const Var&, std::span<const Var> in) {
                       return std::vector<Var>{mul(g, sign(in[0]))};
                     });
}

Var protected_log(const Var& x) {
  return make_result(map_unary(x.value(), [](double v) { return evoloss::protected_log(v); }), {x},
                     [](const Var& g, const Var&, std::span<const Var> in) {
                       Var inv = reciprocal(add_scalar(abs(in[0]), kProtectEps));
                       return std::vector<Var>{mul(g, mul(sign(in[0]), inv))};
                     });
}

Var protected_sqrt(const Var& x) {
  return make_result(map_unary(x.value(), [](double v) { return evoloss::protected_sqrt(v); }), {x},
                     [](const Var& g, const Var& out, std::span<const Var> in) {
                       return std::vector<Var>{
                           mul(g, mul(sign(in[0]), scale(reciprocal(out), 0.5)))};
                     });
}

Var tanh(const Var& x) {
  return make_result(map_unary(x.value(), [](double v) { return std::tanh(v); }), {x},
                     [](const Var& g, const Var& out, std::span<const Var>) {
                       return std::vector<Var>{mul(g, add_scalar(neg(square(out)), 1.0))};
                     });
}

Var exp(const Var& x) {
  return make_result(map_unary(x.value(), [](double v) { return std::exp(v); }), {x},
                     [](const Var& g, const Var& out, std::span<const Var>) {
                       return std::vector<Var>{mul(g, out)};
                     });
}

Var log(const Var& x) {
  return make_result(map_unary(x.value(), [](double v) { return std::log(v); }), {x},
                     [](const Var& g, const Var&, std::span<const Var> in) {
                       return std::vector<Var>{mul(g, reciprocal(in[0]))};
                     });
}

Var reciprocal(const Var& x) {
  return make_result(map_unary(x.value(), [](double v) { return 1.0 / v; }), {x},
                     [](const Var& g, const Var& out, std::span<const Var>) {
                       return std::vector<Var>{neg(mul(g, square(out)))};
                     });
}

Var pow(const Var& x, double exponent) {
  return make_result(map_unary(x.value(), [exponent](double v) { return std::pow(v, exponent); }),
                     {x}, [exponent](const Var& g, const Var&, std::span<const Var> in) {
                       if (exponent == 0.0) return std::vector<Var>{Var()};
                       return std::vector<Var>{
                           mul(g, scale(pow(in[0], exponent - 1.0), exponent))};
                     });
}

Var relu(const Var& x) {
  return make_result(map_unary(x.value(), [](double v) { return v > 0.0 ? v : 0.0; }), {x},
                     [](const Var& g, const Var&, std::span<const Var> in) {
                       auto mask = map_unary(in[0].value(), [](double v) { return v > 0.0 ? 1.0 : 0.0; });
                       return std::vector<Var>{mul(g, constant(std::move(mask)))};
                     });
}

Var sigmoid(const Var& x) {
  auto value = map_unary(x.value(), [](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
  return make_result(std::move(value), {x}, [](const Var& g, const Var& out, std::span<const Var>) {
    return std::vector<Var>{mul(g, mul(out, add_scalar(neg(out), 1.0)))};
  });
}

Var softplus(const Var& x) {
  auto value = map_unary(x.value(), [](double v) {
    return std::max(v, 0.0) + std::log1p(std::exp(-std::fabs(v)));
  });
  return make_result(std::move(value), {x}, [](const Var& g, const Var&, std::span<const Var> in) {
    return std::vector<Var>{mul(g, sigmoid(in[0]))};
  });
}

Var one_minus_exp(const Var& x) {
  return make_result(map_unary(x.value(), [](double v) { return -std::expm1(v); }), {x},
                     [](const Var& g, const Var&, std::span<const Var> in) {
                       return std::vector<Var>{neg(mul(g, exp(in[0])))};
                     });
}

Var clamp_min(const Var& x, double lo) {
  return make_result(map_unary(x.value(), [lo](double v) { return v > lo ? v : lo; }), {x},
                     [lo](const Var& g, const Var&, std::span<const Var> in) {
                       auto mask = map_unary(in[0].value(), [lo](double v) { return v > lo ? 1.0 : 0.0; });
                       return std::vector<Var>{mul(g, constant(std::move(mask)))};
                     });
}

Var apply_primitive(Symbol op, std::span<const Var> inputs) {
  const int n = arity(op);
  if (n == 0) throw UsageError("apply_primitive: '" + std::string(token(op)) + "' is a terminal");
  if (static_cast<int>(inputs.size()) != n) {
    throw UsageError("apply_primitive: '" + std::string(token(op)) + "' takes " + std::to_string(n) +
                     " inputs, got " + std::to_string(inputs.size()));
  }
  switch (op) {
    case Symbol::Add:
      return add(inputs[0], inputs[1]);
    case Symbol::Sub:
      return sub(inputs[0], inputs[1]);
    case Symbol::Mul:
      return mul(inputs[0], inputs[1]);
    case Symbol::Aq:
      return aq(inputs[0], inputs[1]);
    case Symbol::Min:
      return minimum(inputs[0], inputs[1]);
    case Symbol::Max:
      return maximum(inputs[0], inputs[1]);
    case Symbol::Sign:
      return sign(inputs[0]);
    case Symbol::Square:
      return square(inputs[0]);
    case Symbol::Abs:
      return abs(inputs[0]);
    case Symbol::Log:
      return protected_log(inputs[0]);
    case Symbol::Sqrt:
      return protected_sqrt(inputs[0]);
    case Symbol::Tanh:
      return tanh(inputs[0]);
    default:
      break;
  }
  throw UsageError("apply_primitive: unknown primitive");
}

// ---------------------------------------------------------------- shape / reduction

Var reshape(const Var& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw UsageError("reshape: " + shape_string(x.shape()) + " to " + shape_string(shape));
  }
  return make_result(x.value().reshaped(std::move(shape)), {x},
                     [](const Var& g, const Var&, std::span<const Var> in) {
                       return std::vector<Var>{reshape(g, in[0].shape())};
                     });
}

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return make_result(Tensor::scalar(s), {x}, [](const Var& g, const Var&, std::span<const Var> in) {
    return std::vector<Var>{expand(g, in[0].shape())};
  });
}

Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Var expand(const Var& x, Shape shape) {
  if (x.numel() != 1) throw UsageError("expand: source must hold one element");
  return make_result(Tensor::full(std::move(shape), x.value()[0]), {x},
                     [](const Var& g, const Var&, std::span<const Var> in) {
                       return std::vector<Var>{reshape(sum(g), in[0].shape())};
                     });
}

// ---------------------------------------------------------------- linear algebra

Var matmul(const Var& a, const Var& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t n = a.shape()[0], k = a.shape()[1], m = b.shape()[1];
  if (b.shape()[0] != k) {
    throw UsageError("matmul: inner dimensions differ " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  }
  std::vector<double> out(n * m, 0.0);
  const auto da = a.value().data();
  const auto db = b.value().data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = da[i * k + p];
      if (av == 0.0) continue;
      const double* brow = db.data() + p * m;
      double* orow = out.data() + i * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
  return make_result(Tensor::matrix(n, m, std::move(out)), {a, b},
                     [](const Var& g, const Var&, std::span<const Var> in) {
                       std::vector<Var> res(2);
                       if (in[0].requires_grad()) res[0] = matmul(g, transpose(in[1]));
                       if (in[1].requires_grad()) res[1] = matmul(transpose(in[0]), g);
                       return res;
                     });
}

Var transpose(const Var& a) {
  require_rank2(a, "transpose");
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  std::vector<double> out(r * c);
  const auto d = a.value().data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = d[i * c + j];
  return make_result(Tensor::matrix(c, r, std::move(out)), {a},
                     [](const Var& g, const Var&, std::span<const Var>) {
                       return std::vector<Var>{transpose(g)};
                     });
}

Var add_row(const Var& m, const Var& bias) {
  require_rank2(m, "add_row");
  const std::size_t r = m.shape()[0], c = m.shape()[1];
  if (bias.numel() != c) {
    throw UsageError("add_row: bias of " + std::to_string(bias.numel()) + " for " +
                     std::to_string(c) + " columns");
  }
  std::vector<double> out(m.value().vec());
  const auto db = bias.value().data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += db[j];
  return make_result(Tensor::matrix(r, c, std::move(out)), {m, bias},
                     [](const Var& g, const Var&, std::span<const Var> in) {
                       return std::vector<Var>{g, reshape(col_sum(g), in[1].shape())};
                     });
}

Var col_sum(const Var& m) {
  require_rank2(m, "col_sum");
  const std::size_t r = m.shape()[0], c = m.shape()[1];
  std::vector<double> out(c, 0.0);
  const auto d = m.value().data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += d[i * c + j];
  return make_result(Tensor::matrix(1, c, std::move(out)), {m},
                     [r](const Var& g, const Var&, std::span<const Var>) {
                       return std::vector<Var>{broadcast_rows(g, r)};
                     });
}

Var row_sum(const Var& m) {
  require_rank2(m, "row_sum");
  const std::size_t r = m.shape()[0], c = m.shape()[1];
  std::vector<double> out(r, 0.0);
  const auto d = m.value().data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i] += d[i * c + j];
  return make_result(Tensor::matrix(r, 1, std::move(out)), {m},
                     [c](const Var& g, const Var&, std::span<const Var>) {
                       return std::vector<Var>{broadcast_cols(g, c)};
                     });
}

Var broadcast_rows(const Var& v, std::size_t rows) {
  const std::size_t c = v.numel();
  std::vector<double> out(rows * c);
  const auto d = v.value().data();
  for (std::size_t i = 0; i < rows; ++i) std::copy(d.begin(), d.end(), out.begin() + i * c);
  return make_result(Tensor::matrix(rows, c, std::move(out)), {v},
                     [](const Var& g, const Var&, std::span<const Var> in) {
                       return std::vector<Var>{reshape(col_sum(g), in[0].shape())};
                     });
}

Var broadcast_cols(const Var& v, std::size_t cols) {
  const std::size_t r = v.numel();
  std::vector<double> out(r * cols);
  const auto d = v.value().data();
  for (std::size_t i = 0; i < r; ++i) std::fill_n(out.begin() + i * cols, cols, d[i]);
  return make_result(Tensor::matrix(r, cols, std::move(out)), {v},
                     [](const Var& g, const Var&, std::span<const Var> in) {
                       return std::vector<Var>{reshape(row_sum(g), in[0].shape())};
                     });
}

Var log_softmax(const Var& z) {
  require_rank2(z, "log_softmax");
  const std::size_t r = z.shape()[0], c = z.shape()[1];
  std::vector<double> out(r * c);
  const auto d = z.value().data();
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = d.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(row[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = row[j] - lse;
  }
  return make_result(Tensor::matrix(r, c, std::move(out)), {z},
                     [c](const Var& g, const Var& out, std::span<const Var>) {
                       return std::vector<Var>{sub(g, mul(exp(out), broadcast_cols(row_sum(g), c)))};
                     });
}

Var softmax(const Var& z) { return exp(log_softmax(z)); }

Var gather(const Var& m, std::span<const std::size_t> index) {
  require_rank2(m, "gather");
  const std::size_t r = m.shape()[0], c = m.shape()[1];
  if (index.size() != r) throw UsageError("gather: one index per row required");
  auto idx = std::make_shared<const std::vector<std::size_t>>(index.begin(), index.end());
  std::vector<double> out(r);
  const auto d = m.value().data();
  for (std::size_t i = 0; i < r; ++i) {
    if ((*idx)[i] >= c) throw UsageError("gather: index out of range");
    out[i] = d[i * c + (*idx)[i]];
  }
  return make_result(Tensor::matrix(r, 1, std::move(out)), {m},
                     [idx, c](const Var& g, const Var&, std::span<const Var>) {
                       return std::vector<Var>{scatter(g, *idx, c)};
                     });
}

Var scatter(const Var& v, std::span<const std::size_t> index, std::size_t cols) {
  const std::size_t r = v.numel();
  if (index.size() != r) throw UsageError("scatter: one index per row required");
  auto idx = std::make_shared<const std::vector<std::size_t>>(index.begin(), index.end());
  std::vector<double> out(r * cols, 0.0);
  const auto d = v.value().data();
  for (std::size_t i = 0; i < r; ++i) {
    if ((*idx)[i] >= cols) throw UsageError("scatter: index out of range");
    out[i * cols + (*idx)[i]] = d[i];
  }
  return make_result(Tensor::matrix(r, cols, std::move(out)), {v},
                     [idx](const Var& g, const Var&, std::span<const Var> in) {
                       return std::vector<Var>{reshape(gather(g, *idx), in[0].shape())};
                     });
}

Var linear_op(LinearOp kind, std::span<const Var> inputs) {
  const std::size_t need = (kind == LinearOp::MatMul || kind == LinearOp::AddBias) ? 2 : 1;
  if (inputs.size() != need) throw UsageError("linear_op: wrong number of inputs");
  switch (kind) {
    case LinearOp::MatMul:
      return matmul(inputs[0], inputs[1]);
    case LinearOp::AddBias:
      return add_row(inputs[0], inputs[1]);
    case LinearOp::Softmax:
      return softmax(inputs[0]);
    case LinearOp::LogSoftmax:
      return log_softmax(inputs[0]);
  }
  throw UsageError("linear_op: unknown kind");
}

// ---------------------------------------------------------------- backward

GradientResult backward(const Var& output, std::span<const Var> wrt, bool record_graph,
                        const Var& seed) {
  if (!output.defined()) throw UsageError("backward: undefined output");
  if (!seed.defined() && output.numel() != 1) {
    throw UsageError("backward: non-scalar output " + shape_string(output.shape()) +
                     " needs a seed gradient");
  }
  if (seed.defined() && seed.shape() != output.shape()) {
    throw UsageError("backward: seed shape does not match output");
  }

  std::optional<NoGradGuard> guard;
  if (!record_graph) guard.emplace();

  // Post-order over nodes that carry gradient history.
  std::vector<std::shared_ptr<Node>> order;
  std::unordered_map<const Node*, bool> visited;
  if (output.requires_grad()) {
    std::vector<std::pair<std::shared_ptr<Node>, std::size_t>> stack;
    stack.emplace_back(output.node(), 0);
    visited[output.id()] = true;
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        const auto& p = node->parents[next++].node();
        if (p->requires_grad && !visited[p.get()]) {
          visited[p.get()] = true;
          stack.emplace_back(p, 0);
        }
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
  }

  std::unordered_map<const Node*, Var> grads;
  if (output.requires_grad()) {
    grads[output.id()] = seed.defined() ? seed : Var(Tensor::full(output.shape(), 1.0));
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const auto& node = *it;
    if (!node->backward) continue;
    auto found = grads.find(node.get());
    if (found == grads.end()) continue;
    const Var g = found->second;
    auto parent_grads = node->backward(g, Var(node), node->parents);
    for (std::size_t i = 0; i < node->parents.size(); ++i) {
      const Var& p = node->parents[i];
      if (!p.requires_grad() || i >= parent_grads.size() || !parent_grads[i].defined()) continue;
      auto [slot, inserted] = grads.try_emplace(p.id(), parent_grads[i]);
      if (!inserted) slot->second = add(slot->second, parent_grads[i]);
    }
  }

  GradientResult result;
  result.non_finite = !output.value().all_finite();
  result.grads.reserve(wrt.size());
  for (const Var& w : wrt) {
    auto found = grads.find(w.id());
    Var g = found != grads.end() ? found->second : Var(Tensor::zeros(w.shape()));
    if (!g.value().all_finite()) result.non_finite = true;
    result.grads.push_back(std::move(g));
  }
  return result;
}

GradientCheckReport check_gradients(const std::function<Var(const Var&)>& fn, const Tensor& point,
                                    double tol, double h) {
  GradientCheckReport report;
  {
    Var x(point, true);
    Var y = fn(x);
    report.analytic = grad(y, x).value().vec();
  }
  NoGradGuard guard;
  const std::size_t n = point.numel();
  for (std::size_t i = 0; i < n; ++i) {
    Tensor plus = point, minus = point;
    plus[i] += h;
    minus[i] -= h;
    const double fp = fn(Var(plus)).item();
    const double fm = fn(Var(minus)).item();
    const double numeric = (fp - fm) / (2.0 * h);
    const double a = report.analytic[i];
    const double err = std::fabs(a - numeric) / std::max({1.0, std::fabs(a), std::fabs(numeric)});
    report.numeric.push_back(numeric);
    report.rel_error.push_back(std::isfinite(err) ? err : std::numeric_limits<double>::infinity());
    report.max_rel_error = std::max(report.max_rel_error, report.rel_error.back());
  }
  report.passed = report.max_rel_error <= tol;
  return report;
}

}  // namespace evoloss
