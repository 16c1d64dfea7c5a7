#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string_view>

namespace evoloss {

/// Search-space symbols: the twelve protected primitives followed by the
/// four terminals. Order is part of the random-generation contract.
enum class Symbol : std::uint8_t {
  Add,
  Sub,
  Mul,
  Aq,
  Min,
  Max,
  Sign,
  Square,
  Abs,
  Log,
  Sqrt,
  Tanh,
  Pred,      // f, the model prediction
  Target,    // y, the ground truth
  One,       // +1
  MinusOne,  // -1
};

/// Additive constant of the protected log and sqrt.
inline constexpr double kProtectEps = 1e-7;

inline constexpr std::array<Symbol, 6> kBinaryPrimitives = {
    Symbol::Add, Symbol::Sub, Symbol::Mul, Symbol::Aq, Symbol::Min, Symbol::Max};
inline constexpr std::array<Symbol, 6> kUnaryPrimitives = {
    Symbol::Sign, Symbol::Square, Symbol::Abs, Symbol::Log, Symbol::Sqrt, Symbol::Tanh};
inline constexpr std::array<Symbol, 12> kPrimitives = {
    Symbol::Add,  Symbol::Sub,    Symbol::Mul, Symbol::Aq,  Symbol::Min,  Symbol::Max,
    Symbol::Sign, Symbol::Square, Symbol::Abs, Symbol::Log, Symbol::Sqrt, Symbol::Tanh};
inline constexpr std::array<Symbol, 4> kTerminals = {Symbol::Pred, Symbol::Target, Symbol::One,
                                                     Symbol::MinusOne};

constexpr int arity(Symbol s) noexcept {
  switch (s) {
    case Symbol::Add:
    case Symbol::Sub:
    case Symbol::Mul:
    case Symbol::Aq:
    case Symbol::Min:
    case Symbol::Max:
      return 2;
    case Symbol::Sign:
    case Symbol::Square:
    case Symbol::Abs:
    case Symbol::Log:
    case Symbol::Sqrt:
    case Symbol::Tanh:
      return 1;
    default:
      return 0;
  }
}

constexpr bool is_terminal(Symbol s) noexcept { return arity(s) == 0; }

std::string_view token(Symbol s) noexcept;
std::optional<Symbol> symbol_from_token(std::string_view tok) noexcept;

// Scalar kernels shared by direct tree evaluation and the autodiff forward
// pass, so both routes perform the same floating-point operations.

inline double signum(double x) noexcept { return static_cast<double>((x > 0.0) - (x < 0.0)); }

inline double protected_log(double x) noexcept { return std::log(std::fabs(x) + kProtectEps); }

inline double protected_sqrt(double x) noexcept { return std::sqrt(std::fabs(x) + kProtectEps); }

/// Analytical quotient x1 / sqrt(1 + x2^2); hypot keeps large x2 finite.
inline double analytic_quotient(double x1, double x2) noexcept { return x1 / std::hypot(1.0, x2); }

inline double apply_unary(Symbol s, double x) noexcept {
  switch (s) {
    case Symbol::Sign:
      return signum(x);
    case Symbol::Square:
      return x * x;
    case Symbol::Abs:
      return std::fabs(x);
    case Symbol::Log:
      return protected_log(x);
    case Symbol::Sqrt:
      return protected_sqrt(x);
    case Symbol::Tanh:
      return std::tanh(x);
    default:
      return x;
  }
}

inline double apply_binary(Symbol s, double a, double b) noexcept {
  switch (s) {
    case Symbol::Add:
      return a + b;
    case Symbol::Sub:
      return a - b;
    case Symbol::Mul:
      return a * b;
    case Symbol::Aq:
      return analytic_quotient(a, b);
    case Symbol::Min:
      return b < a ? b : a;  // ties resolve to the first argument
    case Symbol::Max:
      return b > a ? b : a;
    default:
      return a;
  }
}

}  // namespace evoloss
