#include "evoloss/primitives.hpp"

namespace evoloss {

namespace {

constexpr std::array<std::string_view, 16> kTokens = {
    "+", "-", "*", "aq", "min", "max", "sign", "sq", "abs", "log", "sqrt", "tanh", "f", "y", "1", "-1"};

}  // namespace

std::string_view token(Symbol s) noexcept { return kTokens[static_cast<std::size_t>(s)]; }

std::optional<Symbol> symbol_from_token(std::string_view tok) noexcept {
  for (std::size_t i = 0; i < kTokens.size(); ++i) {
    if (kTokens[i] == tok) return static_cast<Symbol>(i);
  }
  return std::nullopt;
}

}  // namespace evoloss
