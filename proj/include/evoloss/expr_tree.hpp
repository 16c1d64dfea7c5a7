#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "evoloss/primitives.hpp"

namespace evoloss {

/// A symbolic loss M(y, f) stored as a prefix-order symbol sequence.
///
/// Text form is prefix notation with parentheses around every primitive,
/// e.g. `(abs (log (* y f)))`; a lone terminal is written bare (`y`).
/// Trees are immutable values; the genetic operators build new ones.
class ExprTree {
 public:
  /// Validates that the sequence is exactly one well-formed tree.
  explicit ExprTree(std::vector<Symbol> prefix);
  static ExprTree terminal(Symbol s) { return ExprTree({s}); }
  static ExprTree parse(std::string_view text);

  std::span<const Symbol> nodes() const noexcept { return nodes_; }
  Symbol at(std::size_t i) const { return nodes_[i]; }
  std::size_t size() const noexcept { return nodes_.size(); }
  /// A lone terminal has depth 1.
  int depth() const;
  /// Depth of every node (root = 1), in prefix order.
  std::vector<int> node_depths() const;
  /// One past the last prefix index of the subtree rooted at `i`.
  std::size_t subtree_end(std::size_t i) const;
  ExprTree subtree(std::size_t i) const;
  ExprTree replace_subtree(std::size_t i, const ExprTree& replacement) const;

  bool contains(Symbol s) const noexcept;
  /// Holds at least one prediction and one target terminal.
  bool satisfies_argument_constraint() const noexcept {
    return contains(Symbol::Pred) && contains(Symbol::Target);
  }

  /// Scalar evaluation at (y, f) with the protected primitive semantics.
  double evaluate(double y, double f) const;

  std::string to_string() const;
  /// Human-readable infix form, e.g. `(y - f)^2`.
  std::string to_infix() const;

  friend bool operator==(const ExprTree&, const ExprTree&) = default;

 private:
  std::vector<Symbol> nodes_;
};

/// Structural identity key: equal iff the trees are node-for-node identical.
inline std::string canonical_key(const ExprTree& t) { return t.to_string(); }

}  // namespace evoloss
