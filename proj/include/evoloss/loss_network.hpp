#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "evoloss/autodiff.hpp"
#include "evoloss/expr_tree.hpp"
#include "evoloss/gp.hpp"

namespace evoloss {

enum class Activation { Identity, Softplus };

std::string_view activation_name(Activation a) noexcept;
/// Throws UsageError on an unknown name.
Activation activation_from_name(std::string_view name);

/// Differentiable, edge-weighted compilation of an expression tree.
///
/// Every non-root node owns the weight of the edge to its parent; the weight
/// for prefix node i (i >= 1) is stored at index i - 1. A child's value is
/// multiplied by its edge weight before it enters the parent primitive. The
/// root value passes through the output activation and is averaged over all
/// (y, f) element pairs.
class MetaLossNetwork {
 public:
  static constexpr int kFormatVersion = 1;

  /// Weights drawn i.i.d. from N(1, `init_sd`). Throws UsageError when the
  /// tree lacks a prediction or target terminal.
  static MetaLossNetwork compile(const ExprTree& tree, Activation activation, Rng& rng,
                                 double init_sd = 1e-3);
  /// Same topology with every weight set to 1.
  static MetaLossNetwork unit(const ExprTree& tree, Activation activation = Activation::Identity);

  const ExprTree& tree() const noexcept { return tree_; }
  Activation activation() const noexcept { return activation_; }
  std::size_t edge_count() const noexcept { return tree_.size() - 1; }

  const std::vector<double>& weights() const noexcept { return weights_; }
  void set_weights(std::vector<double> w);
  MetaLossNetwork with_weights(std::vector<double> w) const;

  /// Weights as fresh leaf Vars that require gradients.
  std::vector<Var> weight_leaves() const;

  /// Mean elementwise loss using the stored weights as constants.
  Var forward(const Var& y, const Var& f) const;
  /// Same, with caller-supplied weight Vars (one scalar per edge) so that
  /// gradients flow into them.
  Var forward(const Var& y, const Var& f, std::span<const Var> weights) const;
  /// Elementwise loss before the mean reduction.
  Var elementwise(const Var& y, const Var& f, std::span<const Var> weights) const;

  /// Free-form metadata carried through serialization (JSON text).
  const std::string& meta_json() const noexcept { return meta_json_; }
  void set_meta_json(std::string json);

 private:
  MetaLossNetwork(ExprTree tree, Activation activation, std::vector<double> weights);

  ExprTree tree_;
  Activation activation_;
  std::vector<double> weights_;
  std::string meta_json_ = "{}";
};

/// Loss document: {"version", "expression", "weights", "activation", "meta"}.
std::string serialize(const MetaLossNetwork& net);
/// Throws ParseError (malformed text, unknown token, wrong weight count) or
/// UnsupportedVersionError.
MetaLossNetwork deserialize(std::string_view text);

}  // namespace evoloss
