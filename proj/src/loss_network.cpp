#include "evoloss/loss_network.hpp"

#include <random>

#include "evoloss/errors.hpp"
#include "json.hpp"

namespace evoloss {

namespace {

using json = nlohmann::json;

Var terminal_value(Symbol s, const Var& y, const Var& f) {
  switch (s) {
    case Symbol::Pred:
      return f;
    case Symbol::Target:
      return y;
    case Symbol::One:
      return Var(1.0);
    default:
      return Var(-1.0);
  }
}

}  // namespace

std::string_view activation_name(Activation a) noexcept {
  return a == Activation::Softplus ? "softplus" : "identity";
}

Activation activation_from_name(std::string_view name) {
  if (name == "identity") return Activation::Identity;
  if (name == "softplus") return Activation::Softplus;
  throw UsageError("unknown activation '" + std::string(name) + "' (identity|softplus)");
}

MetaLossNetwork::MetaLossNetwork(ExprTree tree, Activation activation, std::vector<double> weights)
    : tree_(std::move(tree)), activation_(activation), weights_(std::move(weights)) {
  if (!tree_.satisfies_argument_constraint()) {
    throw UsageError("loss network: expression '" + tree_.to_string() +
                     "' must contain both y and f");
  }
  if (weights_.size() != edge_count()) {
    throw UsageError("loss network: expected " + std::to_string(edge_count()) + " weights, got " +
                     std::to_string(weights_.size()));
  }
}

MetaLossNetwork MetaLossNetwork::compile(const ExprTree& tree, Activation activation, Rng& rng,
                                         double init_sd) {
  std::normal_distribution<double> n(1.0, init_sd);
  std::vector<double> w(tree.size() - 1);
  for (auto& v : w) v = n(rng);
  return MetaLossNetwork(tree, activation, std::move(w));
}

MetaLossNetwork MetaLossNetwork::unit(const ExprTree& tree, Activation activation) {
  return MetaLossNetwork(tree, activation, std::vector<double>(tree.size() - 1, 1.0));
}

void MetaLossNetwork::set_weights(std::vector<double> w) {
  if (w.size() != edge_count()) {
    throw UsageError("loss network: expected " + std::to_string(edge_count()) + " weights, got " +
                     std::to_string(w.size()));
  }
  weights_ = std::move(w);
}

MetaLossNetwork MetaLossNetwork::with_weights(std::vector<double> w) const {
  MetaLossNetwork copy = *this;
  copy.set_weights(std::move(w));
  return copy;
}

std::vector<Var> MetaLossNetwork::weight_leaves() const {
  std::vector<Var> out;
  out.reserve(weights_.size());
  for (double w : weights_) out.emplace_back(w, true);
  return out;
}

void MetaLossNetwork::set_meta_json(std::string text) {
  const json parsed = json::parse(text, nullptr, false);
  if (parsed.is_discarded() || !parsed.is_object()) {
    throw UsageError("loss network: meta must be a JSON object");
  }
  meta_json_ = parsed.dump();
}

Var MetaLossNetwork::elementwise(const Var& y, const Var& f, std::span<const Var> weights) const {
  if (y.shape() != f.shape()) {
    throw UsageError("loss network: y " + shape_string(y.shape()) + " and f " +
                     shape_string(f.shape()) + " differ in shape");
  }
  if (weights.size() != edge_count()) throw UsageError("loss network: weight count mismatch");

  // Reverse prefix order: children are on the stack when their parent is
  // reached, first child on top.
  const auto nodes = tree_.nodes();
  std::vector<Var> stack;
  stack.reserve(nodes.size());
  for (std::size_t k = nodes.size(); k-- > 0;) {
    const Symbol s = nodes[k];
    Var v;
    if (is_terminal(s)) {
      v = terminal_value(s, y, f);
    } else if (arity(s) == 1) {
      const Var a = stack.back();
      stack.pop_back();
      v = apply_primitive(s, std::span<const Var>(&a, 1));
    } else {
      std::array<Var, 2> args;
      args[0] = stack.back();
      stack.pop_back();
      args[1] = stack.back();
      stack.pop_back();
      v = apply_primitive(s, args);
    }
    if (k > 0) v = mul(v, weights[k - 1]);
    stack.push_back(std::move(v));
  }
  Var out = stack.back();
  if (activation_ == Activation::Softplus) out = softplus(out);
  return out;
}

Var MetaLossNetwork::forward(const Var& y, const Var& f, std::span<const Var> weights) const {
  return mean(elementwise(y, f, weights));
}

Var MetaLossNetwork::forward(const Var& y, const Var& f) const {
  std::vector<Var> w;
  w.reserve(weights_.size());
  for (double v : weights_) w.emplace_back(v);
  return forward(y, f, w);
}

std::string serialize(const MetaLossNetwork& net) {
  json doc;
  doc["version"] = MetaLossNetwork::kFormatVersion;
  doc["expression"] = net.tree().to_string();
  doc["weights"] = net.weights();
  doc["activation"] = std::string(activation_name(net.activation()));
  doc["meta"] = json::parse(net.meta_json());
  return doc.dump(2) + "\n";
}

MetaLossNetwork deserialize(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("loss document: ") + e.what(), e.byte);
  }
  if (!doc.is_object()) throw ParseError("loss document: top level must be an object", 0);
  auto field = [&](const char* name) -> const json& {
    auto it = doc.find(name);
    if (it == doc.end()) throw ParseError(std::string("loss document: missing field '") + name + "'", 0);
    return *it;
  };
  const json& version = field("version");
  if (!version.is_number_integer()) throw ParseError("loss document: 'version' must be an integer", 0);
  if (version.get<int>() != MetaLossNetwork::kFormatVersion) {
    throw UnsupportedVersionError("loss document: unsupported version " +
                                  std::to_string(version.get<int>()) + " (expected " +
                                  std::to_string(MetaLossNetwork::kFormatVersion) + ")");
  }
  const json& expr = field("expression");
  if (!expr.is_string()) throw ParseError("loss document: 'expression' must be a string", 0);
  ExprTree tree = ExprTree::parse(expr.get<std::string>());

  const json& weights = field("weights");
  if (!weights.is_array()) throw ParseError("loss document: 'weights' must be an array", 0);
  std::vector<double> w;
  for (const auto& v : weights) {
    if (!v.is_number()) throw ParseError("loss document: weights must be numbers", w.size());
    w.push_back(v.get<double>());
  }
  if (w.size() != tree.size() - 1) {
    throw ParseError("loss document: expression has " + std::to_string(tree.size() - 1) +
                         " edges but " + std::to_string(w.size()) + " weights were given",
                     w.size());
  }
  Activation act = Activation::Identity;
  if (auto it = doc.find("activation"); it != doc.end()) {
    if (!it->is_string()) throw ParseError("loss document: 'activation' must be a string", 0);
    try {
      act = activation_from_name(it->get<std::string>());
    } catch (const UsageError& e) {
      throw ParseError(std::string("loss document: ") + e.what(), 0);
    }
  }
  if (!tree.satisfies_argument_constraint()) {
    throw ParseError("loss document: expression must contain both y and f", 0);
  }
  MetaLossNetwork net = MetaLossNetwork::unit(tree, act).with_weights(std::move(w));
  if (auto it = doc.find("meta"); it != doc.end()) {
    if (!it->is_object()) throw ParseError("loss document: 'meta' must be an object", 0);
    net.set_meta_json(it->dump());
  }
  return net;
}

}  // namespace evoloss
