#include "evoloss/expr_tree.hpp"

#include <algorithm>
#include <cctype>

#include "evoloss/errors.hpp"

namespace evoloss {

namespace {

/// Returns one past the end of the subtree starting at `i`, or npos when
/// the sequence runs out first.
std::size_t scan_subtree(std::span<const Symbol> nodes, std::size_t i) {
  std::size_t pending = 1;
  while (pending > 0) {
    if (i >= nodes.size()) return std::string::npos;
    pending += static_cast<std::size_t>(arity(nodes[i])) - 1;
    ++i;
  }
  return i;
}

struct Token {
  std::string_view text;
  std::size_t pos;
};

std::vector<Token> tokenize(std::string_view s) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < s.size()) {
    const char c = s[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
    } else if (c == '(' || c == ')') {
      out.push_back({s.substr(i, 1), i});
      ++i;
    } else {
      const std::size_t start = i;
      while (i < s.size() && !std::isspace(static_cast<unsigned char>(s[i])) && s[i] != '(' &&
             s[i] != ')') {
        ++i;
      }
      out.push_back({s.substr(start, i - start), start});
    }
  }
  return out;
}

class Parser {
 public:
  explicit Parser(std::string_view text) : text_(text), tokens_(tokenize(text)) {}

  std::vector<Symbol> run() {
    std::vector<Symbol> out;
    expr(out);
    if (next_ != tokens_.size()) fail("unexpected trailing token", tokens_[next_].pos);
    return out;
  }

 private:
  [[noreturn]] void fail(const std::string& what, std::size_t pos) const {
    throw ParseError("expression: " + what, pos);
  }

  const Token& take() {
    if (next_ >= tokens_.size()) fail("unexpected end of expression", text_.size());
    return tokens_[next_++];
  }

  Symbol symbol(const Token& t) const {
    auto s = symbol_from_token(t.text);
    if (!s) fail("unknown token '" + std::string(t.text) + "'", t.pos);
    return *s;
  }

  void expr(std::vector<Symbol>& out) {
    const Token& t = take();
    if (t.text == ")") fail("unexpected ')'", t.pos);
    if (t.text != "(") {
      const Symbol s = symbol(t);
      if (!is_terminal(s)) fail("primitive '" + std::string(t.text) + "' needs parentheses", t.pos);
      out.push_back(s);
      return;
    }
    const Token& head = take();
    const Symbol s = symbol(head);
    if (is_terminal(s)) fail("terminal '" + std::string(head.text) + "' in operator position", head.pos);
    out.push_back(s);
    for (int k = 0; k < arity(s); ++k) {
      if (next_ < tokens_.size() && tokens_[next_].text == ")") {
        fail("'" + std::string(head.text) + "' expects " + std::to_string(arity(s)) + " arguments",
             tokens_[next_].pos);
      }
      expr(out);
    }
    const Token& close = take();
    if (close.text != ")") fail("expected ')'", close.pos);
  }

  std::string_view text_;
  std::vector<Token> tokens_;
  std::size_t next_ = 0;
};

std::string infix(std::span<const Symbol> nodes, std::size_t& i) {
  const Symbol s = nodes[i++];
  switch (arity(s)) {
    case 0:
      return std::string(token(s));
    case 1: {
      std::string a = infix(nodes, i);
      if (s == Symbol::Square) return a + "^2";
      return std::string(token(s)) + "(" + a + ")";
    }
    default: {
      std::string a = infix(nodes, i);
      std::string b = infix(nodes, i);
      if (s == Symbol::Add || s == Symbol::Sub || s == Symbol::Mul) {
        return "(" + a + " " + std::string(token(s)) + " " + b + ")";
      }
      return std::string(token(s)) + "(" + a + ", " + b + ")";
    }
  }
}

}  // namespace

ExprTree::ExprTree(std::vector<Symbol> prefix) : nodes_(std::move(prefix)) {
  if (nodes_.empty()) throw UsageError("expression tree must have at least one node");
  if (scan_subtree(nodes_, 0) != nodes_.size()) {
    throw UsageError("symbol sequence is not a single well-formed prefix tree");
  }
}

ExprTree ExprTree::parse(std::string_view text) { return ExprTree(Parser(text).run()); }

std::vector<int> ExprTree::node_depths() const {
  std::vector<int> depths(nodes_.size());
  // Stack of remaining child slots per open ancestor.
  std::vector<std::pair<int, int>> open;  // (depth, children still expected)
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const int d = open.empty() ? 1 : open.back().first + 1;
    depths[i] = d;
    if (!open.empty() && --open.back().second == 0) open.pop_back();
    if (arity(nodes_[i]) > 0) open.emplace_back(d, arity(nodes_[i]));
    // A node opened above may sit on top of an exhausted parent; the
    // decrement happened before pushing, so order is consistent.
  }
  return depths;
}

int ExprTree::depth() const {
  const auto d = node_depths();
  return *std::max_element(d.begin(), d.end());
}

std::size_t ExprTree::subtree_end(std::size_t i) const {
  if (i >= nodes_.size()) throw UsageError("subtree index out of range");
  return scan_subtree(nodes_, i);
}

ExprTree ExprTree::subtree(std::size_t i) const {
  const auto end = subtree_end(i);
  return ExprTree(std::vector<Symbol>(nodes_.begin() + static_cast<std::ptrdiff_t>(i),
                                      nodes_.begin() + static_cast<std::ptrdiff_t>(end)));
}

ExprTree ExprTree::replace_subtree(std::size_t i, const ExprTree& replacement) const {
  const auto end = subtree_end(i);
  std::vector<Symbol> out;
  out.reserve(nodes_.size() - (end - i) + replacement.size());
  out.insert(out.end(), nodes_.begin(), nodes_.begin() + static_cast<std::ptrdiff_t>(i));
  out.insert(out.end(), replacement.nodes_.begin(), replacement.nodes_.end());
  out.insert(out.end(), nodes_.begin() + static_cast<std::ptrdiff_t>(end), nodes_.end());
  return ExprTree(std::move(out));
}

bool ExprTree::contains(Symbol s) const noexcept {
  return std::find(nodes_.begin(), nodes_.end(), s) != nodes_.end();
}

double ExprTree::evaluate(double y, double f) const {
  std::vector<double> stack;
  stack.reserve(nodes_.size());
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    const Symbol s = *it;
    switch (arity(s)) {
      case 0:
        stack.push_back(s == Symbol::Pred     ? f
                        : s == Symbol::Target ? y
                        : s == Symbol::One    ? 1.0
                                              : -1.0);
        break;
      case 1:
        stack.back() = apply_unary(s, stack.back());
        break;
      default: {
        const double a = stack.back();
        stack.pop_back();
        const double b = stack.back();
        stack.back() = apply_binary(s, a, b);
      }
    }
  }
  return stack.back();
}

std::string ExprTree::to_string() const {
  std::string out;
  std::vector<int> remaining;  // open parentheses awaiting children
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!remaining.empty()) out += ' ';
    const Symbol s = nodes_[i];
    if (arity(s) > 0) {
      out += '(';
      out += token(s);
      remaining.push_back(arity(s));
      continue;
    }
    out += token(s);
    while (!remaining.empty() && --remaining.back() == 0) {
      out += ')';
      remaining.pop_back();
    }
  }
  return out;
}

std::string ExprTree::to_infix() const {
  std::size_t i = 0;
  return infix(nodes_, i);
}

}  // namespace evoloss
