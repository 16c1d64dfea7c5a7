#include "evoloss/gp.hpp"

#include <cmath>
#include <vector>

#include "evoloss/errors.hpp"

namespace evoloss {

namespace {

template <typename T, std::size_t N>
T pick(const std::array<T, N>& items, Rng& rng) {
  return items[std::uniform_int_distribution<std::size_t>(0, N - 1)(rng)];
}

bool coin(Rng& rng, double p) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p; }

void grow_into(std::vector<Symbol>& out, int depth_left, bool full, Rng& rng) {
  if (depth_left <= 1) {
    out.push_back(pick(kTerminals, rng));
    return;
  }
  Symbol s;
  if (full) {
    s = pick(kPrimitives, rng);
  } else {
    const auto n = kPrimitives.size() + kTerminals.size();
    const auto k = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    s = k < kPrimitives.size() ? kPrimitives[k] : kTerminals[k - kPrimitives.size()];
  }
  out.push_back(s);
  for (int c = 0; c < arity(s); ++c) grow_into(out, depth_left - 1, full, rng);
}

ExprTree binary_over_arguments(Rng& rng) {
  const Symbol op = pick(kBinaryPrimitives, rng);
  if (coin(rng, 0.5)) return ExprTree({op, Symbol::Pred, Symbol::Target});
  return ExprTree({op, Symbol::Target, Symbol::Pred});
}

}  // namespace

void GpConfig::validate() const {
  auto rate = [](double v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0)) throw UsageError(std::string("gp.") + name + " must be in [0, 1]");
  };
  rate(crossover_rate, "crossover_rate");
  rate(mutation_rate, "mutation_rate");
  rate(elitism_rate, "elitism_rate");
  if (population_size < 1) throw UsageError("gp.population_size must be >= 1");
  if (generations < 1) throw UsageError("gp.generations must be >= 1");
  if (tournament_size < 1) throw UsageError("gp.tournament_size must be >= 1");
  if (max_depth < 1) throw UsageError("gp.max_depth must be >= 1");
  if (init_depth_min < 1 || init_depth_min > init_depth_max || init_depth_max > max_depth) {
    throw UsageError("gp.init_depth_min/init_depth_max must satisfy 1 <= min <= max <= max_depth");
  }
  if (mutation_depth < 1) throw UsageError("gp.mutation_depth must be >= 1");
  if (elitism_rate > 0.0 && elite_count() > population_size) {
    throw UsageError("gp.elitism_rate selects more elites than the population holds");
  }
}

std::size_t GpConfig::elite_count() const {
  // Guard against 0.05 * 20 = 1.0000000000000002 style round-up.
  const double raw = elitism_rate * static_cast<double>(population_size);
  return static_cast<std::size_t>(std::ceil(raw - 1e-9));
}

ExprTree grow_tree(int max_depth, Rng& rng) {
  std::vector<Symbol> out;
  grow_into(out, max_depth, false, rng);
  return ExprTree(std::move(out));
}

ExprTree full_tree(int depth, Rng& rng) {
  std::vector<Symbol> out;
  grow_into(out, depth, true, rng);
  return ExprTree(std::move(out));
}

ExprTree random_tree(const GpConfig& cfg, Rng& rng) {
  if (cfg.init_depth_min < 1 || cfg.init_depth_max < cfg.init_depth_min ||
      cfg.init_depth_max > cfg.max_depth) {
    throw UsageError("random_tree: init depth range must lie within [1, max_depth]");
  }
  const int depth = std::uniform_int_distribution<int>(cfg.init_depth_min, cfg.init_depth_max)(rng);
  return coin(rng, 0.5) ? full_tree(depth, rng) : grow_tree(depth, rng);
}

ExprTree correct_constraints(const ExprTree& t, Rng& rng, int max_depth) {
  if (t.satisfies_argument_constraint()) return t;
  const auto depths = t.node_depths();
  std::vector<std::size_t> slots;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (is_terminal(t.at(i)) && depths[i] < max_depth) slots.push_back(i);
  }
  if (slots.empty()) {
    // Every terminal sits on the depth bound: rewrite a subtree one level up.
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (depths[i] == max_depth - 1) slots.push_back(i);
    }
  }
  if (slots.empty()) {
    // max_depth < 2 cannot host a binary node; nothing sensible to do but
    // return the smallest conforming tree.
    return binary_over_arguments(rng);
  }
  const auto at = slots[std::uniform_int_distribution<std::size_t>(0, slots.size() - 1)(rng)];
  return t.replace_subtree(at, binary_over_arguments(rng));
}

std::pair<ExprTree, ExprTree> one_point_crossover(const ExprTree& a, const ExprTree& b, Rng& rng,
                                                  int max_depth) {
  const auto i = std::uniform_int_distribution<std::size_t>(0, a.size() - 1)(rng);
  const auto j = std::uniform_int_distribution<std::size_t>(0, b.size() - 1)(rng);
  ExprTree child_a = a.replace_subtree(i, b.subtree(j));
  ExprTree child_b = b.replace_subtree(j, a.subtree(i));
  if (child_a.depth() > max_depth) child_a = a;
  if (child_b.depth() > max_depth) child_b = b;
  return {std::move(child_a), std::move(child_b)};
}

std::pair<ExprTree, ExprTree> crossover(const ExprTree& a, const ExprTree& b, Rng& rng,
                                        const GpConfig& cfg) {
  auto [x, y] = one_point_crossover(a, b, rng, cfg.max_depth);
  ExprTree rx = correct_constraints(x, rng, cfg.max_depth);
  ExprTree ry = correct_constraints(y, rng, cfg.max_depth);
  return {std::move(rx), std::move(ry)};
}

ExprTree mutate(const ExprTree& t, Rng& rng, const GpConfig& cfg) {
  const auto i = std::uniform_int_distribution<std::size_t>(0, t.size() - 1)(rng);
  ExprTree child = t.replace_subtree(i, grow_tree(cfg.mutation_depth, rng));
  if (child.depth() > cfg.max_depth) child = t;
  return correct_constraints(child, rng, cfg.max_depth);
}

bool fitness_better(double a, double b) noexcept {
  if (std::isnan(a)) return false;
  if (std::isnan(b)) return true;
  return a < b;
}

std::size_t select_tournament(std::span<const Scored> population, std::size_t k, Rng& rng) {
  if (population.empty()) throw UsageError("select_tournament: empty population");
  if (k < 1) throw UsageError("select_tournament: tournament size must be >= 1");
  std::uniform_int_distribution<std::size_t> draw(0, population.size() - 1);
  std::size_t best = draw(rng);
  for (std::size_t r = 1; r < k; ++r) {
    const std::size_t c = draw(rng);
    const auto& cand = population[c];
    const auto& cur = population[best];
    if (fitness_better(cand.fitness, cur.fitness)) {
      best = c;
    } else if (!fitness_better(cur.fitness, cand.fitness)) {
      const auto cs = cand.tree->size(), bs = cur.tree->size();
      if (cs < bs || (cs == bs && c < best)) best = c;
    }
  }
  return best;
}

}  // namespace evoloss
