#include <algorithm>
#include <cmath>
#include <map>

#include "doctest.h"
#include "evoloss/errors.hpp"
#include "evoloss/gp.hpp"

using namespace evoloss;

namespace {

bool well_formed(const ExprTree& t, int max_depth) {
  try {
    ExprTree copy(std::vector<Symbol>(t.nodes().begin(), t.nodes().end()));
  } catch (const UsageError&) {
    return false;
  }
  return t.depth() <= max_depth;
}

std::map<Symbol, int> multiset(const ExprTree& a, const ExprTree& b) {
  std::map<Symbol, int> m;
  for (Symbol s : a.nodes()) ++m[s];
  for (Symbol s : b.nodes()) ++m[s];
  return m;
}

ExprTree violating_tree(Rng& rng, const GpConfig& cfg) {
  for (;;) {
    ExprTree t = random_tree(cfg, rng);
    if (!t.satisfies_argument_constraint()) return t;
  }
}

}  // namespace

TEST_CASE("random_tree respects depth and arity") {
  GpConfig cfg;
  Rng rng(7);
  for (int i = 0; i < 1000; ++i) {
    const ExprTree t = random_tree(cfg, rng);
    CHECK(well_formed(t, cfg.init_depth_max));
  }
  cfg.init_depth_min = cfg.init_depth_max = 1;
  CHECK(random_tree(cfg, rng).size() == 1);
}

TEST_CASE("random_tree is deterministic per seed") {
  GpConfig cfg;
  Rng a(99), b(99);
  for (int i = 0; i < 50; ++i) CHECK(random_tree(cfg, a) == random_tree(cfg, b));
}

TEST_CASE("constraint repair") {
  Rng rng(1);
  const ExprTree ok = ExprTree::parse("(- y f)");
  CHECK(correct_constraints(ok, rng) == ok);

  const ExprTree fixed = correct_constraints(ExprTree::parse("(+ 1 1)"), rng);
  CHECK(fixed.satisfies_argument_constraint());
  const auto s = fixed.to_string();
  CHECK((s.find(" f y)") != std::string::npos || s.find(" y f)") != std::string::npos));

  GpConfig cfg;
  for (int i = 0; i < 1000; ++i) {
    const ExprTree t = violating_tree(rng, cfg);
    const ExprTree r = correct_constraints(t, rng, cfg.max_depth);
    CHECK(r.satisfies_argument_constraint());
    CHECK(r.depth() <= cfg.max_depth);
    CHECK(correct_constraints(r, rng, cfg.max_depth) == r);
  }
}

TEST_CASE("repair at the depth bound stays within max_depth") {
  Rng rng(4);
  // Depth-3 chain of constants: every terminal is on the bound.
  const ExprTree t = ExprTree::parse("(+ (- 1 1) (* -1 1))");
  for (int i = 0; i < 50; ++i) {
    const ExprTree r = correct_constraints(t, rng, 3);
    CHECK(r.satisfies_argument_constraint());
    CHECK(r.depth() <= 3);
  }
}

TEST_CASE("crossover of single terminals swaps them") {
  Rng rng(2);
  auto [a, b] = one_point_crossover(ExprTree::parse("y"), ExprTree::parse("f"), rng, 10);
  CHECK(a.to_string() == "f");
  CHECK(b.to_string() == "y");
}

TEST_CASE("one-point crossover conserves the node multiset") {
  GpConfig cfg;
  Rng rng(5);
  int checked = 0;
  for (int i = 0; i < 500; ++i) {
    const ExprTree p = random_tree(cfg, rng), q = random_tree(cfg, rng);
    auto [x, y] = one_point_crossover(p, q, rng, 100);  // guard cannot fire
    CHECK(multiset(p, q) == multiset(x, y));
    ++checked;
  }
  CHECK(checked == 500);
}

TEST_CASE("crossover and mutation keep invariants") {
  GpConfig cfg;
  Rng rng(8);
  ExprTree deep = ExprTree::terminal(Symbol::Pred);
  for (int d = 1; d < cfg.max_depth; ++d) {
    std::vector<Symbol> n{Symbol::Add};
    n.insert(n.end(), deep.nodes().begin(), deep.nodes().end());
    n.push_back(Symbol::Target);
    deep = ExprTree(std::move(n));
  }
  REQUIRE(deep.depth() == cfg.max_depth);
  for (int i = 0; i < 300; ++i) {
    auto [x, y] = crossover(deep, deep, rng, cfg);
    CHECK(x.depth() <= cfg.max_depth);
    CHECK(y.depth() <= cfg.max_depth);
  }
  for (int i = 0; i < 1000; ++i) {
    const ExprTree t = correct_constraints(random_tree(cfg, rng), rng, cfg.max_depth);
    const ExprTree m = mutate(t, rng, cfg);
    CHECK(well_formed(m, cfg.max_depth));
    CHECK(m.satisfies_argument_constraint());
    auto [a, b] = crossover(t, m, rng, cfg);
    CHECK(a.satisfies_argument_constraint());
    CHECK(b.satisfies_argument_constraint());
    CHECK(well_formed(a, cfg.max_depth));
  }
}

TEST_CASE("mutation of a single terminal") {
  GpConfig cfg;
  Rng a(3), b(3);
  for (int i = 0; i < 100; ++i) {
    const ExprTree m = mutate(ExprTree::parse("1"), a, cfg);
    CHECK(m.satisfies_argument_constraint());
    CHECK(m.depth() <= 4);  // grown subtree (<=3) plus a possible repair level
    CHECK(m == mutate(ExprTree::parse("1"), b, cfg));
  }
}

TEST_CASE("tournament selection") {
  Rng rng(13);
  const ExprTree small = ExprTree::parse("y"), big = ExprTree::parse("(+ y f)");
  CHECK_THROWS_AS(select_tournament({}, 3, rng), UsageError);

  std::vector<Scored> one{{&big, 0.5}};
  CHECK(select_tournament(one, 3, rng) == 0);

  std::vector<Scored> pop{{&big, 0.9}, {&big, 0.1}, {&big, 0.5}, {&big, 0.7}};
  std::vector<int> hits(4, 0);
  for (int i = 0; i < 10000; ++i) ++hits[select_tournament(pop, 3, rng)];
  CHECK(hits[1] > hits[2]);
  CHECK(hits[2] > hits[3]);
  CHECK(hits[3] > hits[0]);
  // With replacement the best is drawn with probability 1 - (3/4)^3.
  CHECK(hits[1] < 10000);
  CHECK(std::fabs(hits[1] / 10000.0 - (1.0 - std::pow(0.75, 3))) < 0.03);

  // Ties: fewer nodes first, then earlier index.
  std::vector<Scored> tied{{&big, 0.3}, {&small, 0.3}, {&small, 0.3}};
  std::vector<int> th(3, 0);
  for (int i = 0; i < 3000; ++i) ++th[select_tournament(tied, 3, rng)];
  CHECK(th[1] > th[2]);
  CHECK(th[0] < th[2]);

  const double inf = std::numeric_limits<double>::infinity();
  CHECK(fitness_better(1e300, inf));
  CHECK_FALSE(fitness_better(inf, 1e300));
  CHECK(fitness_better(inf, std::nan("")));
}

TEST_CASE("config validation and elite count") {
  GpConfig cfg;
  CHECK(cfg.elite_count() == 2);
  CHECK_NOTHROW(cfg.validate());
  cfg.crossover_rate = 1.2;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("gp.crossover_rate"), UsageError);
  cfg = GpConfig{};
  cfg.population_size = 20;
  CHECK(cfg.elite_count() == 1);
}
