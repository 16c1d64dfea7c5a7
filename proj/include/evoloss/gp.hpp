#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <utility>

#include "evoloss/expr_tree.hpp"

namespace evoloss {

using Rng = std::mt19937_64;

struct GpConfig {
  std::size_t population_size = 25;
  std::size_t generations = 50;
  double crossover_rate = 0.7;
  double mutation_rate = 0.25;
  double elitism_rate = 0.05;
  std::size_t tournament_size = 3;
  int init_depth_min = 2;
  int init_depth_max = 5;
  int max_depth = 10;
  /// Depth bound of the subtree grown by uniform mutation.
  int mutation_depth = 3;

  /// Throws UsageError naming the offending field.
  void validate() const;
  /// ceil(elitism_rate * population_size).
  std::size_t elite_count() const;
};

/// Ramped half-and-half: depth drawn from the init range, then grow or full.
ExprTree random_tree(const GpConfig& cfg, Rng& rng);
/// Grow method bounded by `max_depth`.
ExprTree grow_tree(int max_depth, Rng& rng);
ExprTree full_tree(int depth, Rng& rng);

/// Returns `t` unchanged when it already holds both f and y. Otherwise a
/// random terminal (one with room below `max_depth`) becomes a random binary
/// primitive over {f, y} in random order.
ExprTree correct_constraints(const ExprTree& t, Rng& rng, int max_depth = 10);

/// Swaps uniformly chosen subtrees. An offspring deeper than `max_depth` is
/// replaced by its own parent. No constraint repair.
std::pair<ExprTree, ExprTree> one_point_crossover(const ExprTree& a, const ExprTree& b, Rng& rng,
                                                  int max_depth);
/// One-point crossover followed by constraint repair of both offspring.
std::pair<ExprTree, ExprTree> crossover(const ExprTree& a, const ExprTree& b, Rng& rng,
                                        const GpConfig& cfg);
/// Uniform-node subtree replacement by a grown subtree, depth guard, repair.
ExprTree mutate(const ExprTree& t, Rng& rng, const GpConfig& cfg);

struct Scored {
  const ExprTree* tree;
  double fitness;
};

/// Index of the best of `k` uniform draws with replacement (lower fitness
/// wins; ties go to fewer nodes, then to the earlier index).
std::size_t select_tournament(std::span<const Scored> population, std::size_t k, Rng& rng);

/// Total order used everywhere a "better candidate" is needed. NaN and the
/// worst-case sentinel sort last.
bool fitness_better(double a, double b) noexcept;

}  // namespace evoloss
