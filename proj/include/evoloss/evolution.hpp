#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "evoloss/fitness.hpp"
#include "evoloss/gp.hpp"
#include "evoloss/meta_optimizer.hpp"

namespace evoloss {

struct EvolutionConfig {
  GpConfig gp;
  MetaTrainConfig meta;
  FilterConfig filters;
  /// Base-learner training used for fitness; `steps` is taken from
  /// filters.S_testing and `seed` from the run seed.
  TrainConfig training;
  /// Off reproduces GP-LFL: networks keep phi = 1 and skip meta-training.
  bool local_search = true;
  Activation activation = Activation::Identity;
  double init_sd = 1e-3;
  /// 0 reads EVOLOSS_WORKERS, then falls back to the hardware thread count.
  std::size_t workers = 0;

  void validate() const;
};

struct GenerationRecord {
  std::size_t generation = 0;
  double best_fitness = kWorstFitness;
  double mean_fitness = kWorstFitness;  ///< over finite fitnesses
  std::string best_expression;
  FilterCounts counts;
  std::size_t meta_optimizations = 0;
};

/// One full fitness evaluation (filters passed, base learner trained).
struct EvaluationRecord {
  std::size_t generation = 0;
  std::string expression;
  double fitness = kWorstFitness;
};

struct EvolutionResult {
  Candidate best;
  std::vector<Candidate> population;
  std::vector<GenerationRecord> history;
  std::vector<EvaluationRecord> evaluations;
  std::size_t meta_optimizations = 0;
  double elapsed_seconds = 0.0;
};

using ProgressFn = std::function<void(const GenerationRecord&)>;

/// Initialize, filter, optimize, evaluate and breed for gp.generations
/// generations on one task.
EvolutionResult run_evolution(const EvolutionConfig& cfg, const TaskDataset& task,
                              std::uint64_t seed, const ProgressFn& progress = {});

/// Elites copied, remaining slots filled in pairs by tournament selection,
/// crossover and mutation. Every offspring satisfies the argument constraint.
std::vector<ExprTree> breed(std::span<const Candidate> population, const GpConfig& cfg, Rng& rng);

/// Candidate indices ordered best first (fitness, then size, then index).
std::vector<std::size_t> rank_candidates(std::span<const Candidate> population);

std::size_t resolve_workers(std::size_t requested);

/// Runs fn(0..n-1) on up to `workers` threads and rethrows the first error.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

}  // namespace evoloss
