#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>

#include "evoloss/learner.hpp"
#include "evoloss/loss_network.hpp"

namespace evoloss {

/// Sorts after every finite fitness.
inline constexpr double kWorstFitness = std::numeric_limits<double>::infinity();

enum class Disposition { Pending, Evaluated, CachedSymbolic, CachedGradient, Rejected, Diverged };

std::string_view disposition_name(Disposition d) noexcept;

struct Candidate {
  ExprTree tree = ExprTree::terminal(Symbol::Pred);
  std::optional<MetaLossNetwork> net;
  double fitness = kWorstFitness;
  Disposition disposition = Disposition::Pending;
  double rejection_g = 0.0;
  std::string gradient_key;
};

struct FilterConfig {
  bool symbolic_cache = true;
  bool rejection = true;
  bool gradient_equivalence = true;
  std::size_t probe_batch = 256;  ///< B
  std::size_t probe_steps = 50;
  double probe_lr = 0.05;
  int sig_digits = 2;
  std::size_t S_testing = 500;

  void validate() const;
};

/// Canonical key -> fitness (and the network that earned it).
class SymbolicArchive {
 public:
  struct Entry {
    double fitness = kWorstFitness;
    std::optional<MetaLossNetwork> net;
  };

  std::optional<Entry> lookup(const ExprTree& t) const;
  void insert(const ExprTree& t, Entry e);
  std::size_t size() const;

 private:
  mutable std::shared_mutex mu_;
  std::unordered_map<std::string, Entry> map_;
};

/// Gradient-equivalence key -> fitness.
class GradientArchive {
 public:
  std::optional<double> lookup(const std::string& key) const;
  void insert(const std::string& key, double fitness);
  std::size_t size() const;

 private:
  mutable std::shared_mutex mu_;
  std::unordered_map<std::string, double> map_;
};

/// B labelled training samples with the raw outputs of an untrained learner.
/// Frozen for a whole run.
struct Probe {
  TaskKind kind = TaskKind::Classification;
  Tensor outputs;  ///< (B x out) logits or regression outputs
  Batch batch;

  std::size_t size() const noexcept { return outputs.rows(); }
};

/// Draws min(B, |train|) training rows without replacement and a fresh learner
/// from `seed`.
Probe make_probe(const TaskDataset& task, const LearnerSpec& learner, std::size_t B,
                 std::uint64_t seed);

struct RejectionResult {
  bool accepted = false;
  double g = 0.0;
  bool non_finite = false;
};

/// Optimizes the probe outputs directly with `net` (softmax re-applied each
/// step for classification), then g = sum_b [L_P(before) - L_P(after)].
/// Rejects when g <= 0 or anything becomes non-finite.
RejectionResult rejection_protocol(const MetaLossNetwork& net, const Probe& probe,
                                   const FilterConfig& cfg);

/// Per-sample l2 norms of the loss gradient wrt the predictions, each printed
/// to `sig_digits` significant digits and joined with ','. Empty when any norm
/// is non-finite.
std::string gradient_equivalence_key(const MetaLossNetwork& net, const Probe& probe,
                                     int sig_digits = 2);

struct FitnessResult {
  double fitness = kWorstFitness;
  bool diverged = false;
  TrainResult train;
};

/// Trains a fresh learner for `steps` steps with `loss`; fitness is the
/// validation metric, or the worst value on divergence.
FitnessResult evaluate_fitness(const LossFn& loss, const TaskDataset& task, TrainConfig train);
FitnessResult evaluate_fitness(const MetaLossNetwork& net, const TaskDataset& task, TrainConfig train);

struct FilterCounts {
  std::size_t cached_symbolic = 0;
  std::size_t rejected = 0;
  std::size_t cached_gradient = 0;
  std::size_t evaluated = 0;
  std::size_t diverged = 0;

  void add(Disposition d) noexcept;
  std::size_t total() const noexcept {
    return cached_symbolic + rejected + cached_gradient + evaluated + diverged;
  }
};

/// Columns: generation, cached_symbolic, rejected, cached_gradient, evaluated, diverged.
std::string filter_stats_csv(std::span<const FilterCounts> per_generation);

}  // namespace evoloss
