#include "evoloss/evolution.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <unordered_map>

#include "evoloss/errors.hpp"
#include "evoloss/seed.hpp"

namespace evoloss {

namespace {

// Seed-path tags.
constexpr std::uint64_t kBreedTag = 0xe7011;
constexpr std::uint64_t kProbeTag = 0x9be;
constexpr std::uint64_t kMetaTag = 0x3e7a;
constexpr std::uint64_t kEvalTag = 0xf17;
constexpr std::uint64_t kCandidateTag = 0xca0d;

bool candidate_before(const Candidate& a, std::size_t ia, const Candidate& b, std::size_t ib) {
  if (fitness_better(a.fitness, b.fitness)) return true;
  if (fitness_better(b.fitness, a.fitness)) return false;
  if (a.tree.size() != b.tree.size()) return a.tree.size() < b.tree.size();
  return ia < ib;
}

}  // namespace

void EvolutionConfig::validate() const {
  gp.validate();
  meta.validate();
  filters.validate();
  if (!(training.lr > 0.0)) throw UsageError("training.lr must be > 0");
  if (!(training.momentum >= 0.0 && training.momentum < 1.0)) {
    throw UsageError("training.momentum must be in [0, 1)");
  }
  if (training.batch_size < 1) throw UsageError("training.batch_size must be >= 1");
  if (!(init_sd >= 0.0)) throw UsageError("init_sd must be >= 0");
}

std::size_t resolve_workers(std::size_t requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("EVOLOSS_WORKERS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  workers = std::min(std::max<std::size_t>(workers, 1), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto body = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!error) error = std::current_exception();
        next.store(n);
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(body);
  body();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::vector<std::size_t> rank_candidates(std::span<const Candidate> population) {
  std::vector<std::size_t> order(population.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return candidate_before(population[a], a, population[b], b);
  });
  return order;
}

std::vector<ExprTree> breed(std::span<const Candidate> population, const GpConfig& cfg, Rng& rng) {
  const std::size_t N = cfg.population_size;
  std::vector<ExprTree> out;
  out.reserve(N);
  const auto order = rank_candidates(population);
  for (std::size_t e = 0; e < std::min(cfg.elite_count(), order.size()) && out.size() < N; ++e) {
    out.push_back(population[order[e]].tree);
  }

  std::vector<Scored> scored;
  scored.reserve(population.size());
  for (const auto& c : population) scored.push_back({&c.tree, c.fitness});
  std::uniform_real_distribution<double> u(0.0, 1.0);
  while (out.size() < N) {
    ExprTree a = population[select_tournament(scored, cfg.tournament_size, rng)].tree;
    ExprTree b = population[select_tournament(scored, cfg.tournament_size, rng)].tree;
    if (u(rng) < cfg.crossover_rate) std::tie(a, b) = crossover(a, b, rng, cfg);
    if (u(rng) < cfg.mutation_rate) a = mutate(a, rng, cfg);
    if (u(rng) < cfg.mutation_rate) b = mutate(b, rng, cfg);
    out.push_back(correct_constraints(a, rng, cfg.max_depth));
    if (out.size() < N) out.push_back(correct_constraints(b, rng, cfg.max_depth));
  }
  return out;
}

EvolutionResult run_evolution(const EvolutionConfig& cfg, const TaskDataset& task,
                              std::uint64_t seed, const ProgressFn& progress) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t workers = resolve_workers(cfg.workers);
  const FilterConfig& fc = cfg.filters;

  TrainConfig train = cfg.training;
  train.steps = fc.S_testing;
  train.seed = derive_seed(seed, {kEvalTag});
  train.record_losses = false;

  const Probe probe = make_probe(task, cfg.training.learner, fc.probe_batch, derive_seed(seed, {kProbeTag}));
  const TaskDataset meta_tasks[] = {task};
  const std::uint64_t meta_seed = derive_seed(seed, {kMetaTag});

  SymbolicArchive symbolic;
  GradientArchive gradients;
  Rng rng(derive_seed(seed, {kBreedTag}));

  std::vector<ExprTree> trees;
  trees.reserve(cfg.gp.population_size);
  for (std::size_t i = 0; i < cfg.gp.population_size; ++i) {
    trees.push_back(correct_constraints(random_tree(cfg.gp, rng), rng, cfg.gp.max_depth));
  }

  EvolutionResult result;
  bool have_best = false;
  for (std::size_t gen = 0; gen < cfg.gp.generations; ++gen) {
    const std::size_t N = trees.size();
    std::vector<Candidate> pop(N);
    for (std::size_t i = 0; i < N; ++i) pop[i].tree = trees[i];

    // Symbolic cache. Later copies of a tree within the generation follow
    // their first occurrence.
    std::vector<std::size_t> owner(N);
    std::vector<std::size_t> work;
    std::unordered_map<std::string, std::size_t> first;
    for (std::size_t i = 0; i < N; ++i) {
      owner[i] = i;
      if (!fc.symbolic_cache) {
        work.push_back(i);
        continue;
      }
      if (auto hit = symbolic.lookup(pop[i].tree)) {
        pop[i].fitness = hit->fitness;
        pop[i].net = hit->net;
        pop[i].disposition = Disposition::CachedSymbolic;
        continue;
      }
      auto [it, inserted] = first.emplace(canonical_key(pop[i].tree), i);
      if (inserted) {
        work.push_back(i);
      } else {
        owner[i] = it->second;
      }
    }

    // Local search, rejection and gradient keys are independent per candidate.
    std::atomic<std::size_t> optimized{0};
    parallel_for(work.size(), workers, [&](std::size_t w) {
      Candidate& c = pop[work[w]];
      const std::uint64_t cs = derive_seed(seed, {kCandidateTag, hash_text(canonical_key(c.tree))});
      if (cfg.local_search) {
        Rng init(cs);
        const auto net = MetaLossNetwork::compile(c.tree, cfg.activation, init, cfg.init_sd);
        ++optimized;
        try {
          c.net = optimize_network(net, meta_tasks, cfg.training.learner, cfg.meta, meta_seed);
        } catch (const DivergenceError&) {
          c.net = net;
          c.disposition = Disposition::Diverged;
          return;
        }
      } else {
        c.net = MetaLossNetwork::unit(c.tree, cfg.activation);
      }
      if (fc.rejection) {
        const auto r = rejection_protocol(*c.net, probe, fc);
        c.rejection_g = r.g;
        if (!r.accepted) {
          c.disposition = Disposition::Rejected;
          return;
        }
      }
      if (fc.gradient_equivalence) {
        c.gradient_key = gradient_equivalence_key(*c.net, probe, fc.sig_digits);
        if (c.gradient_key.empty()) c.disposition = Disposition::Diverged;
      }
    });

    // Gradient equivalence, decided in index order.
    std::vector<std::size_t> evaluate;
    std::unordered_map<std::string, std::size_t> key_owner;
    for (std::size_t i : work) {
      Candidate& c = pop[i];
      if (c.disposition != Disposition::Pending) continue;
      if (fc.gradient_equivalence) {
        if (auto f = gradients.lookup(c.gradient_key)) {
          c.fitness = *f;
          c.disposition = Disposition::CachedGradient;
          continue;
        }
        auto [it, inserted] = key_owner.emplace(c.gradient_key, i);
        if (!inserted) {
          owner[i] = it->second;
          c.disposition = Disposition::CachedGradient;
          continue;
        }
      }
      evaluate.push_back(i);
    }

    parallel_for(evaluate.size(), workers, [&](std::size_t w) {
      Candidate& c = pop[evaluate[w]];
      const auto r = evaluate_fitness(*c.net, task, train);
      c.fitness = r.fitness;
      c.disposition = r.diverged ? Disposition::Diverged : Disposition::Evaluated;
    });
    for (std::size_t i : evaluate) {
      result.evaluations.push_back({gen, pop[i].tree.to_string(), pop[i].fitness});
    }

    for (std::size_t i : work) {
      Candidate& c = pop[i];
      if (owner[i] != i) c.fitness = pop[owner[i]].fitness;
      if (c.disposition == Disposition::Evaluated && fc.gradient_equivalence) {
        gradients.insert(c.gradient_key, c.fitness);
      }
      if (fc.symbolic_cache) symbolic.insert(c.tree, {c.fitness, c.net});
    }
    for (std::size_t i = 0; i < N; ++i) {
      if (owner[i] != i && pop[i].disposition == Disposition::Pending) {
        pop[i].fitness = pop[owner[i]].fitness;
        pop[i].net = pop[owner[i]].net;
        pop[i].disposition = Disposition::CachedSymbolic;
      }
    }

    GenerationRecord rec;
    rec.generation = gen;
    rec.meta_optimizations = optimized.load();
    double sum = 0.0;
    std::size_t finite = 0;
    for (const auto& c : pop) {
      rec.counts.add(c.disposition);
      if (std::isfinite(c.fitness)) {
        sum += c.fitness;
        ++finite;
      }
    }
    rec.mean_fitness = finite ? sum / static_cast<double>(finite) : kWorstFitness;
    const auto order = rank_candidates(pop);
    const Candidate& gen_best = pop[order.front()];
    if (!have_best || fitness_better(gen_best.fitness, result.best.fitness)) {
      result.best = gen_best;
      have_best = true;
    }
    rec.best_fitness = result.best.fitness;
    rec.best_expression = result.best.tree.to_string();
    result.meta_optimizations += rec.meta_optimizations;
    result.history.push_back(rec);
    if (progress) progress(rec);

    if (gen + 1 < cfg.gp.generations) trees = breed(pop, cfg.gp, rng);
    result.population = std::move(pop);
  }
  if (!result.best.net) result.best.net = MetaLossNetwork::unit(result.best.tree, cfg.activation);
  result.elapsed_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

}  // namespace evoloss
