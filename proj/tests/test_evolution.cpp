#include <algorithm>
#include <map>
#include <set>

#include "doctest.h"
#include "evoloss/config.hpp"
#include "evoloss/errors.hpp"
#include "evoloss/evolution.hpp"
#include "json.hpp"

using namespace evoloss;

namespace {

EvolutionConfig small_config() {
  EvolutionConfig cfg;
  cfg.gp.population_size = 8;
  cfg.gp.generations = 3;
  cfg.meta.S_meta = 10;
  cfg.filters.S_testing = 80;
  cfg.filters.probe_batch = 64;
  cfg.workers = 1;
  return cfg;
}

std::vector<Candidate> scored_population(std::size_t n, Rng& rng) {
  GpConfig gp;
  std::vector<Candidate> pop(n);
  for (std::size_t i = 0; i < n; ++i) {
    pop[i].tree = correct_constraints(random_tree(gp, rng), rng);
    pop[i].fitness = static_cast<double>((i * 7) % n) / static_cast<double>(n);
  }
  return pop;
}

}  // namespace

TEST_CASE("breeding") {
  Rng rng(3);
  const auto pop = scored_population(25, rng);
  GpConfig cfg;
  CHECK(cfg.elite_count() == 2);

  Rng a(11), b(11);
  const auto kids = breed(pop, cfg, a);
  CHECK(kids.size() == 25);
  CHECK(kids == breed(pop, cfg, b));
  const auto order = rank_candidates(pop);
  CHECK(kids[0] == pop[order[0]].tree);
  CHECK(kids[1] == pop[order[1]].tree);
  for (const auto& k : kids) {
    CHECK(k.satisfies_argument_constraint());
    CHECK(k.depth() <= cfg.max_depth);
  }

  cfg.crossover_rate = 0.0;
  cfg.mutation_rate = 0.0;
  std::set<std::string> parents;
  for (const auto& c : pop) parents.insert(c.tree.to_string());
  for (const auto& k : breed(pop, cfg, a)) CHECK(parents.count(k.to_string()) == 1);
}

TEST_CASE("parallel_for covers every index and propagates errors") {
  std::vector<int> hits(100, 0);
  parallel_for(100, 4, [&](std::size_t i) { hits[i] += 1; });
  CHECK(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }));
  CHECK_THROWS_AS(parallel_for(10, 3, [](std::size_t i) { if (i == 5) throw UsageError("boom"); }),
                  UsageError);
  CHECK(resolve_workers(3) == 3);
}

TEST_CASE("seeded run on a regression task") {
  const TaskDataset ds = synth_linear_regression(3, 0.2, 200, 1);
  auto cfg = small_config();
  const auto res = run_evolution(cfg, ds, 7);
  REQUIRE(res.history.size() == 3);
  for (std::size_t g = 1; g < res.history.size(); ++g) {
    CHECK(res.history[g].best_fitness <= res.history[g - 1].best_fitness);
  }
  CHECK(res.population.size() == cfg.gp.population_size);
  for (const auto& c : res.population) {
    CHECK(c.tree.satisfies_argument_constraint());
    CHECK(c.tree.depth() <= cfg.gp.max_depth);
    CHECK(c.disposition != Disposition::Pending);
    if (c.disposition == Disposition::Rejected || c.disposition == Disposition::Diverged) {
      CHECK(c.fitness == kWorstFitness);
    }
  }
  CHECK(res.meta_optimizations > 0);
  REQUIRE(res.best.net.has_value());
  CHECK(res.best.fitness == res.history.back().best_fitness);
}

TEST_CASE("GP-LFL mode never meta-trains") {
  const TaskDataset ds = synth_blobs(2, 2, 4.0, 200, 1);
  auto cfg = small_config();
  cfg.local_search = false;
  const auto res = run_evolution(cfg, ds, 1);
  CHECK(res.meta_optimizations == 0);
  for (const auto& h : res.history) CHECK(h.meta_optimizations == 0);
  for (const auto& c : res.population) {
    REQUIRE(c.net.has_value());
    for (double w : c.net->weights()) CHECK(w == 1.0);
  }
}

TEST_CASE("elites survive into the next generation") {
  const TaskDataset ds = synth_blobs(2, 2, 4.0, 200, 2);
  auto cfg = small_config();
  cfg.gp.generations = 2;
  const auto two = run_evolution(cfg, ds, 5);
  cfg.gp.generations = 3;
  const auto three = run_evolution(cfg, ds, 5);
  const auto order = rank_candidates(two.population);
  const std::string elite = two.population[order.front()].tree.to_string();
  bool found = false;
  for (const auto& c : three.population) found = found || c.tree.to_string() == elite;
  CHECK(found);
  CHECK(three.history[2].best_fitness <= two.history[1].best_fitness);
}

TEST_CASE("disabling filters leaves evaluated fitnesses unchanged") {
  const TaskDataset ds = synth_blobs(2, 2, 4.0, 200, 3);
  auto cfg = small_config();
  const auto on = run_evolution(cfg, ds, 11);
  cfg.filters.symbolic_cache = cfg.filters.rejection = cfg.filters.gradient_equivalence = false;
  const auto off = run_evolution(cfg, ds, 11);

  std::map<std::string, double> off_fitness;
  for (const auto& e : off.evaluations) off_fitness.emplace(e.expression, e.fitness);
  std::size_t shared = 0;
  for (const auto& e : on.evaluations) {
    auto it = off_fitness.find(e.expression);
    if (it == off_fitness.end()) continue;
    ++shared;
    INFO(e.expression);
    CHECK(std::bit_cast<std::uint64_t>(it->second) == std::bit_cast<std::uint64_t>(e.fitness));
  }
  CHECK(shared > 0);
  std::size_t evaluated_on = 0;
  for (const auto& h : on.history) evaluated_on += h.counts.evaluated;
  CHECK(evaluated_on < off.evaluations.size());
}

TEST_CASE("fewer candidates need full evaluation as the archive fills") {
  const TaskDataset ds = synth_blobs(2, 2, 4.0, 200, 1);
  auto cfg = small_config();
  cfg.gp.population_size = 12;
  cfg.gp.generations = 10;
  const auto res = run_evolution(cfg, ds, 2);
  const auto frac = [&](std::size_t g) {
    return static_cast<double>(res.history[g].counts.evaluated) / static_cast<double>(cfg.gp.population_size);
  };
  for (const auto& h : res.history) CHECK(h.counts.total() == cfg.gp.population_size);
  CHECK(frac(9) < frac(0));
}

TEST_CASE("manifest is reproducible apart from timing") {
  const TaskDataset ds = synth_blobs(2, 2, 4.0, 200, 1);
  RunConfig rc;
  rc.evolution = small_config();
  rc.evolution.gp.generations = 2;
  rc.seed = 4;
  auto strip = [](const std::string& text) {
    auto j = nlohmann::json::parse(text);
    j.erase("timing");
    return j.dump();
  };
  const auto a = run_manifest(rc, ds, run_evolution(rc.evolution, ds, rc.seed));
  const auto b = run_manifest(rc, ds, run_evolution(rc.evolution, ds, rc.seed));
  CHECK(strip(a) == strip(b));
  const auto j = nlohmann::json::parse(a);
  CHECK(j["mode"] == "evomal");
  CHECK(j["history"].size() == 2);
  CHECK(j.contains("timing"));

  rc.evolution.local_search = false;
  const auto lfl = nlohmann::json::parse(run_manifest(rc, ds, run_evolution(rc.evolution, ds, rc.seed)));
  CHECK(lfl["mode"] == "gp-lfl");
  CHECK(lfl["local_search"] == false);
}

TEST_CASE("run config parsing") {
  const RunConfig d = parse_run_config("{}");
  CHECK(d.evolution.gp.population_size == 25);
  CHECK(d.evolution.gp.generations == 50);
  CHECK(d.evolution.meta.S_meta == 250);
  CHECK(d.evolution.meta.S_base == 1);
  CHECK(d.evolution.filters.S_testing == 500);

  const RunConfig c = parse_run_config(R"({"seed": 3, "gp": {"population_size": 12},
      "training": {"learner": {"kind": "linear"}}, "local_search": false})");
  CHECK(c.seed == 3);
  CHECK(c.evolution.gp.population_size == 12);
  CHECK(c.evolution.training.learner.kind == LearnerKind::Linear);
  CHECK_FALSE(c.evolution.local_search);

  const RunConfig round = parse_run_config(run_config_json(c));
  CHECK(run_config_json(round) == run_config_json(c));

  auto message = [](const char* text) {
    try {
      parse_run_config(text);
    } catch (const UsageError& e) {
      return std::string(e.what());
    } catch (const ParseError& e) {
      return std::string("parse: ") + e.what();
    }
    return std::string();
  };
  CHECK(message(R"({"gp": {"population_size": 0}})").find("gp.population_size") != std::string::npos);
  CHECK(message(R"({"gp": {"populaton_size": 5}})").find("gp.populaton_size") != std::string::npos);
  CHECK(message(R"({"meta": {"alpha": "fast"}})").find("meta.alpha") != std::string::npos);
  CHECK(message(R"({"meta": {"eta": 0}})").find("meta.eta") != std::string::npos);
  CHECK(message(R"({"training": {"momentum": 1.5}})").find("training.momentum") != std::string::npos);
  CHECK(message(R"({"training": {"learner": {"hidden": [0]}}})").find("training.learner.hidden") != std::string::npos);
  CHECK(message(R"({"activation": "relu"})").find("activation") != std::string::npos);
  CHECK(message("{\"gp\": ").rfind("parse: ", 0) == 0);
}
