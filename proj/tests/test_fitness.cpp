#include <bit>
#include <cmath>

#include "doctest.h"
#include "evoloss/fitness.hpp"
#include "evoloss/gp.hpp"

using namespace evoloss;

namespace {

MetaLossNetwork unit(const char* text) { return MetaLossNetwork::unit(ExprTree::parse(text)); }

const char* kCE = "(abs (log (* y f)))";
const char* kNegCE = "(* -1 (abs (log (* y f))))";
const char* kSquared = "(sq (- y f))";
const char* kNegSquared = "(* -1 (sq (- y f)))";

}  // namespace

TEST_CASE("symbolic cache") {
  SymbolicArchive archive;
  const ExprTree t = ExprTree::parse("(sq (- y f))");
  CHECK_FALSE(archive.lookup(t).has_value());
  archive.insert(t, {0.25, std::nullopt});
  const auto hit = archive.lookup(ExprTree::parse("(sq (- y f))"));
  REQUIRE(hit.has_value());
  CHECK(hit->fitness == 0.25);
  CHECK_FALSE(archive.lookup(ExprTree::parse("(sq (- f y))")).has_value());
  CHECK(archive.size() == 1);
}

TEST_CASE("rejection protocol separates aligned losses from their negations") {
  const TaskDataset ds = synth_blobs(2, 2, 4.0, 500, 1);
  FilterConfig fc;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Probe probe = make_probe(ds, LearnerSpec{}, fc.probe_batch, seed);
    INFO("probe seed ", seed);
    CHECK(rejection_protocol(unit(kCE), probe, fc).accepted);
    CHECK(rejection_protocol(unit(kSquared), probe, fc).accepted);
    CHECK_FALSE(rejection_protocol(unit(kNegCE), probe, fc).accepted);
    CHECK_FALSE(rejection_protocol(unit(kNegSquared), probe, fc).accepted);
  }
  const Probe probe = make_probe(ds, LearnerSpec{}, fc.probe_batch, 3);
  const auto constant = rejection_protocol(unit("(- (- y y) (- f f))"), probe, fc);
  CHECK(constant.g == 0.0);
  CHECK_FALSE(constant.accepted);
}

TEST_CASE("rejection protocol on regression") {
  const TaskDataset ds = synth_linear_regression(3, 0.1, 300, 2);
  FilterConfig fc;
  const Probe probe = make_probe(ds, LearnerSpec{}, 64, 1);
  CHECK(probe.size() == 64);
  CHECK(rejection_protocol(unit(kSquared), probe, fc).accepted);
  CHECK_FALSE(rejection_protocol(unit(kNegSquared), probe, fc).accepted);
}

TEST_CASE("gradient equivalence keys") {
  const TaskDataset ds = synth_blobs(3, 2, 3.0, 300, 4);
  const Probe probe = make_probe(ds, LearnerSpec{}, 32, 9);
  const auto a = gradient_equivalence_key(unit(kSquared), probe);
  CHECK_FALSE(a.empty());
  CHECK(a == gradient_equivalence_key(unit(kSquared), probe));
  CHECK(a == gradient_equivalence_key(unit("(sq (- f y))"), probe));

  // sq(sqrt(10) (y - f)) = 10 (y - f)^2
  const auto scaled = unit(kSquared).with_weights({std::sqrt(10.0), 1.0, 1.0});
  CHECK(a != gradient_equivalence_key(scaled, probe));
  CHECK(a != gradient_equivalence_key(unit(kCE), probe));

  // two significant digits per sample
  const auto first = a.substr(0, a.find(','));
  CHECK(first.size() == std::string("1.2e-01").size());
}

TEST_CASE("fitness evaluation") {
  TrainConfig train;
  train.steps = 300;
  train.seed = 5;

  SUBCASE("separable task reaches zero error") {
    const TaskDataset ds = synth_blobs(2, 2, 12.0, 300, 1);
    CHECK(evaluate_fitness(unit(kSquared), ds, train).fitness == 0.0);
  }
  SUBCASE("constant loss leaves the model untrained") {
    const TaskDataset ds = synth_blobs(2, 2, 4.0, 300, 1);
    const auto r = evaluate_fitness(unit("(- (- y y) (- f f))"), ds, train);
    train.steps = 0;
    CHECK(r.fitness == evaluate_fitness(unit(kSquared), ds, train).fitness);
  }
  SUBCASE("squared tree matches the built-in squared loss on regression") {
    const TaskDataset ds = synth_linear_regression(3, 0.3, 300, 1);
    const double a = evaluate_fitness(unit(kSquared), ds, train).fitness;
    const double b = evaluate_fitness(builtin_loss("squared", ds), ds, train).fitness;
    CHECK(std::fabs(a - b) <= 1e-10);
  }
  SUBCASE("bitwise reproducible") {
    const TaskDataset ds = synth_blobs(3, 2, 3.0, 300, 1);
    Rng rng(2);
    const auto net = MetaLossNetwork::compile(ExprTree::parse(kCE), Activation::Identity, rng);
    const double a = evaluate_fitness(net, ds, train).fitness;
    const double b = evaluate_fitness(net, ds, train).fitness;
    CHECK(std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b));
  }
  SUBCASE("divergence maps to the worst fitness") {
    const TaskDataset ds = synth_linear_regression(3, 0.3, 300, 1);
    train.lr = 100.0;
    const auto r = evaluate_fitness(unit(kSquared), ds, train);
    CHECK(r.diverged);
    CHECK(r.fitness == kWorstFitness);
  }
}

TEST_CASE("worst fitness sorts after every finite value") {
  CHECK(fitness_better(1e308, kWorstFitness));
  CHECK(fitness_better(0.0, kWorstFitness));
  CHECK_FALSE(fitness_better(kWorstFitness, 1e308));
  CHECK(fitness_better(kWorstFitness, std::nan("")));
}

TEST_CASE("filter statistics csv") {
  FilterCounts a, b;
  a.add(Disposition::Evaluated);
  a.add(Disposition::Rejected);
  b.add(Disposition::CachedSymbolic);
  b.add(Disposition::CachedGradient);
  b.add(Disposition::Diverged);
  CHECK(a.total() == 2);
  const FilterCounts rows[] = {a, b};
  CHECK(filter_stats_csv(rows) ==
        "generation,cached_symbolic,rejected,cached_gradient,evaluated,diverged\n"
        "0,0,1,0,1,0\n1,1,0,1,0,1\n");
}
