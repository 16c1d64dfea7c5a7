#include <algorithm>
#include <bit>
#include <limits>
#include <cmath>
#include <random>

#include "doctest.h"
#include "evoloss/errors.hpp"
#include "evoloss/meta_optimizer.hpp"

using namespace evoloss;

namespace {

/// f_theta(x) = theta, y = 0, L_T = (f - y)^2.
class ToyTask final : public MetaTask {
 public:
  explicit ToyTask(double theta0 = 1.0) : theta0_(theta0) {}
  std::vector<Tensor> init_params(Rng&) const override { return {Tensor::matrix(1, 1, {theta0_})}; }
  Batch next_batch() override {
    Batch b;
    b.X = Var(Tensor::matrix(1, 1, {1.0}));
    b.y = Var(Tensor::matrix(1, 1, {0.0}));
    return b;
  }
  Var outputs(std::span<const Var> theta, const Var& X) const override { return mul(theta[0], X); }
  Var loss_input(const Var& out) const override { return out; }
  Var task_loss(const Var& out, const Batch& b) const override { return mean(square(sub(out, b.y))); }

 private:
  double theta0_;
};

/// M = phi * (f - y)^2
Var toy_loss(const Var& y, const Var& f, std::span<const Var> phi) {
  return mul(phi[0], mean(square(sub(f, y))));
}

/// Closed form for the toy: L(phi) = theta^2 (1 - 2 alpha phi)^2.
double toy_grad(double theta, double alpha, double phi) {
  return -4.0 * alpha * theta * theta * (1.0 - 2.0 * alpha * phi);
}

std::uint64_t bits(double v) { return std::bit_cast<std::uint64_t>(v); }

}  // namespace

TEST_CASE("inner step on the scalar toy") {
  ToyTask task;
  const std::vector<Var> theta{Var(Tensor::matrix(1, 1, {1.0}), true)};
  const std::vector<Var> phi{Var(1.0, true)};
  const Batch b = task.next_batch();
  CHECK(inner_step(theta, task, toy_loss, phi, b, 0.1).theta[0].item() == doctest::Approx(0.8).epsilon(1e-15));

  // alpha = 0 is rejected by MetaTrainConfig but the raw step is still the identity
  CHECK(inner_step(theta, task, toy_loss, phi, b, 0.0).theta[0].item() == 1.0);

  auto constant = [](const Var& y, const Var&, std::span<const Var> w) { return add(mean(y), w[0]); };
  CHECK(inner_step(theta, task, constant, phi, b, 0.1).theta[0].item() == 1.0);
}

TEST_CASE("meta-gradient on the scalar toy") {
  ToyTask task;
  MetaTask* tasks[] = {&task};
  MetaTrainConfig cfg;
  cfg.alpha = 0.1;
  cfg.eta = 0.01;
  std::vector<double> phi{1.0};
  const auto rec = meta_step(phi, toy_loss, tasks, cfg, 0, 1);
  CHECK(std::fabs(rec.gradient[0] - (-0.32)) <= 1e-8);
  CHECK(rec.gradient[0] == doctest::Approx(toy_grad(1.0, 0.1, 1.0)).epsilon(1e-12));
  CHECK(phi[0] == doctest::Approx(1.0 + 0.32 * 0.01).epsilon(1e-14));
  CHECK(rec.task_losses[0] == doctest::Approx(0.64).epsilon(1e-14));

  const double h = 1e-6;
  auto L = [&](double p) { return std::pow(0.8 + 0.2 * (1.0 - p), 2); };  // (1 - 0.2 p)^2
  CHECK(rec.gradient[0] == doctest::Approx((L(1.0 + h) - L(1.0 - h)) / (2 * h)).epsilon(1e-6));

  cfg.eta = 0.0;
  std::vector<double> frozen{1.0};
  meta_step(frozen, toy_loss, tasks, cfg, 0, 1);
  CHECK(frozen[0] == 1.0);
}

TEST_CASE("identical tasks double the meta-gradient") {
  ToyTask a, b;
  MetaTask* one[] = {&a};
  MetaTask* two[] = {&a, &b};
  MetaTrainConfig cfg;
  cfg.alpha = 0.1;
  std::vector<double> p1{0.7}, p2{0.7};
  const auto g1 = meta_step(p1, toy_loss, one, cfg, 0, 3).gradient[0];
  const auto g2 = meta_step(p2, toy_loss, two, cfg, 0, 3).gradient[0];
  CHECK(bits(g2) == bits(2.0 * g1));
}

TEST_CASE("toy task loss decreases under meta-training") {
  ToyTask task;
  MetaTask* tasks[] = {&task};
  MetaTrainConfig cfg;
  cfg.alpha = 0.1;
  cfg.eta = 0.1;
  cfg.S_meta = 10;
  const auto res = optimize_loss({1.0}, toy_loss, tasks, cfg, 0);
  REQUIRE(res.trajectory.size() == 10);
  double phi = 1.0;
  for (std::size_t s = 0; s < 10; ++s) {
    const double expected = std::pow(1.0 - 2.0 * 0.1 * phi, 2);
    CHECK(res.trajectory[s].task_losses[0] == doctest::Approx(expected).epsilon(1e-12));
    if (s > 0) CHECK(res.trajectory[s].task_losses[0] < res.trajectory[s - 1].task_losses[0]);
    phi -= 0.1 * toy_grad(1.0, 0.1, phi);
  }
  CHECK(res.phi[0] == doctest::Approx(phi).epsilon(1e-12));

  cfg.S_meta = 1;
  CHECK(optimize_loss({1.0}, toy_loss, tasks, cfg, 0).trajectory.size() == 1);
  cfg.S_meta = 0;
  CHECK_THROWS_AS(optimize_loss({1.0}, toy_loss, tasks, cfg, 0), UsageError);
}

TEST_CASE("constant loss leaves the weights untouched") {
  const TaskDataset ds = synth_blobs(2, 2, 4.0, 100, 1);
  const auto net = MetaLossNetwork::unit(ExprTree::parse("(+ (- y y) (- f f))"));
  MetaTrainConfig cfg;
  cfg.S_meta = 5;
  cfg.eta = 1.0;
  std::vector<MetaStepRecord> traj;
  const TaskDataset tasks[] = {ds};
  const auto out = optimize_network(net, tasks, LearnerSpec{}, cfg, 7, &traj);
  CHECK(out.weights() == net.weights());
  CHECK(traj.size() == 5);
}

TEST_CASE("meta-gradient matches finite differences on small MLPs") {
  GpConfig gp;
  gp.init_depth_max = 3;
  Rng rng(12);
  int trials = 0;
  while (trials < 12) {
    ExprTree t = correct_constraints(random_tree(gp, rng), rng, gp.max_depth);
    bool smooth = true;
    for (Symbol s : t.nodes()) {
      if (s == Symbol::Min || s == Symbol::Max || s == Symbol::Sign || s == Symbol::Abs ||
          s == Symbol::Log || s == Symbol::Sqrt) {
        smooth = false;
      }
    }
    if (!smooth) continue;
    const auto net = MetaLossNetwork::compile(t, Activation::Softplus, rng, 0.2);
    const TaskDataset ds = synth_blobs(2, 3, 3.0, 60, static_cast<std::uint64_t>(trials));
    LearnerSpec spec{LearnerKind::Mlp, {6}, HiddenActivation::Tanh};
    DatasetTask task(ds, spec, 8, static_cast<std::uint64_t>(trials));
    REQUIRE(task.learner().parameter_count() <= 64);

    const std::size_t S_base = 1 + static_cast<std::size_t>(trials % 2);
    Rng init(static_cast<std::uint64_t>(100 + trials));
    const auto theta0 = task.init_params(init);
    std::vector<Batch> batches;
    for (std::size_t s = 0; s < S_base; ++s) batches.push_back(task.next_batch());
    const ParamLoss loss = network_param_loss(net);
    const double alpha = 0.5;

    const auto phi = net.weight_leaves();
    const auto un = unrolled_task_loss(task, loss, phi, theta0, batches, alpha);
    REQUIRE_FALSE(un.non_finite);
    const auto g = backward(un.task_loss, phi);

    auto value_at = [&](std::vector<double> w) {
      std::vector<Var> leaves;
      for (double v : w) leaves.emplace_back(v, true);
      return unrolled_task_loss(task, loss, leaves, theta0, batches, alpha).task_loss.item();
    };
    const double h = 1e-5;
    for (std::size_t k = 0; k < phi.size(); ++k) {
      auto wp = net.weights(), wm = net.weights();
      wp[k] += h;
      wm[k] -= h;
      const double num = (value_at(wp) - value_at(wm)) / (2.0 * h);
      const double ana = g.grads[k].item();
      const double rel = std::fabs(ana - num) / std::max({1.0, std::fabs(ana), std::fabs(num)});
      INFO(t.to_string(), " S_base=", S_base, " edge ", k, " analytic ", ana, " numeric ", num);
      CHECK(rel <= 1e-4);
    }
    ++trials;
  }
}

TEST_CASE("base learner reset depends only on the seed") {
  const TaskDataset ds = synth_blobs(2, 2, 4.0, 100, 1);
  DatasetTask a(ds, LearnerSpec{}, 16, 5);
  Rng r1(derive_seed(9, {3, 0})), r2(derive_seed(9, {3, 0}));
  const auto t1 = a.init_params(r1), t2 = a.init_params(r2);
  for (std::size_t i = 0; i < t1.size(); ++i) {
    for (std::size_t k = 0; k < t1[i].numel(); ++k) CHECK(bits(t1[i][k]) == bits(t2[i][k]));
  }

  // Two runs that differ only in their phi trajectory see the same task losses
  // at step 0 when phi starts equal, and diverge afterwards.
  const auto net = MetaLossNetwork::unit(ExprTree::parse("(sq (- y f))"));
  MetaTrainConfig cfg;
  cfg.S_meta = 3;
  cfg.alpha = 0.1;
  const TaskDataset tasks[] = {ds};
  std::vector<MetaStepRecord> slow, fast;
  cfg.eta = 0.0;
  optimize_network(net, tasks, LearnerSpec{}, cfg, 4, &slow);
  cfg.eta = 10.0;
  optimize_network(net, tasks, LearnerSpec{}, cfg, 4, &fast);
  CHECK(bits(slow[0].task_losses[0]) == bits(fast[0].task_losses[0]));
}

TEST_CASE("scaling the loss by phi0 equals scaling the learning rate") {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(1e-6, 2.0);
  const TaskDataset ds = synth_blobs(3, 2, 3.0, 120, 2);
  DatasetTask task(ds, LearnerSpec{}, 16, 1);
  const double alpha = 0.05;
  for (int trial = 0; trial < 50; ++trial) {
    const double phi0 = u(rng);
    Rng init(static_cast<std::uint64_t>(trial));
    const auto theta0 = task.init_params(init);
    const Batch b = task.next_batch();
    std::vector<Var> theta;
    for (const auto& t : theta0) theta.emplace_back(t, true);

    auto base = [&](std::span<const Var> th) { return task.task_loss(task.outputs(th, b.X), b); };
    auto scaled = [&](std::span<const Var> th) { return mul(Var(phi0), base(th)); };
    const auto a = inner_step(theta, scaled, alpha);
    const auto c = inner_step(theta, base, alpha * phi0);
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const auto& x = a.theta[i].value();
      const auto& y = c.theta[i].value();
      for (std::size_t k = 0; k < x.numel(); ++k) {
        INFO("phi0 ", phi0, " param ", i, ":", k);
        REQUIRE(bits(x[k]) == bits(y[k]));
      }
    }
  }
}

TEST_CASE("divergent tasks are skipped and flagged") {
  ToyTask good, bad(std::numeric_limits<double>::quiet_NaN());
  MetaTask* tasks[] = {&good, &bad};
  MetaTrainConfig cfg;
  cfg.alpha = 0.1;
  std::vector<double> phi{1.0};
  const auto rec = meta_step(phi, toy_loss, tasks, cfg, 0, 0);
  CHECK_FALSE(rec.diverged[0]);
  CHECK(rec.diverged[1]);
  CHECK(std::isnan(rec.task_losses[1]));
  CHECK(rec.gradient[0] == doctest::Approx(-0.32).epsilon(1e-12));

  MetaTask* only_bad[] = {&bad};
  try {
    cfg.S_meta = 4;
    optimize_loss({1.0}, toy_loss, only_bad, cfg, 0);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(e.step() == 0);
  }
}

TEST_CASE("trajectory csv") {
  ToyTask task;
  MetaTask* tasks[] = {&task};
  MetaTrainConfig cfg;
  cfg.S_meta = 2;
  cfg.alpha = 0.1;
  const auto res = optimize_loss({1.0}, toy_loss, tasks, cfg, 0);
  const std::string csv = trajectory_csv(res.trajectory);
  CHECK(csv.rfind("step,task,task_loss\n0,0,", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
}
