#include "evoloss/meta_optimizer.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "evoloss/errors.hpp"
#include "evoloss/seed.hpp"

namespace evoloss {

void MetaTrainConfig::validate() const {
  if (S_meta < 1) throw UsageError("meta.S_meta must be >= 1");
  if (S_base < 1) throw UsageError("meta.S_base must be >= 1");
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw UsageError("meta.alpha must be > 0");
  if (!(eta >= 0.0) || !std::isfinite(eta)) throw UsageError("meta.eta must be >= 0");
  if (batch_size < 1) throw UsageError("meta.batch_size must be >= 1");
}

ParamLoss network_param_loss(const MetaLossNetwork& net) {
  return [net](const Var& y, const Var& f, std::span<const Var> phi) {
    return net.forward(y, f, phi);
  };
}

DatasetTask::DatasetTask(const TaskDataset& data, LearnerSpec spec, std::size_t batch_size,
                         std::uint64_t seed)
    : data_(&data),
      learner_(make_learner(spec, data)),
      sampler_(data.train.size(), batch_size, seed) {}

Batch DatasetTask::next_batch() { return make_batch(*data_, data_->train, sampler_.next()); }

InnerStepResult inner_step(std::span<const Var> theta,
                           const std::function<Var(std::span<const Var>)>& loss, double alpha) {
  const Var m = loss(theta);
  const auto g = backward(m, theta, /*record_graph=*/true, Var(alpha));
  InnerStepResult r;
  r.non_finite = g.non_finite;
  r.theta.reserve(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) r.theta.push_back(sub(theta[i], g.grads[i]));
  return r;
}

InnerStepResult inner_step(std::span<const Var> theta, const MetaTask& task, const ParamLoss& loss,
                           std::span<const Var> phi, const Batch& batch, double alpha) {
  return inner_step(
      theta,
      [&](std::span<const Var> th) {
        return loss(batch.y, task.loss_input(task.outputs(th, batch.X)), phi);
      },
      alpha);
}

UnrollResult unrolled_task_loss(const MetaTask& task, const ParamLoss& loss,
                                std::span<const Var> phi, std::span<const Tensor> theta0,
                                std::span<const Batch> batches, double alpha) {
  if (batches.empty()) throw UsageError("unrolled_task_loss: need at least one batch");
  std::vector<Var> theta;
  theta.reserve(theta0.size());
  for (const auto& t : theta0) theta.emplace_back(t, true);
  UnrollResult r;
  for (const Batch& b : batches) {
    auto step = inner_step(theta, task, loss, phi, b, alpha);
    r.non_finite = r.non_finite || step.non_finite;
    theta = std::move(step.theta);
  }
  r.task_loss = task.task_loss(task.outputs(theta, batches.back().X), batches.back());
  if (!r.task_loss.value().all_finite()) r.non_finite = true;
  return r;
}

MetaStepRecord meta_step(std::vector<double>& phi, const ParamLoss& loss,
                         std::span<MetaTask* const> tasks, const MetaTrainConfig& cfg,
                         std::size_t step, std::uint64_t seed) {
  if (tasks.empty()) throw UsageError("meta_step: no tasks");
  MetaStepRecord rec;
  rec.step = step;
  rec.gradient.assign(phi.size(), 0.0);
  std::vector<Var> phi_leaves;
  phi_leaves.reserve(phi.size());
  for (double v : phi) phi_leaves.emplace_back(v, true);

  std::size_t ok = 0;
  for (std::size_t j = 0; j < tasks.size(); ++j) {
    MetaTask& task = *tasks[j];
    Rng init_rng(derive_seed(seed, {step, j}));
    const auto theta0 = task.init_params(init_rng);
    std::vector<Batch> batches;
    for (std::size_t s = 0; s < cfg.S_base; ++s) batches.push_back(task.next_batch());

    const auto un = unrolled_task_loss(task, loss, phi_leaves, theta0, batches, cfg.alpha);
    bool bad = un.non_finite;
    std::vector<double> g;
    if (!bad) {
      const auto meta = backward(un.task_loss, phi_leaves);
      bad = meta.non_finite;
      for (const auto& v : meta.grads) g.push_back(v.item());
    }
    rec.diverged.push_back(bad);
    if (bad) {
      rec.task_losses.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    rec.task_losses.push_back(un.task_loss.item());
    for (std::size_t i = 0; i < g.size(); ++i) rec.gradient[i] += g[i];
    ++ok;
  }
  if (ok == 0) throw DivergenceError("meta_step: every task diverged at step " + std::to_string(step), step);
  for (std::size_t i = 0; i < phi.size(); ++i) phi[i] -= cfg.eta * rec.gradient[i];
  return rec;
}

OptimizeResult optimize_loss(std::vector<double> phi, const ParamLoss& loss,
                             std::span<MetaTask* const> tasks, const MetaTrainConfig& cfg,
                             std::uint64_t seed) {
  cfg.validate();
  OptimizeResult r;
  r.trajectory.reserve(cfg.S_meta);
  for (std::size_t s = 0; s < cfg.S_meta; ++s) {
    r.trajectory.push_back(meta_step(phi, loss, tasks, cfg, s, seed));
  }
  r.phi = std::move(phi);
  return r;
}

MetaLossNetwork optimize_network(const MetaLossNetwork& net, std::span<const TaskDataset> tasks,
                                 const LearnerSpec& learner, const MetaTrainConfig& cfg,
                                 std::uint64_t seed, std::vector<MetaStepRecord>* trajectory) {
  std::vector<DatasetTask> owned;
  owned.reserve(tasks.size());
  for (std::size_t j = 0; j < tasks.size(); ++j) {
    owned.emplace_back(tasks[j], learner, cfg.batch_size, derive_seed(seed, {0xba7c, j}));
  }
  std::vector<MetaTask*> ptrs;
  for (auto& t : owned) ptrs.push_back(&t);
  auto res = optimize_loss(net.weights(), network_param_loss(net), ptrs, cfg, seed);
  if (trajectory) *trajectory = std::move(res.trajectory);
  return net.with_weights(std::move(res.phi));
}

std::string trajectory_csv(std::span<const MetaStepRecord> trajectory) {
  std::ostringstream out;
  out << "step,task,task_loss\n";
  char buf[64];
  for (const auto& rec : trajectory) {
    for (std::size_t j = 0; j < rec.task_losses.size(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", rec.task_losses[j]);
      out << rec.step << ',' << j << ',' << buf << '\n';
    }
  }
  return out.str();
}

}  // namespace evoloss
