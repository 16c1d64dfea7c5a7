#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "evoloss/autodiff.hpp"
#include "evoloss/dataset.hpp"
#include "evoloss/learner.hpp"
#include "evoloss/loss_network.hpp"
#include "evoloss/seed.hpp"

namespace evoloss {

struct MetaTrainConfig {
  std::size_t S_meta = 250;
  std::size_t S_base = 1;
  double alpha = 0.01;  ///< base learning rate of the unrolled inner steps
  double eta = 1e-3;    ///< meta learning rate
  std::size_t batch_size = 64;

  void validate() const;
};

/// A learnable loss M_phi(y, f). `phi` holds one scalar Var per weight.
using ParamLoss = std::function<Var(const Var& y, const Var& f, std::span<const Var> phi)>;

ParamLoss network_param_loss(const MetaLossNetwork& net);

/// One source of inner-loop problems for Algorithm 1.
class MetaTask {
 public:
  virtual ~MetaTask() = default;
  virtual std::vector<Tensor> init_params(Rng& rng) const = 0;
  virtual Batch next_batch() = 0;
  virtual Var outputs(std::span<const Var> theta, const Var& X) const = 0;
  /// The f argument of the learned loss.
  virtual Var loss_input(const Var& outputs) const = 0;
  /// L_T
  virtual Var task_loss(const Var& outputs, const Batch& batch) const = 0;
};

/// Base learner on the training split of a dataset.
class DatasetTask final : public MetaTask {
 public:
  DatasetTask(const TaskDataset& data, LearnerSpec spec, std::size_t batch_size, std::uint64_t seed);

  std::vector<Tensor> init_params(Rng& rng) const override { return learner_.init(rng); }
  Batch next_batch() override;
  Var outputs(std::span<const Var> theta, const Var& X) const override {
    return learner_.forward(theta, X);
  }
  Var loss_input(const Var& out) const override { return prediction(data_->kind, out); }
  Var task_loss(const Var& out, const Batch& b) const override {
    return evoloss::task_loss(data_->kind, out, b);
  }
  const Learner& learner() const noexcept { return learner_; }

 private:
  const TaskDataset* data_;
  Learner learner_;
  BatchSampler sampler_;
};

struct InnerStepResult {
  std::vector<Var> theta;
  bool non_finite = false;
};

/// theta_new = theta - alpha * grad_theta loss(theta), with the gradient graph
/// recorded so theta_new stays differentiable in whatever `loss` closes over.
/// The step is formed by seeding the backward pass with alpha.
InnerStepResult inner_step(std::span<const Var> theta,
                           const std::function<Var(std::span<const Var>)>& loss, double alpha);

/// Convenience form: M_phi(y, f_theta(X)) on one batch.
InnerStepResult inner_step(std::span<const Var> theta, const MetaTask& task, const ParamLoss& loss,
                           std::span<const Var> phi, const Batch& batch, double alpha);

struct UnrollResult {
  Var task_loss;
  bool non_finite = false;
};

/// S_base = batches.size() recorded inner steps from theta0, then L_T on the
/// last batch with the final parameters.
UnrollResult unrolled_task_loss(const MetaTask& task, const ParamLoss& loss,
                                std::span<const Var> phi, std::span<const Tensor> theta0,
                                std::span<const Batch> batches, double alpha);

struct MetaStepRecord {
  std::size_t step = 0;
  std::vector<double> task_losses;  ///< NaN for diverged tasks
  std::vector<bool> diverged;
  std::vector<double> gradient;     ///< summed over non-diverged tasks
};

/// One iteration of Algorithm 1. `phi` is updated in place. Throws
/// DivergenceError when every task diverges.
MetaStepRecord meta_step(std::vector<double>& phi, const ParamLoss& loss,
                         std::span<MetaTask* const> tasks, const MetaTrainConfig& cfg,
                         std::size_t step, std::uint64_t seed);

struct OptimizeResult {
  std::vector<double> phi;
  std::vector<MetaStepRecord> trajectory;
};

OptimizeResult optimize_loss(std::vector<double> phi, const ParamLoss& loss,
                             std::span<MetaTask* const> tasks, const MetaTrainConfig& cfg,
                             std::uint64_t seed);

/// Builds one DatasetTask per dataset and returns the network with optimized
/// weights.
MetaLossNetwork optimize_network(const MetaLossNetwork& net, std::span<const TaskDataset> tasks,
                                 const LearnerSpec& learner, const MetaTrainConfig& cfg,
                                 std::uint64_t seed, std::vector<MetaStepRecord>* trajectory = nullptr);

/// CSV with columns step, task, task_loss.
std::string trajectory_csv(std::span<const MetaStepRecord> trajectory);

}  // namespace evoloss
