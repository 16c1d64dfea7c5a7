#pragma once

#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "evoloss/autodiff.hpp"
#include "evoloss/dataset.hpp"
#include "evoloss/loss_network.hpp"
#include "evoloss/smoothing.hpp"

namespace evoloss {

enum class LearnerKind { Linear, Mlp };
enum class HiddenActivation { Relu, Tanh };

struct LearnerSpec {
  LearnerKind kind = LearnerKind::Mlp;
  std::vector<std::size_t> hidden{32};
  HiddenActivation activation = HiddenActivation::Relu;
};

/// A stateless base-learner architecture f_theta. Parameters are passed in
/// explicitly so the same forward pass serves plain training and unrolled
/// meta-gradients.
class Learner {
 public:
  Learner(LearnerSpec spec, std::size_t inputs, std::size_t outputs);

  const LearnerSpec& spec() const noexcept { return spec_; }
  std::size_t inputs() const noexcept { return inputs_; }
  std::size_t outputs() const noexcept { return outputs_; }
  std::size_t parameter_count() const noexcept;
  const std::vector<Shape>& parameter_shapes() const noexcept { return shapes_; }

  /// Glorot-uniform weights, zero biases.
  std::vector<Tensor> init(Rng& rng) const;
  /// Raw outputs: logits for classification, predictions for regression.
  Var forward(std::span<const Var> params, const Var& X) const;

 private:
  LearnerSpec spec_;
  std::size_t inputs_, outputs_;
  std::vector<Shape> shapes_;  // W0, b0, W1, b1, ...
};

Learner make_learner(const LearnerSpec& spec, const TaskDataset& task);

/// The argument f handed to a loss: softmax probabilities for
/// classification, raw outputs for regression.
Var prediction(TaskKind kind, const Var& outputs);
/// Task loss L_T: mean cross-entropy or mean squared error.
Var task_loss(TaskKind kind, const Var& outputs, const Batch& batch);
/// Performance metric L_P: error rate or mean squared error.
double performance_metric(TaskKind kind, const Tensor& outputs, const Batch& batch);

/// SGD with heavy-ball momentum: v = mu v + g; theta -= lr v.
class SgdMomentum {
 public:
  SgdMomentum(double lr, double momentum);
  void step(std::vector<Tensor>& params, const std::vector<Tensor>& grads);
  double lr() const noexcept { return lr_; }

 private:
  double lr_, momentum_;
  std::vector<Tensor> velocity_;
};

/// Loss used at meta-testing time, given raw learner outputs.
using LossFn = std::function<Var(const Var& outputs, const Batch& batch)>;

/// Learned loss applied to prediction(kind, outputs) against batch.y.
LossFn network_loss(const MetaLossNetwork& net, TaskKind kind);

/// "squared": mean (y - f)^2 over the same f a learned loss sees.
/// "ce": mean cross-entropy (classification only). Any smoothing loss name
/// (lsr, ace, sparse_lsr, focal, focal_sparse_lsr) uses `params` with C taken
/// from the dataset. Throws UsageError on an unknown name or wrong task kind.
LossFn builtin_loss(std::string_view name, const TaskDataset& task, SmoothingParams params = {});

struct TrainConfig {
  std::size_t steps = 500;
  double lr = 0.01;
  double momentum = 0.9;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  LearnerSpec learner;
  /// Record per-step training loss (costs one value read per step).
  bool record_losses = true;
};

struct TrainResult {
  std::vector<Tensor> params;
  std::vector<double> train_loss;
  double val_metric = 0.0;
  double test_metric = 0.0;
  bool diverged = false;
  std::size_t diverged_step = 0;
};

/// Standard training loop: fresh learner from `cfg.seed`, `cfg.steps`
/// SGD-with-momentum updates on the candidate loss, then validation and
/// test metrics. Divergence stops training early and is flagged.
TrainResult train_at_meta_test(const LossFn& loss, const TaskDataset& task, const TrainConfig& cfg);

/// Metric of `params` on a split.
double evaluate_split(const Learner& learner, std::span<const Tensor> params,
                      const TaskDataset& task, const Split& split);

}  // namespace evoloss
