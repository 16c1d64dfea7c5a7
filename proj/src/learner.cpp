#include "evoloss/learner.hpp"

#include <cmath>
#include <limits>
#include <random>

#include "evoloss/errors.hpp"
#include "evoloss/seed.hpp"

namespace evoloss {

Learner::Learner(LearnerSpec spec, std::size_t inputs, std::size_t outputs)
    : spec_(std::move(spec)), inputs_(inputs), outputs_(outputs) {
  if (inputs == 0 || outputs == 0) throw UsageError("learner: zero-sized input or output");
  std::size_t prev = inputs;
  if (spec_.kind == LearnerKind::Mlp) {
    for (std::size_t h : spec_.hidden) {
      if (h == 0) throw UsageError("learner.hidden: layer sizes must be >= 1");
      shapes_.push_back({prev, h});
      shapes_.push_back({1, h});
      prev = h;
    }
  }
  shapes_.push_back({prev, outputs});
  shapes_.push_back({1, outputs});
}

std::size_t Learner::parameter_count() const noexcept {
  std::size_t n = 0;
  for (const auto& s : shapes_) n += shape_numel(s);
  return n;
}

std::vector<Tensor> Learner::init(Rng& rng) const {
  std::vector<Tensor> out;
  out.reserve(shapes_.size());
  for (std::size_t i = 0; i < shapes_.size(); i += 2) {
    const auto& w = shapes_[i];
    const double a = std::sqrt(6.0 / static_cast<double>(w[0] + w[1]));
    std::uniform_real_distribution<double> u(-a, a);
    std::vector<double> data(shape_numel(w));
    for (auto& v : data) v = u(rng);
    out.emplace_back(w, std::move(data));
    out.push_back(Tensor::zeros(shapes_[i + 1]));
  }
  return out;
}

Var Learner::forward(std::span<const Var> params, const Var& X) const {
  if (params.size() != shapes_.size()) throw UsageError("learner: wrong parameter count");
  Var h = X;
  const std::size_t layers = shapes_.size() / 2;
  for (std::size_t l = 0; l < layers; ++l) {
    h = add_row(matmul(h, params[2 * l]), params[2 * l + 1]);
    if (l + 1 < layers) h = spec_.activation == HiddenActivation::Relu ? relu(h) : tanh(h);
  }
  return h;
}

Learner make_learner(const LearnerSpec& spec, const TaskDataset& task) {
  return Learner(spec, task.num_features, task.output_dim());
}

Var prediction(TaskKind kind, const Var& outputs) {
  return kind == TaskKind::Classification ? softmax(outputs) : outputs;
}

Var task_loss(TaskKind kind, const Var& outputs, const Batch& batch) {
  if (kind == TaskKind::Classification) {
    return neg(mean(gather(log_softmax(outputs), batch.target)));
  }
  return mean(square(sub(outputs, batch.y)));
}

double performance_metric(TaskKind kind, const Tensor& outputs, const Batch& batch) {
  const std::size_t n = outputs.rows();
  if (n == 0) return 0.0;
  if (kind == TaskKind::Classification) {
    const std::size_t c = outputs.cols();
    std::size_t wrong = 0;
    for (std::size_t r = 0; r < n; ++r) {
      std::size_t best = 0;
      bool finite = true;
      for (std::size_t k = 0; k < c; ++k) {
        const double v = outputs.at(r, k);
        if (!std::isfinite(v)) finite = false;
        if (v > outputs.at(r, best)) best = k;
      }
      if (!finite || best != batch.target[r]) ++wrong;
    }
    return static_cast<double>(wrong) / static_cast<double>(n);
  }
  const auto& y = batch.y.value();
  double s = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const double d = outputs[r] - y[r];
    s += d * d;
  }
  const double mse = s / static_cast<double>(n);
  return std::isfinite(mse) ? mse : std::numeric_limits<double>::infinity();
}

LossFn network_loss(const MetaLossNetwork& net, TaskKind kind) {
  return [net, kind](const Var& outputs, const Batch& batch) {
    return net.forward(batch.y, prediction(kind, outputs));
  };
}

LossFn builtin_loss(std::string_view name, const TaskDataset& task, SmoothingParams params) {
  const TaskKind kind = task.kind;
  if (name == "squared" || name == "mse") {
    return [kind](const Var& outputs, const Batch& batch) {
      return mean(square(sub(batch.y, prediction(kind, outputs))));
    };
  }
  SmoothingLoss id;
  try {
    id = smoothing_loss_from_name(name);
  } catch (const UsageError&) {
    throw UsageError("unknown builtin loss '" + std::string(name) +
                     "' (squared|ce|lsr|ace|sparse_lsr|focal|focal_sparse_lsr)");
  }
  if (kind != TaskKind::Classification) {
    throw UsageError("builtin loss '" + std::string(name) + "' needs a classification task");
  }
  params.C = task.num_classes;
  params.validate();
  return [id, params](const Var& outputs, const Batch& batch) {
    return smoothing_loss(id, log_softmax(outputs), batch.target, params);
  };
}

SgdMomentum::SgdMomentum(double lr, double momentum) : lr_(lr), momentum_(momentum) {
  if (!(lr > 0.0)) throw UsageError("training.lr must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw UsageError("training.momentum must be in [0, 1)");
}

void SgdMomentum::step(std::vector<Tensor>& params, const std::vector<Tensor>& grads) {
  if (velocity_.empty()) {
    for (const auto& p : params) velocity_.push_back(Tensor::zeros(p.shape()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto v = velocity_[i].data();
    auto p = params[i].data();
    const auto g = grads[i].data();
    for (std::size_t k = 0; k < v.size(); ++k) {
      v[k] = momentum_ * v[k] + g[k];
      p[k] -= lr_ * v[k];
    }
  }
}

double evaluate_split(const Learner& learner, std::span<const Tensor> params,
                      const TaskDataset& task, const Split& split) {
  if (split.size() == 0) return 0.0;
  NoGradGuard guard;
  std::vector<Var> p;
  for (const auto& t : params) p.emplace_back(t);
  const Batch b = full_batch(task, split);
  return performance_metric(task.kind, learner.forward(p, b.X).value(), b);
}

TrainResult train_at_meta_test(const LossFn& loss, const TaskDataset& task, const TrainConfig& cfg) {
  const Learner learner = make_learner(cfg.learner, task);
  Rng init_rng(derive_seed(cfg.seed, {1}));
  TrainResult res;
  res.params = learner.init(init_rng);
  SgdMomentum opt(cfg.lr, cfg.momentum);
  BatchSampler sampler(task.train.size(), cfg.batch_size, derive_seed(cfg.seed, {2}));

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const Batch batch = make_batch(task, task.train, sampler.next());
    std::vector<Var> theta;
    theta.reserve(res.params.size());
    for (const auto& t : res.params) theta.emplace_back(t, true);
    const Var value = loss(learner.forward(theta, batch.X), batch);
    const auto g = backward(value, theta);
    if (cfg.record_losses) res.train_loss.push_back(value.item());
    if (g.non_finite) {
      res.diverged = true;
      res.diverged_step = step;
      break;
    }
    std::vector<Tensor> grads;
    grads.reserve(g.grads.size());
    for (const auto& v : g.grads) grads.push_back(v.value());
    opt.step(res.params, grads);
  }
  res.val_metric = evaluate_split(learner, res.params, task, task.val);
  res.test_metric = evaluate_split(learner, res.params, task, task.test);
  return res;
}

}  // namespace evoloss
