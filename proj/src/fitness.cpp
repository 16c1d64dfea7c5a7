#include "evoloss/fitness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <numeric>
#include <sstream>

#include "evoloss/errors.hpp"
#include "evoloss/seed.hpp"

namespace evoloss {

std::string_view disposition_name(Disposition d) noexcept {
  switch (d) {
    case Disposition::Pending:
      return "pending";
    case Disposition::Evaluated:
      return "evaluated";
    case Disposition::CachedSymbolic:
      return "cached_symbolic";
    case Disposition::CachedGradient:
      return "cached_gradient";
    case Disposition::Rejected:
      return "rejected";
    case Disposition::Diverged:
      return "diverged";
  }
  return "?";
}

void FilterConfig::validate() const {
  if (probe_batch < 1) throw UsageError("filters.probe_batch must be >= 1");
  if (!(probe_lr > 0.0)) throw UsageError("filters.probe_lr must be > 0");
  if (sig_digits < 1 || sig_digits > 17) throw UsageError("filters.sig_digits must be in [1, 17]");
  if (S_testing < 1) throw UsageError("filters.S_testing must be >= 1");
}

std::optional<SymbolicArchive::Entry> SymbolicArchive::lookup(const ExprTree& t) const {
  std::shared_lock lock(mu_);
  auto it = map_.find(canonical_key(t));
  if (it == map_.end()) return std::nullopt;
  return it->second;
}

void SymbolicArchive::insert(const ExprTree& t, Entry e) {
  std::unique_lock lock(mu_);
  map_.insert_or_assign(canonical_key(t), std::move(e));
}

std::size_t SymbolicArchive::size() const {
  std::shared_lock lock(mu_);
  return map_.size();
}

std::optional<double> GradientArchive::lookup(const std::string& key) const {
  std::shared_lock lock(mu_);
  auto it = map_.find(key);
  if (it == map_.end()) return std::nullopt;
  return it->second;
}

void GradientArchive::insert(const std::string& key, double fitness) {
  std::unique_lock lock(mu_);
  map_.emplace(key, fitness);
}

std::size_t GradientArchive::size() const {
  std::shared_lock lock(mu_);
  return map_.size();
}

Probe make_probe(const TaskDataset& task, const LearnerSpec& learner, std::size_t B,
                 std::uint64_t seed) {
  if (B == 0) throw UsageError("probe: batch must be >= 1");
  const std::size_t n = task.train.size();
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), 0);
  Rng rng(derive_seed(seed, {1}));
  std::shuffle(rows.begin(), rows.end(), rng);
  rows.resize(std::min(B, n));

  Probe p;
  p.kind = task.kind;
  p.batch = make_batch(task, task.train, rows);
  const Learner model = make_learner(learner, task);
  Rng init(derive_seed(seed, {2}));
  NoGradGuard guard;
  std::vector<Var> theta;
  for (auto& t : model.init(init)) theta.emplace_back(std::move(t));
  p.outputs = model.forward(theta, p.batch.X).value();
  return p;
}

RejectionResult rejection_protocol(const MetaLossNetwork& net, const Probe& probe,
                                   const FilterConfig& cfg) {
  const double B = static_cast<double>(probe.size());
  RejectionResult r;
  const double before = performance_metric(probe.kind, probe.outputs, probe.batch);
  Tensor z = probe.outputs;
  for (std::size_t step = 0; step < cfg.probe_steps; ++step) {
    const Var zl(z, true);
    const Var loss = scale(net.forward(probe.batch.y, prediction(probe.kind, zl)), B);
    const auto g = backward(loss, std::span<const Var>(&zl, 1));
    if (g.non_finite) {
      r.non_finite = true;
      return r;
    }
    const auto gv = g.grads[0].value().data();
    auto zv = z.data();
    for (std::size_t i = 0; i < zv.size(); ++i) zv[i] -= cfg.probe_lr * gv[i];
  }
  if (!z.all_finite()) {
    r.non_finite = true;
    return r;
  }
  const double after = performance_metric(probe.kind, z, probe.batch);
  r.g = (before - after) * B;
  if (!std::isfinite(r.g)) {
    r.non_finite = true;
    return r;
  }
  r.accepted = r.g > 0.0;
  return r;
}

std::string gradient_equivalence_key(const MetaLossNetwork& net, const Probe& probe, int sig_digits) {
  const std::size_t B = probe.size();
  Tensor f;
  {
    NoGradGuard guard;
    f = prediction(probe.kind, Var(probe.outputs)).value();
  }
  const Var fl(f, true);
  const Var loss = scale(net.forward(probe.batch.y, fl), static_cast<double>(B));
  const auto g = backward(loss, std::span<const Var>(&fl, 1));
  if (g.non_finite) return {};
  const Tensor& gv = g.grads[0].value();
  const std::size_t cols = gv.cols();
  std::string key;
  char buf[48];
  for (std::size_t b = 0; b < B; ++b) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += gv.at(b, c) * gv.at(b, c);
    const double norm = std::sqrt(s);
    if (!std::isfinite(norm)) return {};
    std::snprintf(buf, sizeof buf, "%.*e", sig_digits - 1, norm);
    if (b) key += ',';
    key += buf;
  }
  return key;
}

FitnessResult evaluate_fitness(const LossFn& loss, const TaskDataset& task, TrainConfig train) {
  FitnessResult r;
  r.train = train_at_meta_test(loss, task, train);
  r.diverged = r.train.diverged || !std::isfinite(r.train.val_metric);
  r.fitness = r.diverged ? kWorstFitness : r.train.val_metric;
  return r;
}

FitnessResult evaluate_fitness(const MetaLossNetwork& net, const TaskDataset& task, TrainConfig train) {
  return evaluate_fitness(network_loss(net, task.kind), task, std::move(train));
}

void FilterCounts::add(Disposition d) noexcept {
  switch (d) {
    case Disposition::CachedSymbolic:
      ++cached_symbolic;
      break;
    case Disposition::Rejected:
      ++rejected;
      break;
    case Disposition::CachedGradient:
      ++cached_gradient;
      break;
    case Disposition::Evaluated:
      ++evaluated;
      break;
    case Disposition::Diverged:
      ++diverged;
      break;
    case Disposition::Pending:
      break;
  }
}

std::string filter_stats_csv(std::span<const FilterCounts> per_generation) {
  std::ostringstream out;
  out << "generation,cached_symbolic,rejected,cached_gradient,evaluated,diverged\n";
  for (std::size_t g = 0; g < per_generation.size(); ++g) {
    const auto& c = per_generation[g];
    out << g << ',' << c.cached_symbolic << ',' << c.rejected << ',' << c.cached_gradient << ','
        << c.evaluated << ',' << c.diverged << '\n';
  }
  return out.str();
}

}  // namespace evoloss
