#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "evoloss/autodiff.hpp"

namespace evoloss {

struct SmoothingParams {
  double xi = 0.1;     ///< smoothing coefficient in [0, 1)
  std::size_t C = 10;  ///< number of classes, >= 2
  double gamma = 2.0;  ///< focusing exponent, >= 0
  double phi0 = 1.0;   ///< ACE scale
  double phi1 = 1.0;   ///< ACE shift (minimiser of the target loss is 1/phi1)
  double eps = 1e-7;

  /// Throws UsageError naming the offending field.
  void validate() const;
};

enum class SmoothingLoss { CE, LSR, ACE, SparseLSR, Focal, FocalSparseLSR };

std::string_view smoothing_loss_name(SmoothingLoss id) noexcept;
/// ce, lsr, ace, sparse_lsr, focal, focal_sparse_lsr.
SmoothingLoss smoothing_loss_from_name(std::string_view name);
/// True for losses that read only the target log-probability.
bool is_sparse(SmoothingLoss id) noexcept;

// Differentiable losses over log-probabilities `logp` (B x C) with one target
// index per row; each returns the batch mean.

Var loss_ce(const Var& logp, std::span<const std::size_t> target, const SmoothingParams& p);
/// -sum_i (y_i (1 - xi) + xi / C) logp_i
Var loss_lsr(const Var& logp, std::span<const std::size_t> target, const SmoothingParams& p);
/// phi0 |log(phi1 f_t)|, evaluated as phi0 |log phi1 + logp_t|.
Var loss_ace(const Var& logp, std::span<const std::size_t> target, const SmoothingParams& p);
/// -[(1 - xi + xi/C) f~ + (xi (C-1)/C) (log max(1 - e^f~, eps) - log(C - 1))]
/// with f~ the target log-probability.
Var loss_sparse_lsr(const Var& logp, std::span<const std::size_t> target, const SmoothingParams& p);
/// -(1 - f_t)^gamma log f_t
Var loss_focal(const Var& logp, std::span<const std::size_t> target, const SmoothingParams& p);
/// Sparse LSR with the target term weighted by (1 - f_t)^gamma and the
/// redistributed term by f_t^gamma.
Var loss_focal_sparse_lsr(const Var& logp, std::span<const std::size_t> target,
                          const SmoothingParams& p);

Var smoothing_loss(SmoothingLoss id, const Var& logp, std::span<const std::size_t> target,
                   const SmoothingParams& p);

/// Non-differentiable kernel over row-major B x C log-probabilities; returns
/// the batch sum. Sparse losses touch one slot per row.
double kernel_loss(SmoothingLoss id, std::span<const double> logp,
                   std::span<const std::size_t> target, const SmoothingParams& p);
/// Row-wise log-softmax of `logits` into `out` (both B x C).
void kernel_log_softmax(std::span<const double> logits, std::span<double> out, std::size_t C);

enum class Regime { NullEpoch, ZeroError };

std::string_view regime_name(Regime r) noexcept;
Regime regime_from_name(std::string_view name);

struct DeltaReport {
  std::string loss_id;
  std::string regime;
  SmoothingParams params;
  double eps = 0.0;  ///< distance to the one-hot target (zero-error regime)
  double target_delta = 0.0;
  double nontarget_delta = 0.0;
};

/// delta = -dL/df at f = 1/C (null epoch) or f in {eps, 1 - eps (C-1)}
/// (zero error), by autodiff through logp = log f. For the zero-error regime
/// `eps` must lie in (0, 1/C).
DeltaReport behavior_delta(SmoothingLoss id, Regime regime, const SmoothingParams& p,
                           double eps = 1e-4);

struct BenchRow {
  std::string loss_id;
  std::size_t C = 0;
  std::size_t batch = 0;
  bool with_logsoftmax = false;
  double median_ns = 0.0;
};

/// Median wall time per loss evaluation (whole batch), warm-up excluded,
/// with and without the log-softmax.
std::vector<BenchRow> bench_complexity(std::span<const SmoothingLoss> losses,
                                       std::span<const std::size_t> classes, std::size_t batch,
                                       std::size_t reps, std::uint64_t seed = 0);

std::string bench_csv(std::span<const BenchRow> rows);
std::string delta_csv(std::span<const DeltaReport> rows);

}  // namespace evoloss
