#include "evoloss/smoothing.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>

#include "evoloss/errors.hpp"
#include "evoloss/gp.hpp"

namespace evoloss {

void SmoothingParams::validate() const {
  if (!(xi >= 0.0 && xi < 1.0)) throw UsageError("xi must be in [0, 1)");
  if (C < 2) throw UsageError("C must be >= 2");
  if (!(gamma >= 0.0)) throw UsageError("gamma must be >= 0");
  if (!(phi1 > 0.0)) throw UsageError("phi1 must be > 0");
  if (!std::isfinite(phi0)) throw UsageError("phi0 must be finite");
  if (!(eps > 0.0 && eps < 1.0)) throw UsageError("eps must be in (0, 1)");
}

namespace {

constexpr std::pair<SmoothingLoss, std::string_view> kNames[] = {
    {SmoothingLoss::CE, "ce"},
    {SmoothingLoss::LSR, "lsr"},
    {SmoothingLoss::ACE, "ace"},
    {SmoothingLoss::SparseLSR, "sparse_lsr"},
    {SmoothingLoss::Focal, "focal"},
    {SmoothingLoss::FocalSparseLSR, "focal_sparse_lsr"},
};

void check_targets(const Var& logp, std::span<const std::size_t> target, const SmoothingParams& p) {
  const auto& v = logp.value();
  if (v.rank() != 2) throw UsageError("smoothing loss: logp must be B x C");
  if (v.cols() != p.C) {
    throw UsageError("smoothing loss: logp has " + std::to_string(v.cols()) + " classes, params say " +
                     std::to_string(p.C));
  }
  if (target.size() != v.rows()) throw UsageError("smoothing loss: one target per row required");
  for (std::size_t t : target) {
    if (t >= p.C) throw UsageError("smoothing loss: target index " + std::to_string(t) + " out of range");
  }
}

double target_weight(const SmoothingParams& p) {
  return 1.0 - p.xi + p.xi / static_cast<double>(p.C);
}

double spread_weight(const SmoothingParams& p) {
  const double c = static_cast<double>(p.C);
  return p.xi * (c - 1.0) / c;
}

/// log(max(1 - e^ft, eps)) - log(C - 1)
Var redistributed_term(const Var& ft, const SmoothingParams& p) {
  return add_scalar(log(clamp_min(one_minus_exp(ft), p.eps)),
                    -std::log(static_cast<double>(p.C) - 1.0));
}

}  // namespace

std::string_view smoothing_loss_name(SmoothingLoss id) noexcept {
  for (const auto& [k, n] : kNames) {
    if (k == id) return n;
  }
  return "?";
}

SmoothingLoss smoothing_loss_from_name(std::string_view name) {
  for (const auto& [k, n] : kNames) {
    if (n == name) return k;
  }
  throw UsageError("unknown loss '" + std::string(name) +
                   "' (ce|lsr|ace|sparse_lsr|focal|focal_sparse_lsr)");
}

bool is_sparse(SmoothingLoss id) noexcept { return id != SmoothingLoss::LSR; }

Var loss_ce(const Var& logp, std::span<const std::size_t> target, const SmoothingParams& p) {
  check_targets(logp, target, p);
  return neg(mean(gather(logp, target)));
}

Var loss_lsr(const Var& logp, std::span<const std::size_t> target, const SmoothingParams& p) {
  check_targets(logp, target, p);
  const std::size_t B = target.size();
  Tensor w = Tensor::full({B, p.C}, p.xi / static_cast<double>(p.C));
  for (std::size_t b = 0; b < B; ++b) w[b * p.C + target[b]] = (1.0 - p.xi) + p.xi / static_cast<double>(p.C);
  return neg(scale(sum(mul(Var(std::move(w)), logp)), 1.0 / static_cast<double>(B)));
}

Var loss_ace(const Var& logp, std::span<const std::size_t> target, const SmoothingParams& p) {
  check_targets(logp, target, p);
  return mean(scale(abs(add_scalar(gather(logp, target), std::log(p.phi1))), p.phi0));
}

Var loss_sparse_lsr(const Var& logp, std::span<const std::size_t> target, const SmoothingParams& p) {
  check_targets(logp, target, p);
  const Var ft = gather(logp, target);
  return neg(mean(add(scale(ft, target_weight(p)), scale(redistributed_term(ft, p), spread_weight(p)))));
}

Var loss_focal(const Var& logp, std::span<const std::size_t> target, const SmoothingParams& p) {
  check_targets(logp, target, p);
  const Var ft = gather(logp, target);
  return neg(mean(mul(pow(one_minus_exp(ft), p.gamma), ft)));
}

Var loss_focal_sparse_lsr(const Var& logp, std::span<const std::size_t> target,
                          const SmoothingParams& p) {
  check_targets(logp, target, p);
  const Var ft = gather(logp, target);
  const Var hard = pow(one_minus_exp(ft), p.gamma);  // (1 - f_t)^gamma
  const Var easy = exp(scale(ft, p.gamma));          // f_t^gamma
  return neg(mean(add(mul(hard, scale(ft, target_weight(p))),
                      mul(easy, scale(redistributed_term(ft, p), spread_weight(p))))));
}

Var smoothing_loss(SmoothingLoss id, const Var& logp, std::span<const std::size_t> target,
                   const SmoothingParams& p) {
  switch (id) {
    case SmoothingLoss::CE:
      return loss_ce(logp, target, p);
    case SmoothingLoss::LSR:
      return loss_lsr(logp, target, p);
    case SmoothingLoss::ACE:
      return loss_ace(logp, target, p);
    case SmoothingLoss::SparseLSR:
      return loss_sparse_lsr(logp, target, p);
    case SmoothingLoss::Focal:
      return loss_focal(logp, target, p);
    case SmoothingLoss::FocalSparseLSR:
      return loss_focal_sparse_lsr(logp, target, p);
  }
  throw UsageError("unknown smoothing loss");
}

// ---------------------------------------------------------------- kernels

double kernel_loss(SmoothingLoss id, std::span<const double> logp,
                   std::span<const std::size_t> target, const SmoothingParams& p) {
  const std::size_t C = p.C;
  const std::size_t B = target.size();
  const double a = target_weight(p), s = spread_weight(p);
  const double log_cm1 = std::log(static_cast<double>(C) - 1.0);
  const double log_phi1 = std::log(p.phi1);
  double total = 0.0;
  switch (id) {
    case SmoothingLoss::LSR: {
      const double off = p.xi / static_cast<double>(C);
      const double on = (1.0 - p.xi) + off;
      for (std::size_t b = 0; b < B; ++b) {
        const double* row = logp.data() + b * C;
        double acc = 0.0;
        for (std::size_t i = 0; i < C; ++i) acc += row[i];
        total -= off * acc + (on - off) * row[target[b]];
      }
      return total;
    }
    case SmoothingLoss::CE:
      for (std::size_t b = 0; b < B; ++b) total -= logp[b * C + target[b]];
      return total;
    case SmoothingLoss::ACE:
      for (std::size_t b = 0; b < B; ++b) total += p.phi0 * std::fabs(log_phi1 + logp[b * C + target[b]]);
      return total;
    case SmoothingLoss::SparseLSR:
      for (std::size_t b = 0; b < B; ++b) {
        const double ft = logp[b * C + target[b]];
        total -= a * ft + s * (std::log(std::max(-std::expm1(ft), p.eps)) - log_cm1);
      }
      return total;
    case SmoothingLoss::Focal:
      for (std::size_t b = 0; b < B; ++b) {
        const double ft = logp[b * C + target[b]];
        total -= std::pow(-std::expm1(ft), p.gamma) * ft;
      }
      return total;
    case SmoothingLoss::FocalSparseLSR:
      for (std::size_t b = 0; b < B; ++b) {
        const double ft = logp[b * C + target[b]];
        const double red = std::log(std::max(-std::expm1(ft), p.eps)) - log_cm1;
        total -= std::pow(-std::expm1(ft), p.gamma) * (a * ft) + std::exp(p.gamma * ft) * (s * red);
      }
      return total;
  }
  return total;
}

void kernel_log_softmax(std::span<const double> logits, std::span<double> out, std::size_t C) {
  const std::size_t B = logits.size() / C;
  for (std::size_t b = 0; b < B; ++b) {
    const double* z = logits.data() + b * C;
    double* o = out.data() + b * C;
    const double m = *std::max_element(z, z + C);
    double acc = 0.0;
    for (std::size_t i = 0; i < C; ++i) acc += std::exp(z[i] - m);
    const double lse = m + std::log(acc);
    for (std::size_t i = 0; i < C; ++i) o[i] = z[i] - lse;
  }
}

// ---------------------------------------------------------------- delta

std::string_view regime_name(Regime r) noexcept { return r == Regime::NullEpoch ? "null" : "zero"; }

Regime regime_from_name(std::string_view name) {
  if (name == "null" || name == "null-epoch") return Regime::NullEpoch;
  if (name == "zero" || name == "zero-error") return Regime::ZeroError;
  throw UsageError("unknown regime '" + std::string(name) + "' (null|zero)");
}

DeltaReport behavior_delta(SmoothingLoss id, Regime regime, const SmoothingParams& p, double eps) {
  p.validate();
  const std::size_t C = p.C;
  const double c = static_cast<double>(C);
  std::vector<double> f(C);
  if (regime == Regime::NullEpoch) {
    std::fill(f.begin(), f.end(), 1.0 / c);
  } else {
    if (!(eps > 0.0 && eps < 1.0 / c)) {
      throw UsageError("eps must lie in (0, 1/C) for the zero-error regime");
    }
    std::fill(f.begin(), f.end(), eps);
    f[0] = 1.0 - eps * (c - 1.0);
  }
  const Var probs(Tensor::matrix(1, C, f), true);
  const std::vector<std::size_t> target{0};
  const Var loss = smoothing_loss(id, log(probs), target, p);
  const Tensor g = grad(loss, probs).value();

  DeltaReport r;
  r.loss_id = std::string(smoothing_loss_name(id));
  r.regime = std::string(regime_name(regime));
  r.params = p;
  r.eps = regime == Regime::ZeroError ? eps : 0.0;
  r.target_delta = -g[0];
  r.nontarget_delta = -g[1];
  return r;
}

// ---------------------------------------------------------------- benchmark

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::vector<BenchRow> bench_complexity(std::span<const SmoothingLoss> losses,
                                       std::span<const std::size_t> classes, std::size_t batch,
                                       std::size_t reps, std::uint64_t seed) {
  if (batch == 0) throw UsageError("bench: batch must be >= 1");
  if (reps == 0) throw UsageError("bench: reps must be >= 1");
  using clock = std::chrono::steady_clock;
  std::vector<BenchRow> rows;
  for (std::size_t C : classes) {
    if (C < 2) throw UsageError("bench: class counts must be >= 2");
    Rng rng(seed + C);
    std::normal_distribution<double> n(0.0, 2.0);
    std::vector<double> logits(batch * C), logp(batch * C), scratch(batch * C);
    for (auto& v : logits) v = n(rng);
    kernel_log_softmax(logits, logp, C);
    std::vector<std::size_t> target(batch);
    std::uniform_int_distribution<std::size_t> pick(0, C - 1);
    for (auto& t : target) t = pick(rng);
    SmoothingParams p;
    p.C = C;

    for (const SmoothingLoss id : losses) {
      for (const bool with_ls : {false, true}) {
        volatile double sink = 0.0;
        auto call = [&] {
          if (with_ls) {
            kernel_log_softmax(logits, scratch, C);
            sink = sink + kernel_loss(id, scratch, target, p);
          } else {
            sink = sink + kernel_loss(id, logp, target, p);
          }
        };
        // Warm-up, then size the inner loop to roughly 50 microseconds.
        const auto w0 = clock::now();
        call();
        const double one = std::chrono::duration<double, std::nano>(clock::now() - w0).count();
        const auto inner = static_cast<std::size_t>(std::clamp(5e4 / std::max(one, 1.0), 1.0, 1e5));
        std::vector<double> samples;
        samples.reserve(reps);
        for (std::size_t r = 0; r < reps; ++r) {
          const auto t0 = clock::now();
          for (std::size_t k = 0; k < inner; ++k) call();
          const double ns = std::chrono::duration<double, std::nano>(clock::now() - t0).count();
          samples.push_back(ns / static_cast<double>(inner));
        }
        rows.push_back({std::string(smoothing_loss_name(id)), C, batch, with_ls, median(samples)});
      }
    }
  }
  return rows;
}

std::string bench_csv(std::span<const BenchRow> rows) {
  std::ostringstream out;
  out << "loss_id,C,batch,with_logsoftmax,median_ns\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.1f", r.median_ns);
    out << r.loss_id << ',' << r.C << ',' << r.batch << ',' << (r.with_logsoftmax ? 1 : 0) << ','
        << buf << '\n';
  }
  return out.str();
}

std::string delta_csv(std::span<const DeltaReport> rows) {
  std::ostringstream out;
  out << "loss_id,regime,C,xi,gamma,phi0,phi1,eps,target_delta,nontarget_delta\n";
  char buf[512];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%s,%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  r.loss_id.c_str(), r.regime.c_str(), r.params.C, r.params.xi, r.params.gamma,
                  r.params.phi0, r.params.phi1, r.eps, r.target_delta, r.nontarget_delta);
    out << buf;
  }
  return out.str();
}

}  // namespace evoloss
