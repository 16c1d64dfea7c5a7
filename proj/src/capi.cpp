#include "evoloss/evoloss.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <memory>
#include <new>
#include <sstream>
#include <string>
#include <vector>

#include "evoloss/config.hpp"
#include "evoloss/errors.hpp"
#include "evoloss/evolution.hpp"
#include "evoloss/smoothing.hpp"
#include "json.hpp"

struct evoloss_loss {
  evoloss::MetaLossNetwork net;
};

struct evoloss_dataset {
  evoloss::TaskDataset data;
};

struct evoloss_config {
  evoloss::RunConfig cfg;
};

struct evoloss_run {
  evoloss::RunConfig cfg;
  evoloss::TaskDataset data;
  evoloss::EvolutionResult result;
};

namespace {

using namespace evoloss;

thread_local std::string g_last_error;

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <class Fn>
evoloss_status guarded(Fn&& fn) noexcept {
  try {
    fn();
    g_last_error.clear();
    return EVOLOSS_OK;
  } catch (const UsageError& e) {
    g_last_error = e.what();
    return EVOLOSS_ERR_USAGE;
  } catch (const ParseError& e) {
    g_last_error = e.what();
    return EVOLOSS_ERR_PARSE;
  } catch (const UnsupportedVersionError& e) {
    g_last_error = e.what();
    return EVOLOSS_ERR_VERSION;
  } catch (const DivergenceError& e) {
    g_last_error = e.what();
    return EVOLOSS_ERR_DIVERGENCE;
  } catch (const IoError& e) {
    g_last_error = e.what();
    return EVOLOSS_ERR_IO;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return EVOLOSS_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return EVOLOSS_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return EVOLOSS_ERR_INTERNAL;
  }
}

template <class T>
void require(const T* p, const char* name) {
  if (!p) throw UsageError(std::string(name) + " must not be null");
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

std::string read_file(const char* path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(std::string("cannot open '") + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const char* path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(std::string("cannot write '") + path + "'");
  out << text;
  if (!out.flush()) throw IoError(std::string("write failed for '") + path + "'");
}

TrainConfig train_config(const evoloss_train_options* o) {
  TrainConfig t;
  if (o) {
    t.steps = o->steps;
    t.lr = o->lr;
    t.momentum = o->momentum;
    t.batch_size = o->batch_size;
    t.seed = o->seed;
  }
  if (!(t.lr > 0.0)) throw UsageError("lr must be > 0");
  if (!(t.momentum >= 0.0 && t.momentum < 1.0)) throw UsageError("momentum must be in [0, 1)");
  if (t.batch_size < 1) throw UsageError("batch_size must be >= 1");
  return t;
}

void fill_report(const TrainResult& r, evoloss_train_report* report, char** losses_csv) {
  if (report) {
    report->val_metric = r.val_metric;
    report->test_metric = r.test_metric;
    report->final_train_loss = r.train_loss.empty() ? NAN : r.train_loss.back();
    report->diverged = r.diverged ? 1 : 0;
    report->diverged_step = r.diverged_step;
  }
  if (losses_csv) {
    std::string csv = "step,train_loss\n";
    char buf[64];
    for (std::size_t i = 0; i < r.train_loss.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i, r.train_loss[i]);
      csv += buf;
    }
    *losses_csv = dup_string(csv);
  }
}

double parse_number(const std::string& key, const std::string& text) {
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (text.empty() || *end != '\0') throw UsageError("parameter " + key + " must be a number");
  return v;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string best_meta(const evoloss_run& run) {
  const auto& best = run.result.best;
  nlohmann::json m;
  m["mode"] = run.cfg.evolution.local_search ? "evomal" : "gp-lfl";
  m["seed"] = run.cfg.seed;
  m["task"] = run.data.name;
  m["fitness"] = std::isfinite(best.fitness) ? nlohmann::json(best.fitness) : nlohmann::json(nullptr);
  m["generations"] = run.result.history.size();
  return m.dump();
}

}  // namespace

extern "C" {

const char* evoloss_version(void) { return "0.1.0"; }

const char* evoloss_last_error(void) { return g_last_error.c_str(); }

const char* evoloss_status_name(evoloss_status status) {
  switch (status) {
    case EVOLOSS_OK: return "ok";
    case EVOLOSS_ERR_USAGE: return "usage error";
    case EVOLOSS_ERR_PARSE: return "parse error";
    case EVOLOSS_ERR_VERSION: return "unsupported version";
    case EVOLOSS_ERR_DIVERGENCE: return "divergence";
    case EVOLOSS_ERR_IO: return "i/o error";
    case EVOLOSS_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

void evoloss_string_free(char* s) { std::free(s); }

evoloss_status evoloss_loss_from_expression(const char* expression, const char* activation, int unit,
                                            double init_sd, uint64_t seed, evoloss_loss** out) {
  return guarded([&] {
    require(expression, "expression");
    require(out, "out");
    const ExprTree tree = ExprTree::parse(expression);
    const Activation act = activation ? activation_from_name(activation) : Activation::Identity;
    if (unit) {
      *out = new evoloss_loss{MetaLossNetwork::unit(tree, act)};
    } else {
      if (!(init_sd >= 0.0)) throw UsageError("init_sd must be >= 0");
      Rng rng(seed);
      *out = new evoloss_loss{MetaLossNetwork::compile(tree, act, rng, init_sd)};
    }
  });
}

evoloss_status evoloss_loss_load(const char* path, evoloss_loss** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new evoloss_loss{deserialize(read_file(path))};
  });
}

evoloss_status evoloss_loss_save(const evoloss_loss* loss, const char* path) {
  return guarded([&] {
    require(loss, "loss");
    require(path, "path");
    write_file(path, serialize(loss->net));
  });
}

evoloss_status evoloss_loss_deserialize(const char* text, evoloss_loss** out) {
  return guarded([&] {
    require(text, "text");
    require(out, "out");
    *out = new evoloss_loss{deserialize(text)};
  });
}

evoloss_status evoloss_loss_serialize(const evoloss_loss* loss, char** out) {
  return guarded([&] {
    require(loss, "loss");
    require(out, "out");
    *out = dup_string(serialize(loss->net));
  });
}

evoloss_status evoloss_loss_expression(const evoloss_loss* loss, char** out) {
  return guarded([&] {
    require(loss, "loss");
    require(out, "out");
    *out = dup_string(loss->net.tree().to_string());
  });
}

evoloss_status evoloss_loss_infix(const evoloss_loss* loss, char** out) {
  return guarded([&] {
    require(loss, "loss");
    require(out, "out");
    *out = dup_string(loss->net.tree().to_infix());
  });
}

size_t evoloss_loss_weight_count(const evoloss_loss* loss) {
  return loss ? loss->net.weights().size() : 0;
}

evoloss_status evoloss_loss_weights(const evoloss_loss* loss, double* out, size_t n) {
  return guarded([&] {
    require(loss, "loss");
    const auto& w = loss->net.weights();
    if (n > 0) require(out, "out");
    for (std::size_t i = 0; i < std::min(n, w.size()); ++i) out[i] = w[i];
  });
}

evoloss_status evoloss_loss_evaluate(const evoloss_loss* loss, const double* y, const double* f,
                                     size_t n, double* out) {
  return guarded([&] {
    require(loss, "loss");
    require(y, "y");
    require(f, "f");
    require(out, "out");
    if (n == 0) throw UsageError("n must be >= 1");
    NoGradGuard guard;
    const Var yv(Tensor::matrix(n, 1, std::vector<double>(y, y + n)));
    const Var fv(Tensor::matrix(n, 1, std::vector<double>(f, f + n)));
    *out = loss->net.forward(yv, fv).item();
  });
}

void evoloss_loss_free(evoloss_loss* loss) { delete loss; }

evoloss_status evoloss_dataset_from_spec(const char* spec, evoloss_dataset** out) {
  return guarded([&] {
    require(spec, "spec");
    require(out, "out");
    *out = new evoloss_dataset{dataset_from_spec(spec)};
  });
}

evoloss_status evoloss_dataset_info_get(const evoloss_dataset* data, evoloss_dataset_info* out) {
  return guarded([&] {
    require(data, "data");
    require(out, "out");
    const TaskDataset& d = data->data;
    out->classification = d.kind == TaskKind::Classification ? 1 : 0;
    out->classes = d.num_classes;
    out->features = d.num_features;
    out->train = d.train.size();
    out->val = d.val.size();
    out->test = d.test.size();
  });
}

void evoloss_dataset_free(evoloss_dataset* data) { delete data; }

evoloss_train_options evoloss_train_defaults(void) {
  const TrainConfig t;
  return {t.steps, t.lr, t.momentum, t.batch_size, t.seed};
}

evoloss_status evoloss_train_loss(const evoloss_loss* loss, const evoloss_dataset* data,
                                  const evoloss_train_options* options, evoloss_train_report* report,
                                  char** losses_csv) {
  return guarded([&] {
    require(loss, "loss");
    require(data, "data");
    const TrainConfig t = train_config(options);
    const auto r = train_at_meta_test(network_loss(loss->net, data->data.kind), data->data, t);
    fill_report(r, report, losses_csv);
  });
}

evoloss_status evoloss_train_builtin(const char* name, const evoloss_dataset* data,
                                     const evoloss_train_options* options, evoloss_train_report* report,
                                     char** losses_csv) {
  return guarded([&] {
    require(name, "name");
    require(data, "data");
    const TrainConfig t = train_config(options);
    const auto r = train_at_meta_test(builtin_loss(name, data->data), data->data, t);
    fill_report(r, report, losses_csv);
  });
}

evoloss_status evoloss_config_parse(const char* json, evoloss_config** out) {
  return guarded([&] {
    require(json, "json");
    require(out, "out");
    *out = new evoloss_config{parse_run_config(json)};
  });
}

evoloss_status evoloss_config_load(const char* path, evoloss_config** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new evoloss_config{parse_run_config(read_file(path))};
  });
}

evoloss_status evoloss_config_set_seed(evoloss_config* cfg, uint64_t seed) {
  return guarded([&] {
    require(cfg, "cfg");
    cfg->cfg.seed = seed;
  });
}

evoloss_status evoloss_config_set_local_search(evoloss_config* cfg, int enabled) {
  return guarded([&] {
    require(cfg, "cfg");
    cfg->cfg.evolution.local_search = enabled != 0;
  });
}

evoloss_status evoloss_config_set_workers(evoloss_config* cfg, size_t workers) {
  return guarded([&] {
    require(cfg, "cfg");
    cfg->cfg.evolution.workers = workers;
  });
}

evoloss_status evoloss_config_json(const evoloss_config* cfg, char** out) {
  return guarded([&] {
    require(cfg, "cfg");
    require(out, "out");
    *out = dup_string(run_config_json(cfg->cfg));
  });
}

void evoloss_config_free(evoloss_config* cfg) { delete cfg; }

evoloss_status evoloss_meta_train(const evoloss_config* cfg, const evoloss_dataset* data,
                                  evoloss_progress_fn progress, void* user, evoloss_run** out) {
  return guarded([&] {
    require(cfg, "cfg");
    require(out, "out");
    auto run = std::make_unique<evoloss_run>();
    run->cfg = cfg->cfg;
    run->data = data ? data->data : dataset_from_spec(cfg->cfg.dataset);
    ProgressFn fn;
    if (progress) {
      fn = [progress, user](const GenerationRecord& r) {
        progress(r.generation, r.best_fitness, r.mean_fitness, r.best_expression.c_str(), user);
      };
    }
    run->result = run_evolution(run->cfg.evolution, run->data, run->cfg.seed, fn);
    *out = run.release();
  });
}

double evoloss_run_best_fitness(const evoloss_run* run) {
  return run ? run->result.best.fitness : NAN;
}

evoloss_status evoloss_run_best_loss(const evoloss_run* run, evoloss_loss** out) {
  return guarded([&] {
    require(run, "run");
    require(out, "out");
    MetaLossNetwork net = *run->result.best.net;
    net.set_meta_json(best_meta(*run));
    *out = new evoloss_loss{std::move(net)};
  });
}

evoloss_status evoloss_run_manifest(const evoloss_run* run, char** out) {
  return guarded([&] {
    require(run, "run");
    require(out, "out");
    *out = dup_string(run_manifest(run->cfg, run->data, run->result));
  });
}

evoloss_status evoloss_run_filter_csv(const evoloss_run* run, char** out) {
  return guarded([&] {
    require(run, "run");
    require(out, "out");
    std::vector<FilterCounts> counts;
    for (const auto& h : run->result.history) counts.push_back(h.counts);
    *out = dup_string(filter_stats_csv(counts));
  });
}

void evoloss_run_free(evoloss_run* run) { delete run; }

evoloss_status evoloss_bench_smoothing(const char* losses, const size_t* classes, size_t n_classes,
                                       size_t batch, size_t reps, uint64_t seed, char** csv) {
  return guarded([&] {
    require(losses, "losses");
    require(csv, "csv");
    if (n_classes == 0) throw UsageError("classes must not be empty");
    require(classes, "classes");
    if (batch == 0) throw UsageError("batch must be >= 1");
    if (reps == 0) throw UsageError("reps must be >= 1");
    std::vector<SmoothingLoss> ids;
    for (const auto& name : split_list(losses)) ids.push_back(smoothing_loss_from_name(name));
    if (ids.empty()) throw UsageError("losses must not be empty");
    const std::vector<std::size_t> cs(classes, classes + n_classes);
    const auto rows = bench_complexity(ids, cs, batch, reps, seed);
    *csv = dup_string(bench_csv(rows));
  });
}

evoloss_status evoloss_delta_report(const char* loss, const char* regime, const char* params,
                                    char** csv) {
  return guarded([&] {
    require(loss, "loss");
    require(regime, "regime");
    require(csv, "csv");
    const SmoothingLoss id = smoothing_loss_from_name(loss);
    const Regime r = regime_from_name(regime);
    SmoothingParams p;
    double eps = 1e-4;
    for (const auto& kv : split_list(params ? params : "")) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw UsageError("parameter '" + kv + "' must be key=value");
      const std::string key = kv.substr(0, eq);
      const double v = parse_number(key, kv.substr(eq + 1));
      if (key == "C") {
        if (v < 2 || v != std::floor(v)) throw UsageError("parameter C must be an integer >= 2");
        p.C = static_cast<std::size_t>(v);
      } else if (key == "xi") {
        p.xi = v;
      } else if (key == "gamma") {
        p.gamma = v;
      } else if (key == "phi0") {
        p.phi0 = v;
      } else if (key == "phi1") {
        p.phi1 = v;
      } else if (key == "eps") {
        eps = v;
      } else {
        throw UsageError("unknown parameter '" + key + "' (C, xi, gamma, phi0, phi1, eps)");
      }
    }
    const DeltaReport rep = behavior_delta(id, r, p, eps);
    *csv = dup_string(delta_csv(std::span<const DeltaReport>(&rep, 1)));
  });
}

}  // extern "C"
