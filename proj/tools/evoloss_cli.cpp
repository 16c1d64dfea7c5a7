// Command-line front end over the C API.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "evoloss/evoloss.h"

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

struct Failure {
  int code;
  std::string message;
};

int exit_code(evoloss_status s) {
  return (s == EVOLOSS_ERR_USAGE || s == EVOLOSS_ERR_PARSE) ? kExitUsage : kExitRuntime;
}

void check(evoloss_status s) {
  if (s != EVOLOSS_OK) throw Failure{exit_code(s), evoloss_last_error()};
}

struct StringDeleter {
  void operator()(char* s) const { evoloss_string_free(s); }
};
using OwnedString = std::unique_ptr<char, StringDeleter>;

template <class T, void (*Free)(T*)>
struct HandleDeleter {
  void operator()(T* p) const { Free(p); }
};
using Loss = std::unique_ptr<evoloss_loss, HandleDeleter<evoloss_loss, evoloss_loss_free>>;
using Dataset = std::unique_ptr<evoloss_dataset, HandleDeleter<evoloss_dataset, evoloss_dataset_free>>;
using Config = std::unique_ptr<evoloss_config, HandleDeleter<evoloss_config, evoloss_config_free>>;
using Run = std::unique_ptr<evoloss_run, HandleDeleter<evoloss_run, evoloss_run_free>>;

std::string take(char* s) { return OwnedString(s).get(); }

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out || !(out << text) || !out.flush()) {
    throw Failure{kExitRuntime, "cannot write '" + path + "'"};
  }
}

std::string number(double v) {
  if (!std::isfinite(v)) return "null";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string manifest_path_for(const std::string& loss_path) {
  const auto slash = loss_path.find_last_of('/');
  const auto dot = loss_path.find_last_of('.');
  const bool has_ext = dot != std::string::npos && (slash == std::string::npos || dot > slash);
  return (has_ext ? loss_path.substr(0, dot) : loss_path) + ".manifest.json";
}

struct MetaTrainArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string manifest;
  std::string filter_csv;
  std::string dataset;
  bool no_local_search = false;
  std::size_t workers = 0;
  bool quiet = false;
};

void progress(size_t generation, double best, double mean, const char* expr, void*) {
  std::fprintf(stderr, "generation %zu  best %s  mean %s  %s\n", generation, number(best).c_str(),
               number(mean).c_str(), expr);
}

int meta_train(const MetaTrainArgs& a) {
  evoloss_config* raw_cfg = nullptr;
  check(evoloss_config_load(a.config.c_str(), &raw_cfg));
  Config cfg(raw_cfg);
  if (a.seed) check(evoloss_config_set_seed(cfg.get(), *a.seed));
  if (a.no_local_search) check(evoloss_config_set_local_search(cfg.get(), 0));
  if (a.workers > 0) check(evoloss_config_set_workers(cfg.get(), a.workers));

  Dataset data;
  if (!a.dataset.empty()) {
    evoloss_dataset* raw = nullptr;
    check(evoloss_dataset_from_spec(a.dataset.c_str(), &raw));
    data.reset(raw);
  }
  evoloss_run* raw_run = nullptr;
  check(evoloss_meta_train(cfg.get(), data.get(), a.quiet ? nullptr : progress, nullptr, &raw_run));
  Run run(raw_run);

  evoloss_loss* raw_best = nullptr;
  check(evoloss_run_best_loss(run.get(), &raw_best));
  Loss best(raw_best);
  check(evoloss_loss_save(best.get(), a.out.c_str()));

  char* manifest = nullptr;
  check(evoloss_run_manifest(run.get(), &manifest));
  const std::string manifest_path = a.manifest.empty() ? manifest_path_for(a.out) : a.manifest;
  write_text(manifest_path, take(manifest));
  if (!a.filter_csv.empty()) {
    char* csv = nullptr;
    check(evoloss_run_filter_csv(run.get(), &csv));
    write_text(a.filter_csv, take(csv));
  }

  char* infix = nullptr;
  check(evoloss_loss_infix(best.get(), &infix));
  std::printf("best %s  fitness %s\nwrote %s and %s\n", take(infix).c_str(),
              number(evoloss_run_best_fitness(run.get())).c_str(), a.out.c_str(), manifest_path.c_str());
  return 0;
}

struct TrainArgs {
  std::string loss;
  std::string builtin;
  std::string dataset;
  evoloss_train_options opts = evoloss_train_defaults();
  std::string out;
  std::string losses_csv;
};

int train(const TrainArgs& a) {
  evoloss_dataset* raw_data = nullptr;
  check(evoloss_dataset_from_spec(a.dataset.c_str(), &raw_data));
  Dataset data(raw_data);

  evoloss_train_report report{};
  char* csv = nullptr;
  char** csv_out = a.losses_csv.empty() ? nullptr : &csv;
  std::string loss_name;
  if (!a.loss.empty()) {
    evoloss_loss* raw = nullptr;
    check(evoloss_loss_load(a.loss.c_str(), &raw));
    Loss loss(raw);
    char* infix = nullptr;
    check(evoloss_loss_infix(loss.get(), &infix));
    loss_name = take(infix);
    check(evoloss_train_loss(loss.get(), data.get(), &a.opts, &report, csv_out));
  } else {
    loss_name = a.builtin;
    check(evoloss_train_builtin(a.builtin.c_str(), data.get(), &a.opts, &report, csv_out));
  }
  if (csv_out) write_text(a.losses_csv, take(csv));

  evoloss_dataset_info info{};
  check(evoloss_dataset_info_get(data.get(), &info));
  const char* metric = info.classification ? "error_rate" : "mse";
  std::string json = "{\n";
  json += "  \"loss\": \"" + loss_name + "\",\n";
  json += "  \"dataset\": \"" + a.dataset + "\",\n";
  json += "  \"steps\": " + std::to_string(a.opts.steps) + ",\n";
  json += "  \"lr\": " + number(a.opts.lr) + ",\n";
  json += "  \"seed\": " + std::to_string(a.opts.seed) + ",\n";
  json += "  \"metric\": \"" + std::string(metric) + "\",\n";
  json += "  \"val\": " + number(report.val_metric) + ",\n";
  json += "  \"test\": " + number(report.test_metric) + ",\n";
  json += "  \"final_train_loss\": " + number(report.final_train_loss) + ",\n";
  json += "  \"diverged\": " + std::string(report.diverged ? "true" : "false") + "\n}\n";
  write_text(a.out, json);

  std::printf("%s  val %s %s  test %s %s%s\n", loss_name.c_str(), metric, number(report.val_metric).c_str(),
              metric, number(report.test_metric).c_str(),
              report.diverged ? ("  diverged at step " + std::to_string(report.diverged_step)).c_str() : "");
  return report.diverged ? kExitRuntime : 0;
}

struct BenchArgs {
  std::string losses = "ce,lsr,sparse_lsr";
  std::vector<std::size_t> classes = {10, 100, 1000, 10000};
  std::size_t batch = 100;
  std::size_t reps = 20;
  std::uint64_t seed = 0;
  std::string out;
};

int bench(const BenchArgs& a) {
  char* csv = nullptr;
  check(evoloss_bench_smoothing(a.losses.c_str(), a.classes.data(), a.classes.size(), a.batch, a.reps,
                                a.seed, &csv));
  const std::string text = take(csv);
  if (a.out.empty()) {
    std::fputs(text.c_str(), stdout);
  } else {
    write_text(a.out, text);
  }
  return 0;
}

struct DeltaArgs {
  std::string loss;
  std::string regime;
  std::string params;
};

int delta(const DeltaArgs& a) {
  char* csv = nullptr;
  check(evoloss_delta_report(a.loss.c_str(), a.regime.c_str(), a.params.c_str(), &csv));
  std::fputs(take(csv).c_str(), stdout);
  return 0;
}

int inspect(const std::string& path) {
  evoloss_loss* raw = nullptr;
  check(evoloss_loss_load(path.c_str(), &raw));
  Loss loss(raw);
  char* infix = nullptr;
  char* expr = nullptr;
  check(evoloss_loss_infix(loss.get(), &infix));
  check(evoloss_loss_expression(loss.get(), &expr));
  std::vector<double> w(evoloss_loss_weight_count(loss.get()));
  check(evoloss_loss_weights(loss.get(), w.data(), w.size()));
  std::printf("%s\n", take(infix).c_str());
  std::printf("expression: %s\n", take(expr).c_str());
  std::printf("weights:");
  for (double v : w) std::printf(" %.17g", v);
  std::printf("\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Evolved meta-learned loss functions"};
  app.require_subcommand(1);
  app.set_version_flag("--version", evoloss_version());

  MetaTrainArgs mt;
  auto* cmd_mt = app.add_subcommand("meta-train", "Search for a loss function and write the best one");
  cmd_mt->add_option("--config", mt.config, "JSON run configuration")->required()->check(CLI::ExistingFile);
  cmd_mt->add_option("--seed", mt.seed, "Run seed (overrides the config)");
  cmd_mt->add_option("--out", mt.out, "Output .loss document")->required();
  cmd_mt->add_option("--manifest", mt.manifest, "Run manifest path (default: <out>.manifest.json)");
  cmd_mt->add_option("--filter-csv", mt.filter_csv, "Per-generation filter statistics CSV");
  cmd_mt->add_option("--dataset", mt.dataset, "Dataset spec (overrides the config)");
  cmd_mt->add_flag("--no-local-search", mt.no_local_search, "GP-LFL mode: skip weight optimization");
  cmd_mt->add_option("--workers", mt.workers, "Worker threads (default: EVOLOSS_WORKERS or all cores)");
  cmd_mt->add_flag("--quiet", mt.quiet, "No per-generation progress");

  TrainArgs tr;
  auto* cmd_tr = app.add_subcommand("train", "Train a fresh learner with a loss");
  auto* loss_opt = cmd_tr->add_option("--loss", tr.loss, ".loss document")->check(CLI::ExistingFile);
  auto* builtin_opt = cmd_tr->add_option("--builtin", tr.builtin,
                                         "squared, ce, lsr, ace, sparse_lsr, focal or focal_sparse_lsr");
  loss_opt->excludes(builtin_opt);
  cmd_tr->add_option("--dataset", tr.dataset, "Dataset spec, e.g. blobs:C=2,dim=2,sep=4.0,n=500,seed=1")
      ->required();
  cmd_tr->add_option("--steps", tr.opts.steps, "Training steps")->capture_default_str();
  cmd_tr->add_option("--lr", tr.opts.lr, "Learning rate")->capture_default_str();
  cmd_tr->add_option("--momentum", tr.opts.momentum, "Momentum")->capture_default_str();
  cmd_tr->add_option("--batch", tr.opts.batch_size, "Batch size")->capture_default_str();
  cmd_tr->add_option("--seed", tr.opts.seed, "Learner seed")->capture_default_str();
  cmd_tr->add_option("--out", tr.out, "JSON report")->required();
  cmd_tr->add_option("--losses-csv", tr.losses_csv, "Per-step training loss CSV");

  BenchArgs be;
  auto* cmd_be = app.add_subcommand("bench-smoothing", "Time smoothing losses across class counts");
  cmd_be->add_option("--losses", be.losses, "Comma-separated loss names")->capture_default_str();
  cmd_be->add_option("--classes", be.classes, "Class counts")->delimiter(',')->capture_default_str();
  cmd_be->add_option("--batch", be.batch, "Batch size")->capture_default_str();
  cmd_be->add_option("--reps", be.reps, "Timed repetitions per cell")->capture_default_str();
  cmd_be->add_option("--seed", be.seed, "Logit seed")->capture_default_str();
  cmd_be->add_option("--out", be.out, "Output CSV (default: stdout)");

  DeltaArgs de;
  auto* cmd_de = app.add_subcommand("delta-report", "Behavior delta of a smoothing loss");
  cmd_de->add_option("--loss", de.loss, "ce, lsr, ace, sparse_lsr, focal or focal_sparse_lsr")->required();
  cmd_de->add_option("--regime", de.regime, "null or zero")->required();
  cmd_de->add_option("--params", de.params, "key=value list among C, xi, gamma, phi0, phi1, eps");

  std::string inspect_path;
  auto* cmd_in = app.add_subcommand("inspect", "Print a loss document's expression and weights");
  cmd_in->add_option("--loss", inspect_path, ".loss document")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (*cmd_mt) return meta_train(mt);
    if (*cmd_tr) {
      if (tr.loss.empty() == tr.builtin.empty()) {
        std::cerr << "train: exactly one of --loss or --builtin is required\n" << cmd_tr->help();
        return kExitUsage;
      }
      return train(tr);
    }
    if (*cmd_be) return bench(be);
    if (*cmd_de) return delta(de);
    if (*cmd_in) return inspect(inspect_path);
  } catch (const Failure& f) {
    std::cerr << "error: " << f.message << "\n";
    return f.code;
  }
  return kExitUsage;
}
