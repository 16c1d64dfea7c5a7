#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "evoloss/evolution.hpp"

namespace evoloss {

/// Everything a meta-training run needs.
///
/// The JSON form mirrors the struct layout:
///
///     {"seed": 0, "dataset": "blobs:C=2,dim=2,sep=4.0,n=500,seed=1",
///      "gp": {...}, "meta": {...}, "filters": {...},
///      "training": {"lr": 0.01, "momentum": 0.9, "batch_size": 64,
///                   "learner": {"kind": "mlp", "hidden": [32], "activation": "relu"}},
///      "local_search": true, "activation": "identity", "init_sd": 0.001,
///      "workers": 0}
///
/// Every field is optional and defaults to the values in the structs.
struct RunConfig {
  EvolutionConfig evolution;
  std::string dataset = "blobs:C=2,dim=2,sep=4.0,n=500,seed=1";
  std::uint64_t seed = 0;
};

/// Throws ParseError for malformed JSON and UsageError naming the offending
/// field (e.g. "config: gp.population_size must be >= 1") otherwise.
RunConfig parse_run_config(std::string_view json_text);
RunConfig load_run_config(const std::string& path);

/// Full config as JSON, defaults included.
std::string run_config_json(const RunConfig& cfg);

/// Run manifest: config, seed, task summary, per-generation history with
/// filter counts, best loss and a "timing" object. Infinite fitness is null.
std::string run_manifest(const RunConfig& cfg, const TaskDataset& task, const EvolutionResult& result);

}  // namespace evoloss
