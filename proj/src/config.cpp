#include "evoloss/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "evoloss/errors.hpp"
#include "json.hpp"

namespace evoloss {

using nlohmann::json;

namespace {

[[noreturn]] void field_error(const std::string& path, const std::string& what) {
  throw UsageError("config: " + path + " " + what);
}

/// Reads optional fields of one JSON object and rejects unknown ones.
class Section {
 public:
  Section(const json& obj, std::string prefix) : obj_(obj), prefix_(std::move(prefix)) {
    if (!obj_.is_object()) {
      field_error(prefix_.empty() ? "top level" : prefix_, "must be an object");
    }
  }

  std::string path(const std::string& key) const { return prefix_.empty() ? key : prefix_ + "." + key; }

  const json* get(const std::string& key) {
    seen_.insert(key);
    auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  void boolean(const std::string& key, bool& out) {
    if (const json* v = get(key)) {
      if (!v->is_boolean()) field_error(path(key), "must be true or false");
      out = v->get<bool>();
    }
  }

  void number(const std::string& key, double& out) {
    if (const json* v = get(key)) {
      if (!v->is_number()) field_error(path(key), "must be a number");
      out = v->get<double>();
      if (!std::isfinite(out)) field_error(path(key), "must be finite");
    }
  }

  template <class Int>
  void integer(const std::string& key, Int& out) {
    if (const json* v = get(key)) {
      if (!v->is_number_integer()) field_error(path(key), "must be an integer");
      if constexpr (std::is_unsigned_v<Int>) {
        if (v->is_number_unsigned()) {
          out = static_cast<Int>(v->get<std::uint64_t>());
        } else if (v->get<std::int64_t>() < 0) {
          field_error(path(key), "must be >= 0");
        } else {
          out = static_cast<Int>(v->get<std::int64_t>());
        }
      } else {
        out = static_cast<Int>(v->get<std::int64_t>());
      }
    }
  }

  void text(const std::string& key, std::string& out) {
    if (const json* v = get(key)) {
      if (!v->is_string()) field_error(path(key), "must be a string");
      out = v->get<std::string>();
    }
  }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!seen_.count(it.key())) field_error(path(it.key()), "is not a known field");
    }
  }

 private:
  const json& obj_;
  std::string prefix_;
  std::set<std::string> seen_;
};

/// Re-raises a struct validation message as a config error. Validators
/// already name the field.
template <class Fn>
void validated(Fn&& fn) {
  try {
    fn();
  } catch (const UsageError& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
}

void read_learner(Section& parent, LearnerSpec& spec) {
  const json* v = parent.get("learner");
  if (!v) return;
  Section s(*v, parent.path("learner"));
  std::string kind = spec.kind == LearnerKind::Mlp ? "mlp" : "linear";
  s.text("kind", kind);
  if (kind == "mlp") {
    spec.kind = LearnerKind::Mlp;
  } else if (kind == "linear") {
    spec.kind = LearnerKind::Linear;
  } else {
    field_error(s.path("kind"), "must be \"mlp\" or \"linear\"");
  }
  if (const json* h = s.get("hidden")) {
    if (!h->is_array()) field_error(s.path("hidden"), "must be an array of layer sizes");
    spec.hidden.clear();
    for (const auto& e : *h) {
      if (!e.is_number_unsigned() || e.get<std::uint64_t>() == 0) {
        field_error(s.path("hidden"), "entries must be integers >= 1");
      }
      spec.hidden.push_back(e.get<std::size_t>());
    }
  }
  std::string act = spec.activation == HiddenActivation::Relu ? "relu" : "tanh";
  s.text("activation", act);
  if (act == "relu") {
    spec.activation = HiddenActivation::Relu;
  } else if (act == "tanh") {
    spec.activation = HiddenActivation::Tanh;
  } else {
    field_error(s.path("activation"), "must be \"relu\" or \"tanh\"");
  }
  s.finish();
}

json learner_json(const LearnerSpec& spec) {
  return {{"kind", spec.kind == LearnerKind::Mlp ? "mlp" : "linear"},
          {"hidden", spec.hidden},
          {"activation", spec.activation == HiddenActivation::Relu ? "relu" : "tanh"}};
}

json config_json(const RunConfig& rc) {
  const EvolutionConfig& c = rc.evolution;
  json j;
  j["seed"] = rc.seed;
  j["dataset"] = rc.dataset;
  j["gp"] = {{"population_size", c.gp.population_size}, {"generations", c.gp.generations},
             {"crossover_rate", c.gp.crossover_rate},   {"mutation_rate", c.gp.mutation_rate},
             {"elitism_rate", c.gp.elitism_rate},       {"tournament_size", c.gp.tournament_size},
             {"init_depth_min", c.gp.init_depth_min},   {"init_depth_max", c.gp.init_depth_max},
             {"max_depth", c.gp.max_depth},             {"mutation_depth", c.gp.mutation_depth}};
  j["meta"] = {{"S_meta", c.meta.S_meta}, {"S_base", c.meta.S_base}, {"alpha", c.meta.alpha},
               {"eta", c.meta.eta},       {"batch_size", c.meta.batch_size}};
  j["filters"] = {{"symbolic_cache", c.filters.symbolic_cache},
                  {"rejection", c.filters.rejection},
                  {"gradient_equivalence", c.filters.gradient_equivalence},
                  {"probe_batch", c.filters.probe_batch},
                  {"probe_steps", c.filters.probe_steps},
                  {"probe_lr", c.filters.probe_lr},
                  {"sig_digits", c.filters.sig_digits},
                  {"S_testing", c.filters.S_testing}};
  j["training"] = {{"lr", c.training.lr},
                   {"momentum", c.training.momentum},
                   {"batch_size", c.training.batch_size},
                   {"learner", learner_json(c.training.learner)}};
  j["local_search"] = c.local_search;
  j["activation"] = std::string(activation_name(c.activation));
  j["init_sd"] = c.init_sd;
  j["workers"] = c.workers;
  return j;
}

json fitness_json(double f) { return std::isfinite(f) ? json(f) : json(nullptr); }

}  // namespace

RunConfig parse_run_config(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("config: ") + e.what(), e.byte);
  }
  RunConfig rc;
  EvolutionConfig& c = rc.evolution;
  Section top(doc, "");
  top.integer("seed", rc.seed);
  top.text("dataset", rc.dataset);
  if (const json* v = top.get("gp")) {
    Section s(*v, "gp");
    s.integer("population_size", c.gp.population_size);
    s.integer("generations", c.gp.generations);
    s.number("crossover_rate", c.gp.crossover_rate);
    s.number("mutation_rate", c.gp.mutation_rate);
    s.number("elitism_rate", c.gp.elitism_rate);
    s.integer("tournament_size", c.gp.tournament_size);
    s.integer("init_depth_min", c.gp.init_depth_min);
    s.integer("init_depth_max", c.gp.init_depth_max);
    s.integer("max_depth", c.gp.max_depth);
    s.integer("mutation_depth", c.gp.mutation_depth);
    s.finish();
  }
  if (const json* v = top.get("meta")) {
    Section s(*v, "meta");
    s.integer("S_meta", c.meta.S_meta);
    s.integer("S_base", c.meta.S_base);
    s.number("alpha", c.meta.alpha);
    s.number("eta", c.meta.eta);
    s.integer("batch_size", c.meta.batch_size);
    s.finish();
  }
  if (const json* v = top.get("filters")) {
    Section s(*v, "filters");
    s.boolean("symbolic_cache", c.filters.symbolic_cache);
    s.boolean("rejection", c.filters.rejection);
    s.boolean("gradient_equivalence", c.filters.gradient_equivalence);
    s.integer("probe_batch", c.filters.probe_batch);
    s.integer("probe_steps", c.filters.probe_steps);
    s.number("probe_lr", c.filters.probe_lr);
    s.integer("sig_digits", c.filters.sig_digits);
    s.integer("S_testing", c.filters.S_testing);
    s.finish();
  }
  if (const json* v = top.get("training")) {
    Section s(*v, "training");
    s.number("lr", c.training.lr);
    s.number("momentum", c.training.momentum);
    s.integer("batch_size", c.training.batch_size);
    read_learner(s, c.training.learner);
    s.finish();
  }
  top.boolean("local_search", c.local_search);
  std::string act(activation_name(c.activation));
  top.text("activation", act);
  validated([&] { c.activation = activation_from_name(act); });
  top.number("init_sd", c.init_sd);
  top.integer("workers", c.workers);
  top.finish();

  validated([&] { c.validate(); });
  if (c.meta.eta <= 0.0) throw UsageError("config: meta.eta must be > 0");
  if (rc.dataset.empty()) throw UsageError("config: dataset must not be empty");
  return rc;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string run_config_json(const RunConfig& cfg) { return config_json(cfg).dump(2); }

std::string run_manifest(const RunConfig& cfg, const TaskDataset& task, const EvolutionResult& result) {
  json m;
  m["version"] = 1;
  m["mode"] = cfg.evolution.local_search ? "evomal" : "gp-lfl";
  m["local_search"] = cfg.evolution.local_search;
  m["seed"] = cfg.seed;
  m["config"] = config_json(cfg);
  m["task"] = {{"name", task.name},
               {"kind", task.kind == TaskKind::Classification ? "classification" : "regression"},
               {"classes", task.num_classes},
               {"features", task.num_features},
               {"train", task.train.size()},
               {"val", task.val.size()},
               {"test", task.test.size()}};
  json history = json::array();
  for (const auto& r : result.history) {
    history.push_back({{"generation", r.generation},
                       {"best_fitness", fitness_json(r.best_fitness)},
                       {"mean_fitness", fitness_json(r.mean_fitness)},
                       {"best_expression", r.best_expression},
                       {"meta_optimizations", r.meta_optimizations},
                       {"counts",
                        {{"cached_symbolic", r.counts.cached_symbolic},
                         {"rejected", r.counts.rejected},
                         {"cached_gradient", r.counts.cached_gradient},
                         {"evaluated", r.counts.evaluated},
                         {"diverged", r.counts.diverged}}}});
  }
  m["history"] = std::move(history);
  const Candidate& b = result.best;
  json best = {{"expression", b.tree.to_string()},
               {"infix", b.tree.to_infix()},
               {"fitness", fitness_json(b.fitness)},
               {"disposition", std::string(disposition_name(b.disposition))}};
  if (b.net) best["weights"] = b.net->weights();
  m["best"] = std::move(best);
  m["meta_optimizations"] = result.meta_optimizations;
  m["timing"] = {{"elapsed_seconds", result.elapsed_seconds}};
  return m.dump(2);
}

}  // namespace evoloss
