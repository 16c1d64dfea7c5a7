#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "doctest.h"
#include "evoloss/evoloss.h"

namespace {

std::string take(char* s) {
  std::string out = s ? s : "";
  evoloss_string_free(s);
  return out;
}

}  // namespace

TEST_CASE("loss handles") {
  evoloss_loss* loss = nullptr;
  REQUIRE(evoloss_loss_from_expression("(sq (- y f))", nullptr, 1, 0.0, 0, &loss) == EVOLOSS_OK);
  CHECK(evoloss_loss_weight_count(loss) == 3);

  char* infix = nullptr;
  REQUIRE(evoloss_loss_infix(loss, &infix) == EVOLOSS_OK);
  CHECK(take(infix) == "(y - f)^2");

  const double y[] = {1.0, 0.0};
  const double f[] = {0.5, 0.25};
  double value = 0.0;
  REQUIRE(evoloss_loss_evaluate(loss, y, f, 2, &value) == EVOLOSS_OK);
  CHECK(value == doctest::Approx((0.25 + 0.0625) / 2).epsilon(1e-15));

  char* text = nullptr;
  REQUIRE(evoloss_loss_serialize(loss, &text) == EVOLOSS_OK);
  evoloss_loss* copy = nullptr;
  REQUIRE(evoloss_loss_deserialize(text, &copy) == EVOLOSS_OK);
  char* again = nullptr;
  REQUIRE(evoloss_loss_serialize(copy, &again) == EVOLOSS_OK);
  CHECK(std::strcmp(text, again) == 0);
  evoloss_string_free(text);
  evoloss_string_free(again);
  evoloss_loss_free(copy);
  evoloss_loss_free(loss);

  evoloss_loss* compiled = nullptr;
  REQUIRE(evoloss_loss_from_expression("(abs (log (* y f)))", "softplus", 0, 1e-3, 7, &compiled) == EVOLOSS_OK);
  std::vector<double> w(evoloss_loss_weight_count(compiled));
  REQUIRE(evoloss_loss_weights(compiled, w.data(), w.size()) == EVOLOSS_OK);
  for (double v : w) CHECK(std::fabs(v - 1.0) < 0.01);
  evoloss_loss_free(compiled);
}

TEST_CASE("error codes and messages") {
  evoloss_loss* loss = nullptr;
  CHECK(evoloss_loss_from_expression("(sq (- y f)", nullptr, 1, 0.0, 0, &loss) == EVOLOSS_ERR_PARSE);
  CHECK(loss == nullptr);
  CHECK(std::strlen(evoloss_last_error()) > 0);
  CHECK(evoloss_loss_from_expression(nullptr, nullptr, 1, 0.0, 0, &loss) == EVOLOSS_ERR_USAGE);
  CHECK(evoloss_loss_deserialize(R"({"version": 99, "expression": "f", "weights": []})", &loss) ==
        EVOLOSS_ERR_VERSION);
  CHECK(evoloss_loss_load("/nonexistent/x.loss", &loss) == EVOLOSS_ERR_IO);

  evoloss_config* cfg = nullptr;
  CHECK(evoloss_config_parse(R"({"gp": {"mutation_rate": 2}})", &cfg) == EVOLOSS_ERR_USAGE);
  CHECK(std::string(evoloss_last_error()).find("gp.mutation_rate") != std::string::npos);
  CHECK(std::string(evoloss_status_name(EVOLOSS_ERR_DIVERGENCE)) == "divergence");

  evoloss_dataset* data = nullptr;
  CHECK(evoloss_dataset_from_spec("moons:n=5", &data) == EVOLOSS_ERR_USAGE);
  CHECK(evoloss_delta_report("lsr", "sideways", "", nullptr) == EVOLOSS_ERR_USAGE);
}

TEST_CASE("training through the C interface") {
  evoloss_dataset* data = nullptr;
  REQUIRE(evoloss_dataset_from_spec("blobs:C=2,dim=2,sep=4.0,n=500,seed=1", &data) == EVOLOSS_OK);
  evoloss_dataset_info info{};
  REQUIRE(evoloss_dataset_info_get(data, &info) == EVOLOSS_OK);
  CHECK(info.classification == 1);
  CHECK(info.classes == 2);
  CHECK(info.train + info.val + info.test == 500);

  evoloss_train_options opts = evoloss_train_defaults();
  opts.steps = 200;
  evoloss_train_report ce{};
  char* csv = nullptr;
  REQUIRE(evoloss_train_builtin("ce", data, &opts, &ce, &csv) == EVOLOSS_OK);
  const std::string text = take(csv);
  CHECK(text.rfind("step,train_loss\n", 0) == 0);
  CHECK(ce.val_metric < 0.1);
  CHECK(ce.diverged == 0);

  evoloss_loss* loss = nullptr;
  REQUIRE(evoloss_loss_from_expression("(sq (- y f))", nullptr, 1, 0.0, 0, &loss) == EVOLOSS_OK);
  evoloss_train_report a{}, b{};
  REQUIRE(evoloss_train_loss(loss, data, &opts, &a, nullptr) == EVOLOSS_OK);
  REQUIRE(evoloss_train_builtin("squared", data, &opts, &b, nullptr) == EVOLOSS_OK);
  CHECK(a.final_train_loss == b.final_train_loss);
  CHECK(a.test_metric == b.test_metric);
  evoloss_loss_free(loss);
  evoloss_dataset_free(data);
}

TEST_CASE("meta-training through the C interface") {
  evoloss_config* cfg = nullptr;
  REQUIRE(evoloss_config_parse(R"({"dataset": "linreg:dim=3,noise=0.2,n=200,seed=1",
      "gp": {"population_size": 10, "generations": 2}, "meta": {"S_meta": 10},
      "filters": {"S_testing": 60, "probe_batch": 32}, "workers": 1})",
                               &cfg) == EVOLOSS_OK);
  REQUIRE(evoloss_config_set_seed(cfg, 9) == EVOLOSS_OK);

  std::size_t calls = 0;
  auto cb = [](size_t, double, double, const char* expr, void* user) {
    CHECK(std::strlen(expr) > 0);
    ++*static_cast<std::size_t*>(user);
  };
  evoloss_run* run = nullptr;
  REQUIRE(evoloss_meta_train(cfg, nullptr, cb, &calls, &run) == EVOLOSS_OK);
  CHECK(calls == 2);
  CHECK(std::isfinite(evoloss_run_best_fitness(run)));

  char* manifest = nullptr;
  REQUIRE(evoloss_run_manifest(run, &manifest) == EVOLOSS_OK);
  const std::string m = take(manifest);
  CHECK(m.find("\"mode\": \"evomal\"") != std::string::npos);
  CHECK(m.find("\"seed\": 9") != std::string::npos);

  char* stats = nullptr;
  REQUIRE(evoloss_run_filter_csv(run, &stats) == EVOLOSS_OK);
  CHECK(take(stats).rfind("generation,cached_symbolic,rejected,cached_gradient,evaluated,diverged\n", 0) == 0);

  evoloss_loss* best = nullptr;
  REQUIRE(evoloss_run_best_loss(run, &best) == EVOLOSS_OK);
  char* doc = nullptr;
  REQUIRE(evoloss_loss_serialize(best, &doc) == EVOLOSS_OK);
  CHECK(take(doc).find("\"mode\": \"evomal\"") != std::string::npos);
  evoloss_loss_free(best);
  evoloss_run_free(run);
  evoloss_config_free(cfg);
}

TEST_CASE("smoothing entry points") {
  char* csv = nullptr;
  REQUIRE(evoloss_delta_report("ce", "null", "C=4", &csv) == EVOLOSS_OK);
  const std::string row = take(csv);
  CHECK(row.find("ce,null,4,") != std::string::npos);

  const size_t classes[] = {10, 20};
  REQUIRE(evoloss_bench_smoothing("ce,sparse_lsr", classes, 2, 8, 2, 0, &csv) == EVOLOSS_OK);
  const std::string bench = take(csv);
  std::size_t lines = 0;
  for (char c : bench) lines += c == '\n';
  CHECK(lines == 1 + 2 * 2 * 2);
  CHECK(evoloss_bench_smoothing("ce", classes, 0, 8, 2, 0, &csv) == EVOLOSS_ERR_USAGE);
}
