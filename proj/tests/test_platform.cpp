#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "doctest.h"
#include "evoloss/errors.hpp"
#include "evoloss/learner.hpp"
#include "evoloss/seed.hpp"

using namespace evoloss;

namespace {

std::uint64_t bits(double v) { return std::bit_cast<std::uint64_t>(v); }

bool same_bytes(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    if (bits(a[i]) != bits(b[i])) return false;
  }
  return true;
}

std::string ten_rows() {
  std::string s = "a,b,label\n";
  for (int i = 0; i < 10; ++i) {
    s += std::to_string(i) + ",5," + (i % 2 ? "7" : "3") + "\n";
  }
  return s;
}

}  // namespace

TEST_CASE("csv splits, constant columns and label remapping") {
  const TaskDataset ds = parse_csv(ten_rows(), CsvSchema{});
  CHECK(ds.train.size() == 6);
  CHECK(ds.val.size() == 2);
  CHECK(ds.test.size() == 2);
  CHECK(ds.num_classes == 2);
  CHECK(ds.class_values == std::vector<double>{3.0, 7.0});
  CHECK(ds.feature_sd[1] == 1.0);
  for (std::size_t r = 0; r < ds.train.size(); ++r) CHECK(ds.train.X.at(r, 1) == 0.0);
  for (const Split* s : {&ds.train, &ds.val, &ds.test}) {
    for (double y : s->y) CHECK((y == 0.0 || y == 1.0));
  }

  std::set<std::size_t> seen;
  for (const Split* s : {&ds.train, &ds.val, &ds.test}) {
    for (std::size_t i : s->indices) CHECK(seen.insert(i).second);
  }
  CHECK(seen.size() == 10);
}

TEST_CASE("holdout preset") {
  CsvSchema schema;
  schema.fractions = SplitFractions::holdout10();
  std::string s = "x,y\n";
  for (int i = 0; i < 100; ++i) s += std::to_string(i) + "," + std::to_string(i % 3) + "\n";
  const TaskDataset ds = parse_csv(s, schema);
  CHECK(ds.train.size() == 72);
  CHECK(ds.val.size() == 8);
  CHECK(ds.test.size() == 20);
  CHECK_THROWS_AS(SplitFractions::preset("80/20"), UsageError);
}

TEST_CASE("csv parse errors carry the line number") {
  try {
    parse_csv("a,b\n1,2\n3\n", CsvSchema{});
    FAIL("expected ragged row error");
  } catch (const ParseError& e) {
    CHECK(e.position() == 3);
  }
  try {
    parse_csv("a,b\n1,2\n3,4\nx,1\n", CsvSchema{});
    FAIL("expected non-numeric error");
  } catch (const ParseError& e) {
    CHECK(e.position() == 4);
  }
  CsvSchema headerless;
  headerless.header = false;
  std::string s;
  for (int i = 0; i < 9; ++i) s += "1,0\n";
  s += "1,0.5\n";
  try {
    parse_csv(s, headerless);
    FAIL("expected non-integral label error");
  } catch (const ParseError& e) {
    CHECK(e.position() == 10);
  }
}

TEST_CASE("load_csv reads a file") {
  const std::string path = "test_platform_tmp.csv";
  {
    std::ofstream out(path);
    out << ten_rows();
  }
  const TaskDataset ds = load_csv(path, CsvSchema{});
  CHECK(ds.num_classes == 2);
  std::remove(path.c_str());
  CHECK_THROWS(load_csv("does/not/exist.csv", CsvSchema{}));
}

TEST_CASE("normalization uses train statistics only") {
  std::vector<std::vector<double>> X;
  std::vector<double> y;
  for (int i = 0; i < 50; ++i) {
    X.push_back({static_cast<double>(i), static_cast<double>(i * i)});
    y.push_back(i % 2);
  }
  const TaskDataset a = make_dataset(X, y, TaskKind::Classification, {}, 3);
  std::vector<std::vector<double>> X2 = X;
  for (std::size_t r : a.test.indices) X2[r] = {1e6, -1e6};
  for (std::size_t r : a.val.indices) X2[r] = {-3e5, 7e5};
  const TaskDataset b = make_dataset(X2, y, TaskKind::Classification, {}, 3);
  CHECK(a.feature_mean == b.feature_mean);
  CHECK(a.feature_sd == b.feature_sd);
  CHECK(same_bytes(a.train.X, b.train.X));

  double m0 = 0.0;
  for (std::size_t r = 0; r < a.train.size(); ++r) m0 += a.train.X.at(r, 0);
  CHECK(std::fabs(m0 / static_cast<double>(a.train.size())) < 1e-12);
}

TEST_CASE("regression labels are standardized with train statistics") {
  const TaskDataset ds = synth_linear_regression(3, 0.1, 200, 4);
  double m = 0.0, v = 0.0;
  for (double t : ds.train.y) m += t;
  m /= static_cast<double>(ds.train.size());
  for (double t : ds.train.y) v += (t - m) * (t - m);
  CHECK(std::fabs(m) < 1e-12);
  CHECK(std::sqrt(v / static_cast<double>(ds.train.size())) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(ds.output_dim() == 1);
}

TEST_CASE("synthetic datasets are reproducible") {
  const TaskDataset a = synth_blobs(3, 4, 2.0, 120, 9), b = synth_blobs(3, 4, 2.0, 120, 9);
  CHECK(same_bytes(a.train.X, b.train.X));
  CHECK(a.test.y == b.test.y);
  const TaskDataset c = synth_blobs(3, 4, 2.0, 120, 10);
  CHECK_FALSE(same_bytes(a.train.X, c.train.X));
  CHECK_THROWS_AS(synth_blobs(2, 2, 4.0, 9, 1), UsageError);

  const TaskDataset s = dataset_from_spec("blobs:C=3,dim=4,sep=2.0,n=120,seed=9");
  CHECK(same_bytes(a.train.X, s.train.X));
  CHECK_THROWS_AS(dataset_from_spec("blobs:C=3,colour=red"), UsageError);
  CHECK_THROWS_AS(dataset_from_spec("mnist:"), UsageError);
}

TEST_CASE("batch sampler covers an epoch without replacement") {
  BatchSampler s(10, 5, 1);
  const auto a = s.next(), b = s.next();
  std::set<std::size_t> seen(a.begin(), a.end());
  seen.insert(b.begin(), b.end());
  CHECK(seen.size() == 10);
  BatchSampler t(10, 5, 1);
  CHECK(t.next() == a);
}

TEST_CASE("learner shapes and outputs") {
  const Learner lin(LearnerSpec{LearnerKind::Linear, {}, HiddenActivation::Relu}, 3, 4);
  CHECK(lin.parameter_count() == 16);
  const Learner mlp(LearnerSpec{}, 3, 2);
  CHECK(mlp.parameter_count() == 3 * 32 + 32 + 32 * 2 + 2);
  Rng rng(1);
  const auto params = mlp.init(rng);
  std::vector<Var> theta(params.begin(), params.end());
  for (auto& t : theta) t = Var(t.value());
  const Var X(Tensor::matrix(5, 3, std::vector<double>(15, 0.3)));
  const Tensor probs = prediction(TaskKind::Classification, mlp.forward(theta, X)).value();
  for (std::size_t r = 0; r < 5; ++r) {
    CHECK(probs.at(r, 0) + probs.at(r, 1) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("sgd with momentum") {
  CHECK_THROWS_AS(SgdMomentum(0.1, 1.0), UsageError);
  CHECK_THROWS_AS(SgdMomentum(0.0, 0.5), UsageError);
  SgdMomentum opt(0.1, 0.5);
  std::vector<Tensor> p{Tensor::scalar(1.0)};
  opt.step(p, {Tensor::scalar(2.0)});
  CHECK(p[0].item() == doctest::Approx(0.8));
  opt.step(p, {Tensor::scalar(2.0)});
  CHECK(p[0].item() == doctest::Approx(0.8 - 0.1 * 3.0));
}

TEST_CASE("cross-entropy on blobs reaches low validation error") {
  const TaskDataset ds = synth_blobs(2, 2, 4.0, 500, 1);
  TrainConfig cfg;
  cfg.steps = 500;
  cfg.learner = LearnerSpec{LearnerKind::Linear, {}, HiddenActivation::Relu};
  const auto res = train_at_meta_test(builtin_loss("ce", ds), ds, cfg);
  CHECK_FALSE(res.diverged);
  CHECK(res.val_metric < 0.05);
  cfg.learner = LearnerSpec{};
  CHECK(train_at_meta_test(builtin_loss("ce", ds), ds, cfg).val_metric < 0.05);
}

TEST_CASE("noise-free linear regression is fitted by the MLP") {
  const TaskDataset ds = synth_linear_regression(4, 0.0, 500, 2);
  TrainConfig cfg;
  cfg.steps = 3000;
  const auto res = train_at_meta_test(builtin_loss("squared", ds), ds, cfg);
  CHECK_FALSE(res.diverged);
  CHECK(res.val_metric < 1e-3);
}

TEST_CASE("zero steps leaves the model untrained") {
  const TaskDataset ds = synth_blobs(2, 2, 4.0, 200, 1);
  TrainConfig cfg;
  cfg.steps = 0;
  const auto res = train_at_meta_test(builtin_loss("ce", ds), ds, cfg);
  CHECK(res.train_loss.empty());
  const Learner learner = make_learner(cfg.learner, ds);
  Rng rng(derive_seed(cfg.seed, {1}));
  CHECK(res.val_metric == evaluate_split(learner, learner.init(rng), ds, ds.val));
}

TEST_CASE("squared-error tree and built-in loss give identical trajectories") {
  const auto net = MetaLossNetwork::unit(ExprTree::parse("(sq (- y f))"));
  for (const TaskDataset& ds : {synth_blobs(3, 2, 3.0, 300, 5), synth_linear_regression(3, 0.2, 300, 5)}) {
    TrainConfig cfg;
    cfg.steps = 100;
    cfg.seed = 42;
    const auto a = train_at_meta_test(network_loss(net, ds.kind), ds, cfg);
    const auto b = train_at_meta_test(builtin_loss("squared", ds), ds, cfg);
    REQUIRE(a.train_loss.size() == b.train_loss.size());
    for (std::size_t i = 0; i < a.train_loss.size(); ++i) CHECK(bits(a.train_loss[i]) == bits(b.train_loss[i]));
    for (std::size_t i = 0; i < a.params.size(); ++i) CHECK(same_bytes(a.params[i], b.params[i]));
    CHECK(bits(a.test_metric) == bits(b.test_metric));
  }
}

TEST_CASE("divergence is flagged with partial metrics") {
  const TaskDataset ds = synth_linear_regression(3, 0.1, 200, 1);
  TrainConfig cfg;
  cfg.steps = 200;
  cfg.lr = 50.0;
  const auto res = train_at_meta_test(builtin_loss("squared", ds), ds, cfg);
  CHECK(res.diverged);
  CHECK(res.diverged_step < cfg.steps);
  CHECK_THROWS_AS(builtin_loss("lsr", ds), UsageError);
}
