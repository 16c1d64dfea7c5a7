#include "evoloss/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

#include "evoloss/errors.hpp"
#include "evoloss/seed.hpp"

namespace evoloss {

SplitFractions SplitFractions::preset(std::string_view name) {
  if (name == "tabular") return tabular();
  if (name == "holdout10") return holdout10();
  throw UsageError("unknown split preset '" + std::string(name) + "' (tabular|holdout10)");
}

const Split& TaskDataset::split(std::string_view which) const {
  if (which == "train") return train;
  if (which == "val") return val;
  if (which == "test") return test;
  throw UsageError("unknown split '" + std::string(which) + "'");
}

namespace {

Split materialize(const std::vector<std::vector<double>>& features, const std::vector<double>& y,
                  std::vector<std::size_t> rows, const std::vector<double>& mean,
                  const std::vector<double>& sd) {
  const std::size_t d = mean.size();
  std::vector<double> x;
  x.reserve(rows.size() * d);
  Split s;
  for (std::size_t r : rows) {
    for (std::size_t j = 0; j < d; ++j) x.push_back((features[r][j] - mean[j]) / sd[j]);
    s.y.push_back(y[r]);
  }
  s.X = Tensor::matrix(rows.size(), d, std::move(x));
  s.indices = std::move(rows);
  return s;
}

}  // namespace

TaskDataset make_dataset(const std::vector<std::vector<double>>& features,
                         const std::vector<double>& labels, TaskKind kind,
                         SplitFractions fractions, std::uint64_t seed, std::string name) {
  const std::size_t n = features.size();
  if (n == 0 || labels.size() != n) throw UsageError("dataset: need matching non-empty rows");
  const std::size_t d = features.front().size();
  for (const auto& row : features) {
    if (row.size() != d) throw UsageError("dataset: ragged feature rows");
  }
  const double total = fractions.train + fractions.val + fractions.test;
  if (fractions.train <= 0 || fractions.val < 0 || fractions.test < 0 ||
      std::fabs(total - 1.0) > 1e-9) {
    throw UsageError("dataset: split fractions must be non-negative and sum to 1");
  }

  TaskDataset ds;
  ds.kind = kind;
  ds.num_features = d;
  ds.name = std::move(name);

  std::vector<double> y = labels;
  if (kind == TaskKind::Classification) {
    std::map<double, std::size_t> dense;
    for (double v : labels) {
      if (!std::isfinite(v) || v != std::round(v)) {
        throw UsageError("dataset: classification labels must be integral");
      }
      dense.emplace(v, 0);
    }
    std::size_t k = 0;
    for (auto& [value, index] : dense) {
      index = k++;
      ds.class_values.push_back(value);
    }
    for (auto& v : y) v = static_cast<double>(dense.at(v));
    ds.num_classes = dense.size();
  }

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(seed, {0x5b1d}));
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(n) * fractions.train + 1e-9));
  const auto n_val = static_cast<std::size_t>(std::floor(static_cast<double>(n) * fractions.val + 1e-9));
  if (n_train == 0) throw UsageError("dataset: training split is empty");
  std::vector<std::size_t> tr(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> va(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                              order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  std::vector<std::size_t> te(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());

  ds.feature_mean.assign(d, 0.0);
  ds.feature_sd.assign(d, 0.0);
  for (std::size_t r : tr) {
    for (std::size_t j = 0; j < d; ++j) ds.feature_mean[j] += features[r][j];
  }
  for (auto& m : ds.feature_mean) m /= static_cast<double>(tr.size());
  for (std::size_t r : tr) {
    for (std::size_t j = 0; j < d; ++j) {
      const double c = features[r][j] - ds.feature_mean[j];
      ds.feature_sd[j] += c * c;
    }
  }
  for (auto& s : ds.feature_sd) {
    s = std::sqrt(s / static_cast<double>(tr.size()));
    if (!(s > 1e-12)) s = 1.0;
  }

  if (kind == TaskKind::Regression) {
    double m = 0.0, v = 0.0;
    for (std::size_t r : tr) m += y[r];
    m /= static_cast<double>(tr.size());
    for (std::size_t r : tr) v += (y[r] - m) * (y[r] - m);
    double sd = std::sqrt(v / static_cast<double>(tr.size()));
    if (!(sd > 1e-12)) sd = 1.0;
    ds.label_mean = m;
    ds.label_sd = sd;
    for (auto& t : y) t = (t - m) / sd;
  }

  ds.train = materialize(features, y, std::move(tr), ds.feature_mean, ds.feature_sd);
  ds.val = materialize(features, y, std::move(va), ds.feature_mean, ds.feature_sd);
  ds.test = materialize(features, y, std::move(te), ds.feature_mean, ds.feature_sd);
  return ds;
}

namespace {

double parse_cell(std::string_view cell, std::size_t line) {
  while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t')) cell.remove_prefix(1);
  while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t' || cell.back() == '\r')) {
    cell.remove_suffix(1);
  }
  if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(v)) {
    throw ParseError("csv: non-numeric cell '" + std::string(cell) + "'", line);
  }
  return v;
}

}  // namespace

TaskDataset parse_csv(std::string_view text, const CsvSchema& schema, std::string name) {
  std::vector<std::vector<double>> rows;
  std::vector<std::size_t> row_lines;
  std::size_t width = 0, line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) {
      if (end == text.size()) break;
      continue;
    }
    if (schema.header && line_no == 1) continue;
    std::vector<double> row;
    std::size_t p = 0;
    for (;;) {
      const std::size_t comma = line.find(',', p);
      const auto cell = line.substr(p, comma == std::string_view::npos ? std::string_view::npos : comma - p);
      row.push_back(parse_cell(cell, line_no));
      if (comma == std::string_view::npos) break;
      p = comma + 1;
    }
    if (width == 0) width = row.size();
    if (row.size() != width) {
      throw ParseError("csv: expected " + std::to_string(width) + " columns, found " +
                           std::to_string(row.size()),
                       line_no);
    }
    rows.push_back(std::move(row));
    row_lines.push_back(line_no);
    if (end == text.size()) break;
  }
  if (rows.empty()) throw ParseError("csv: no data rows", line_no);
  if (width < 2) throw ParseError("csv: need at least one feature and one target column", 1);
  const int w = static_cast<int>(width);
  const int t = schema.target_column < 0 ? w + schema.target_column : schema.target_column;
  if (t < 0 || t >= w) throw UsageError("csv: target column out of range");

  std::vector<std::vector<double>> features;
  std::vector<double> labels;
  features.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto& r = rows[i];
    const double label = r[static_cast<std::size_t>(t)];
    if (schema.kind == TaskKind::Classification && label != std::round(label)) {
      throw ParseError("csv: classification target is not integral", row_lines[i]);
    }
    labels.push_back(label);
    r.erase(r.begin() + t);
    features.push_back(std::move(r));
  }
  return make_dataset(features, labels, schema.kind, schema.fractions, schema.split_seed,
                      std::move(name));
}

TaskDataset load_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("csv: cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str(), schema, path);
}

TaskDataset synth_blobs(std::size_t classes, std::size_t dim, double separation, std::size_t n,
                        std::uint64_t seed, SplitFractions fractions) {
  if (classes < 2) throw UsageError("blobs: C must be >= 2");
  if (dim < 2) throw UsageError("blobs: dim must be >= 2");
  if (n < 10) throw UsageError("blobs: n must be >= 10");
  Rng rng(derive_seed(seed, {0xb10b}));
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<std::vector<double>> X(n, std::vector<double>(dim));
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = i % classes;
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(classes);
    for (std::size_t j = 0; j < dim; ++j) {
      double c = 0.0;
      if (j == 0) c = 0.5 * separation * std::cos(angle);
      if (j == 1) c = 0.5 * separation * std::sin(angle);
      X[i][j] = c + noise(rng);
    }
    y[i] = static_cast<double>(k);
  }
  return make_dataset(X, y, TaskKind::Classification, fractions, seed,
                      "blobs(C=" + std::to_string(classes) + ",dim=" + std::to_string(dim) + ")");
}

TaskDataset synth_linear_regression(std::size_t dim, double noise, std::size_t n,
                                    std::uint64_t seed, SplitFractions fractions) {
  if (dim < 1) throw UsageError("linreg: dim must be >= 1");
  if (n < 10) throw UsageError("linreg: n must be >= 10");
  if (!(noise >= 0.0)) throw UsageError("linreg: noise must be >= 0");
  Rng rng(derive_seed(seed, {0x11e6}));
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<double> w(dim);
  for (auto& v : w) v = z(rng);
  std::vector<std::vector<double>> X(n, std::vector<double>(dim));
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    double t = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      X[i][j] = z(rng);
      t += w[j] * X[i][j];
    }
    y[i] = t + noise * z(rng);
  }
  return make_dataset(X, y, TaskKind::Regression, fractions, seed,
                      "linreg(dim=" + std::to_string(dim) + ")");
}

namespace {

std::map<std::string, std::string> parse_kv(std::string_view body, std::string_view spec) {
  std::map<std::string, std::string> out;
  std::size_t p = 0;
  while (p < body.size()) {
    std::size_t comma = body.find(',', p);
    if (comma == std::string_view::npos) comma = body.size();
    const auto item = body.substr(p, comma - p);
    const auto eq = item.find('=');
    if (eq == std::string_view::npos || eq == 0) {
      throw UsageError("dataset spec '" + std::string(spec) + "': expected key=value, got '" +
                       std::string(item) + "'");
    }
    out[std::string(item.substr(0, eq))] = std::string(item.substr(eq + 1));
    p = comma + 1;
  }
  return out;
}

class SpecArgs {
 public:
  SpecArgs(std::map<std::string, std::string> kv, std::string spec)
      : kv_(std::move(kv)), spec_(std::move(spec)) {}

  std::string str(const std::string& key, const std::string& fallback) {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    std::string v = it->second;
    kv_.erase(it);
    return v;
  }
  double num(const std::string& key, double fallback) {
    const std::string v = str(key, "");
    if (v.empty()) return fallback;
    try {
      std::size_t used = 0;
      const double d = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return d;
    } catch (const std::exception&) {
      throw UsageError("dataset spec '" + spec_ + "': " + key + " must be numeric");
    }
  }
  std::size_t count(const std::string& key, std::size_t fallback) {
    const double d = num(key, static_cast<double>(fallback));
    if (d < 0 || d != std::floor(d)) {
      throw UsageError("dataset spec '" + spec_ + "': " + key + " must be a non-negative integer");
    }
    return static_cast<std::size_t>(d);
  }
  void finish() const {
    if (!kv_.empty()) {
      throw UsageError("dataset spec '" + spec_ + "': unknown key '" + kv_.begin()->first + "'");
    }
  }

 private:
  std::map<std::string, std::string> kv_;
  std::string spec_;
};

}  // namespace

TaskDataset dataset_from_spec(std::string_view spec) {
  const auto colon = spec.find(':');
  const std::string kind(spec.substr(0, colon));
  SpecArgs args(colon == std::string_view::npos ? std::map<std::string, std::string>{}
                                                : parse_kv(spec.substr(colon + 1), spec),
                std::string(spec));
  const SplitFractions fr = SplitFractions::preset(args.str("split", "tabular"));
  if (kind == "blobs") {
    const auto C = args.count("C", 2);
    const auto dim = args.count("dim", 2);
    const double sep = args.num("sep", 4.0);
    const auto n = args.count("n", 500);
    const auto seed = args.count("seed", 1);
    args.finish();
    return synth_blobs(C, dim, sep, n, seed, fr);
  }
  if (kind == "linreg") {
    const auto dim = args.count("dim", 4);
    const double noise = args.num("noise", 0.1);
    const auto n = args.count("n", 500);
    const auto seed = args.count("seed", 1);
    args.finish();
    return synth_linear_regression(dim, noise, n, seed, fr);
  }
  if (kind == "csv") {
    CsvSchema schema;
    const std::string path = args.str("path", "");
    if (path.empty()) throw UsageError("dataset spec '" + std::string(spec) + "': path is required");
    schema.target_column = static_cast<int>(args.num("target", -1));
    const std::string k = args.str("kind", "classification");
    if (k == "classification") {
      schema.kind = TaskKind::Classification;
    } else if (k == "regression") {
      schema.kind = TaskKind::Regression;
    } else {
      throw UsageError("dataset spec: kind must be classification or regression");
    }
    schema.header = args.count("header", 1) != 0;
    schema.split_seed = args.count("seed", 0);
    schema.fractions = fr;
    args.finish();
    return load_csv(path, schema);
  }
  throw UsageError("dataset spec '" + std::string(spec) + "': unknown kind '" + kind +
                   "' (blobs|linreg|csv)");
}

Batch make_batch(const TaskDataset& task, const Split& split, std::span<const std::size_t> rows) {
  const std::size_t d = task.num_features;
  const std::size_t out = task.output_dim();
  std::vector<double> x(rows.size() * d), y(rows.size() * out, 0.0);
  Batch b;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::size_t r = rows[i];
    if (r >= split.size()) throw UsageError("batch: row index out of range");
    for (std::size_t j = 0; j < d; ++j) x[i * d + j] = split.X.at(r, j);
    if (task.kind == TaskKind::Classification) {
      const auto c = static_cast<std::size_t>(split.y[r]);
      y[i * out + c] = 1.0;
      b.target.push_back(c);
    } else {
      y[i] = split.y[r];
    }
  }
  b.X = Var(Tensor::matrix(rows.size(), d, std::move(x)));
  b.y = Var(Tensor::matrix(rows.size(), out, std::move(y)));
  return b;
}

Batch full_batch(const TaskDataset& task, const Split& split) {
  std::vector<std::size_t> rows(split.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  return make_batch(task, split, rows);
}

BatchSampler::BatchSampler(std::size_t n, std::size_t batch_size, std::uint64_t seed)
    : n_(n), batch_(std::min(batch_size, n)), rng_(seed), order_(n) {
  if (n == 0 || batch_size == 0) throw UsageError("batch sampler: empty split or zero batch size");
  for (std::size_t i = 0; i < n; ++i) order_[i] = i;
  std::shuffle(order_.begin(), order_.end(), rng_);
}

std::vector<std::size_t> BatchSampler::next() {
  if (pos_ + batch_ > n_) {
    std::shuffle(order_.begin(), order_.end(), rng_);
    pos_ = 0;
  }
  std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(pos_),
                               order_.begin() + static_cast<std::ptrdiff_t>(pos_ + batch_));
  pos_ += batch_;
  return out;
}

}  // namespace evoloss
