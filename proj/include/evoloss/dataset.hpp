#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "evoloss/autodiff.hpp"
#include "evoloss/gp.hpp"
#include "evoloss/tensor.hpp"

namespace evoloss {

enum class TaskKind { Classification, Regression };

struct SplitFractions {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;

  static SplitFractions tabular() { return {0.6, 0.2, 0.2}; }
  /// 10% of the training portion of an 80/20 split held out for validation.
  static SplitFractions holdout10() { return {0.72, 0.08, 0.2}; }
  /// "tabular" or "holdout10"; throws UsageError otherwise.
  static SplitFractions preset(std::string_view name);
};

/// One materialized split. Features are normalized; regression targets are
/// standardized with train statistics.
struct Split {
  Tensor X;                          ///< (n x d)
  std::vector<double> y;             ///< class index or standardized target
  std::vector<std::size_t> indices;  ///< rows of the source table
  std::size_t size() const noexcept { return y.size(); }
};

struct TaskDataset {
  TaskKind kind = TaskKind::Classification;
  std::size_t num_classes = 0;  ///< 0 for regression
  std::size_t num_features = 0;
  Split train, val, test;
  std::vector<double> feature_mean, feature_sd;
  double label_mean = 0.0, label_sd = 1.0;
  /// Original label value of each dense class index.
  std::vector<double> class_values;
  std::string name;

  std::size_t output_dim() const noexcept {
    return kind == TaskKind::Classification ? num_classes : 1;
  }
  const Split& split(std::string_view which) const;
};

/// Shuffles rows under `seed`, splits by floor(n * fraction) and normalizes
/// with train-split statistics only (constant columns get sd 1).
/// Classification labels must be integral; they are remapped densely.
TaskDataset make_dataset(const std::vector<std::vector<double>>& features,
                         const std::vector<double>& labels, TaskKind kind,
                         SplitFractions fractions, std::uint64_t seed, std::string name = "");

struct CsvSchema {
  int target_column = -1;  ///< negative counts from the end
  TaskKind kind = TaskKind::Classification;
  bool header = true;
  SplitFractions fractions;
  std::uint64_t split_seed = 0;
};

/// Throws ParseError carrying the 1-based line number on ragged rows or
/// non-numeric cells.
TaskDataset load_csv(const std::string& path, const CsvSchema& schema);
TaskDataset parse_csv(std::string_view text, const CsvSchema& schema, std::string name = "csv");

/// Gaussian blobs: class k centred at (sep/2)(cos 2pi k/C, sin 2pi k/C, 0, ...)
/// with unit noise; classes assigned round-robin.
TaskDataset synth_blobs(std::size_t classes, std::size_t dim, double separation, std::size_t n,
                        std::uint64_t seed, SplitFractions fractions = {});
/// y = w.x + noise * N(0,1), w and x standard normal.
TaskDataset synth_linear_regression(std::size_t dim, double noise, std::size_t n,
                                    std::uint64_t seed, SplitFractions fractions = {});

/// "blobs:C=2,dim=2,sep=4.0,n=500,seed=1", "linreg:dim=4,noise=0.1,n=500,seed=1",
/// "csv:path=data.csv,target=-1,kind=classification,header=1". Every form
/// also accepts split=tabular|holdout10.
TaskDataset dataset_from_spec(std::string_view spec);

/// A mini-batch ready for the autodiff engine.
struct Batch {
  Var X;                            ///< (b x d)
  Var y;                            ///< one-hot (b x C) or targets (b x 1)
  std::vector<std::size_t> target;  ///< class indices (classification only)
};

Batch make_batch(const TaskDataset& task, const Split& split, std::span<const std::size_t> rows);
Batch full_batch(const TaskDataset& task, const Split& split);

/// Uniform sampling without replacement within an epoch; reshuffles when the
/// epoch is exhausted.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::size_t batch_size, std::uint64_t seed);
  std::vector<std::size_t> next();

 private:
  std::size_t n_, batch_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

}  // namespace evoloss
