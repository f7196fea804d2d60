#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "otsel/io.hpp"
#include "otsel/potential.hpp"
#include "otsel/semidual.hpp"
#include "otsel/sinkhorn.hpp"
#include "otsel/ssnb.hpp"

namespace otsel {

struct LabeledDataset {
  Matrix features;
  std::vector<std::string> labels;

  Index size() const { return features.rows(); }
  Index dimension() const { return features.cols(); }
  std::size_t class_count() const;
  /// Rows selected by index, in the given order.
  LabeledDataset subset(const std::vector<Index>& rows) const;
};

/// CSV with header label,f0,...,f{d-1}.
LabeledDataset read_labeled_csv(const std::string& path);
void write_labeled_csv(const std::string& path, const LabeledDataset& ds);

/// Train/test split of size round(n * train_frac) / rest. Stratified by label
/// (largest-remainder allocation per class) when every class has at least two
/// members, otherwise a plain random split.
std::pair<LabeledDataset, LabeledDataset> split(const LabeledDataset& ds, double train_frac,
                                                std::uint64_t seed);

struct Classification {
  std::vector<std::string> predictions;
  std::optional<double> accuracy;
};

/// 1-NN on the transported source grad f(X_s); ties go to the smallest
/// source index. Accuracy is reported when target labels are given.
Classification transport_classify(const ConvexPotential& potential, const LabeledDataset& source,
                                  const Matrix& target_features,
                                  const std::vector<std::string>* target_labels = nullptr);

struct DaConfig {
  std::vector<double> epsilons = {0.5, 0.1, 0.05, 0.01, 0.005};
  std::vector<std::pair<double, double>> ssnb_grid;
  double train_frac = 0.7;
  std::uint64_t seed = 0;
  bool standardize = false;
  CriterionConfig criterion;
  SinkhornConfig sinkhorn;
  SsnbConfig ssnb;
};

struct DaCandidate {
  std::string family;  // "sinkhorn" or "ssnb"
  Json params;
  std::optional<double> j_value;
  double accuracy = 0.0;
  int j_rank = 0;
  int accuracy_rank = 0;
};

struct DaReport {
  std::vector<DaCandidate> candidates;
  std::size_t selected = 0;  // argmin J
  std::size_t best = 0;      // argmax accuracy
  double delta = 0.0;
  Index n_source_train = 0;
  Index n_target_test = 0;

  Json to_json() const;
};

/// Fits every candidate on the train splits, evaluates J on the test splits
/// and the accuracy of 1-NN on the transported source train set against the
/// target test labels.
DaReport da_experiment(const LabeledDataset& source, const LabeledDataset& target,
                       const DaConfig& cfg);

}  // namespace otsel
