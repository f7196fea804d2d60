#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "otsel/io.hpp"
#include "otsel/semidual.hpp"
#include "otsel/sinkhorn.hpp"
#include "otsel/ssnb.hpp"
#include "otsel/synthetic.hpp"

namespace otsel {

std::vector<double> default_epsilons();
/// (l, L) with l in {0.2, 0.5, 0.7, 0.9}, L in {0.2, 0.5, 0.7, 0.9, 1.2} and l < L.
std::vector<std::pair<double, double>> default_ssnb_grid();

struct BenchConfig {
  TruthKind kind = TruthKind::quadratic;
  Index d = 8;
  Index n = 1024;
  std::vector<std::uint64_t> seeds = {0};
  std::vector<double> epsilons = default_epsilons();
  std::vector<std::pair<double, double>> ssnb_grid = default_ssnb_grid();
  CriterionConfig criterion;
  SinkhornConfig sinkhorn;
  SsnbConfig ssnb;
  /// Fitted potentials are cached here when non-empty.
  std::string cache_dir;
};

struct BenchRow {
  std::uint64_t seed = 0;
  std::string model;  // "sinkhorn" or "ssnb"
  Json params;
  std::optional<double> j_value;
  double error = 0.0;
  int error_rank = 0;
  int j_rank = 0;
  bool selected = false;
};

/// One (seed, model family) selection.
struct FamilySummary {
  std::uint64_t seed = 0;
  std::string model;
  std::size_t candidates = 0;
  double best_error = 0.0;
  double selected_error = 0.0;
  int selected_rank = 0;
  std::optional<double> spearman;
};

struct BenchResult {
  TruthKind kind = TruthKind::quadratic;
  std::vector<BenchRow> rows;
  std::vector<FamilySummary> summaries;

  /// Per family: mean best error, mean selected error, mean rank of the
  /// selected candidate and the number of candidates.
  Json table() const;
  void write_rows_csv(const std::string& path) const;
  void write_summary_csv(const std::string& path) const;
};

std::string params_label(const Json& params);

using ProgressFn = std::function<void(const std::string&)>;

/// For every seed: draws train/test/eval batches, fits each family on train,
/// selects by the semi-dual on test and scores errors on eval.
BenchResult run_bench(const BenchConfig& cfg, const ProgressFn& progress = {});

/// Sinkhorn potentials for every epsilon, solved from the largest epsilon
/// down, each solve warm-started by the previous one. Output follows the
/// order of `epsilons`.
std::vector<PotentialPtr> fit_sinkhorn_family(const EmpiricalMeasure& mu,
                                              const EmpiricalMeasure& nu,
                                              const std::vector<double>& epsilons,
                                              const SinkhornConfig& base);

}  // namespace otsel
