#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "otsel/error.hpp"
#include "otsel/experiment.hpp"
#include "otsel/io.hpp"

namespace otselect {

using otsel::Json;

/// Run configuration shared by every subcommand. Every field is optional in
/// the JSON document; absent fields keep the defaults below.
struct RunConfig {
  struct Dataset {
    std::string kind = "quadratic";
    long long d = 8;
    long long n = 1024;
    long long seed = 0;
    long long seeds = 1;  // bench: number of consecutive seeds from `seed`
  } dataset;
  struct Models {
    std::vector<double> sinkhorn = otsel::default_epsilons();
    std::vector<std::pair<double, double>> ssnb = otsel::default_ssnb_grid();
    double sinkhorn_tol = 1e-5;
    long long sinkhorn_max_iter = 100000;
    long long ssnb_outer_iters = 10;
    std::string ssnb_variant = "taylor";
    std::string ssnb_coupling = "exact";
    std::string ssnb_solver = "interior_point";
  } models;
  struct Criterion {
    double delta = 1e-3;
    std::string method = "automatic";
    double tol = 1e-5;
    long long max_iter = 1000;
  } criterion;
  struct Inputs {
    std::string source;
    std::string target;
    double train_frac = 0.7;
    bool standardize = false;
  } inputs;
  std::string output_directory = "otselect-out";

  Json to_json() const;
};

/// Parses `doc` into `cfg`, collecting every problem instead of stopping at
/// the first one.
std::vector<std::string> merge_config(const Json& doc, RunConfig& cfg);

/// Semantic checks on a merged configuration. `needs_inputs` requires the
/// input files to be named and present.
std::vector<std::string> validate(const RunConfig& cfg, bool needs_inputs);

otsel::CriterionConfig criterion_of(const RunConfig& cfg);
otsel::SinkhornConfig sinkhorn_of(const RunConfig& cfg);
otsel::SsnbConfig ssnb_of(const RunConfig& cfg);
otsel::BenchConfig bench_of(const RunConfig& cfg);

/// Thrown when validation fails; carries every problem found.
class ConfigError : public otsel::InvalidArgument {
 public:
  explicit ConfigError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

}  // namespace otselect
