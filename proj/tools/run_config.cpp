#include "run_config.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>

namespace otselect {

namespace {

using Problems = std::vector<std::string>;

// Reads `doc[key]` into `out` when present, recording a type problem otherwise.
template <typename T>
void read_field(const Json& section, const std::string& where, const std::string& key, T& out,
                Problems& problems) {
  if (!section.contains(key)) return;
  try {
    out = section.at(key).get<T>();
  } catch (const Json::exception&) {
    problems.push_back(where + "." + key + ": wrong type (" + section.at(key).dump() + ")");
  }
}

void check_keys(const Json& section, const std::string& where,
                const std::vector<std::string>& allowed, Problems& problems) {
  for (auto it = section.begin(); it != section.end(); ++it)
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
      problems.push_back(where + ": unknown key '" + it.key() + "'");
}

const Json* section_of(const Json& doc, const std::string& name, Problems& problems) {
  if (!doc.contains(name)) return nullptr;
  const Json& s = doc.at(name);
  if (!s.is_object()) {
    problems.push_back(name + ": must be an object");
    return nullptr;
  }
  return &s;
}

bool positive(double v) { return std::isfinite(v) && v > 0.0; }

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : otsel::InvalidArgument([&] {
        std::string msg = "invalid configuration:";
        for (const auto& p : problems) msg += " [" + p + "]";
        return msg;
      }()),
      problems_(std::move(problems)) {}

Json RunConfig::to_json() const {
  Json pairs = Json::array();
  for (const auto& [l, big_l] : models.ssnb) pairs.push_back({l, big_l});
  return {{"dataset",
           {{"kind", dataset.kind},
            {"d", dataset.d},
            {"n", dataset.n},
            {"seed", dataset.seed},
            {"seeds", dataset.seeds}}},
          {"models",
           {{"sinkhorn", models.sinkhorn},
            {"ssnb", pairs},
            {"sinkhorn_tol", models.sinkhorn_tol},
            {"sinkhorn_max_iter", models.sinkhorn_max_iter},
            {"ssnb_outer_iters", models.ssnb_outer_iters},
            {"ssnb_variant", models.ssnb_variant},
            {"ssnb_coupling", models.ssnb_coupling},
            {"ssnb_solver", models.ssnb_solver}}},
          {"criterion",
           {{"delta", criterion.delta},
            {"method", criterion.method},
            {"tol", criterion.tol},
            {"max_iter", criterion.max_iter}}},
          {"inputs",
           {{"source", inputs.source},
            {"target", inputs.target},
            {"train_frac", inputs.train_frac},
            {"standardize", inputs.standardize}}},
          {"output", {{"directory", output_directory}}}};
}

std::vector<std::string> merge_config(const Json& doc, RunConfig& cfg) {
  Problems problems;
  if (!doc.is_object()) return {"configuration must be a JSON object"};
  check_keys(doc, "config", {"dataset", "models", "criterion", "inputs", "output"}, problems);

  if (const Json* s = section_of(doc, "dataset", problems)) {
    check_keys(*s, "dataset", {"kind", "d", "n", "seed", "seeds"}, problems);
    read_field(*s, "dataset", "kind", cfg.dataset.kind, problems);
    read_field(*s, "dataset", "d", cfg.dataset.d, problems);
    read_field(*s, "dataset", "n", cfg.dataset.n, problems);
    read_field(*s, "dataset", "seed", cfg.dataset.seed, problems);
    read_field(*s, "dataset", "seeds", cfg.dataset.seeds, problems);
  }
  if (const Json* s = section_of(doc, "models", problems)) {
    check_keys(*s, "models",
               {"sinkhorn", "ssnb", "sinkhorn_tol", "sinkhorn_max_iter", "ssnb_outer_iters",
                "ssnb_variant", "ssnb_coupling", "ssnb_solver"},
               problems);
    read_field(*s, "models", "sinkhorn", cfg.models.sinkhorn, problems);
    if (s->contains("ssnb")) {
      const Json& grid = s->at("ssnb");
      std::vector<std::pair<double, double>> pairs;
      bool ok = grid.is_array();
      if (ok) {
        for (const auto& item : grid) {
          if (item.is_array() && item.size() == 2 && item[0].is_number() && item[1].is_number()) {
            pairs.emplace_back(item[0].get<double>(), item[1].get<double>());
          } else if (item.is_object() && item.contains("l") && item.contains("L") &&
                     item["l"].is_number() && item["L"].is_number()) {
            pairs.emplace_back(item["l"].get<double>(), item["L"].get<double>());
          } else {
            ok = false;
          }
        }
      }
      if (ok) {
        cfg.models.ssnb = pairs;
      } else {
        problems.push_back("models.ssnb: expected a list of [l, L] pairs");
      }
    }
    read_field(*s, "models", "sinkhorn_tol", cfg.models.sinkhorn_tol, problems);
    read_field(*s, "models", "sinkhorn_max_iter", cfg.models.sinkhorn_max_iter, problems);
    read_field(*s, "models", "ssnb_outer_iters", cfg.models.ssnb_outer_iters, problems);
    read_field(*s, "models", "ssnb_variant", cfg.models.ssnb_variant, problems);
    read_field(*s, "models", "ssnb_coupling", cfg.models.ssnb_coupling, problems);
    read_field(*s, "models", "ssnb_solver", cfg.models.ssnb_solver, problems);
  }
  if (const Json* s = section_of(doc, "criterion", problems)) {
    check_keys(*s, "criterion", {"delta", "method", "tol", "max_iter"}, problems);
    read_field(*s, "criterion", "delta", cfg.criterion.delta, problems);
    read_field(*s, "criterion", "method", cfg.criterion.method, problems);
    read_field(*s, "criterion", "tol", cfg.criterion.tol, problems);
    read_field(*s, "criterion", "max_iter", cfg.criterion.max_iter, problems);
  }
  if (const Json* s = section_of(doc, "inputs", problems)) {
    check_keys(*s, "inputs", {"source", "target", "train_frac", "standardize"}, problems);
    read_field(*s, "inputs", "source", cfg.inputs.source, problems);
    read_field(*s, "inputs", "target", cfg.inputs.target, problems);
    read_field(*s, "inputs", "train_frac", cfg.inputs.train_frac, problems);
    read_field(*s, "inputs", "standardize", cfg.inputs.standardize, problems);
  }
  if (const Json* s = section_of(doc, "output", problems)) {
    check_keys(*s, "output", {"directory"}, problems);
    read_field(*s, "output", "directory", cfg.output_directory, problems);
  }
  return problems;
}

std::vector<std::string> validate(const RunConfig& cfg, bool needs_inputs) {
  Problems problems;
  try {
    otsel::parse_truth_kind(cfg.dataset.kind);
  } catch (const otsel::Error&) {
    problems.push_back("dataset.kind: must be quadratic, tensorized or lse, got '" +
                       cfg.dataset.kind + "'");
  }
  if (cfg.dataset.d < 1) problems.push_back("dataset.d: must be >= 1");
  if (cfg.dataset.n < 2) problems.push_back("dataset.n: must be >= 2");
  if (cfg.dataset.seed < 0) problems.push_back("dataset.seed: must be >= 0");
  if (cfg.dataset.seeds < 1) problems.push_back("dataset.seeds: must be >= 1");

  if (cfg.models.sinkhorn.empty()) problems.push_back("models.sinkhorn: epsilon list is empty");
  for (double eps : cfg.models.sinkhorn)
    if (!positive(eps)) problems.push_back("models.sinkhorn: epsilon must be > 0");
  if (cfg.models.ssnb.empty()) problems.push_back("models.ssnb: (l, L) list is empty");
  for (const auto& [l, big_l] : cfg.models.ssnb)
    if (!(positive(l) && positive(big_l) && l < big_l))
      problems.push_back("models.ssnb: need 0 < l < L, got (" + otsel::format_double(l) + ", " +
                         otsel::format_double(big_l) + ")");
  if (!positive(cfg.models.sinkhorn_tol)) problems.push_back("models.sinkhorn_tol: must be > 0");
  if (cfg.models.sinkhorn_max_iter < 1)
    problems.push_back("models.sinkhorn_max_iter: must be >= 1");
  if (cfg.models.ssnb_outer_iters < 1) problems.push_back("models.ssnb_outer_iters: must be >= 1");
  try {
    otsel::parse_constraint_variant(cfg.models.ssnb_variant);
  } catch (const otsel::Error&) {
    problems.push_back("models.ssnb_variant: must be taylor or printed");
  }
  if (cfg.models.ssnb_coupling != "exact" && cfg.models.ssnb_coupling != "entropic")
    problems.push_back("models.ssnb_coupling: must be exact or entropic");
  if (cfg.models.ssnb_solver != "interior_point" && cfg.models.ssnb_solver != "conic")
    problems.push_back("models.ssnb_solver: must be interior_point or conic");

  if (!(cfg.criterion.delta >= 0.0 && std::isfinite(cfg.criterion.delta)))
    problems.push_back("criterion.delta: must be >= 0");
  const auto& m = cfg.criterion.method;
  if (m != "automatic" && m != "newton" && m != "first_order" && m != "exact")
    problems.push_back("criterion.method: must be automatic, newton, first_order or exact");
  if (!positive(cfg.criterion.tol)) problems.push_back("criterion.tol: must be > 0");
  if (cfg.criterion.max_iter < 1) problems.push_back("criterion.max_iter: must be >= 1");

  if (!(cfg.inputs.train_frac > 0.0 && cfg.inputs.train_frac < 1.0))
    problems.push_back("inputs.train_frac: must lie in (0, 1)");
  if (needs_inputs) {
    for (const auto& [name, path] : {std::pair<std::string, std::string>{"source", cfg.inputs.source},
                                     {"target", cfg.inputs.target}}) {
      if (path.empty()) {
        problems.push_back("inputs." + name + ": required");
      } else if (!std::filesystem::exists(path)) {
        problems.push_back("inputs." + name + ": file not found: " + path);
      }
    }
  }
  if (cfg.output_directory.empty()) problems.push_back("output.directory: must not be empty");
  return problems;
}

otsel::CriterionConfig criterion_of(const RunConfig& cfg) {
  otsel::CriterionConfig c;
  c.delta = cfg.criterion.delta;
  c.tol = cfg.criterion.tol;
  c.max_iter = static_cast<int>(cfg.criterion.max_iter);
  const auto& m = cfg.criterion.method;
  c.method = m == "newton"        ? otsel::ConjugateMethod::newton
             : m == "first_order" ? otsel::ConjugateMethod::first_order
             : m == "exact"       ? otsel::ConjugateMethod::exact
                                  : otsel::ConjugateMethod::automatic;
  return c;
}

otsel::SinkhornConfig sinkhorn_of(const RunConfig& cfg) {
  otsel::SinkhornConfig s;
  s.tol = cfg.models.sinkhorn_tol;
  s.max_iter = static_cast<int>(cfg.models.sinkhorn_max_iter);
  return s;
}

otsel::SsnbConfig ssnb_of(const RunConfig& cfg) {
  otsel::SsnbConfig s;
  s.outer_iters = static_cast<int>(cfg.models.ssnb_outer_iters);
  s.variant = otsel::parse_constraint_variant(cfg.models.ssnb_variant);
  s.solver = otsel::parse_fit_solver(cfg.models.ssnb_solver);
  s.coupling =
      cfg.models.ssnb_coupling == "entropic" ? otsel::CouplingMode::entropic : otsel::CouplingMode::exact;
  return s;
}

otsel::BenchConfig bench_of(const RunConfig& cfg) {
  otsel::BenchConfig b;
  b.kind = otsel::parse_truth_kind(cfg.dataset.kind);
  b.d = cfg.dataset.d;
  b.n = cfg.dataset.n;
  b.seeds.clear();
  for (long long k = 0; k < cfg.dataset.seeds; ++k)
    b.seeds.push_back(static_cast<std::uint64_t>(cfg.dataset.seed + k));
  b.epsilons = cfg.models.sinkhorn;
  b.ssnb_grid = cfg.models.ssnb;
  b.criterion = criterion_of(cfg);
  b.sinkhorn = sinkhorn_of(cfg);
  b.ssnb = ssnb_of(cfg);
  return b;
}

}  // namespace otselect
