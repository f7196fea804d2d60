#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <Eigen/Core>

#include "CLI11.hpp"
#include "otsel/da.hpp"
#include "otsel/experiment.hpp"
#include "otsel/io.hpp"
#include "otsel/parallel.hpp"
#include "otsel/semidual.hpp"
#include "otsel/ssnb.hpp"
#include "otsel/synthetic.hpp"
#include "run_config.hpp"

#ifndef OTSEL_VERSION
#define OTSEL_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using otsel::Json;
using otselect::RunConfig;

namespace {

enum class Level { error = 0, warn = 1, info = 2, debug = 3 };
Level g_level = Level::info;

void log(Level level, const std::string& msg) {
  static const char* names[] = {"error", "warn", "info", "debug"};
  if (static_cast<int>(level) <= static_cast<int>(g_level))
    std::cerr << "[" << names[static_cast<int>(level)] << "] " << msg << '\n';
}

/// Error record printed on stderr as a single JSON line.
int fail(const std::string& type, const std::string& message, int code,
         const std::vector<std::string>& problems = {}) {
  Json record = {{"error", {{"type", type}, {"message", message}}}};
  if (!problems.empty()) record["error"]["problems"] = problems;
  std::cerr << record.dump() << '\n';
  return code;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

struct Globals {
  std::string config_path;
  std::string out;
  std::optional<long long> seed;
  std::size_t threads = 0;
  std::string log_level = "info";
};

struct Run {
  std::string command;
  RunConfig cfg;
  fs::path out_dir;
  std::vector<std::string> outputs;
  std::vector<long long> seeds;

  fs::path file(const std::string& name) {
    outputs.push_back(name);
    return out_dir / name;
  }

  void write_manifest() const {
    const Json config = cfg.to_json();
    Json manifest = {{"tool", "otselect"},
                     {"version", OTSEL_VERSION},
                     {"command", command},
                     {"config", config},
                     {"config_hash", otsel::fnv1a_hex(config.dump())},
                     {"seeds", seeds},
                     {"outputs", outputs},
                     {"libraries",
                      {{"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                                     std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                     std::to_string(EIGEN_MINOR_VERSION)},
                       {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                             std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                             std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
                       {"cli11", CLI11_VERSION}}},
                     {"created", utc_timestamp()}};
    otsel::write_json((out_dir / "manifest.json").string(), manifest);
  }
};

otsel::EmpiricalMeasure load_measure(const std::string& path) {
  return otsel::EmpiricalMeasure::uniform(otsel::read_points(path));
}

std::string stem_of(const std::string& path) { return fs::path(path).stem().string(); }

void require_files(const std::vector<std::pair<std::string, std::string>>& files,
                   std::vector<std::string>& problems) {
  for (const auto& [flag, path] : files) {
    if (path.empty()) {
      problems.push_back(flag + ": required");
    } else if (!fs::exists(path)) {
      problems.push_back(flag + ": file not found: " + path);
    }
  }
}

// ---------------------------------------------------------------------------

struct GenArgs {
  std::string format = "csv";
};

void cmd_gen(Run& run, const GenArgs& args) {
  const auto& ds = run.cfg.dataset;
  const auto kind = otsel::parse_truth_kind(ds.kind);
  const auto seed = static_cast<std::uint64_t>(ds.seed);
  run.seeds = {ds.seed};
  const otsel::GroundTruth truth = otsel::generate_truth(kind, ds.d, seed);
  const otsel::BenchmarkBatches b = otsel::make_batches(truth, ds.n, seed);
  const std::string ext = args.format == "csv" ? ".csv" : ".otpc";
  const std::pair<const char*, const otsel::SampledPair*> batches[] = {
      {"train", &b.train}, {"test", &b.test}, {"eval", &b.eval}};
  Json files = Json::object();
  for (const auto& [name, pair] : batches) {
    const std::string src = std::string(name) + "_source" + ext;
    const std::string tgt = std::string(name) + "_target" + ext;
    otsel::write_points(run.file(src).string(), pair->mu.points());
    otsel::write_points(run.file(tgt).string(), pair->nu.points());
    files[name] = {{"source", src}, {"target", tgt}};
  }
  otsel::save_potential(run.file("truth.json").string(), *truth.potential,
                        Json{{"benchmark", ds.kind}, {"seed", ds.seed}});
  otsel::write_json(run.file("dataset.json").string(),
                    Json{{"kind", ds.kind},
                         {"seed", ds.seed},
                         {"n", ds.n},
                         {"d", ds.d},
                         {"truth", "truth.json"},
                         {"batches", files}});
  log(Level::info, "wrote 3 batches of " + std::to_string(ds.n) + " points to " +
                       run.out_dir.string());
}

// ---------------------------------------------------------------------------

struct FitArgs {
  std::string model = "sinkhorn";
  std::string source, target;
  std::optional<double> epsilon, l, big_l;
};

void cmd_fit(Run& run, const FitArgs& args) {
  const auto mu = load_measure(args.source);
  const auto nu = load_measure(args.target);
  if (mu.dimension() != nu.dimension())
    throw otsel::InvalidArgument("source and target dimensions differ");
  if (args.model == "sinkhorn") {
    const std::vector<double> eps =
        args.epsilon ? std::vector<double>{*args.epsilon} : run.cfg.models.sinkhorn;
    const auto family = otsel::fit_sinkhorn_family(mu, nu, eps, otselect::sinkhorn_of(run.cfg));
    for (std::size_t k = 0; k < eps.size(); ++k) {
      const std::string name = "sinkhorn_eps=" + otsel::format_double(eps[k]) + ".json";
      otsel::save_potential(run.file(name).string(), *family[k],
                            Json{{"model", "sinkhorn"}, {"epsilon", eps[k]}});
      log(Level::info, "fitted " + name);
    }
  } else {
    std::vector<std::pair<double, double>> grid = run.cfg.models.ssnb;
    if (args.l || args.big_l) {
      if (!args.l || !args.big_l) throw otsel::InvalidArgument("--l and --L go together");
      grid = {{*args.l, *args.big_l}};
    }
    for (const auto& [l, big_l] : grid) {
      otsel::SsnbConfig sc = otselect::ssnb_of(run.cfg);
      sc.l = l;
      sc.big_l = big_l;
      const otsel::SsnbFit fit = otsel::ssnb_fit(mu, nu, sc);
      const std::string name = "ssnb_l=" + otsel::format_double(l) +
                               "_L=" + otsel::format_double(big_l) + ".json";
      otsel::save_potential(run.file(name).string(), *fit.potential,
                            Json{{"model", "ssnb"}, {"l", l}, {"L", big_l},
                                 {"cost_trace", fit.cost_trace}});
      log(Level::info, "fitted " + name);
    }
  }
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::vector<std::string> potentials;
  std::string source, target;
  std::string truth, eval_source;
};

std::optional<otsel::SelectionTruth> truth_of(const EvalArgs& args,
                                              std::optional<otsel::EmpiricalMeasure>& mu_eval) {
  if (args.truth.empty()) return std::nullopt;
  mu_eval = load_measure(args.eval_source.empty() ? args.source : args.eval_source);
  return otsel::SelectionTruth{otsel::load_potential(args.truth), &*mu_eval, 0.05};
}

void cmd_eval(Run& run, const EvalArgs& args) {
  const auto mu = load_measure(args.source);
  const auto nu = load_measure(args.target);
  std::optional<otsel::EmpiricalMeasure> mu_eval;
  const auto truth = truth_of(args, mu_eval);
  const auto criterion = otselect::criterion_of(run.cfg);
  Json results = Json::array();
  for (const auto& path : args.potentials) {
    const otsel::PotentialPtr f = otsel::load_potential(path);
    Json entry = {{"potential", path}};
    try {
      const auto rep = otsel::semidual_value(f, mu, nu, criterion);
      entry["j_value"] = rep.j_value;
      entry["first_term"] = rep.first_term;
      entry["second_term"] = rep.second_term;
      entry["delta"] = rep.delta;
      entry["unconverged_fraction"] = rep.unconverged_fraction;
      entry["conjugate_iterations"] = rep.conjugate_iterations;
      std::cout << stem_of(path) << " J=" << otsel::format_double(rep.j_value);
    } catch (const otsel::CriterionUnavailable& e) {
      entry["j_value"] = nullptr;
      entry["unavailable"] = e.what();
      std::cout << stem_of(path) << " J=unavailable";
    }
    if (truth) {
      const double e = otsel::quadratic_error(*f, *truth->truth, *truth->mu_eval);
      entry["error"] = e;
      std::cout << " e=" << otsel::format_double(e);
    }
    std::cout << '\n';
    results.push_back(entry);
  }
  otsel::write_json(run.file("eval.json").string(), Json{{"results", results}});
}

void cmd_select(Run& run, const EvalArgs& args) {
  const auto mu = load_measure(args.source);
  const auto nu = load_measure(args.target);
  std::optional<otsel::EmpiricalMeasure> mu_eval;
  const auto truth = truth_of(args, mu_eval);
  std::vector<otsel::PotentialPtr> candidates;
  std::vector<std::string> labels;
  for (const auto& path : args.potentials) {
    candidates.push_back(otsel::load_potential(path));
    labels.push_back(stem_of(path));
  }
  const auto sel = otsel::select(candidates, mu, nu, otselect::criterion_of(run.cfg), truth);
  for (std::size_t k = 0; k < sel.ranking.size(); ++k) {
    const std::size_t i = sel.ranking[k];
    std::cout << k + 1 << ' ' << labels[i] << ' '
              << (sel.reports[i] ? otsel::format_double(sel.reports[i]->j_value)
                                 : std::string("unavailable"))
              << '\n';
  }
  otsel::write_json(run.file("selection.json").string(), otsel::selection_to_json(sel, labels));
  otsel::write_selection_csv(run.file("selection.csv").string(), sel, labels);
}

// ---------------------------------------------------------------------------

struct BenchArgs {
  bool no_sinkhorn = false;
  bool no_ssnb = false;
};

void cmd_bench(Run& run, const BenchArgs& args) {
  otsel::BenchConfig bc = otselect::bench_of(run.cfg);
  if (args.no_sinkhorn) bc.epsilons.clear();
  if (args.no_ssnb) bc.ssnb_grid.clear();
  if (const char* cache = std::getenv("OTSELECT_CACHE")) bc.cache_dir = cache;
  for (auto s : bc.seeds) run.seeds.push_back(static_cast<long long>(s));
  const otsel::BenchResult res =
      otsel::run_bench(bc, [](const std::string& msg) { log(Level::info, msg); });
  res.write_rows_csv(run.file("rows.csv").string());
  res.write_summary_csv(run.file("summary.csv").string());
  const Json table = res.table();
  otsel::write_json(run.file("table.json").string(), table);
  std::cout << table.dump(2) << '\n';
}

// ---------------------------------------------------------------------------

struct DaArgs {
  bool no_sinkhorn = false;
  bool no_ssnb = false;
};

void cmd_da(Run& run, const DaArgs& args) {
  const auto source = otsel::read_labeled_csv(run.cfg.inputs.source);
  const auto target = otsel::read_labeled_csv(run.cfg.inputs.target);
  otsel::DaConfig dc;
  dc.epsilons = args.no_sinkhorn ? std::vector<double>{} : run.cfg.models.sinkhorn;
  if (!args.no_ssnb) dc.ssnb_grid = run.cfg.models.ssnb;
  dc.train_frac = run.cfg.inputs.train_frac;
  dc.standardize = run.cfg.inputs.standardize;
  dc.seed = static_cast<std::uint64_t>(run.cfg.dataset.seed);
  dc.criterion = otselect::criterion_of(run.cfg);
  dc.sinkhorn = otselect::sinkhorn_of(run.cfg);
  dc.ssnb = otselect::ssnb_of(run.cfg);
  run.seeds = {run.cfg.dataset.seed};
  const otsel::DaReport report = otsel::da_experiment(source, target, dc);
  const Json j = report.to_json();
  otsel::write_json(run.file("da_report.json").string(), j);
  for (const auto& c : report.candidates)
    std::cout << c.family << ' ' << otsel::params_label(c.params) << " J="
              << (c.j_value ? otsel::format_double(*c.j_value) : std::string("unavailable"))
              << " accuracy=" << otsel::format_double(c.accuracy) << " (" << c.accuracy_rank
              << "/" << report.candidates.size() << ")\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"otselect: fit, evaluate and select convex optimal transport potentials"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", std::string(OTSEL_VERSION));

  Globals g;
  app.add_option("--config", g.config_path, "JSON run configuration");
  app.add_option("--out", g.out, "output directory (overrides output.directory)");
  app.add_option("--seed", g.seed, "base seed (overrides dataset.seed)");
  app.add_option("--threads", g.threads, "worker threads (0 = all cores)");
  app.add_option("--log-level", g.log_level, "error, warn, info or debug")
      ->check(CLI::IsMember({"error", "warn", "info", "debug"}));

  std::optional<std::string> kind;
  std::optional<long long> d, n, seeds;
  auto dataset_flags = [&](CLI::App* sub) {
    sub->add_option("--kind", kind, "quadratic, tensorized or lse");
    sub->add_option("--d", d, "dimension");
    sub->add_option("--n", n, "points per batch");
  };

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "generate a benchmark truth and its three batches");
  dataset_flags(gen_cmd);
  gen_cmd->add_option("--format", gen.format, "csv or otpc")->check(CLI::IsMember({"csv", "otpc"}));

  FitArgs fit;
  auto* fit_cmd = app.add_subcommand("fit", "fit Sinkhorn or SSNB potentials");
  fit_cmd->add_option("--model", fit.model, "sinkhorn or ssnb")
      ->check(CLI::IsMember({"sinkhorn", "ssnb"}));
  fit_cmd->add_option("--source", fit.source, "source point file");
  fit_cmd->add_option("--target", fit.target, "target point file");
  fit_cmd->add_option("--epsilon", fit.epsilon, "single temperature (default: config list)");
  fit_cmd->add_option("--l", fit.l, "strong convexity (with --L)");
  fit_cmd->add_option("--L", fit.big_l, "smoothness (with --l)");

  EvalArgs ev;
  auto eval_flags = [&](CLI::App* sub, const char* what) {
    sub->add_option("--potential,--candidates", ev.potentials, what)->expected(1, -1);
    sub->add_option("--source", ev.source, "test source point file");
    sub->add_option("--target", ev.target, "test target point file");
    sub->add_option("--truth", ev.truth, "ground-truth potential JSON (reports errors)");
    sub->add_option("--eval-source", ev.eval_source, "points for the error (default --source)");
  };
  auto* eval_cmd = app.add_subcommand("eval", "semi-dual value of potentials on test data");
  eval_flags(eval_cmd, "potential JSON files");
  auto* select_cmd = app.add_subcommand("select", "rank candidate potentials by the semi-dual");
  eval_flags(select_cmd, "candidate potential JSON files");

  BenchArgs bench;
  auto* bench_cmd = app.add_subcommand("bench", "synthetic benchmark with selection per family");
  dataset_flags(bench_cmd);
  bench_cmd->add_option("--seeds", seeds, "number of seeds");
  bench_cmd->add_flag("--no-sinkhorn", bench.no_sinkhorn, "skip the Sinkhorn family");
  bench_cmd->add_flag("--no-ssnb", bench.no_ssnb, "skip the SSNB family");

  DaArgs da;
  std::optional<std::string> da_source, da_target;
  std::optional<double> train_frac;
  bool standardize = false;
  auto* da_cmd = app.add_subcommand("da", "domain adaptation on labeled feature CSVs");
  da_cmd->add_option("--source", da_source, "labeled source CSV");
  da_cmd->add_option("--target", da_target, "labeled target CSV");
  da_cmd->add_option("--train-frac", train_frac, "train fraction");
  da_cmd->add_flag("--standardize", standardize, "standardize features per domain");
  da_cmd->add_flag("--no-sinkhorn", da.no_sinkhorn, "skip the Sinkhorn family");
  da_cmd->add_flag("--no-ssnb", da.no_ssnb, "skip the SSNB family");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  g_level = g.log_level == "error" ? Level::error
            : g.log_level == "warn"  ? Level::warn
            : g.log_level == "debug" ? Level::debug
                                     : Level::info;
  otsel::set_thread_count(g.threads);

  Run run;
  run.command = app.get_subcommands().front()->get_name();
  std::vector<std::string> problems;
  if (!g.config_path.empty()) {
    try {
      const auto more = otselect::merge_config(otsel::read_json(g.config_path), run.cfg);
      problems.insert(problems.end(), more.begin(), more.end());
    } catch (const std::exception& e) {
      problems.push_back("--config: " + std::string(e.what()));
    }
  }
  if (kind) run.cfg.dataset.kind = *kind;
  if (d) run.cfg.dataset.d = *d;
  if (n) run.cfg.dataset.n = *n;
  if (seeds) run.cfg.dataset.seeds = *seeds;
  if (g.seed) run.cfg.dataset.seed = *g.seed;
  if (!g.out.empty()) run.cfg.output_directory = g.out;
  if (da_source) run.cfg.inputs.source = *da_source;
  if (da_target) run.cfg.inputs.target = *da_target;
  if (train_frac) run.cfg.inputs.train_frac = *train_frac;
  if (standardize) run.cfg.inputs.standardize = true;

  const auto semantic = otselect::validate(run.cfg, run.command == "da");
  problems.insert(problems.end(), semantic.begin(), semantic.end());
  if (run.command == "fit") {
    require_files({{"--source", fit.source}, {"--target", fit.target}}, problems);
  } else if (run.command == "eval" || run.command == "select") {
    require_files({{"--source", ev.source}, {"--target", ev.target}}, problems);
    if (ev.potentials.empty()) problems.push_back("--candidates: at least one file required");
    for (const auto& p : ev.potentials)
      if (!fs::exists(p)) problems.push_back("--candidates: file not found: " + p);
    if (!ev.truth.empty()) require_files({{"--truth", ev.truth}}, problems);
    if (!ev.eval_source.empty()) require_files({{"--eval-source", ev.eval_source}}, problems);
  }
  if (!problems.empty()) return fail("config", "configuration is invalid", 2, problems);

  try {
    run.out_dir = run.cfg.output_directory;
    fs::create_directories(run.out_dir);
    if (run.command == "gen") cmd_gen(run, gen);
    else if (run.command == "fit") cmd_fit(run, fit);
    else if (run.command == "eval") cmd_eval(run, ev);
    else if (run.command == "select") cmd_select(run, ev);
    else if (run.command == "bench") cmd_bench(run, bench);
    else if (run.command == "da") cmd_da(run, da);
    run.write_manifest();
  } catch (const otsel::InvalidArgument& e) {
    return fail("invalid_argument", e.what(), 2);
  } catch (const otsel::ConvergenceFailure& e) {
    return fail("convergence_failure", e.what(), 1);
  } catch (const otsel::NumericalFailure& e) {
    return fail("numerical_failure", e.what(), 1);
  } catch (const otsel::CriterionUnavailable& e) {
    return fail("criterion_unavailable", e.what(), 1);
  } catch (const std::exception& e) {
    return fail("error", e.what(), 1);
  }
  return 0;
}
