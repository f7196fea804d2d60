#include "otsel/experiment.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "otsel/error.hpp"

namespace otsel {

namespace {

std::string cache_path(const BenchConfig& cfg, std::uint64_t seed, const std::string& model,
                       const Json& params) {
  if (cfg.cache_dir.empty()) return {};
  Json key = {{"kind", to_string(cfg.kind)}, {"d", cfg.d},       {"n", cfg.n},
              {"seed", seed},                {"model", model},   {"params", params}};
  if (model == "sinkhorn") {
    key["tol"] = cfg.sinkhorn.tol;
  } else {
    key["outer_iters"] = cfg.ssnb.outer_iters;
    key["variant"] = to_string(cfg.ssnb.variant);
    key["conic_tol"] = cfg.ssnb.conic_tol;
    key["solver"] = to_string(cfg.ssnb.solver);
    key["coupling"] = cfg.ssnb.coupling == CouplingMode::exact ? "exact" : "entropic";
  }
  return (std::filesystem::path(cfg.cache_dir) / (model + "-" + fnv1a_hex(key.dump()) + ".json"))
      .string();
}

PotentialPtr cached(const std::string& path, const std::function<PotentialPtr()>& fit) {
  if (!path.empty() && std::filesystem::exists(path)) return load_potential(path);
  PotentialPtr p = fit();
  if (!path.empty()) {
    std::filesystem::create_directories(std::filesystem::path(path).parent_path());
    save_potential(path, *p);
  }
  return p;
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

std::vector<double> default_epsilons() { return {0.5, 0.1, 0.05, 0.01, 0.005}; }

std::vector<std::pair<double, double>> default_ssnb_grid() {
  std::vector<std::pair<double, double>> grid;
  for (double l : {0.2, 0.5, 0.7, 0.9})
    for (double big_l : {0.2, 0.5, 0.7, 0.9, 1.2})
      if (l < big_l) grid.emplace_back(l, big_l);
  return grid;
}

std::string params_label(const Json& params) {
  std::ostringstream out;
  bool first = true;
  for (auto it = params.begin(); it != params.end(); ++it) {
    if (!first) out << ';';
    first = false;
    out << it.key() << '=';
    if (it->is_number()) {
      out << format_double(it->get<double>());
    } else {
      out << it->dump();
    }
  }
  return out.str();
}

std::vector<PotentialPtr> fit_sinkhorn_family(const EmpiricalMeasure& mu,
                                              const EmpiricalMeasure& nu,
                                              const std::vector<double>& epsilons,
                                              const SinkhornConfig& base) {
  std::vector<std::size_t> order(epsilons.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return epsilons[a] > epsilons[b]; });
  std::vector<PotentialPtr> out(epsilons.size());
  std::optional<SinkhornDuals> previous;
  for (std::size_t k : order) {
    SinkhornConfig sc = base;
    sc.epsilon = epsilons[k];
    previous = sinkhorn_solve(mu, nu, sc, previous ? &*previous : nullptr);
    out[k] = brenier_extend(*previous, nu);
  }
  return out;
}

BenchResult run_bench(const BenchConfig& cfg, const ProgressFn& progress) {
  if (cfg.d < 1 || cfg.n < 2) throw InvalidArgument("bench: need d >= 1 and n >= 2");
  if (cfg.seeds.empty()) throw InvalidArgument("bench: no seeds");
  if (cfg.epsilons.empty() && cfg.ssnb_grid.empty())
    throw InvalidArgument("bench: no candidate models");
  auto say = [&](const std::string& msg) {
    if (progress) progress(msg);
  };

  BenchResult result;
  result.kind = cfg.kind;
  for (std::uint64_t seed : cfg.seeds) {
    const GroundTruth truth = generate_truth(cfg.kind, cfg.d, seed);
    const BenchmarkBatches data = make_batches(truth, cfg.n, seed);

    auto run_family = [&](const std::string& model, const std::vector<Json>& params,
                          const std::vector<PotentialPtr>& candidates) {
      say("seed " + std::to_string(seed) + ": selecting among " +
          std::to_string(candidates.size()) + " " + model + " candidates");
      const SelectionOutcome sel =
          select(candidates, data.test.mu, data.test.nu, cfg.criterion,
                 SelectionTruth{truth.potential, &data.eval.mu, 0.05});
      std::vector<int> j_rank(candidates.size());
      for (std::size_t k = 0; k < sel.ranking.size(); ++k)
        j_rank[sel.ranking[k]] = static_cast<int>(k) + 1;
      std::vector<double> js, es;
      for (std::size_t i = 0; i < candidates.size(); ++i) {
        BenchRow row;
        row.seed = seed;
        row.model = model;
        row.params = params[i];
        if (sel.reports[i]) row.j_value = sel.reports[i]->j_value;
        row.error = (*sel.errors)[i];
        row.error_rank = (*sel.error_ranks)[i];
        row.j_rank = j_rank[i];
        row.selected = i == sel.selected;
        if (row.j_value) {
          js.push_back(*row.j_value);
          es.push_back(row.error);
        }
        result.rows.push_back(std::move(row));
      }
      FamilySummary s;
      s.seed = seed;
      s.model = model;
      s.candidates = candidates.size();
      s.best_error = (*sel.errors)[*sel.best];
      s.selected_error = (*sel.errors)[sel.selected];
      s.selected_rank = (*sel.error_ranks)[sel.selected];
      if (js.size() >= 2) s.spearman = spearman(js, es);
      result.summaries.push_back(s);
    };

    if (!cfg.epsilons.empty()) {
      std::vector<Json> params;
      bool all_cached = !cfg.cache_dir.empty();
      for (double eps : cfg.epsilons) {
        params.push_back(Json{{"epsilon", eps}});
        const std::string path = cache_path(cfg, seed, "sinkhorn", params.back());
        all_cached = all_cached && std::filesystem::exists(path);
      }
      std::vector<PotentialPtr> candidates;
      if (all_cached) {
        for (const auto& p : params)
          candidates.push_back(load_potential(cache_path(cfg, seed, "sinkhorn", p)));
      } else {
        say("seed " + std::to_string(seed) + ": fitting sinkhorn family");
        candidates = fit_sinkhorn_family(data.train.mu, data.train.nu, cfg.epsilons, cfg.sinkhorn);
        for (std::size_t i = 0; i < candidates.size(); ++i) {
          const std::string path = cache_path(cfg, seed, "sinkhorn", params[i]);
          cached(path, [&] { return candidates[i]; });
        }
      }
      run_family("sinkhorn", params, candidates);
    }

    if (!cfg.ssnb_grid.empty()) {
      std::vector<Json> params;
      std::vector<PotentialPtr> candidates;
      for (const auto& [l, big_l] : cfg.ssnb_grid) {
        params.push_back(Json{{"l", l}, {"L", big_l}});
        candidates.push_back(cached(cache_path(cfg, seed, "ssnb", params.back()), [&] {
          say("seed " + std::to_string(seed) + ": fitting ssnb " + params_label(params.back()));
          SsnbConfig sc = cfg.ssnb;
          sc.l = l;
          sc.big_l = big_l;
          return PotentialPtr(ssnb_fit(data.train.mu, data.train.nu, sc).potential);
        }));
      }
      run_family("ssnb", params, candidates);
    }
  }
  return result;
}

Json BenchResult::table() const {
  Json out = Json::object();
  std::vector<std::string> models;
  for (const auto& s : summaries)
    if (std::find(models.begin(), models.end(), s.model) == models.end()) models.push_back(s.model);
  for (const auto& m : models) {
    std::vector<double> best, selected, rank, rho;
    std::size_t candidates = 0;
    for (const auto& s : summaries) {
      if (s.model != m) continue;
      best.push_back(s.best_error);
      selected.push_back(s.selected_error);
      rank.push_back(s.selected_rank);
      if (s.spearman) rho.push_back(*s.spearman);
      candidates = s.candidates;
    }
    out[m] = {{"best_error", mean_of(best)},
              {"selected_error", mean_of(selected)},
              {"selected_rank", mean_of(rank)},
              {"candidates", candidates},
              {"spearman", mean_of(rho)},
              {"seeds", best.size()}};
  }
  return Json{{"benchmark", to_string(kind)}, {"models", out}};
}

void BenchResult::write_rows_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot open " + path + " for writing");
  out << "seed,model,params,J,e,e_rank,j_rank,selected\n";
  for (const auto& r : rows) {
    out << r.seed << ',' << r.model << ',' << params_label(r.params) << ','
        << (r.j_value ? format_double(*r.j_value) : std::string("NA")) << ','
        << format_double(r.error) << ',' << r.error_rank << ',' << r.j_rank << ','
        << (r.selected ? 1 : 0) << '\n';
  }
}

void BenchResult::write_summary_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot open " + path + " for writing");
  out << "seed,model,candidates,best_error,selected_error,selected_rank,spearman\n";
  for (const auto& s : summaries) {
    out << s.seed << ',' << s.model << ',' << s.candidates << ',' << format_double(s.best_error)
        << ',' << format_double(s.selected_error) << ',' << s.selected_rank << ','
        << (s.spearman ? format_double(*s.spearman) : std::string("NA")) << '\n';
  }
}

}  // namespace otsel
