#include "otsel/da.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "otsel/error.hpp"
#include "otsel/experiment.hpp"
#include "otsel/parallel.hpp"
#include "otsel/rng.hpp"

namespace otsel {

namespace {

std::vector<std::string> cells_of(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    out.push_back(cell);
  }
  return out;
}

void shuffle(std::vector<Index>& v, CounterRng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = rng.below(i);
    std::swap(v[i - 1], v[j]);
  }
}

// Mean/std of the rows of `ref`, applied to `m`.
Matrix standardize_with(const Matrix& ref, const Matrix& m) {
  const Eigen::RowVectorXd mean = ref.colwise().mean();
  Eigen::RowVectorXd sd = ((ref.rowwise() - mean).array().square().colwise().sum() /
                           std::max<Index>(ref.rows() - 1, 1))
                              .sqrt();
  sd = sd.unaryExpr([](double s) { return s > 0.0 ? s : 1.0; });
  return (m.rowwise() - mean).array().rowwise() / sd.array();
}

}  // namespace

std::size_t LabeledDataset::class_count() const {
  return std::set<std::string>(labels.begin(), labels.end()).size();
}

LabeledDataset LabeledDataset::subset(const std::vector<Index>& rows) const {
  LabeledDataset out;
  out.features.resize(static_cast<Index>(rows.size()), features.cols());
  out.labels.reserve(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    out.features.row(static_cast<Index>(k)) = features.row(rows[k]);
    out.labels.push_back(labels[static_cast<std::size_t>(rows[k])]);
  }
  return out;
}

LabeledDataset read_labeled_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw InvalidArgument(path + ": empty file");
  const auto header = cells_of(line);
  if (header.size() < 2 || header[0] != "label")
    throw InvalidArgument(path + ": expected header label,f0,...");
  const Index d = static_cast<Index>(header.size()) - 1;
  for (Index k = 0; k < d; ++k)
    if (header[static_cast<std::size_t>(k + 1)] != "f" + std::to_string(k))
      throw InvalidArgument(path + ": feature column " + std::to_string(k) + " must be named f" +
                            std::to_string(k));
  LabeledDataset ds;
  std::vector<double> values;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto cells = cells_of(line);
    if (static_cast<Index>(cells.size()) != d + 1)
      throw InvalidArgument(path + ": row " + std::to_string(ds.labels.size() + 1) +
                            " has the wrong number of columns");
    ds.labels.push_back(cells[0]);
    for (Index k = 0; k < d; ++k) {
      try {
        std::size_t used = 0;
        const std::string& c = cells[static_cast<std::size_t>(k + 1)];
        values.push_back(std::stod(c, &used));
        if (used != c.size()) throw std::invalid_argument(c);
      } catch (const std::exception&) {
        throw InvalidArgument(path + ": non-numeric feature in row " +
                              std::to_string(ds.labels.size()));
      }
    }
  }
  const Index n = static_cast<Index>(ds.labels.size());
  ds.features.resize(n, d);
  for (Index i = 0; i < n; ++i)
    for (Index k = 0; k < d; ++k) ds.features(i, k) = values[static_cast<std::size_t>(i * d + k)];
  if (!ds.features.allFinite()) throw InvalidArgument(path + ": non-finite feature");
  return ds;
}

void write_labeled_csv(const std::string& path, const LabeledDataset& ds) {
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot open " + path + " for writing");
  out << "label";
  for (Index k = 0; k < ds.dimension(); ++k) out << ",f" << k;
  out << '\n';
  for (Index i = 0; i < ds.size(); ++i) {
    out << ds.labels[static_cast<std::size_t>(i)];
    for (Index k = 0; k < ds.dimension(); ++k) out << ',' << format_double(ds.features(i, k));
    out << '\n';
  }
}

std::pair<LabeledDataset, LabeledDataset> split(const LabeledDataset& ds, double train_frac,
                                                std::uint64_t seed) {
  if (!(train_frac > 0.0 && train_frac < 1.0))
    throw InvalidArgument("split: train_frac must lie in (0, 1)");
  const Index n = ds.size();
  if (static_cast<double>(n) * std::min(train_frac, 1.0 - train_frac) < 1.0)
    throw InvalidArgument("split: too few samples for this fraction");
  const Index n_train = static_cast<Index>(std::llround(static_cast<double>(n) * train_frac));
  CounterRng rng(seed, "split");

  std::map<std::string, std::vector<Index>> by_class;
  for (Index i = 0; i < n; ++i) by_class[ds.labels[static_cast<std::size_t>(i)]].push_back(i);
  bool stratify = true;
  for (const auto& [label, rows] : by_class) stratify = stratify && rows.size() >= 2;

  std::vector<Index> train, test;
  if (stratify) {
    // Largest-remainder allocation of n_train over the classes.
    std::vector<std::pair<const std::string*, std::vector<Index>*>> classes;
    std::vector<Index> quota;
    std::vector<double> remainder;
    Index assigned = 0;
    for (auto& [label, rows] : by_class) {
      const double exact = static_cast<double>(rows.size()) * static_cast<double>(n_train) / n;
      const Index q = static_cast<Index>(std::floor(exact));
      classes.emplace_back(&label, &rows);
      quota.push_back(q);
      remainder.push_back(exact - static_cast<double>(q));
      assigned += q;
    }
    std::vector<std::size_t> order(classes.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
    for (std::size_t k = 0; assigned < n_train && k < order.size(); ++k, ++assigned)
      ++quota[order[k]];
    for (std::size_t c = 0; c < classes.size(); ++c) {
      std::vector<Index> rows = *classes[c].second;
      shuffle(rows, rng);
      train.insert(train.end(), rows.begin(), rows.begin() + quota[c]);
      test.insert(test.end(), rows.begin() + quota[c], rows.end());
    }
  } else {
    std::vector<Index> rows(static_cast<std::size_t>(n));
    std::iota(rows.begin(), rows.end(), 0);
    shuffle(rows, rng);
    train.assign(rows.begin(), rows.begin() + n_train);
    test.assign(rows.begin() + n_train, rows.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {ds.subset(train), ds.subset(test)};
}

Classification transport_classify(const ConvexPotential& potential, const LabeledDataset& source,
                                  const Matrix& target_features,
                                  const std::vector<std::string>* target_labels) {
  if (source.size() == 0) throw InvalidArgument("transport_classify: empty source");
  if (source.dimension() != target_features.cols() || potential.dimension() != source.dimension())
    throw InvalidArgument("transport_classify: feature dimensions differ");
  if (target_labels && static_cast<Index>(target_labels->size()) != target_features.rows())
    throw InvalidArgument("transport_classify: label count does not match the targets");
  const Matrix moved = potential.gradients(source.features);
  const Vector moved_sq = moved.rowwise().squaredNorm();
  const Index m = target_features.rows();
  Classification out;
  out.predictions.resize(static_cast<std::size_t>(m));
  parallel_for(static_cast<std::size_t>(m), [&](std::size_t t) {
    const Vector q = target_features.row(static_cast<Index>(t)).transpose();
    // |q - s|^2 up to the common |q|^2 term.
    const Vector dist = moved_sq - 2.0 * (moved * q);
    Index best = 0;
    for (Index i = 1; i < dist.size(); ++i)
      if (dist(i) < dist(best)) best = i;
    out.predictions[t] = source.labels[static_cast<std::size_t>(best)];
  });
  if (target_labels) {
    std::size_t hits = 0;
    for (std::size_t t = 0; t < out.predictions.size(); ++t)
      hits += out.predictions[t] == (*target_labels)[t] ? 1 : 0;
    out.accuracy = m ? static_cast<double>(hits) / static_cast<double>(m) : 0.0;
  }
  return out;
}

Json DaReport::to_json() const {
  Json rows = Json::array();
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto& c = candidates[i];
    rows.push_back({{"index", i},
                    {"family", c.family},
                    {"params", c.params},
                    {"j_value", c.j_value ? Json(*c.j_value) : Json(nullptr)},
                    {"accuracy", c.accuracy},
                    {"rank", c.accuracy_rank},
                    {"j_rank", c.j_rank}});
  }
  return {{"candidates", rows},
          {"selected", selected},
          {"best", best},
          {"selected_accuracy", candidates.empty() ? 0.0 : candidates[selected].accuracy},
          {"best_accuracy", candidates.empty() ? 0.0 : candidates[best].accuracy},
          {"selected_accuracy_rank", candidates.empty() ? 0 : candidates[selected].accuracy_rank},
          {"delta", delta},
          {"n_source_train", n_source_train},
          {"n_target_test", n_target_test}};
}

DaReport da_experiment(const LabeledDataset& source, const LabeledDataset& target,
                       const DaConfig& cfg) {
  if (source.dimension() != target.dimension())
    throw InvalidArgument("da_experiment: source and target feature dimensions differ");
  if (cfg.epsilons.empty() && cfg.ssnb_grid.empty())
    throw InvalidArgument("da_experiment: no candidate models");
  auto [s_train, s_test] = split(source, cfg.train_frac, cfg.seed);
  auto [t_train, t_test] = split(target, cfg.train_frac, cfg.seed + 1);
  if (cfg.standardize) {
    const Matrix sref = s_train.features;
    const Matrix tref = t_train.features;
    s_train.features = standardize_with(sref, s_train.features);
    s_test.features = standardize_with(sref, s_test.features);
    t_train.features = standardize_with(tref, t_train.features);
    t_test.features = standardize_with(tref, t_test.features);
  }
  const EmpiricalMeasure mu = EmpiricalMeasure::uniform(s_train.features);
  const EmpiricalMeasure nu = EmpiricalMeasure::uniform(t_train.features);
  const EmpiricalMeasure mu_test = EmpiricalMeasure::uniform(s_test.features);
  const EmpiricalMeasure nu_test = EmpiricalMeasure::uniform(t_test.features);

  DaReport report;
  report.delta = cfg.criterion.delta;
  report.n_source_train = s_train.size();
  report.n_target_test = t_test.size();

  auto score = [&](DaCandidate cand, const PotentialPtr& p) {
    try {
      cand.j_value = semidual_value(p, mu_test, nu_test, cfg.criterion).j_value;
    } catch (const CriterionUnavailable&) {
      cand.j_value.reset();
    }
    cand.accuracy = *transport_classify(*p, s_train, t_test.features, &t_test.labels).accuracy;
    report.candidates.push_back(std::move(cand));
  };

  const std::vector<PotentialPtr> sink =
      fit_sinkhorn_family(mu, nu, cfg.epsilons, cfg.sinkhorn);
  for (std::size_t k = 0; k < cfg.epsilons.size(); ++k)
    score({"sinkhorn", Json{{"epsilon", cfg.epsilons[k]}}, std::nullopt, 0.0, 0, 0}, sink[k]);

  for (const auto& [l, big_l] : cfg.ssnb_grid) {
    SsnbConfig sc = cfg.ssnb;
    sc.l = l;
    sc.big_l = big_l;
    const SsnbFit fit = ssnb_fit(mu, nu, sc);
    score({"ssnb", Json{{"l", l}, {"L", big_l}}, std::nullopt, 0.0, 0, 0}, fit.potential);
  }

  const std::size_t p = report.candidates.size();
  std::vector<double> j(p), neg_acc(p);
  for (std::size_t i = 0; i < p; ++i) {
    j[i] = report.candidates[i].j_value.value_or(std::numeric_limits<double>::infinity());
    neg_acc[i] = -report.candidates[i].accuracy;
  }
  const auto jr = ranks_of(j);
  const auto ar = ranks_of(neg_acc);
  for (std::size_t i = 0; i < p; ++i) {
    report.candidates[i].j_rank = jr[i];
    report.candidates[i].accuracy_rank = ar[i];
    if (jr[i] == 1) report.selected = i;
    if (ar[i] == 1) report.best = i;
  }
  return report;
}

}  // namespace otsel
