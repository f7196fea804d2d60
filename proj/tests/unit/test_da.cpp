#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "otsel/da.hpp"
#include "otsel/error.hpp"
#include "otsel/rng.hpp"

using namespace otsel;

namespace {

/// Two Gaussian classes centred at -c and +c along the first axis, moved by
/// `shift`.
LabeledDataset two_classes(Index per_class, Index d, double sep, const Vector& shift,
                           std::uint64_t seed, const char* tag) {
  CounterRng rng(seed, tag);
  LabeledDataset ds;
  ds.features = 0.3 * rng.normal_matrix(2 * per_class, d);
  for (Index i = 0; i < 2 * per_class; ++i) {
    const bool pos = i % 2 == 1;
    ds.features(i, 0) += pos ? sep : -sep;
    ds.features.row(i) += shift.transpose();
    ds.labels.push_back(pos ? "pos" : "neg");
  }
  return ds;
}

std::map<std::string, int> label_counts(const LabeledDataset& ds) {
  std::map<std::string, int> out;
  for (const auto& l : ds.labels) ++out[l];
  return out;
}

/// 1/2 |x|^2 + v'x.
std::shared_ptr<QuadraticPotential> translation(const Vector& v) {
  return std::make_shared<QuadraticPotential>(Matrix::Identity(v.size(), v.size()), v);
}

}  // namespace

TEST(Split, SizesAndDeterminism) {
  const auto ds = two_classes(5, 2, 1.0, Vector::Zero(2), 1, "split");
  const auto [train, test] = split(ds, 0.7, 3);
  EXPECT_EQ(train.size(), 7);
  EXPECT_EQ(test.size(), 3);
  const auto [train2, test2] = split(ds, 0.7, 3);
  EXPECT_EQ(train.features, train2.features);
  EXPECT_EQ(test.labels, test2.labels);
  const auto [train3, test3] = split(ds, 0.7, 4);
  EXPECT_NE(train.features, train3.features);
}

TEST(Split, StratifiesByLabel) {
  LabeledDataset ds;
  CounterRng rng(2, "strat");
  ds.features = rng.normal_matrix(90, 2);
  for (Index i = 0; i < 90; ++i) ds.labels.push_back(i < 60 ? "a" : (i < 80 ? "b" : "c"));
  const auto [train, test] = split(ds, 0.7, 5);
  EXPECT_EQ(train.size() + test.size(), 90);
  const auto counts = label_counts(train);
  EXPECT_NEAR(counts.at("a"), 42, 1);
  EXPECT_NEAR(counts.at("b"), 14, 1);
  EXPECT_NEAR(counts.at("c"), 7, 1);
}

TEST(Split, RejectsDegenerateFractions) {
  const auto ds = two_classes(2, 2, 1.0, Vector::Zero(2), 3, "deg");
  EXPECT_THROW(split(ds, 0.0, 0), InvalidArgument);
  EXPECT_THROW(split(ds, 1.0, 0), InvalidArgument);
  EXPECT_THROW(split(ds, 0.1, 0), InvalidArgument);
}

TEST(TransportClassify, IdentityOnItselfIsPerfect) {
  const auto ds = two_classes(20, 3, 0.2, Vector::Zero(3), 4, "self");
  const auto id = QuadraticPotential::isotropic(3, 1.0);
  const auto out = transport_classify(*id, ds, ds.features, &ds.labels);
  ASSERT_TRUE(out.accuracy);
  EXPECT_EQ(*out.accuracy, 1.0);
  EXPECT_EQ(out.predictions, ds.labels);
}

TEST(TransportClassify, TranslationPotentialSolvesShiftedTask) {
  const Vector v = Vector::Constant(2, 4.0);
  const auto src = two_classes(50, 2, 1.5, Vector::Zero(2), 5, "src");
  const auto tgt = two_classes(50, 2, 1.5, v, 5, "tgt");
  const auto out = transport_classify(*translation(v), src, tgt.features, &tgt.labels);
  EXPECT_GE(*out.accuracy, 0.95);
  // Without transport the shifted target is misclassified.
  const auto raw = transport_classify(*translation(Vector::Zero(2)), src, tgt.features, &tgt.labels);
  EXPECT_LT(*raw.accuracy, *out.accuracy);
}

TEST(TransportClassify, TiesGoToSmallestSourceIndex) {
  LabeledDataset src;
  src.features = Matrix::Zero(3, 1);
  src.labels = {"first", "second", "third"};
  const auto id = QuadraticPotential::isotropic(1, 1.0);
  const auto out = transport_classify(*id, src, Matrix::Zero(2, 1));
  EXPECT_EQ(out.predictions, (std::vector<std::string>{"first", "first"}));
  EXPECT_FALSE(out.accuracy);
  LabeledDataset empty;
  empty.features = Matrix(0, 1);
  EXPECT_THROW(transport_classify(*id, empty, Matrix::Zero(1, 1)), InvalidArgument);
}

TEST(TransportClassify, JointTranslationLeavesPredictionsUnchanged) {
  const auto src = two_classes(15, 2, 0.5, Vector::Zero(2), 6, "src");
  const auto tgt = two_classes(15, 2, 0.5, Vector::Zero(2), 6, "tgt");
  const Vector v(Vector::Constant(2, -2.5));
  const auto base = transport_classify(*translation(Vector::Zero(2)), src, tgt.features);
  const Matrix moved = tgt.features.rowwise() + v.transpose();
  const auto shifted = transport_classify(*translation(v), src, moved);
  EXPECT_EQ(base.predictions, shifted.predictions);
}

TEST(LabeledCsv, RoundTripAndValidation) {
  const auto ds = two_classes(4, 3, 1.0, Vector::Zero(3), 7, "csv");
  const auto dir = std::filesystem::temp_directory_path() / "otsel_da_csv";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "ds.csv").string();
  write_labeled_csv(path, ds);
  const auto back = read_labeled_csv(path);
  EXPECT_EQ(back.labels, ds.labels);
  EXPECT_LE((back.features - ds.features).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(back.class_count(), 2u);

  std::ofstream(dir / "bad_header.csv") << "cls,f0\na,1\n";
  EXPECT_THROW(read_labeled_csv((dir / "bad_header.csv").string()), InvalidArgument);
  std::ofstream(dir / "bad_value.csv") << "label,f0,f1\na,1,x\n";
  EXPECT_THROW(read_labeled_csv((dir / "bad_value.csv").string()), InvalidArgument);
  std::filesystem::remove_all(dir);
}

TEST(DaExperiment, SinkhornGridReportIsComplete) {
  const Vector v = Vector::Constant(2, 3.0);
  const auto src = two_classes(30, 2, 1.5, Vector::Zero(2), 8, "src");
  const auto tgt = two_classes(30, 2, 1.5, v, 8, "tgt");
  DaConfig cfg;
  cfg.ssnb_grid.clear();
  cfg.sinkhorn.tol = 1e-5;
  cfg.sinkhorn.max_iter = 100000;
  const auto report = da_experiment(src, tgt, cfg);
  ASSERT_EQ(report.candidates.size(), 5u);
  std::set<int> j_ranks, acc_ranks;
  for (const auto& c : report.candidates) {
    EXPECT_EQ(c.family, "sinkhorn");
    EXPECT_TRUE(c.params.contains("epsilon"));
    EXPECT_GE(c.accuracy, 0.0);
    EXPECT_LE(c.accuracy, 1.0);
    j_ranks.insert(c.j_rank);
    acc_ranks.insert(c.accuracy_rank);
  }
  EXPECT_EQ(j_ranks, (std::set<int>{1, 2, 3, 4, 5}));
  EXPECT_EQ(acc_ranks, (std::set<int>{1, 2, 3, 4, 5}));
  EXPECT_EQ(report.candidates[report.selected].j_rank, 1);
  EXPECT_EQ(report.candidates[report.best].accuracy_rank, 1);
  EXPECT_EQ(report.n_source_train, 42);
  EXPECT_EQ(report.n_target_test, 18);
  EXPECT_EQ(report.delta, cfg.criterion.delta);

  const Json j = report.to_json();
  for (const char* key : {"family", "params", "j_value", "accuracy", "rank"})
    EXPECT_TRUE(j["candidates"][0].contains(key)) << key;
  EXPECT_TRUE(j.contains("selected"));
  EXPECT_TRUE(j.contains("best"));
}

TEST(DaExperiment, SingleCandidateSelectsItself) {
  const auto src = two_classes(10, 2, 1.0, Vector::Zero(2), 9, "src");
  DaConfig cfg;
  cfg.epsilons = {0.1};
  cfg.ssnb_grid.clear();
  const auto report = da_experiment(src, src, cfg);
  ASSERT_EQ(report.candidates.size(), 1u);
  EXPECT_EQ(report.selected, 0u);
  EXPECT_EQ(report.best, 0u);
}

TEST(DaExperiment, IdenticalDomainsMatchWithinDomainBaseline) {
  const auto ds = two_classes(25, 2, 1.5, Vector::Zero(2), 10, "same");
  DaConfig cfg;
  cfg.epsilons = {0.05, 0.01};
  cfg.ssnb_grid.clear();
  cfg.sinkhorn.max_iter = 100000;
  const auto report = da_experiment(ds, ds, cfg);
  const auto train = split(ds, cfg.train_frac, cfg.seed).first;
  const auto test = split(ds, cfg.train_frac, cfg.seed + 1).second;
  const auto baseline = transport_classify(*QuadraticPotential::isotropic(2, 1.0), train,
                                           test.features, &test.labels);
  EXPECT_NEAR(report.candidates[report.selected].accuracy, *baseline.accuracy, 0.1);
}
