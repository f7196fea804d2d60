#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "../../tools/run_config.hpp"
#include "otsel/io.hpp"
#include "otsel/semidual.hpp"

namespace fs = std::filesystem;
using otsel::Json;

namespace {

struct Outcome {
  int exit_code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("otselect_cli_" +
            std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  Outcome run(const std::string& args) const {
    const fs::path err = dir_ / "stderr.txt";
    const std::string cmd = std::string(OTSELECT_BINARY) + " --log-level error " + args + " 2>" +
                            err.string();
    Outcome o;
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) return o;
    std::array<char, 4096> buf;
    std::size_t got;
    while ((got = fread(buf.data(), 1, buf.size(), pipe)) > 0) o.out.append(buf.data(), got);
    const int status = pclose(pipe);
    o.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    o.err = slurp(err);
    return o;
  }

  std::string p(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

void expect_finite_csv(const fs::path& path) {
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      EXPECT_EQ(cell.find("nan"), std::string::npos) << line;
      EXPECT_EQ(cell.find("inf"), std::string::npos) << line;
    }
  }
}

}  // namespace

TEST_F(CliTest, GenWritesBatchesTruthAndManifest) {
  const auto o = run("--out " + p("gen") + " --seed 7 gen --kind quadratic --d 3 --n 50");
  ASSERT_EQ(o.exit_code, 0) << o.err;
  for (const char* f : {"train_source.csv", "train_target.csv", "test_source.csv",
                        "test_target.csv", "eval_source.csv", "eval_target.csv", "truth.json",
                        "dataset.json", "manifest.json"})
    EXPECT_TRUE(fs::exists(dir_ / "gen" / f)) << f;
  const Json m = otsel::read_json(p("gen/manifest.json"));
  for (const char* key : {"tool", "version", "command", "config", "config_hash", "seeds", "created"})
    EXPECT_TRUE(m.contains(key)) << key;
  EXPECT_EQ(m["command"], "gen");
  EXPECT_EQ(m["config"]["dataset"]["seed"], 7);
  EXPECT_EQ(otsel::read_points(p("gen/train_source.csv")).rows(), 50);
  EXPECT_NO_THROW(otsel::load_potential(p("gen/truth.json")));
}

TEST_F(CliTest, GenIsByteIdenticalOnRerun) {
  const std::vector<std::string> files = {"train_source.csv", "eval_target.csv", "truth.json",
                                          "dataset.json"};
  ASSERT_EQ(run("--out " + p("a") + " gen --kind lse --d 2 --n 20").exit_code, 0);
  std::vector<std::string> first;
  for (const auto& f : files) first.push_back(slurp(dir_ / "a" / f));
  const auto hash = otsel::read_json(p("a/manifest.json"))["config_hash"];
  ASSERT_EQ(run("--out " + p("a") + " gen --kind lse --d 2 --n 20").exit_code, 0);
  for (std::size_t k = 0; k < files.size(); ++k)
    EXPECT_EQ(slurp(dir_ / "a" / files[k]), first[k]) << files[k];
  EXPECT_EQ(otsel::read_json(p("a/manifest.json"))["config_hash"], hash);
}

TEST_F(CliTest, OtpcFormat) {
  ASSERT_EQ(run("--out " + p("g") + " gen --d 2 --n 10 --format otpc").exit_code, 0);
  EXPECT_EQ(otsel::read_points(p("g/test_target.otpc")).rows(), 10);
}

TEST_F(CliTest, InvalidConfigListsEveryProblem) {
  std::ofstream(p("bad.json")) << R"({"dataset": {"d": -1, "kind": "cubic", "colour": 3},
                                     "models": {"sinkhorn": []},
                                     "criterion": {"delta": "big"}})";
  const auto o = run("--config " + p("bad.json") + " --out " + p("x") + " gen");
  EXPECT_EQ(o.exit_code, 2);
  const Json err = Json::parse(o.err);
  EXPECT_EQ(err["error"]["type"], "config");
  EXPECT_GE(err["error"]["problems"].size(), 5u) << o.err;
  EXPECT_FALSE(fs::exists(dir_ / "x" / "train_source.csv"));
}

TEST_F(CliTest, UsageErrorsAreMachineReadable) {
  const auto o = run("frobnicate");
  EXPECT_EQ(o.exit_code, 2);
  EXPECT_EQ(Json::parse(o.err)["error"]["type"], "usage");
  const auto missing = run("--out " + p("m") + " select --candidates nope.json --source a.csv "
                           "--target b.csv");
  EXPECT_EQ(missing.exit_code, 2);
  EXPECT_GE(Json::parse(missing.err)["error"]["problems"].size(), 3u);
}

TEST_F(CliTest, SelectRanksQuadraticCandidatesLikeTheLibrary) {
  ASSERT_EQ(run("--out " + p("data") + " gen --kind quadratic --d 2 --n 60").exit_code, 0);
  const auto truth = otsel::load_potential(p("data/truth.json"));
  otsel::save_potential(p("identity.json"), *otsel::QuadraticPotential::isotropic(2, 1.0));
  const auto o = run("--out " + p("sel") + " select --candidates " + p("identity.json") + " " +
                     p("data/truth.json") + " --source " + p("data/test_source.csv") +
                     " --target " + p("data/test_target.csv") + " --truth " +
                     p("data/truth.json") + " --eval-source " + p("data/eval_source.csv"));
  ASSERT_EQ(o.exit_code, 0) << o.err;

  const auto mu = otsel::EmpiricalMeasure::uniform(otsel::read_points(p("data/test_source.csv")));
  const auto nu = otsel::EmpiricalMeasure::uniform(otsel::read_points(p("data/test_target.csv")));
  const auto lib = otsel::select({otsel::load_potential(p("identity.json")), truth}, mu, nu);
  const std::vector<std::string> labels = {"identity", "truth"};
  std::istringstream lines(o.out);
  for (std::size_t k = 0; k < 2; ++k) {
    int rank;
    std::string label, j;
    lines >> rank >> label >> j;
    EXPECT_EQ(rank, static_cast<int>(k) + 1);
    EXPECT_EQ(label, labels[lib.ranking[k]]);
  }
  const Json sel = otsel::read_json(p("sel/selection.json"));
  EXPECT_EQ(sel["selected"], lib.selected);
  EXPECT_TRUE(sel["candidates"][0].contains("error"));
  expect_finite_csv(dir_ / "sel" / "selection.csv");
}

TEST_F(CliTest, FitThenEval) {
  ASSERT_EQ(run("--out " + p("data") + " gen --kind lse --d 2 --n 40").exit_code, 0);
  const auto f = run("--out " + p("fit") + " fit --model sinkhorn --epsilon 0.1 --source " +
                     p("data/train_source.csv") + " --target " + p("data/train_target.csv"));
  ASSERT_EQ(f.exit_code, 0) << f.err;
  ASSERT_TRUE(fs::exists(dir_ / "fit" / "sinkhorn_eps=0.1.json"));
  const Json pot = otsel::read_json(p("fit/sinkhorn_eps=0.1.json"));
  EXPECT_EQ(pot["provenance"]["epsilon"], 0.1);

  const auto s = run("--out " + p("fit") + " fit --model ssnb --l 0.5 --L 1.2 --source " +
                     p("data/train_source.csv") + " --target " + p("data/train_target.csv"));
  ASSERT_EQ(s.exit_code, 0) << s.err;
  ASSERT_TRUE(fs::exists(dir_ / "fit" / "ssnb_l=0.5_L=1.2.json"));

  const auto e = run("--out " + p("ev") + " eval --potential " + p("fit/sinkhorn_eps=0.1.json") +
                     " --source " + p("data/test_source.csv") + " --target " +
                     p("data/test_target.csv"));
  ASSERT_EQ(e.exit_code, 0) << e.err;
  const Json ev = otsel::read_json(p("ev/eval.json"));
  EXPECT_TRUE(std::isfinite(ev["results"][0]["j_value"].get<double>()));
}

TEST_F(CliTest, BenchWritesFiniteRowsAndIsReproducible) {
  const std::string args = " bench --kind quadratic --d 2 --n 48 --seeds 2 --no-ssnb";
  const auto a = run("--out " + p("b1") + args);
  ASSERT_EQ(a.exit_code, 0) << a.err;
  ASSERT_EQ(run("--out " + p("b2") + args).exit_code, 0);
  std::ifstream in(dir_ / "b1" / "rows.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "seed,model,params,J,e,e_rank,j_rank,selected");
  int rows = 0;
  std::string line;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 10);
  expect_finite_csv(dir_ / "b1" / "rows.csv");
  expect_finite_csv(dir_ / "b1" / "summary.csv");
  EXPECT_EQ(slurp(dir_ / "b1" / "rows.csv"), slurp(dir_ / "b2" / "rows.csv"));
  EXPECT_EQ(slurp(dir_ / "b1" / "summary.csv"), slurp(dir_ / "b2" / "summary.csv"));
  const Json table = otsel::read_json(p("b1/table.json"));
  EXPECT_EQ(table["models"]["sinkhorn"]["candidates"], 5);
}

TEST_F(CliTest, DaProducesReport) {
  std::ofstream src(p("src.csv")), tgt(p("tgt.csv"));
  src << "label,f0,f1\n";
  tgt << "label,f0,f1\n";
  for (int i = 0; i < 20; ++i) {
    const double s = i % 2 ? 1.0 : -1.0;
    const double jitter = 0.01 * (i % 5);
    src << (i % 2 ? "b" : "a") << ',' << s + jitter << ',' << jitter << '\n';
    tgt << (i % 2 ? "b" : "a") << ',' << s + 2.0 - jitter << ',' << 2.0 + jitter << '\n';
  }
  src.close();
  tgt.close();
  const auto o = run("--out " + p("da") + " da --source " + p("src.csv") + " --target " +
                     p("tgt.csv") + " --no-ssnb");
  ASSERT_EQ(o.exit_code, 0) << o.err;
  const Json r = otsel::read_json(p("da/da_report.json"));
  ASSERT_EQ(r["candidates"].size(), 5u);
  for (const char* key : {"family", "params", "j_value", "accuracy", "rank"})
    EXPECT_TRUE(r["candidates"][0].contains(key)) << key;
}

TEST(RunConfig, MergeAcceptsBothPairForms) {
  otselect::RunConfig cfg;
  const auto problems = otselect::merge_config(
      Json::parse(R"({"models": {"ssnb": [[0.2, 0.5], {"l": 0.5, "L": 0.9}]},
                      "dataset": {"kind": "lse", "n": 100},
                      "output": {"directory": "x"}})"),
      cfg);
  EXPECT_TRUE(problems.empty()) << (problems.empty() ? "" : problems.front());
  ASSERT_EQ(cfg.models.ssnb.size(), 2u);
  EXPECT_EQ(cfg.models.ssnb[1].second, 0.9);
  EXPECT_EQ(cfg.dataset.n, 100);
  EXPECT_EQ(cfg.output_directory, "x");
  EXPECT_TRUE(otselect::validate(cfg, false).empty());
}

TEST(RunConfig, DefaultsMirrorTheProtocol) {
  const otselect::RunConfig cfg;
  EXPECT_EQ(cfg.models.sinkhorn, (std::vector<double>{0.5, 0.1, 0.05, 0.01, 0.005}));
  EXPECT_EQ(cfg.models.ssnb.size(), 10u);
  for (const auto& [l, big_l] : cfg.models.ssnb) EXPECT_LT(l, big_l);
  EXPECT_EQ(cfg.criterion.delta, 1e-3);
  EXPECT_EQ(cfg.criterion.tol, 1e-5);
  EXPECT_EQ(cfg.models.sinkhorn_tol, 1e-5);
  EXPECT_EQ(otselect::ssnb_of(cfg).solver, otsel::FitSolver::interior_point);
  const auto bench = otselect::bench_of(cfg);
  EXPECT_EQ(bench.seeds, (std::vector<std::uint64_t>{0}));
}

TEST(RunConfig, ValidationCollectsEverything) {
  otselect::RunConfig cfg;
  cfg.models.sinkhorn = {};
  cfg.models.ssnb = {{0.9, 0.5}};
  cfg.criterion.delta = -1;
  cfg.inputs.train_frac = 1.5;
  cfg.models.ssnb_solver = "simplex";
  const auto problems = otselect::validate(cfg, true);
  EXPECT_GE(problems.size(), 6u);
}
