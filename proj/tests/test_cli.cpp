#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "trilevel/cli/app.hpp"

using namespace trilevel;
using namespace trilevel::cli;
namespace fs = std::filesystem;

namespace {

double rel_err(double a, double b) {
  const double s = std::max(std::abs(a), std::abs(b));
  return s == 0 ? 0 : std::abs(a - b) / s;
}

struct AppRun {
  int code;
  std::string out;
  std::string err;
};

AppRun run(std::vector<std::string> args) {
  args.insert(args.begin(), "trilevel");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_app(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("trilevel_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

CurveTable parse(const std::string& csv) {
  std::istringstream is(csv);
  return read_csv(is);
}

}  // namespace

TEST(Grid, EvenSpacingAndEndpoints) {
  const auto g = make_grid({0.0, 1.0, 5}, Axis::eta);
  ASSERT_EQ(g.size(), 5U);
  EXPECT_EQ(g.front(), 0.0);
  EXPECT_EQ(g.back(), 1.0);
  EXPECT_DOUBLE_EQ(g[2], 0.5);
}

TEST(Grid, SinglePointAllowed) {
  const auto g = make_grid({0.3, std::nullopt, 1}, Axis::eta);
  ASSERT_EQ(g.size(), 1U);
  EXPECT_EQ(g[0], 0.3);
}

TEST(Grid, EmptyAndInvertedRejected) {
  EXPECT_THROW(make_grid({0.0, 1.0, 0}, Axis::eta), UsageError);
  EXPECT_THROW(make_grid({0.0, 1.0, -3}, Axis::eta), UsageError);
  EXPECT_THROW(make_grid({1.0, 0.0, 4}, Axis::eta), UsageError);
}

TEST(Grid, DefaultsPerAxis) {
  const auto g = make_grid({}, Axis::beta);
  EXPECT_EQ(g.size(), static_cast<std::size_t>(kDefaultGridPoints));
  EXPECT_EQ(g.back(), 3.0);
}

TEST(Axis, ParseAndApply) {
  EXPECT_EQ(parse_axis("A"), Axis::A);
  EXPECT_THROW(parse_axis("gamma"), UsageError);
  const auto p = with_axis(LaserParams{}, Axis::beta, 1.25);
  EXPECT_EQ(p.beta, 1.25);
}

TEST(VarianceCommand, HalfToFullInversionIsSqueezed) {
  for (double A : {5.0, 25.0, 50.0}) {
    SweepOptions opt;
    opt.params = {A, 0.8, 0.0, 0.0, 0.0};
    opt.axis = "eta";
    opt.grid = {0.01, 0.99, 99};
    const auto res = run_variance(opt);
    ASSERT_EQ(res.table.columns,
              (std::vector<std::string>{"eta", "unstable", "lambda_minus", "lambda_plus",
                                        "var_plus", "var_minus"}));
    for (std::size_t i = 0; i < res.table.rows.size(); ++i) {
      EXPECT_EQ(res.table.at(i, "unstable"), 0.0);
      EXPECT_LT(res.table.at(i, "var_minus"), 1.0);
    }
  }
}

TEST(VarianceCommand, UpperLevelDriveSweepMatchesReduction) {
  SweepOptions opt;
  opt.params = {0.5, 0.8, 0.0, -1.0, 0.0};
  opt.axis = "beta";
  opt.grid = {0.0, 3.0, 61};
  const auto res = run_variance(opt);
  std::size_t stable = 0;
  for (std::size_t i = 0; i < res.table.rows.size(); ++i) {
    const LaserParams p{0.5, 0.8, 0.0, -1.0, res.table.at(i, "beta")};
    if (res.table.at(i, "unstable") == 1.0) {
      EXPECT_TRUE(std::isnan(res.table.at(i, "var_minus")));
      EXPECT_THROW(variance_upper_level_injection(p), NoSteadyStateError);
      continue;
    }
    ++stable;
    EXPECT_LT(rel_err(res.table.at(i, "var_minus"), variance_upper_level_injection(p).minus),
              1e-12);
  }
  EXPECT_GT(stable, 0U);
}

// Full upper-level injection at A = 25 is above threshold for every drive.
TEST(VarianceCommand, UpperLevelDriveSweepAtHighGainIsUnstable) {
  SweepOptions opt;
  opt.params = {25.0, 0.8, 0.0, -1.0, 0.0};
  opt.axis = "beta";
  opt.grid = {0.0, 3.0, 61};
  const auto res = run_variance(opt);
  for (std::size_t i = 0; i < res.table.rows.size(); ++i) {
    EXPECT_EQ(res.table.at(i, "unstable"), 1.0);
    EXPECT_LT(res.table.at(i, "lambda_minus"), 0.0);
    EXPECT_TRUE(std::isnan(res.table.at(i, "var_minus")));
  }
}

TEST(VarianceCommand, EmptyCavityColumnsAreConstant) {
  SweepOptions opt;
  opt.params = {0.0, 0.8, 0.5, 0.0, 0.0};
  opt.axis = "beta";
  opt.grid = {0.0, 3.0, 11};
  const auto res = run_variance(opt);
  for (std::size_t i = 0; i < res.table.rows.size(); ++i) {
    EXPECT_LT(rel_err(res.table.at(i, "var_plus"), std::exp(1.0)), 1e-13);
    EXPECT_LT(rel_err(res.table.at(i, "var_minus"), std::exp(-1.0)), 1e-13);
  }
}

TEST(VarianceCommand, RejectsBadAxisAndParameters) {
  SweepOptions opt;
  opt.axis = "omega";
  EXPECT_THROW(run_variance(opt), UsageError);
  opt.axis = "eta";
  opt.grid = {-2.0, 1.0, 3};
  EXPECT_THROW(run_variance(opt), UsageError);
}

TEST(VarianceCommand, OrderedAndIdenticalAcrossWorkers) {
  SweepOptions opt;
  opt.params = {25.0, 0.8, 0.2, 0.0, 0.0};
  opt.axis = "beta";
  opt.grid = {0.0, 3.0, 40};
  opt.workers = 1;
  const auto a = run_variance(opt);
  opt.workers = 7;
  const auto b = run_variance(opt);
  std::ostringstream sa, sb;
  write_csv(sa, a.table);
  write_csv(sb, b.table);
  EXPECT_EQ(sa.str(), sb.str());
  for (std::size_t i = 1; i < a.table.rows.size(); ++i)
    EXPECT_GT(a.table.rows[i][0], a.table.rows[i - 1][0]);
}

TEST(SpectrumCommand, DriveSweepAtZeroFrequency) {
  SpectrumOptions opt;
  opt.sweep.params = {50.0, 0.8, 0.0, 0.0, 0.0};
  opt.sweep.axis = "beta";
  opt.sweep.grid = {0.0, 3.0, 31};
  const auto res = run_spectrum(opt);
  const auto& t = res.table;
  EXPECT_NO_THROW(t.column_index("s_minus_eta0"));
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    if (t.at(i, "unstable") == 1.0) {
      for (std::size_t j = 4; j < t.columns.size(); ++j) EXPECT_TRUE(std::isnan(t.rows[i][j]));
      continue;
    }
    EXPECT_LT(rel_err(t.at(i, "s_minus_closed"), t.at(i, "s_minus_eta0")), 1e-12);
    EXPECT_LT(rel_err(t.at(i, "s_plus_closed"), t.at(i, "s_plus_eta0")), 1e-12);
    EXPECT_LT(rel_err(t.at(i, "s_minus_closed"), t.at(i, "s_minus_quad")), 1e-8);
    EXPECT_LT(rel_err(t.at(i, "s_plus_closed"), t.at(i, "s_plus_quad")), 1e-8);
  }
}

TEST(SpectrumCommand, EmptyCavityFrequencySweepIsFlat) {
  SpectrumOptions opt;
  opt.sweep.params = {0.0, 0.8, 0.5, 0.3, 0.0};
  opt.sweep.axis = "omega";
  opt.sweep.grid = {0.0, 20.0, 21};
  const auto res = run_spectrum(opt);
  EXPECT_THROW(res.table.column_index("s_minus_eta0"), std::out_of_range);
  for (std::size_t i = 0; i < res.table.rows.size(); ++i) {
    EXPECT_LT(rel_err(res.table.at(i, "s_minus_closed"), std::exp(-1.0)), 1e-10);
    EXPECT_LT(rel_err(res.table.at(i, "s_minus_quad"), std::exp(-1.0)), 1e-10);
  }
}

TEST(SpectrumCommand, MonteCarloColumnsCarryErrors) {
  SpectrumOptions opt;
  opt.sweep.params = {50.0, 0.8, 0.0, 0.0, 0.5};
  opt.sweep.axis = "omega";
  opt.sweep.grid = {0.0, 10.0, 3};
  opt.monte_carlo = true;
  opt.trajectories = 500;
  opt.sweep.workers = 4;
  const auto res = run_spectrum(opt);
  for (std::size_t i = 0; i < res.table.rows.size(); ++i) {
    const double se = res.table.at(i, "s_minus_mc_se");
    EXPECT_GT(se, 0.0);
    EXPECT_LT(std::abs(res.table.at(i, "s_minus_mc") - res.table.at(i, "s_minus_closed")),
              4 * se);
  }
  EXPECT_EQ(res.manifest.master_seed, opt.seed);
}

TEST(PhotonsCommand, HalfInversionDriveSweep) {
  PhotonOptions opt;
  opt.sweep.params = {75.0, 0.8, 0.0, 0.0, 0.0};
  opt.sweep.axis = "beta";
  opt.sweep.grid = {0.0, 3.0, 301};
  const auto res = run_photons(opt);
  const auto& t = res.table;
  EXPECT_LT(rel_err(t.at(0, "mean_n"), 46.875), 1e-13);
  std::size_t stable = 0;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    if (t.at(i, "unstable") == 1.0) {
      EXPECT_TRUE(std::isnan(t.at(i, "mean_n")));
      continue;
    }
    ++stable;
    EXPECT_GT(t.at(i, "variance_n"), t.at(i, "mean_n"));
  }
  EXPECT_GT(stable, 100U);
}

// The mean photon number falls from its undriven value to a minimum and then
// rises again as the lower-mode decay rate approaches zero.
TEST(PhotonsCommand, MeanPhotonNumberHasInteriorMinimum) {
  PhotonOptions opt;
  opt.sweep.params = {75.0, 0.8, 0.0, 0.0, 0.0};
  opt.sweep.axis = "beta";
  opt.sweep.grid = {0.0, 1.4, 141};
  const auto t = run_photons(opt).table;
  std::size_t argmin = 0;
  for (std::size_t i = 0; i < t.rows.size(); ++i)
    if (t.at(i, "mean_n") < t.at(argmin, "mean_n")) argmin = i;
  EXPECT_GT(argmin, 0U);
  EXPECT_LT(argmin, t.rows.size() - 1);
  EXPECT_GT(t.at(t.rows.size() - 1, "mean_n"), t.at(argmin, "mean_n"));
}

TEST(SimulateCommand, EmptyCavityVacuum) {
  SimulateOptions opt;
  opt.params = {0.0, 0.8, 0.0, 0.0, 0.0};
  opt.trajectories = 100;
  opt.t_max = 2.0;
  opt.dt = 0.5;
  const auto t = run_simulate(opt).table;
  ASSERT_EQ(t.rows.size(), 5U);
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    for (const char* one : {"var_plus", "var_minus", "var_plus_ode", "var_minus_ode",
                            "var_plus_mc", "var_minus_mc"})
      EXPECT_EQ(t.at(i, one), 1.0) << one;
    for (const char* zero : {"mean_n", "anomalous", "variance_n", "mean_n_ode", "mean_n_mc",
                             "variance_n_mc", "var_minus_mc_se"})
      EXPECT_EQ(t.at(i, zero), 0.0) << zero;
  }
}

TEST(SimulateCommand, ReferenceRun) {
  SimulateOptions opt;
  opt.params = {25.0, 0.8, 0.0, 0.5, 0.0};
  opt.trajectories = 20000;
  opt.workers = 4;
  const auto t = run_simulate(opt).table;
  const std::size_t last = t.rows.size() - 1;
  EXPECT_LT(std::abs(t.at(last, "var_minus_mc") - 0.311982323713461193),
            3 * t.at(last, "var_minus_mc_se"));
  for (std::size_t i = 1; i < t.rows.size(); ++i)
    for (const std::string col : {"var_plus", "var_minus", "mean_n", "anomalous", "variance_n"})
      EXPECT_LT(rel_err(t.at(i, col + "_ode"), t.at(i, col)), 1e-6) << col << " row " << i;
}

TEST(SimulateCommand, RejectsBadTiming) {
  SimulateOptions opt;
  opt.params = {25.0, 0.8, 0.0, 0.5, 0.0};
  opt.trajectories = 10;
  opt.t_max = 1.0;
  opt.dt = -0.1;
  EXPECT_THROW(run_simulate(opt), UsageError);
  opt.dt = 2.0;
  EXPECT_THROW(run_simulate(opt), UsageError);
  opt.dt = 0.3;
  EXPECT_THROW(run_simulate(opt), UsageError);
  opt.dt = 0.1;
  opt.trajectories = 1;
  EXPECT_THROW(run_simulate(opt), UsageError);
}

TEST(Csv, RoundTripIsExact) {
  CurveTable t;
  t.comments = {"first", "second line"};
  t.columns = {"x", "a", "b"};
  t.rows = {{0.1, 1.0 / 3.0, NAN}, {1e-300, -2.5e17, 0.30000000000000004}};
  std::ostringstream os;
  write_csv(os, t);
  const auto back = parse(os.str());
  EXPECT_EQ(back.comments, t.comments);
  EXPECT_EQ(back.columns, t.columns);
  ASSERT_EQ(back.rows.size(), 2U);
  EXPECT_EQ(back.rows[0][1], 1.0 / 3.0);
  EXPECT_TRUE(std::isnan(back.rows[0][2]));
  EXPECT_EQ(back.rows[1], t.rows[1]);
  const auto recs = records(back);
  EXPECT_EQ(recs[1].abscissa_name, "x");
  EXPECT_EQ(recs[1].abscissa, 1e-300);
  EXPECT_EQ(recs[1].values[0].first, "a");
}

TEST(Csv, RejectsMalformedRows) {
  EXPECT_THROW(parse("x,y\n1,2,3\n"), std::runtime_error);
  EXPECT_THROW(parse("x,y\n1,abc\n"), std::runtime_error);
  EXPECT_THROW(parse("# only comments\n"), std::runtime_error);
}

TEST(Csv, EveryCommandOutputParsesBack) {
  for (const std::vector<std::string>& args :
       {std::vector<std::string>{"variance", "--grid-points", "7"},
        std::vector<std::string>{"spectrum", "--grid-points", "7"},
        std::vector<std::string>{"photons", "--grid-points", "7"},
        std::vector<std::string>{"simulate", "--trajectories", "50"}}) {
    const auto r = run(args);
    ASSERT_EQ(r.code, 0) << r.err;
    const auto t = parse(r.out);
    EXPECT_FALSE(t.rows.empty());
    EXPECT_EQ(t.comments.at(1).rfind("manifest ", 0), 0U);
  }
}

TEST(Manifest, HashIgnoresTimestampsAndWorkers) {
  RunManifest a;
  a.command = "variance";
  a.grid = {0.0, 1.0};
  RunManifest b = a;
  b.started_at = "2020-01-01T00:00:00Z";
  b.finished_at = "2021-01-01T00:00:00Z";
  b.workers = 16;
  EXPECT_EQ(manifest_hash(a), manifest_hash(b));
  b.params.A = 1.0;
  EXPECT_NE(manifest_hash(a), manifest_hash(b));
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
}

TEST(Manifest, AppendOnlyRecords) {
  const auto dir = scratch_dir("manifest");
  const auto out = (dir / "curve.csv").string();
  ASSERT_EQ(run({"variance", "--grid-points", "3", "--out", out}).code, 0);
  ASSERT_EQ(run({"variance", "--grid-points", "4", "--out", out}).code, 0);
  std::ifstream is(out + ".manifest.jsonl");
  std::vector<nlohmann::json> lines;
  for (std::string line; std::getline(is, line);) lines.push_back(nlohmann::json::parse(line));
  ASSERT_EQ(lines.size(), 2U);
  EXPECT_EQ(lines[0]["sweep"]["grid"].size(), 3U);
  EXPECT_EQ(lines[1]["sweep"]["grid"].size(), 4U);
  const auto csv = parse(slurp(out));
  EXPECT_EQ(csv.comments.at(1), "manifest " + lines[1]["hash"].get<std::string>());
  EXPECT_EQ(csv.comments.at(2), "manifest_file " + out + ".manifest.jsonl");
  EXPECT_TRUE(lines[1].contains("started_at"));
  EXPECT_EQ(lines[1]["params"]["A"], 25.0);
}

TEST(Output, FailedWriteLeavesNothingBehind) {
  const auto dir = scratch_dir("nowrite");
  const auto out = (dir / "missing" / "curve.csv").string();
  const auto r = run({"variance", "--grid-points", "3", "--out", out});
  EXPECT_EQ(r.code, 1);
  EXPECT_TRUE(fs::is_empty(dir));
}

TEST(Output, FailedRunDoesNotWrite) {
  const auto dir = scratch_dir("badrun");
  const auto out = (dir / "curve.csv").string();
  const auto r = run({"variance", "--axis", "beta", "--grid-points", "0", "--out", out});
  EXPECT_EQ(r.code, 2);
  EXPECT_TRUE(fs::is_empty(dir));
}

TEST(App, ExitCodes) {
  EXPECT_EQ(run({"--help"}).code, 0);
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"variance", "--axis", "nope"}).code, 2);
  EXPECT_EQ(run({"variance", "--no-such-flag"}).code, 2);
  EXPECT_EQ(run({"variance", "--eta", "3"}).code, 2);
  EXPECT_EQ(run({"photons", "--grid-points", "0"}).code, 2);
  EXPECT_EQ(run({"variance", "--grid-points", "1"}).code, 0);
}

TEST(App, CheckReportsUnstablePoint) {
  const auto r = run({"check", "--eta", "0", "--beta", "2", "--A", "25", "--r", "0"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("1 unstable"), std::string::npos);
  EXPECT_NE(r.out.find("lambda_minus = -2.1"), std::string::npos);
}

TEST(App, CheckEmptyCavityOnly) {
  const auto r = run({"check", "--A", "0", "--mc-points", "1", "--trajectories", "2000"});
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("0 failed"), std::string::npos);
}

TEST(App, CheckRejectsInvalidGridAndFlagsFailures) {
  EXPECT_EQ(run({"check", "--A", "-1"}).code, 2);
  CheckReport rep;
  rep.rows.push_back({"x", "p", 1, 0, 0, false});
  EXPECT_FALSE(rep.passed());
}

TEST(App, ConfigFileWithFlagOverride) {
  const auto dir = scratch_dir("config");
  const auto cfg = dir / "run.toml";
  std::ofstream(cfg) << "[variance]\nA = 50\naxis = \"beta\"\ngrid-points = 3\n";
  const auto from_file = parse(run({"variance", "--config", cfg.string()}).out);
  EXPECT_EQ(from_file.columns[0], "beta");
  EXPECT_EQ(from_file.rows.size(), 3U);
  EXPECT_NE(from_file.comments.at(2).find("A=50"), std::string::npos);
  const auto overridden = parse(run({"variance", "--config", cfg.string(), "--A", "5"}).out);
  EXPECT_NE(overridden.comments.at(2).find("A=5 "), std::string::npos);
  EXPECT_EQ(overridden.rows.size(), 3U);
}

TEST(App, SimulateBinaryIsByteIdenticalAcrossThreads) {
  const auto dir = scratch_dir("determinism");
  const auto out = (dir / "sim.csv").string();
  const std::string base = std::string(TRILEVEL_CLI_PATH) +
                           " simulate --trajectories 3000 --seed 9 --out " + out;
  ASSERT_EQ(std::system((base + " --threads 1").c_str()), 0);
  const auto first = slurp(out);
  ASSERT_EQ(std::system((base + " --threads 5").c_str()), 0);
  EXPECT_EQ(first, slurp(out));
  EXPECT_FALSE(first.empty());
}

TEST(App, ShippedConfigsRun) {
  std::size_t seen = 0;
  for (const auto& entry : fs::directory_iterator(TRILEVEL_CONFIG_DIR)) {
    if (entry.path().extension() != ".toml") continue;
    std::ifstream is(entry.path());
    std::string section;
    while (std::getline(is, section) && section.rfind('[', 0) != 0) {
    }
    ASSERT_GE(section.size(), 3U) << entry.path();
    const auto sub = section.substr(1, section.find(']') - 1);
    const auto r = run({sub, "--config", entry.path().string()});
    EXPECT_EQ(r.code, 0) << entry.path() << ": " << r.err;
    EXPECT_FALSE(parse(r.out).rows.empty()) << entry.path();
    ++seen;
  }
  EXPECT_GT(seen, 0U);
}
