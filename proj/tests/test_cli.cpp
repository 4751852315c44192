#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>
#include <unistd.h>

#include "lerca/cli.hpp"
#include "lerca/diagnostics.hpp"
#include "lerca/errors.hpp"
#include "lerca/io.hpp"
#include "lerca/simulator.hpp"

using namespace lerca;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result cli(std::vector<std::string> args) {
  args.insert(args.begin(), "lerca");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("lerca_cli_" + std::to_string(::getpid())) / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::vector<std::vector<std::string>> read_table(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    rows.push_back(cells);
  }
  return rows;
}

double type7(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

// Writes a small fit configuration and returns its path.
fs::path write_config(const fs::path& dir, const fs::path& data, const std::string& extra = "") {
  const fs::path p = dir / "run.ini";
  std::ofstream f(p);
  f << "# small run\nK=1,2\nchains=2\niterations=300\nburn_in=100\nthin=5\nseed=4\n"
    << "s_min=0\ns_max=10\ndata=" << data.string() << "\nout=" << (dir / "fit").string() << '\n'
    << extra;
  return p;
}

}  // namespace

TEST_CASE("simulate writes the requested shape and is reproducible") {
  const auto dir = scratch_dir("simulate");
  const auto a = cli({"simulate", "--scenario", "local_table3", "--n", "300", "--seed", "7", "--out",
                      (dir / "a.csv").string()});
  REQUIRE(a.code == 0);
  const auto b = cli({"simulate", "--scenario", "local_table3", "--n", "300", "--seed", "7", "--out",
                      (dir / "b.csv").string()});
  REQUIRE(b.code == 0);
  CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));
  const auto rows = read_table(dir / "a.csv");
  REQUIRE(rows.size() == 301);
  CHECK(rows[0].size() == 10);
  CHECK(rows[0][0] == "y");
  CHECK(rows[0][1] == "x");
  CHECK(rows[0][2] == "C1");

  const auto zero = cli({"simulate", "--scenario", "local_table3", "--n", "0", "--out", (dir / "z.csv").string()});
  CHECK(zero.code == 1);
  const auto unknown = cli({"simulate", "--scenario", "nope", "--out", (dir / "z.csv").string()});
  CHECK(unknown.code == 1);
  CHECK(unknown.err.rfind("error: kind=config message=", 0) == 0);
}

TEST_CASE("dataset CSV round trip is exact") {
  auto spec = preset_scenario("global_tableC3");
  spec.n = 50;
  Rng g(3);
  const Dataset d = simulate(spec, g);
  std::stringstream ss;
  write_dataset_csv(ss, d);
  const Dataset back = read_dataset_csv(ss);
  CHECK(back.y == d.y);
  CHECK(back.x == d.x);
  CHECK(back.covariates == d.covariates);
  CHECK(back.names == d.names);

  std::stringstream bad("y,x,C1\n1,2,abc\n");
  try {
    read_dataset_csv(bad);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("row") != std::string::npos);
  }
  std::stringstream short_row("y,x,C1\n1,2\n");
  CHECK_THROWS_AS(read_dataset_csv(short_row), DataError);
  std::stringstream wrong_header("x,y\n1,2\n");
  CHECK_THROWS_AS(read_dataset_csv(wrong_header), DataError);
}

TEST_CASE("fit, manifest re-run, summarize and diagnose") {
  const auto dir = scratch_dir("fit");
  REQUIRE(cli({"simulate", "--scenario", "local_table3", "--n", "200", "--seed", "2", "--out",
               (dir / "data.csv").string()})
              .code == 0);
  const auto cfg = write_config(dir, dir / "data.csv");
  const auto fit = cli({"fit", "--config", cfg.string()});
  INFO(fit.err);
  REQUIRE(fit.code == 0);
  CHECK(fit.out.find("K=1 waic=") != std::string::npos);
  CHECK(fit.out.find("K=2 waic=") != std::string::npos);
  CHECK(fit.out.find("best_K=") != std::string::npos);
  const auto manifest = read_key_values((dir / "fit" / "manifest.ini").string());
  CHECK(manifest.at("K") == "1,2");
  CHECK(manifest.at("seed") == "4");
  const std::string draws = slurp(dir / "fit" / "draws_K2.csv");
  CHECK(draws.rfind("chain,iteration,parameter,value\n", 0) == 0);

  // Re-running from the manifest with a new output directory reproduces the draws.
  const auto rerun = cli({"fit", "--config", (dir / "fit" / "manifest.ini").string(), "--out",
                          (dir / "again").string()});
  REQUIRE(rerun.code == 0);
  CHECK(slurp(dir / "again" / "draws_K2.csv") == draws);
  // Command-line flags override the file.
  const auto k1 = cli({"fit", "--config", cfg.string(), "--K", "1", "--out", (dir / "k1").string()});
  REQUIRE(k1.code == 0);
  CHECK(k1.out.find("K=2") == std::string::npos);

  // Summary quantiles against a direct computation from the draws file.
  const auto summ = cli({"summarize", "--draws", (dir / "fit" / "draws_K2.csv").string(), "--grid", "5",
                         "--level", "0.9", "--out", (dir / "summary").string()});
  REQUIRE(summ.code == 0);
  const auto file = read_draws_csv((dir / "fit" / "draws_K2.csv").string());
  CHECK(file.chains.size() == 2);
  CHECK(file.total_draws() == 2 * 40);
  const auto er = read_table(dir / "summary" / "er.csv");
  REQUIRE(er.size() == 6);
  for (std::size_t g = 1; g < er.size(); ++g) {
    const double x = std::stod(er[g][0]);
    std::vector<double> v;
    double mean = 0.0;
    for (const auto& c : file.chains) {
      for (const auto& st : c) {
        v.push_back(eval_er(x, st));
        mean += v.back();
      }
    }
    mean /= static_cast<double>(v.size());
    CHECK(std::stod(er[g][1]) == doctest::Approx(mean).epsilon(1e-12));
    CHECK(std::stod(er[g][2]) == doctest::Approx(type7(v, 0.05)).epsilon(1e-12));
    CHECK(std::stod(er[g][3]) == doctest::Approx(type7(v, 0.95)).epsilon(1e-12));
  }
  for (const char* name : {"delta.csv", "inclusion.csv", "s_hist.csv"}) CHECK(fs::exists(dir / "summary" / name));
  std::size_t hist_total = 0;
  const auto hist = read_table(dir / "summary" / "s_hist.csv");
  CHECK(hist.size() == 51);
  for (std::size_t r = 1; r < hist.size(); ++r) hist_total += std::stoul(hist[r][2]);
  CHECK(hist_total == 2 * 40 * 2);

  const auto diag = cli({"diagnose", "--draws", (dir / "fit" / "draws_K2.csv").string(), "--grid", "7"});
  REQUIRE(diag.code == 0);
  CHECK(diag.out.rfind("x,psr\n", 0) == 0);
  CHECK(diag.out.find("verdict=") != std::string::npos);
}

TEST_CASE("diagnose verdicts on constructed draws files") {
  const auto dir = scratch_dir("diagnose");
  auto chain = [](double beta) {
    ChainOutput c;
    Rng g(static_cast<std::uint64_t>(beta * 100));
    for (int i = 0; i < 30; ++i) {
      ChainState st{ExperimentConfiguration::with_default_gaps({}, 0.0, 10.0), {ExperimentParams::zeros(1)}};
      st.experiments[0].beta = beta + draw_normal(g, 0, 0.01);
      c.draws.push_back(st);
    }
    return c;
  };
  const Schedule sch{60, 30, 1};
  const auto same = chain(1.0);
  write_draws_csv((dir / "same.csv").string(), {same, same}, {"C1"}, sch);
  const auto pass = cli({"diagnose", "--draws", (dir / "same.csv").string(), "--grid", "3"});
  REQUIRE(pass.code == 0);
  CHECK(pass.out.find("verdict=pass max_psr=1 ") != std::string::npos);

  write_draws_csv((dir / "apart.csv").string(), {chain(1.0), chain(2.0)}, {"C1"}, sch);
  const auto fail = cli({"diagnose", "--draws", (dir / "apart.csv").string(), "--grid", "3"});
  REQUIRE(fail.code == 0);
  CHECK(fail.out.find("verdict=fail") != std::string::npos);

  write_draws_csv((dir / "one.csv").string(), {same}, {"C1"}, sch);
  CHECK(cli({"diagnose", "--draws", (dir / "one.csv").string()}).code == 2);

  // An empty draws file cannot be summarized.
  std::ofstream(dir / "empty.csv") << "chain,iteration,parameter,value\n";
  const auto empty = cli({"summarize", "--draws", (dir / "empty.csv").string()});
  CHECK(empty.code == 2);
  CHECK(empty.err.find("kind=insufficient") != std::string::npos);
}

TEST_CASE("explore matches the library screen") {
  const auto dir = scratch_dir("explore");
  auto spec = preset_scenario("local_table3");
  spec.n = 400;
  Rng g(5);
  const Dataset d = simulate(spec, g);
  write_dataset_csv((dir / "d.csv").string(), d);
  const auto r = cli({"explore", "--data", (dir / "d.csv").string(), "--low", "3", "--high", "7"});
  REQUIRE(r.code == 0);
  const auto rows = exploratory_screen(read_dataset_csv((dir / "d.csv").string()), 3.0, 7.0);
  std::istringstream lines(r.out);
  std::string line;
  std::getline(lines, line);
  CHECK(line == "covariate,stratum,n,exposure_coef,exposure_p,outcome_coef,outcome_p");
  for (const auto& row : rows) {
    REQUIRE(std::getline(lines, line));
    std::ostringstream expected;
    expected << row.covariate << ',' << row.stratum << ',' << row.n << ',' << format_real(row.exposure_coef) << ','
             << format_real(row.exposure_p) << ',' << format_real(row.outcome_coef) << ','
             << format_real(row.outcome_p);
    CHECK(line == expected.str());
  }
  CHECK(cli({"explore", "--data", (dir / "d.csv").string(), "--low", "7", "--high", "3"}).code == 1);
}

TEST_CASE("configuration parsing and error exit codes") {
  KeyValues kv{{"K", "2,3"}, {"iterations", "500"}, {"burn_in", "100"}, {"omega", "50"}};
  const auto c = run_config_from(kv);
  CHECK(c.Ks == std::vector<std::size_t>{2, 3});
  CHECK(c.schedule.iterations == 500);
  CHECK(c.hyper.omega == 50.0);
  const auto round = run_config_from(to_key_values(c));
  CHECK(to_key_values(round) == to_key_values(c));
  CHECK_THROWS_AS(run_config_from({{"bogus", "1"}}), ConfigError);
  CHECK_THROWS_AS(run_config_from({{"iterations", "ten"}}), ConfigError);
  CHECK_THROWS_AS(run_config_from({{"iterations", "100"}, {"burn_in", "100"}}), ConfigError);

  std::istringstream ini("# comment\nK=2\n[K=2]\nwaic=3\n[config]\nseed=9\n");
  const auto parsed = parse_key_values(ini);
  CHECK(parsed.at("K") == "2");
  CHECK(parsed.at("seed") == "9");
  CHECK(parsed.count("waic") == 0);

  CHECK(exit_code_for(ConfigError("x")) == 1);
  CHECK(exit_code_for(DataError("x")) == 2);
  CHECK(exit_code_for(RangeError("x")) == 2);
  CHECK(exit_code_for(InsufficientDataError("x")) == 2);
  CHECK(exit_code_for(NumericalError("x")) == 3);

  const auto dir = scratch_dir("errors");
  CHECK(cli({}).code == 1);
  CHECK(cli({"bogus"}).code == 1);
  const auto missing = cli({"fit", "--data", (dir / "nope.csv").string()});
  CHECK(missing.code == 2);
  CHECK(missing.err.rfind("error: kind=data message=\"", 0) == 0);
  std::ofstream(dir / "bad.csv") << "y,x\n1,2\n";
  CHECK(cli({"fit", "--data", (dir / "bad.csv").string(), "--iterations", "10", "--burn-in", "20"}).code == 1);
}

TEST_CASE("installed binary reports exit codes to the shell") {
  const std::string bin = LERCA_CLI_PATH;
  auto run = [&](const std::string& args) {
    const int status = std::system((bin + " " + args + " >/dev/null 2>&1").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  };
  const auto dir = scratch_dir("binary");
  CHECK(run("simulate --n 20 --seed 1 --out " + (dir / "d.csv").string()) == 0);
  CHECK(run("simulate --n 0 --out " + (dir / "d.csv").string()) == 1);
  CHECK(run("summarize --draws " + (dir / "missing.csv").string()) == 2);
  fs::remove_all(dir.parent_path());
}
