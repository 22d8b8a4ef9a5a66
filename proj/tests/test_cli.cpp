#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::string kCli = MIXPROBE_CLI_PATH;

struct Workspace {
  fs::path dir;
  Workspace() {
    dir = fs::temp_directory_path() / ("mixprobe_cli_" + std::to_string(::getpid()) +
                                       "_" + std::to_string(counter()++));
    fs::create_directories(dir);
  }
  ~Workspace() {
    std::error_code ec;
    fs::remove_all(dir, ec);
  }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

int run_cli(const Workspace& ws, const std::string& args) {
  const std::string cmd = "cd '" + ws.dir.string() + "' && '" + kCli + "' " + args +
                          " >cli_stdout.txt 2>cli_stderr.txt";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json load(const fs::path& p) { return json::parse(slurp(p)); }

int count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  int n = 0;
  while (std::getline(in, line))
    if (!line.empty()) ++n;
  return n;
}

}  // namespace

TEST_CASE("simulate writes the documented layout and is reproducible") {
  Workspace ws;
  REQUIRE(run_cli(ws, "simulate --n 1200 --seed 42 --out a") == 0);
  REQUIRE(count_lines(ws.dir / "a/data.csv") == 1201);  // header + rows

  int mz = 0;
  {
    std::ifstream in(ws.dir / "a/data.csv");
    std::string line;
    while (std::getline(in, line))
      if (line.find(",MZ,") != std::string::npos) ++mz;
  }
  REQUIRE(mz == 400);

  REQUIRE(run_cli(ws, "simulate --n 1200 --seed 42 --out b") == 0);
  REQUIRE(slurp(ws.dir / "a/data.csv") == slurp(ws.dir / "b/data.csv"));

  REQUIRE(run_cli(ws, "simulate --n 1200 --seed 43 --out c") == 0);
  REQUIRE(slurp(ws.dir / "a/data.csv") != slurp(ws.dir / "c/data.csv"));
}

TEST_CASE("simulate rejects bad arguments with exit 2") {
  Workspace ws;
  REQUIRE(run_cli(ws, "simulate --n 0 --out bad") == 2);
  REQUIRE(run_cli(ws, "simulate --n -5 --out bad") == 2);
  REQUIRE(run_cli(ws, "nonsense-subcommand") == 2);
}

TEST_CASE("manifest re-fed as config reproduces the run") {
  Workspace ws;
  REQUIRE(run_cli(ws, "simulate --n 300 --seed 9 --out a") == 0);
  REQUIRE(run_cli(ws, "simulate --config a/manifest.json --out b") == 0);
  REQUIRE(slurp(ws.dir / "a/data.csv") == slurp(ws.dir / "b/data.csv"));

  REQUIRE(run_cli(ws, "sample --data a/data.csv --strategy bounded --iters 80 "
                      "--warmup 40 --max-depth 6 --seed 9 --out s1") == 0);
  REQUIRE(run_cli(ws, "sample --config s1/manifest.json --out s2") == 0);
  REQUIRE(slurp(ws.dir / "s1/chain.csv") == slurp(ws.dir / "s2/chain.csv"));
}

TEST_CASE("fit produces a converged result JSON") {
  Workspace ws;
  REQUIRE(run_cli(ws, "simulate --n 400 --seed 5 --out r") == 0);
  REQUIRE(run_cli(ws, "fit --data r/data.csv --out r") == 0);
  const json fit = load(ws.dir / "r/fit_m3.json");
  REQUIRE(fit["result"]["converged"].get<bool>());
  REQUIRE(fit["components"] == 3);
  REQUIRE(fit["k"] == 15);
  REQUIRE(fit["n_obs"] == 400);
  REQUIRE(fit["result"]["params_natural"].contains("mu"));

  REQUIRE(run_cli(ws, "fit --data r/data.csv --components 2 --out r") == 0);
  const json fit2 = load(ws.dir / "r/fit_m2.json");
  REQUIRE(fit2["k"] == 10);
  REQUIRE(fit2["result"]["params_unconstrained"]["alpha"].size() == 2);
}

TEST_CASE("fit with a missing data file exits 2") {
  Workspace ws;
  REQUIRE(run_cli(ws, "fit --data does_not_exist.csv --out r") == 2);
}

TEST_CASE("sample strategies write chains with the promised contracts") {
  Workspace ws;
  REQUIRE(run_cli(ws, "simulate --n 200 --seed 11 --out r") == 0);

  SECTION("base strategy row count") {
    REQUIRE(run_cli(ws, "sample --data r/data.csv --strategy base --iters 120 "
                        "--warmup 60 --max-depth 6 --seed 1 --out s") == 0);
    REQUIRE(count_lines(ws.dir / "s/chain.csv") == 61);  // header + draws
    REQUIRE(fs::exists(ws.dir / "s/diagnostics.json"));
    const json d = load(ws.dir / "s/diagnostics.json");
    REQUIRE(d.contains("geweke"));
    REQUIRE(d.contains("summary"));
  }

  SECTION("fixed strategy holds the mean columns constant") {
    REQUIRE(run_cli(ws, "sample --data r/data.csv --strategy fixed --fix alpha "
                        "--iters 120 --warmup 60 --max-depth 6 --seed 2 --out f") == 0);
    std::ifstream in(ws.dir / "f/chain.csv");
    std::string line;
    std::getline(in, line);  // header
    std::string mu_cols;
    bool first = true;
    while (std::getline(in, line)) {
      std::istringstream row(line);
      std::string iter, mu1, mu2, mu3;
      std::getline(row, iter, ',');
      std::getline(row, mu1, ',');
      std::getline(row, mu2, ',');
      std::getline(row, mu3, ',');
      const std::string now = mu1 + "|" + mu2 + "|" + mu3;
      if (first) {
        mu_cols = now;
        first = false;
      }
      REQUIRE(now == mu_cols);
    }
  }

  SECTION("bounded strategy stays in its box") {
    REQUIRE(run_cli(ws, "sample --data r/data.csv --strategy bounded --iters 120 "
                        "--warmup 60 --max-depth 6 --seed 3 --out b") == 0);
    std::ifstream in(ws.dir / "b/chain.csv");
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      std::istringstream row(line);
      std::string field;
      std::getline(row, field, ',');  // iter
      for (int j = 0; j < 15; ++j) {
        std::getline(row, field, ',');
        const double v = std::stod(field);
        if (j >= 6 && j < 12) {  // correlations
          REQUIRE(std::abs(v) <= 1.0);
        }
      }
    }
  }
}

TEST_CASE("explore writes a report and restart table") {
  Workspace ws;
  REQUIRE(run_cli(ws, "simulate --n 200 --seed 21 --out r") == 0);
  REQUIRE(run_cli(ws, "explore --data r/data.csv --strategy bounded --iters 100 "
                      "--warmup 50 --max-depth 6 --seed 4 --out e") == 0);
  const json rep = load(ws.dir / "e/report.json");
  REQUIRE(rep["n_converged"].get<int>() > 0);
  REQUIRE(rep["optima_clusters"].size() >= 1);
  REQUIRE(count_lines(ws.dir / "e/restarts.csv") == 51);
  REQUIRE(fs::exists(ws.dir / "e/chain.csv"));

  // restarting from the chain file gives the same report
  REQUIRE(run_cli(ws, "explore --data r/data.csv --strategy bounded "
                      "--chain e/chain.csv --seed 4 --out e2") == 0);
  const json rep2 = load(ws.dir / "e2/report.json");
  REQUIRE(rep2["min_nll_by_strategy"].get<double>() ==
          Catch::Approx(rep["min_nll_by_strategy"].get<double>()).epsilon(1e-10));
}

TEST_CASE("explore supports the seed loop") {
  Workspace ws;
  REQUIRE(run_cli(ws, "simulate --n 150 --seed 31 --out r") == 0);
  REQUIRE(run_cli(ws, "explore --data r/data.csv --strategy seedloop --seeds 2 "
                      "--iters 80 --warmup 40 --max-depth 6 --seed 6 --out e") == 0);
  REQUIRE(fs::exists(ws.dir / "e/report.json"));
}

TEST_CASE("report consolidates run artifacts") {
  Workspace ws;
  REQUIRE(run_cli(ws, "simulate --n 300 --seed 41 --out r") == 0);
  REQUIRE(run_cli(ws, "fit --data r/data.csv --components 1 --out r") == 0);
  REQUIRE(run_cli(ws, "fit --data r/data.csv --components 2 --out r") == 0);
  REQUIRE(run_cli(ws, "fit --data r/data.csv --components 3 --out r") == 0);
  REQUIRE(run_cli(ws, "sample --data r/data.csv --strategy bounded --iters 100 "
                      "--warmup 50 --max-depth 6 --seed 7 --out r") == 0);
  REQUIRE(run_cli(ws, "report --run r") == 0);

  // the truth row of the global table carries the reference quantities
  std::ifstream g(ws.dir / "r/global.csv");
  std::string header, truth_row;
  std::getline(g, header);
  REQUIRE(header == "source,mu,sigma,rho_mz,rho_dz");
  std::getline(g, truth_row);
  REQUIRE(truth_row.rfind("truth,", 0) == 0);
  {
    std::istringstream row(truth_row);
    std::string f;
    std::getline(row, f, ',');
    std::getline(row, f, ',');
    REQUIRE(std::stod(f) == Catch::Approx(22.30).margin(0.005));
    std::getline(row, f, ',');
    REQUIRE(std::stod(f) == Catch::Approx(2.33).margin(0.01));
    std::getline(row, f, ',');
    REQUIRE(std::stod(f) == Catch::Approx(0.92).margin(0.01));
    std::getline(row, f, ',');
    REQUIRE(std::stod(f) == Catch::Approx(0.87).margin(0.01));
  }

  // model selection table: three rows, AIC improves with components
  std::ifstream ms(ws.dir / "r/model_selection.csv");
  std::getline(ms, header);
  double aic[4] = {0, 0, 0, 0};
  std::string line;
  while (std::getline(ms, line)) {
    std::istringstream row(line);
    std::string f;
    std::getline(row, f, ',');
    const int m = std::stoi(f);
    std::getline(row, f, ',');  // nll
    std::getline(row, f, ',');  // k
    std::getline(row, f, ',');  // aic
    aic[m] = std::stod(f);
  }
  REQUIRE(aic[3] < aic[2]);
  REQUIRE(aic[2] < aic[1]);

  REQUIRE(fs::exists(ws.dir / "r/summary.csv"));
  REQUIRE(fs::exists(ws.dir / "r/min_nll.csv"));
}

TEST_CASE("report on an empty directory exits 2") {
  Workspace ws;
  fs::create_directories(ws.dir / "empty");
  REQUIRE(run_cli(ws, "report --run empty") == 2);
  REQUIRE(run_cli(ws, "report --run missing_dir") == 2);
}

TEST_CASE("the full pipeline is byte-identical across reruns") {
  Workspace ws;
  for (const char* tag : {"x", "y"}) {
    const std::string t(tag);
    REQUIRE(run_cli(ws, "simulate --n 200 --seed 123 --out " + t) == 0);
    REQUIRE(run_cli(ws, "fit --data " + t + "/data.csv --out " + t) == 0);
    REQUIRE(run_cli(ws, "sample --data " + t + "/data.csv --strategy bounded "
                        "--iters 80 --warmup 40 --max-depth 6 --seed 123 --out " + t) == 0);
    REQUIRE(run_cli(ws, "explore --data " + t + "/data.csv --strategy bounded "
                        "--chain " + t + "/chain.csv --seed 123 --out " + t) == 0);
    REQUIRE(run_cli(ws, "report --run " + t) == 0);
  }
  for (const char* f :
       {"data.csv", "fit_m3.json", "chain.csv", "diagnostics.json", "report.json",
        "restarts.csv", "global.csv", "summary.csv", "min_nll.csv"}) {
    INFO(f);
    REQUIRE(slurp(ws.dir / "x" / f) == slurp(ws.dir / "y" / f));
  }
}
