#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "mixprobe/io.hpp"
#include "test_support.hpp"

using namespace mixprobe;
using Catch::Approx;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("mixprobe_test_" + name);
}

}  // namespace

TEST_CASE("parameter JSON uses the documented field names") {
  const UnconstrainedParams u = from_natural(testsupport::reference_truth());
  const nlohmann::json j = u;
  REQUIRE(j.contains("alpha"));
  REQUIRE(j.contains("log_sigma"));
  REQUIRE(j.contains("rho_mz"));
  REQUIRE(j.contains("rho_dz"));
  REQUIRE(j.contains("beta"));
  REQUIRE(j.contains("pre_p"));
  const nlohmann::json n = testsupport::reference_truth();
  REQUIRE(n.contains("mu"));
  REQUIRE(n.contains("sigma"));
  REQUIRE(n.contains("p"));
}

TEST_CASE("JSON round trips preserve every domain type exactly") {
  std::mt19937_64 rng(808);
  for (int trial = 0; trial < 50; ++trial) {
    const UnconstrainedParams u = testsupport::random_plausible_point(rng);
    const UnconstrainedParams u2 = nlohmann::json(u).get<UnconstrainedParams>();
    REQUIRE(u2.flat() == u.flat());

    const NaturalParams n = to_natural(u);
    const NaturalParams n2 = nlohmann::json(n).get<NaturalParams>();
    REQUIRE(natural_values(n2, true) == natural_values(n, true));
  }

  FixedMask mask = FixedMask::none(3);
  mask.fix_index(0, 3.044522437723423);
  mask.fix_index(12, -1.25);
  const FixedMask mask2 = nlohmann::json(mask).get<FixedMask>();
  REQUIRE(mask2.fixed == mask.fixed);
  REQUIRE(mask2.value[0] == mask.value[0]);
  REQUIRE(mask2.value[12] == mask.value[12]);
}

TEST_CASE("unbounded box sides serialize as null") {
  BoxBounds b = BoxBounds::unbounded(3);
  b.lower[1] = -2.5;
  b.upper[1] = 2.5;
  const nlohmann::json j = b;
  REQUIRE(j["lower"][0].is_null());
  REQUIRE(j["lower"][1] == -2.5);
  REQUIRE(j["upper"][2].is_null());
  const BoxBounds b2 = j.get<BoxBounds>();
  REQUIRE(std::isinf(b2.lower[0]));
  REQUIRE(b2.lower[1] == -2.5);
  REQUIRE(b2.upper[1] == 2.5);
}

TEST_CASE("dataset CSV round trips byte-identically") {
  const TwinDataset data =
      simulate(testsupport::reference_truth(), {120, 1.0 / 3.0, 0.5}, 404);
  const auto path = temp_file("data.csv");
  write_dataset_csv(data, path.string());

  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  REQUIRE(header == "x1,x2,zygosity,sex");

  const TwinDataset back = read_dataset_csv(path.string());
  REQUIRE(back.size() == data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    REQUIRE(back.rows[i].x1 == data.rows[i].x1);  // shortest round-trip format
    REQUIRE(back.rows[i].x2 == data.rows[i].x2);
    REQUIRE(back.rows[i].zygosity == data.rows[i].zygosity);
    REQUIRE(back.rows[i].sex == data.rows[i].sex);
  }
  std::filesystem::remove(path);
}

TEST_CASE("dataset CSV reader handles RFC 4180 quoting") {
  const auto path = temp_file("quoted.csv");
  {
    std::ofstream out(path);
    out << "x1,x2,zygosity,sex\n\"1.5\",\"2.5\",\"MZ\",\"F\"\n3.5,4.5,DZ,M\n";
  }
  const TwinDataset data = read_dataset_csv(path.string());
  REQUIRE(data.size() == 2);
  REQUIRE(data.rows[0].x1 == 1.5);
  REQUIRE(data.rows[0].zygosity == Zygosity::MZ);
  REQUIRE(data.rows[1].sex == Sex::M);
  std::filesystem::remove(path);
}

TEST_CASE("chain CSV has the traceplot layout and round trips") {
  const NaturalParams truth = testsupport::reference_truth();
  const TwinDataset data = simulate(truth, {100, 1.0 / 3.0, 0.5}, 3);
  SamplerConfig cfg;
  cfg.n_iterations = 120;
  cfg.n_warmup = 60;
  cfg.max_tree_depth = 6;
  cfg.seed = 15;
  cfg.bounds = BoxBounds::sampler_default(3);
  const Chain chain = sample(from_natural(truth), data, ModelSpec{3}, cfg);

  const auto path = temp_file("chain.csv");
  write_chain_csv(chain, path.string());
  {
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    REQUIRE(header ==
            "iter,mu1,mu2,mu3,sigma1,sigma2,sigma3,rho_mz1,rho_mz2,rho_mz3,"
            "rho_dz1,rho_dz2,rho_dz3,beta,p1,p2,nll,accept_stat,tree_depth,divergent");
  }

  const Chain back = read_chain_csv(path.string());
  REQUIRE(back.n_components == 3);
  REQUIRE(back.size() == chain.size());
  for (std::size_t i = 0; i < chain.size(); ++i) {
    REQUIRE(back.nll_per_draw[i] == chain.nll_per_draw[i]);
    for (std::size_t j = 0; j < 15; ++j)
      REQUIRE(back.draws[i][j] == Approx(chain.draws[i][j]).epsilon(1e-9));
  }
  std::filesystem::remove(path);
}

TEST_CASE("restarts CSV lists one row per restart") {
  const NaturalParams truth = testsupport::reference_truth();
  const TwinDataset data = simulate(truth, {80, 1.0 / 3.0, 0.5}, 4);
  Chain chain;
  chain.n_components = 3;
  for (int i = 0; i < 3; ++i) {
    chain.draws.push_back(from_natural(truth).flat());
    chain.nll_per_draw.push_back(0.0);
    chain.accept_stat.push_back(1.0);
    chain.tree_depth.push_back(1);
    chain.divergent.push_back(0);
  }
  const ExplorationReport report = restart_all(chain, data, ModelSpec{3}, {});
  const auto path = temp_file("restarts.csv");
  write_restarts_csv(report, 3, path.string());

  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  REQUIRE(line ==
          "start_index,converged,termination,nll,mu1,mu2,mu3,sigma1,sigma2,sigma3,"
          "rho_mz1,rho_mz2,rho_mz3,rho_dz1,rho_dz2,rho_dz3,beta,p1,p2");
  int rows = 0;
  while (std::getline(in, line))
    if (!line.empty()) ++rows;
  REQUIRE(rows == 3);
  std::filesystem::remove(path);
}

TEST_CASE("optim result JSON carries both parameter scales") {
  const NaturalParams truth = testsupport::reference_truth();
  const TwinDataset data = simulate(truth, {80, 1.0 / 3.0, 0.5}, 5);
  const OptimResult r = minimize(from_natural(truth), data, ModelSpec{3});
  const nlohmann::json j = r;
  REQUIRE(j.contains("nll"));
  REQUIRE(j.contains("converged"));
  REQUIRE(j.contains("termination"));
  REQUIRE(j.contains("iterations"));
  REQUIRE(j["params_natural"].contains("mu"));
  REQUIRE(j["params_unconstrained"].contains("alpha"));
  const OptimResult r2 = j.get<OptimResult>();
  REQUIRE(r2.nll == r.nll);
  REQUIRE(r2.argmin.flat() == r.argmin.flat());
  REQUIRE(r2.termination == r.termination);
}
