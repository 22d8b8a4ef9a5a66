#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <random>

#include "mixprobe/explorer.hpp"
#include "test_support.hpp"

using namespace mixprobe;
using Catch::Approx;

namespace {

SamplerConfig quick_sampler(std::uint64_t seed) {
  SamplerConfig cfg;
  cfg.n_iterations = 200;
  cfg.n_warmup = 100;
  cfg.max_tree_depth = 6;  // keeps wandering test chains cheap
  cfg.seed = seed;
  return cfg;
}

// A deliberately bimodal one-dimensional profile: two equal-weight
// components with means fixed at 7 and 13, data clustered at 10, and only
// the sex offset free. Shifting by +3 parks component 1 on the data,
// shifting by -3 parks component 2 there; in between lies a barrier.
struct BimodalFixture {
  TwinDataset data;
  FixedMask mask;
  ModelSpec spec{2};
  UnconstrainedParams reference;

  BimodalFixture() : reference(2) {
    std::mt19937_64 rng(606);
    std::normal_distribution<double> norm(0.0, 1.0);
    const double rho = 0.5;
    for (int i = 0; i < 30; ++i) {
      const double z1 = norm(rng);
      const double z2 = norm(rng);
      TwinRow row;
      row.x1 = 10.0 + z1;
      row.x2 = 10.0 + rho * z1 + std::sqrt(1.0 - rho * rho) * z2;
      row.zygosity = Zygosity::MZ;
      row.sex = Sex::M;
      data.rows.push_back(row);
    }
    reference.alpha = {std::log(7.0), std::log(6.0)};  // means 7 and 13
    reference.log_sigma = {0.0, 0.0};
    reference.rho_mz = {rho, rho};
    reference.rho_dz = {0.0, 0.0};
    reference.beta = 0.0;
    reference.pre_p = {0.0};  // equal weights
    mask = FixedMask::none(2);
    const std::vector<double> flat = reference.flat();
    for (std::size_t i = 0; i < flat.size(); ++i)
      if (i != 8) mask.fix_index(i, flat[i]);  // everything but beta
  }

  double profile_nll(double beta) const {
    UnconstrainedParams u = reference;
    u.beta = beta;
    return nll(u, data, spec).nll;
  }
};

}  // namespace

TEST_CASE("seed loop returns the chain with the lowest NLL draw") {
  const NaturalParams truth = testsupport::reference_truth();
  const TwinDataset data = simulate(truth, {150, 1.0 / 3.0, 0.5}, 41);
  const UnconstrainedParams start = from_natural(truth);
  const SamplerConfig cfg = quick_sampler(100);

  const Chain best =
      run_strategy(SeedLoopStrategy{3}, start, data, ModelSpec{3}, cfg, /*threads=*/3);

  double expected = kInf;
  for (int i = 0; i < 3; ++i) {
    SamplerConfig c = cfg;
    c.seed = cfg.seed + i;
    expected = std::min(expected, sample(start, data, ModelSpec{3}, c).min_nll());
  }
  REQUIRE(best.min_nll() == expected);
}

TEST_CASE("seed loop with one seed reproduces the base strategy") {
  const NaturalParams truth = testsupport::reference_truth();
  const TwinDataset data = simulate(truth, {150, 1.0 / 3.0, 0.5}, 43);
  const UnconstrainedParams start = from_natural(truth);
  const SamplerConfig cfg = quick_sampler(7);
  const Chain a = run_strategy(BaseStrategy{}, start, data, ModelSpec{3}, cfg);
  const Chain b = run_strategy(SeedLoopStrategy{1}, start, data, ModelSpec{3}, cfg);
  REQUIRE(a.draws == b.draws);
}

TEST_CASE("fixed-subset strategy holds the masked block bit-exactly") {
  const NaturalParams truth = testsupport::reference_truth();
  const TwinDataset data = simulate(truth, {150, 1.0 / 3.0, 0.5}, 47);
  const UnconstrainedParams start = from_natural(truth);
  FixedSubsetStrategy strat;
  strat.mask = FixedMask::none(3);
  strat.mask.fix_block(ParamBlock::Alpha, start);
  const Chain chain =
      run_strategy(Strategy{strat}, start, data, ModelSpec{3}, quick_sampler(9));
  for (const auto& draw : chain.draws)
    for (int k = 0; k < 3; ++k)
      REQUIRE(draw[k] == start.alpha[k]);
}

TEST_CASE("bounded strategy never leaves its box") {
  const NaturalParams truth = testsupport::reference_truth();
  const TwinDataset data = simulate(truth, {150, 1.0 / 3.0, 0.5}, 53);
  BoundedStrategy strat{BoxBounds::sampler_default(3)};
  const Chain chain = run_strategy(Strategy{strat}, from_natural(truth), data,
                                   ModelSpec{3}, quick_sampler(10));
  for (const auto& draw : chain.draws) REQUIRE(strat.bounds.contains(draw));
}

TEST_CASE("a full-scale bounded chain tracks the generating values") {
  // the documented workflow: fit first, then sample from the optimum
  const NaturalParams truth = testsupport::reference_truth();
  const TwinDataset data = simulate(truth, {1200, 1.0 / 3.0, 0.5}, 4242);
  const OptimResult fit = minimize(from_natural(truth), data, ModelSpec{3});
  SamplerConfig cfg;
  cfg.n_iterations = 1000;
  cfg.n_warmup = 500;
  cfg.seed = 10;
  cfg.bounds = BoxBounds::sampler_default(3);
  const Chain chain = sample(fit.argmin, data, ModelSpec{3}, cfg);

  // stochastic check: chain means stay within 4 chain-SDs of the truth
  const std::vector<ParamSummary> summary = summarize(chain);
  const std::vector<double> want = natural_values(truth, /*all_weights=*/true);
  for (std::size_t i = 0; i < want.size(); ++i) {
    REQUIRE(summary[i].sd > 0.0);
    REQUIRE(std::abs(summary[i].mean - want[i]) < 4.0 * summary[i].sd);
  }
}

TEST_CASE("restarts from a well-behaved chain collapse to one optimum") {
  const NaturalParams truth = testsupport::reference_truth();
  const TwinDataset data = simulate(truth, {300, 1.0 / 3.0, 0.5}, 59);
  const UnconstrainedParams start = from_natural(truth);

  const OptimResult direct = minimize(start, data, ModelSpec{3});
  REQUIRE(direct.converged);

  SamplerConfig cfg = quick_sampler(3);
  cfg.n_iterations = 160;
  cfg.n_warmup = 80;
  cfg.bounds = BoxBounds::sampler_default(3);
  const Chain chain = sample(start, data, ModelSpec{3}, cfg);
  const ExplorationReport report =
      restart_all(chain, data, ModelSpec{3}, OptimConfig{}, /*threads=*/4);

  REQUIRE(report.n_failed == 0);
  REQUIRE(report.n_converged == static_cast<int>(chain.size()));
  REQUIRE(report.optima_clusters.size() == 1);
  int clustered = 0;
  for (const OptimumCluster& c : report.optima_clusters) clustered += c.count;
  REQUIRE(clustered == report.n_converged);  // clusters partition the converged set
  REQUIRE(report.best.nll == Approx(direct.nll).margin(1e-3));
  // the central claim: no restart beats the direct fit
  REQUIRE(report.min_nll_by_strategy >= direct.nll - 1e-6);

  // the report must not depend on the worker schedule
  const ExplorationReport serial =
      restart_all(chain, data, ModelSpec{3}, OptimConfig{}, /*threads=*/1);
  REQUIRE(serial.best.nll == report.best.nll);
  REQUIRE(serial.n_converged == report.n_converged);
  REQUIRE(serial.optima_clusters.size() == report.optima_clusters.size());
  for (std::size_t i = 0; i < report.per_restart.size(); ++i) {
    REQUIRE(serial.per_restart[i].result.nll == report.per_restart[i].result.nll);
    REQUIRE(serial.per_restart[i].result.argmin.flat() ==
            report.per_restart[i].result.argmin.flat());
  }
}

TEST_CASE("failed restarts are recorded, not raised") {
  const NaturalParams truth = testsupport::reference_truth();
  const TwinDataset data = simulate(truth, {150, 1.0 / 3.0, 0.5}, 61);
  SamplerConfig cfg = quick_sampler(5);
  cfg.bounds = BoxBounds::sampler_default(3);
  const Chain chain = sample(from_natural(truth), data, ModelSpec{3}, cfg);

  OptimConfig strangled;
  strangled.max_iterations = 2;  // nothing can converge in two steps
  const ExplorationReport report =
      restart_all(chain, data, ModelSpec{3}, strangled);
  REQUIRE(report.n_failed > 0);
  REQUIRE(report.n_converged + report.n_failed == static_cast<int>(chain.size()));
}

TEST_CASE("invalid restart starts are recorded as InvalidStart") {
  const NaturalParams truth = testsupport::reference_truth();
  const TwinDataset data = simulate(truth, {100, 1.0 / 3.0, 0.5}, 67);
  Chain chain;
  chain.n_components = 3;
  UnconstrainedParams bad = from_natural(truth);
  bad.rho_mz[0] = 2.0;
  chain.draws.push_back(bad.flat());
  chain.nll_per_draw.push_back(kInf);
  chain.accept_stat.push_back(0.0);
  chain.tree_depth.push_back(0);
  chain.divergent.push_back(1);

  OptimConfig cfg;
  cfg.bounds = BoxBounds::optimizer_default(3);
  cfg.bounds.lower[6] = 1.05;  // whole box invalid for rho_mz1
  cfg.bounds.upper[6] = 3.0;
  const ExplorationReport report = restart_all(chain, data, ModelSpec{3}, cfg);
  REQUIRE(report.n_failed == 1);
  REQUIRE(report.per_restart[0].result.termination == Termination::InvalidStart);
}

TEST_CASE("bimodal profile: explorer finds exactly two optima") {
  const BimodalFixture fx;

  // confirm the profile really is bimodal before using it
  const double at_minus = fx.profile_nll(-3.0);
  const double at_mid = fx.profile_nll(0.0);
  const double at_plus = fx.profile_nll(3.0);
  REQUIRE(at_mid > at_minus + 10.0);
  REQUIRE(at_mid > at_plus + 10.0);

  // a sampler that visits both basins: one short bounded run per basin
  UnconstrainedParams start_hi = fx.reference;
  start_hi.beta = 3.2;
  UnconstrainedParams start_lo = fx.reference;
  start_lo.beta = -2.8;
  SamplerConfig cfg = quick_sampler(71);
  cfg.mask = fx.mask;
  cfg.bounds = BoxBounds::sampler_default(2);
  const Chain up = sample(start_hi, fx.data, fx.spec, cfg);
  cfg.seed += 1;
  const Chain down = sample(start_lo, fx.data, fx.spec, cfg);

  Chain merged = up;
  merged.draws.insert(merged.draws.end(), down.draws.begin(), down.draws.end());
  merged.nll_per_draw.insert(merged.nll_per_draw.end(), down.nll_per_draw.begin(),
                             down.nll_per_draw.end());
  merged.accept_stat.insert(merged.accept_stat.end(), down.accept_stat.begin(),
                            down.accept_stat.end());
  merged.tree_depth.insert(merged.tree_depth.end(), down.tree_depth.begin(),
                           down.tree_depth.end());
  merged.divergent.insert(merged.divergent.end(), down.divergent.begin(),
                          down.divergent.end());

  OptimConfig optim;
  const ExplorationReport report =
      restart_all(merged, fx.data, fx.spec, optim, 2, fx.mask);
  REQUIRE(report.optima_clusters.size() == 2);

  // dense grid oracle over the free coordinate
  double grid_best = kInf;
  for (int i = 0; i <= 10000; ++i) {
    const double beta = -5.0 + 10.0 * i / 10000.0;
    grid_best = std::min(grid_best, fx.profile_nll(beta));
  }
  REQUIRE(report.best.nll <= grid_best + 1e-9);
  REQUIRE(report.best.nll == Approx(grid_best).margin(1e-4));

  // cluster order must not depend on restart order
  Chain reversed = merged;
  std::reverse(reversed.draws.begin(), reversed.draws.end());
  std::reverse(reversed.nll_per_draw.begin(), reversed.nll_per_draw.end());
  std::reverse(reversed.accept_stat.begin(), reversed.accept_stat.end());
  std::reverse(reversed.tree_depth.begin(), reversed.tree_depth.end());
  std::reverse(reversed.divergent.begin(), reversed.divergent.end());
  const ExplorationReport again =
      restart_all(reversed, fx.data, fx.spec, optim, 2, fx.mask);
  REQUIRE(again.optima_clusters.size() == 2);
  REQUIRE(again.best.nll == Approx(report.best.nll).margin(1e-12));
}

TEST_CASE("collapse detection classifies chains by effective components") {
  const UnconstrainedParams base = from_natural(testsupport::reference_truth());
  auto make_chain = [&](const UnconstrainedParams& u) {
    Chain c;
    c.n_components = 3;
    for (int i = 0; i < 31; ++i) {
      c.draws.push_back(u.flat());
      c.nll_per_draw.push_back(0.0);
      c.accept_stat.push_back(1.0);
      c.tree_depth.push_back(1);
      c.divergent.push_back(0);
    }
    return c;
  };

  SECTION("healthy three-component chain") {
    const CollapseSummary s = detect_collapse(make_chain(base));
    REQUIRE(s.n_effective_components == 3);
    REQUIRE(s.collapsed_pairs.empty());
  }

  SECTION("vanishing second weight") {
    UnconstrainedParams u = base;
    u.pre_p = {std::log(0.69 / 0.3095), std::log(5e-4 / 0.3095)};
    const CollapseSummary s = detect_collapse(make_chain(u));
    REQUIRE(s.n_effective_components == 2);
  }

  SECTION("tied means collapse the pair (1,2)") {
    UnconstrainedParams u = base;
    u.alpha[1] = -15.0;  // mu2 - mu1 = exp(-15) < 1e-6
    const CollapseSummary s = detect_collapse(make_chain(u));
    REQUIRE(s.n_effective_components == 2);
    REQUIRE(s.collapsed_pairs ==
            std::vector<std::pair<int, int>>{{1, 2}});
  }
}
