#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <thread>
#include <utility>
#include <variant>
#include <vector>

#include "mixprobe/diagnostics.hpp"
#include "mixprobe/nuts.hpp"
#include "mixprobe/optimizer.hpp"
#include "mixprobe/params.hpp"
#include "mixprobe/twin_model.hpp"

namespace mixprobe {

// ---------------------------------------------------------------------------
// Sampling strategies
// ---------------------------------------------------------------------------

struct BaseStrategy {};
struct SeedLoopStrategy {
  int n_seeds = 15;
};
struct FixedSubsetStrategy {
  FixedMask mask;
};
struct BoundedStrategy {
  BoxBounds bounds;
};

using Strategy =
    std::variant<BaseStrategy, SeedLoopStrategy, FixedSubsetStrategy, BoundedStrategy>;

namespace explorer_detail {

// Run jobs [0, n) on up to `threads` workers; job i writes only slot i of
// its output, so results are independent of the schedule.
template <class Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  threads = std::max(1, threads);
  if (threads == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
  };
  std::vector<std::thread> pool;
  const auto n_workers = std::min<std::size_t>(threads, n);
  pool.reserve(n_workers);
  for (std::size_t t = 0; t < n_workers; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
}

}  // namespace explorer_detail

/// Run one sampling strategy. The seed loop runs chains with seeds
/// cfg.seed + 0..n-1 and keeps the chain attaining the lowest per-draw
/// NLL; the other strategies produce a single chain with the requested
/// mask or bounds applied.
inline Chain run_strategy(const Strategy& strategy, const UnconstrainedParams& start,
                          const TwinDataset& data, const ModelSpec& spec,
                          const SamplerConfig& sampler_cfg, int threads = 1) {
  try {
    if (std::holds_alternative<BaseStrategy>(strategy)) {
      return sample(start, data, spec, sampler_cfg);
    }
    if (const auto* fs = std::get_if<FixedSubsetStrategy>(&strategy)) {
      SamplerConfig cfg = sampler_cfg;
      cfg.mask = fs->mask;
      return sample(start, data, spec, cfg);
    }
    if (const auto* bd = std::get_if<BoundedStrategy>(&strategy)) {
      SamplerConfig cfg = sampler_cfg;
      cfg.bounds = bd->bounds;
      return sample(start, data, spec, cfg);
    }
  } catch (const StuckChain& e) {
    const char* kind = std::holds_alternative<BaseStrategy>(strategy) ? "base"
                       : std::holds_alternative<FixedSubsetStrategy>(strategy)
                           ? "fixed-subset"
                           : "bounded";
    throw StuckChain(std::string(kind) + " strategy: " + e.what());
  }

  const auto& loop = std::get<SeedLoopStrategy>(strategy);
  if (loop.n_seeds < 1) throw DomainError("seed loop needs n_seeds >= 1");
  std::vector<Chain> chains(loop.n_seeds);
  std::vector<std::exception_ptr> errors(loop.n_seeds);
  explorer_detail::parallel_for(
      static_cast<std::size_t>(loop.n_seeds), threads, [&](std::size_t i) {
        try {
          SamplerConfig cfg = sampler_cfg;
          cfg.seed = sampler_cfg.seed + i;
          chains[i] = sample(start, data, spec, cfg);
        } catch (const StuckChain& e) {
          errors[i] = std::make_exception_ptr(
              StuckChain("seed loop chain " + std::to_string(i) + ": " + e.what()));
        } catch (...) {
          errors[i] = std::current_exception();
        }
      });
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::size_t best = 0;
  for (std::size_t i = 1; i < chains.size(); ++i)
    if (chains[i].min_nll() < chains[best].min_nll()) best = i;
  return std::move(chains[best]);
}

// ---------------------------------------------------------------------------
// Restarting the optimizer from every draw
// ---------------------------------------------------------------------------

struct RestartOutcome {
  int start_index = 0;
  OptimResult result;
};

struct OptimumCluster {
  NaturalParams representative;
  double nll = kInf;
  int count = 0;
};

struct ExplorationReport {
  std::vector<RestartOutcome> per_restart;
  OptimResult best;
  std::vector<OptimumCluster> optima_clusters;
  double min_nll_by_strategy = kInf;
  int n_converged = 0;
  int n_failed = 0;
};

namespace explorer_detail {

// Two converged optima count as the same local optimum when every
// natural-scale component agrees to 1e-4 and the NLLs to 1e-6.
inline bool same_optimum(const NaturalParams& a, double nll_a,
                         const NaturalParams& b, double nll_b) {
  if (std::abs(nll_a - nll_b) >= 1e-6) return false;
  const std::vector<double> va = natural_values(a, /*all_weights=*/true);
  const std::vector<double> vb = natural_values(b, /*all_weights=*/true);
  for (std::size_t i = 0; i < va.size(); ++i)
    if (std::abs(va[i] - vb[i]) >= 1e-4) return false;
  return true;
}

}  // namespace explorer_detail

/// Restart the optimizer from every retained draw of a chain and cluster
/// the converged results into distinct local optima. Individual failures
/// (non-convergence, invalid starts) are recorded, never raised. A mask
/// restricts the refits to the chain's free subspace (for chains produced
/// under that mask); by default every coordinate is refit.
inline ExplorationReport restart_all(const Chain& chain, const TwinDataset& data,
                                     const ModelSpec& spec, const OptimConfig& optim_cfg,
                                     int threads = 1, const FixedMask& mask = {}) {
  if (chain.draws.empty()) throw ChainTooShort("cannot restart from an empty chain");

  ExplorationReport report;
  report.per_restart.resize(chain.draws.size());
  explorer_detail::parallel_for(chain.draws.size(), threads, [&](std::size_t i) {
    const UnconstrainedParams start = UnconstrainedParams::from_flat(chain.draws[i]);
    report.per_restart[i] = {static_cast<int>(i),
                             minimize(start, data, spec, optim_cfg, mask)};
  });

  // order-independent clustering: sort converged optima by (nll, params)
  // and greedily match against cluster representatives
  std::vector<const RestartOutcome*> converged;
  for (const auto& r : report.per_restart) {
    if (r.result.converged) {
      ++report.n_converged;
      converged.push_back(&r);
    } else {
      ++report.n_failed;
    }
  }
  std::vector<std::pair<NaturalParams, const RestartOutcome*>> nat;
  nat.reserve(converged.size());
  for (const auto* r : converged) nat.emplace_back(to_natural(r->result.argmin), r);
  std::sort(nat.begin(), nat.end(), [](const auto& a, const auto& b) {
    if (a.second->result.nll != b.second->result.nll)
      return a.second->result.nll < b.second->result.nll;
    return natural_values(a.first, true) < natural_values(b.first, true);
  });
  for (const auto& [params, outcome] : nat) {
    bool placed = false;
    for (auto& cluster : report.optima_clusters) {
      if (explorer_detail::same_optimum(params, outcome->result.nll,
                                        cluster.representative, cluster.nll)) {
        ++cluster.count;
        placed = true;
        break;
      }
    }
    if (!placed)
      report.optima_clusters.push_back({params, outcome->result.nll, 1});
  }

  // best result: lowest NLL among converged restarts (falling back to the
  // lowest finite NLL seen if nothing converged)
  const RestartOutcome* best = nullptr;
  for (const auto& r : report.per_restart) {
    const bool eligible = report.n_converged > 0 ? r.result.converged
                                                 : std::isfinite(r.result.nll);
    if (!eligible) continue;
    if (best == nullptr || r.result.nll < best->result.nll) best = &r;
  }
  if (best != nullptr) report.best = best->result;
  report.min_nll_by_strategy = best != nullptr ? best->result.nll : kInf;
  return report;
}

// ---------------------------------------------------------------------------
// Collapse detection
// ---------------------------------------------------------------------------

struct CollapseThresholds {
  double weight_eps = 1e-3;
  double mean_gap_eps = 1e-3;
};

struct CollapseSummary {
  int n_effective_components = 0;
  std::vector<std::pair<int, int>> collapsed_pairs;  // 1-based component indices
};

/// Effective number of mixture components a chain actually uses:
/// components whose median weight clears `weight_eps`, merged when the
/// median gap between their means falls below `mean_gap_eps`.
inline CollapseSummary detect_collapse(const Chain& chain,
                                       const CollapseThresholds& thresholds = {}) {
  if (chain.draws.empty()) throw ChainTooShort("empty chain");
  const int m = chain.n_components;
  const std::size_t n = chain.draws.size();

  std::vector<NaturalParams> nats;
  nats.reserve(n);
  for (const auto& d : chain.draws)
    nats.push_back(to_natural(UnconstrainedParams::from_flat(d)));

  auto median_of = [&](auto&& get) {
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = get(nats[i]);
    std::nth_element(v.begin(), v.begin() + n / 2, v.end());
    double hi = v[n / 2];
    if (n % 2 == 0) {
      std::nth_element(v.begin(), v.begin() + n / 2 - 1, v.end());
      hi = 0.5 * (hi + v[n / 2 - 1]);
    }
    return hi;
  };

  std::vector<bool> alive(m);
  for (int k = 0; k < m; ++k)
    alive[k] = median_of([&](const NaturalParams& p) { return p.p[k]; }) >
               thresholds.weight_eps;

  CollapseSummary out;
  std::vector<int> parent(m);
  for (int k = 0; k < m; ++k) parent[k] = k;
  auto find = [&](int a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  };
  for (int j = 0; j < m; ++j) {
    for (int k = j + 1; k < m; ++k) {
      const double gap = median_of([&](const NaturalParams& p) {
        return std::abs(p.mu[k] - p.mu[j]);
      });
      if (gap <= thresholds.mean_gap_eps) {
        out.collapsed_pairs.emplace_back(j + 1, k + 1);
        parent[find(j)] = find(k);
      }
    }
  }

  std::vector<bool> counted(m, false);
  for (int k = 0; k < m; ++k) {
    if (!alive[k]) continue;
    const int root = find(k);
    if (!counted[root]) {
      counted[root] = true;
      ++out.n_effective_components;
    }
  }
  return out;
}

}  // namespace mixprobe
