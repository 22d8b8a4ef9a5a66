#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "mixprobe/errors.hpp"
#include "mixprobe/nuts.hpp"
#include "mixprobe/params.hpp"

namespace mixprobe {

// ---------------------------------------------------------------------------
// Geweke convergence diagnostic
// ---------------------------------------------------------------------------

namespace diag_detail {

// Spectral density at frequency zero of a segment, via a Bartlett-windowed
// autocovariance sum with lag window 4 * n^(1/3).
inline double spectral_density_zero(const std::vector<double>& x) {
  const std::size_t n = x.size();
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(n);

  const auto max_lag = static_cast<std::size_t>(
      std::min<double>(static_cast<double>(n) - 1.0,
                       std::floor(4.0 * std::cbrt(static_cast<double>(n)))));
  double s = 0.0;
  for (std::size_t lag = 0; lag <= max_lag; ++lag) {
    double gamma = 0.0;
    for (std::size_t t = 0; t + lag < n; ++t)
      gamma += (x[t] - mean) * (x[t + lag] - mean);
    gamma /= static_cast<double>(n);
    const double w = 1.0 - static_cast<double>(lag) / static_cast<double>(max_lag + 1);
    s += (lag == 0 ? 1.0 : 2.0 * w) * gamma;
  }
  return s;
}

}  // namespace diag_detail

/// Geweke Z-score comparing the mean of the first `frac_a` of a chain
/// column against the last `frac_b`, with spectral variance estimates.
inline double geweke(const std::vector<double>& column, double frac_a = 0.1,
                     double frac_b = 0.5) {
  const std::size_t n = column.size();
  if (n < 100) throw ChainTooShort("geweke needs at least 100 draws");
  if (!(frac_a > 0.0 && frac_b > 0.0 && frac_a + frac_b <= 1.0))
    throw DomainError("need frac_a, frac_b > 0 with frac_a + frac_b <= 1");

  const auto n_a = static_cast<std::size_t>(frac_a * n);
  const auto n_b = static_cast<std::size_t>(frac_b * n);
  const std::vector<double> a(column.begin(), column.begin() + n_a);
  const std::vector<double> b(column.end() - n_b, column.end());

  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  auto constant = [](const std::vector<double>& v) {
    return *std::max_element(v.begin(), v.end()) ==
           *std::min_element(v.begin(), v.end());
  };
  if (constant(a) || constant(b))
    throw ZeroVariance("chain segment has no variance");
  const double sa = diag_detail::spectral_density_zero(a);
  const double sb = diag_detail::spectral_density_zero(b);
  if (!(sa > 0.0) || !(sb > 0.0))
    throw ZeroVariance("chain segment has no variance");
  return (mean(a) - mean(b)) /
         std::sqrt(sa / static_cast<double>(n_a) + sb / static_cast<double>(n_b));
}

struct GewekeResult {
  std::vector<double> z_scores;  // one per unconstrained coordinate; NaN if constant
  double frac_a = 0.1;
  double frac_b = 0.5;
  std::vector<bool> pass;  // |Z| <= 1.28 (constant columns pass vacuously)
};

/// Geweke scores for every unconstrained coordinate of a chain. Masked
/// (constant) columns get a NaN score and a vacuous pass.
inline GewekeResult geweke_chain(const Chain& chain, double frac_a = 0.1,
                                 double frac_b = 0.5) {
  if (chain.draws.empty()) throw ChainTooShort("empty chain");
  const std::size_t dim = chain.draws.front().size();
  GewekeResult out;
  out.frac_a = frac_a;
  out.frac_b = frac_b;
  out.z_scores.resize(dim);
  out.pass.resize(dim);
  std::vector<double> col(chain.draws.size());
  for (std::size_t j = 0; j < dim; ++j) {
    for (std::size_t i = 0; i < chain.draws.size(); ++i) col[i] = chain.draws[i][j];
    try {
      out.z_scores[j] = geweke(col, frac_a, frac_b);
      out.pass[j] = std::abs(out.z_scores[j]) <= 1.28;
    } catch (const ZeroVariance&) {
      out.z_scores[j] = std::numeric_limits<double>::quiet_NaN();
      out.pass[j] = true;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Global mixture quantities
// ---------------------------------------------------------------------------

/// Moments of the overall mixture distribution (female baseline):
/// the global mean, SD and within-pair correlations.
struct GlobalQuantities {
  double mu_g = 0.0;
  double sigma_g = 0.0;
  double rho_mz_g = 0.0;
  double rho_dz_g = 0.0;
};

inline GlobalQuantities global_quantities(const NaturalParams& n) {
  n.validate(/*allow_zero_weights=*/true);
  const int m = n.n_components();
  double mu_g = 0.0, ex2 = 0.0, exy_mz = 0.0, exy_dz = 0.0;
  for (int k = 0; k < m; ++k) {
    const double s2 = n.sigma[k] * n.sigma[k];
    mu_g += n.p[k] * n.mu[k];
    ex2 += n.p[k] * (s2 + n.mu[k] * n.mu[k]);
    exy_mz += n.p[k] * (n.rho_mz[k] * s2 + n.mu[k] * n.mu[k]);
    exy_dz += n.p[k] * (n.rho_dz[k] * s2 + n.mu[k] * n.mu[k]);
  }
  const double var = ex2 - mu_g * mu_g;
  if (!(var > 0.0)) throw DomainError("degenerate global variance");
  GlobalQuantities g;
  g.mu_g = mu_g;
  g.sigma_g = std::sqrt(var);
  g.rho_mz_g = (exy_mz - mu_g * mu_g) / var;
  g.rho_dz_g = (exy_dz - mu_g * mu_g) / var;
  return g;
}

/// Chain-level global quantities: computed per draw and averaged.
/// (Applying the formula to the per-parameter means instead is available
/// by composing summarize() with global_quantities().)
inline GlobalQuantities global_quantities_chain(const Chain& chain) {
  if (chain.draws.empty()) throw ChainTooShort("empty chain");
  GlobalQuantities acc;
  for (const auto& d : chain.draws) {
    const GlobalQuantities g =
        global_quantities(to_natural(UnconstrainedParams::from_flat(d)));
    acc.mu_g += g.mu_g;
    acc.sigma_g += g.sigma_g;
    acc.rho_mz_g += g.rho_mz_g;
    acc.rho_dz_g += g.rho_dz_g;
  }
  const auto n = static_cast<double>(chain.draws.size());
  acc.mu_g /= n;
  acc.sigma_g /= n;
  acc.rho_mz_g /= n;
  acc.rho_dz_g /= n;
  return acc;
}

// ---------------------------------------------------------------------------
// Model selection
// ---------------------------------------------------------------------------

struct InformationCriteria {
  double aic = 0.0;
  double bic = 0.0;
};

inline InformationCriteria aic_bic(double nll_value, int k, int n_obs) {
  if (k < 1 || n_obs < 1) throw DomainError("aic_bic needs k >= 1 and n_obs >= 1");
  return {2.0 * k + 2.0 * nll_value,
          k * std::log(static_cast<double>(n_obs)) + 2.0 * nll_value};
}

/// Free-parameter count of the m-component twin mixture (5m: per-component
/// mean, SD and two correlations, plus beta and m-1 weight generators).
inline int parameter_count(int m) { return 5 * m; }

// ---------------------------------------------------------------------------
// Chain summaries
// ---------------------------------------------------------------------------

struct ParamSummary {
  std::string name;
  double mean = 0.0;
  double sd = 0.0;
};

/// Per-parameter mean and sample SD of a chain on the natural scale
/// (all mixture weights included, matching the summary-table layout).
inline std::vector<ParamSummary> summarize(const Chain& chain) {
  if (chain.draws.empty()) throw ChainTooShort("empty chain");
  const int m = chain.n_components;
  const std::vector<std::string> names = natural_names(m, /*all_weights=*/true);
  const std::size_t dim = names.size();
  const auto n = static_cast<double>(chain.draws.size());

  std::vector<double> mean(dim, 0.0), m2(dim, 0.0);
  std::vector<std::vector<double>> rows;
  rows.reserve(chain.draws.size());
  for (const auto& d : chain.draws) {
    rows.push_back(natural_values(to_natural(UnconstrainedParams::from_flat(d)),
                                  /*all_weights=*/true));
    for (std::size_t j = 0; j < dim; ++j) mean[j] += rows.back()[j];
  }
  for (std::size_t j = 0; j < dim; ++j) mean[j] /= n;
  for (const auto& r : rows)
    for (std::size_t j = 0; j < dim; ++j)
      m2[j] += (r[j] - mean[j]) * (r[j] - mean[j]);

  std::vector<ParamSummary> out(dim);
  for (std::size_t j = 0; j < dim; ++j) {
    out[j].name = names[j];
    out[j].mean = mean[j];
    out[j].sd = n > 1 ? std::sqrt(m2[j] / (n - 1.0)) : 0.0;
    // a constant column must report exactly zero spread
    bool constant = true;
    for (const auto& r : rows)
      if (r[j] != rows.front()[j]) {
        constant = false;
        break;
      }
    if (constant) {
      out[j].mean = rows.front()[j];
      out[j].sd = 0.0;
    }
  }
  return out;
}

}  // namespace mixprobe
