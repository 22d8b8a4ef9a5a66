#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "mixprobe/errors.hpp"
#include "mixprobe/params.hpp"

namespace mixprobe {

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

enum class Zygosity : std::uint8_t { MZ, DZ };
enum class Sex : std::uint8_t { F, M };

struct TwinRow {
  double x1 = 0.0;
  double x2 = 0.0;
  Zygosity zygosity = Zygosity::MZ;
  Sex sex = Sex::F;
};

/// Bivariate twin-pair observations with zygosity and sex labels.
struct TwinDataset {
  std::vector<TwinRow> rows;

  std::size_t size() const { return rows.size(); }
  std::size_t n_mz() const {
    std::size_t n = 0;
    for (const auto& r : rows)
      if (r.zygosity == Zygosity::MZ) ++n;
    return n;
  }
  std::size_t n_dz() const { return rows.size() - n_mz(); }
};

struct ModelSpec {
  int n_components = 3;
};

struct NllResult {
  double nll = 0.0;
  std::vector<double> gradient;  // unconstrained scale, length 5m
  bool valid = true;
};

// ---------------------------------------------------------------------------
// Densities
// ---------------------------------------------------------------------------

/// Log density of the bivariate normal with common mean and SD per
/// coordinate and equicorrelation rho:
///   Sigma = sigma^2 * [[1, rho], [rho, 1]].
inline double bivariate_normal_logpdf(double x1, double x2, double mu,
                                      double sigma, double rho) {
  if (!(sigma > 0.0)) throw DomainError("sigma must be positive");
  if (!(std::abs(rho) < 1.0)) throw DomainError("|rho| must be < 1");
  const double z1 = (x1 - mu) / sigma;
  const double z2 = (x2 - mu) / sigma;
  const double d = 1.0 - rho * rho;
  const double q = z1 * z1 - 2.0 * rho * z1 * z2 + z2 * z2;
  constexpr double log_2pi = 1.8378770664093454836;
  return -log_2pi - 2.0 * std::log(sigma) - 0.5 * std::log(d) - q / (2.0 * d);
}

namespace detail {

// Per-(component, zygosity) constants hoisted out of the likelihood loop.
struct ComponentTerms {
  double mu = 0.0;
  double inv_sigma = 0.0;
  double rho = 0.0;
  double log_const = -kInf;  // log p_k + normalization; -inf if degenerate
  double inv_1p = 0.0;       // 1 / (1 + rho)
  double inv_1m = 0.0;       // 1 / (1 - rho)
  bool usable = false;
};

inline ComponentTerms make_terms(double p, double mu, double sigma, double rho) {
  ComponentTerms t;
  if (!(sigma > 0.0) || !std::isfinite(mu) || !std::isfinite(sigma) ||
      !(p > 0.0) || !(std::abs(rho) < 1.0))
    return t;  // this component contributes zero density
  constexpr double log_2pi = 1.8378770664093454836;
  t.mu = mu;
  t.inv_sigma = 1.0 / sigma;
  t.rho = rho;
  t.log_const = std::log(p) - log_2pi - 2.0 * std::log(sigma) -
                0.5 * std::log1p(-rho * rho);
  t.inv_1p = 1.0 / (1.0 + rho);
  t.inv_1m = 1.0 / (1.0 - rho);
  t.usable = std::isfinite(t.log_const);
  return t;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Negative log-likelihood and its gradient
// ---------------------------------------------------------------------------

/// Mixture NLL over the dataset together with its exact gradient with
/// respect to the unconstrained coordinates.
///
/// Each row contributes -log sum_k p_k N2(x; mu_k + C*beta, Sigma_k) where
/// C is 1 for male pairs and Sigma_k uses the zygosity-specific rho. The
/// inner sum is evaluated with log-sum-exp; the gradient chains the
/// component-wise partials through the mean/SD/weight transforms.
///
/// Any |rho| >= 1 (or other covariance degeneracy) yields nll = +inf,
/// valid = false and a zero gradient, so callers reject rather than crash.
inline NllResult nll(const UnconstrainedParams& u, const TwinDataset& data,
                     const ModelSpec& spec) {
  if (data.rows.empty()) throw EmptyDataset("dataset has no rows");
  const int m = spec.n_components;
  if (u.n_components() != m)
    throw LengthMismatch("parameter/model component count mismatch");

  const std::size_t dim = u.size();
  NllResult out;
  out.gradient.assign(dim, 0.0);

  auto invalid = [&]() {
    out.nll = kInf;
    out.valid = false;
    std::fill(out.gradient.begin(), out.gradient.end(), 0.0);
    return out;
  };

  for (int k = 0; k < m; ++k)
    if (!(std::abs(u.rho_mz[k]) < 1.0) || !(std::abs(u.rho_dz[k]) < 1.0))
      return invalid();

  const NaturalParams nat = to_natural(u);
  std::vector<double> ealpha(m);
  for (int k = 0; k < m; ++k) ealpha[k] = std::exp(u.alpha[k]);

  // per-(component, zygosity) constants; index [zyg][k] with MZ = 0
  std::vector<detail::ComponentTerms> terms(2 * m);
  bool any_usable = false;
  for (int k = 0; k < m; ++k) {
    terms[k] = detail::make_terms(nat.p[k], nat.mu[k], nat.sigma[k], nat.rho_mz[k]);
    terms[m + k] = detail::make_terms(nat.p[k], nat.mu[k], nat.sigma[k], nat.rho_dz[k]);
    any_usable = any_usable || terms[k].usable || terms[m + k].usable;
  }
  if (!any_usable || !std::isfinite(nat.beta)) return invalid();

  const ParamLayout lay = u.layout();
  const std::size_t at_ls = lay.block_begin(ParamBlock::LogSigma);
  const std::size_t at_rmz = lay.block_begin(ParamBlock::RhoMz);
  const std::size_t at_rdz = lay.block_begin(ParamBlock::RhoDz);
  const std::size_t at_beta = lay.block_begin(ParamBlock::Beta);
  const std::size_t at_t = lay.block_begin(ParamBlock::PreP);

  std::vector<double> lk(m), ek(m), z1s(m), z2s(m);
  double total = 0.0;

  for (const TwinRow& row : data.rows) {
    const bool mz = row.zygosity == Zygosity::MZ;
    const detail::ComponentTerms* t = &terms[mz ? 0 : m];
    const double shift = row.sex == Sex::M ? nat.beta : 0.0;
    const double c = row.sex == Sex::M ? 1.0 : 0.0;
    double lmax = -kInf;
    for (int k = 0; k < m; ++k) {
      if (!t[k].usable) {
        lk[k] = -kInf;
        continue;
      }
      const double z1 = (row.x1 - t[k].mu - shift) * t[k].inv_sigma;
      const double z2 = (row.x2 - t[k].mu - shift) * t[k].inv_sigma;
      z1s[k] = z1;
      z2s[k] = z2;
      const double qp = (z1 + z2) * (z1 + z2);
      const double qm = (z1 - z2) * (z1 - z2);
      lk[k] = t[k].log_const - 0.25 * (qp * t[k].inv_1p + qm * t[k].inv_1m);
      lmax = std::max(lmax, lk[k]);
    }
    if (!std::isfinite(lmax)) return invalid();
    double sum = 0.0;
    for (int k = 0; k < m; ++k) {
      ek[k] = lk[k] == -kInf ? 0.0 : std::exp(lk[k] - lmax);
      sum += ek[k];
    }
    total -= lmax + std::log(sum);

    const double inv_sum = 1.0 / sum;
    for (int k = 0; k < m; ++k) {
      const double w = ek[k] * inv_sum;  // responsibility
      if (w == 0.0) continue;
      const double rho = t[k].rho;
      const double d = 1.0 - rho * rho;
      const double z1 = z1s[k], z2 = z2s[k];
      const double q = z1 * z1 - 2.0 * rho * z1 * z2 + z2 * z2;
      const double dg_dm = (z1 + z2) * t[k].inv_sigma * t[k].inv_1p;
      const double dg_dls = -2.0 + q / d;
      const double dg_dr = (rho + z1 * z2 - rho * q / d) / d;
      // d mu_k / d alpha_j = exp(alpha_j) for j <= k
      const double wm = w * dg_dm;
      for (int j = 0; j <= k; ++j) out.gradient[j] -= wm * ealpha[j];
      out.gradient[at_ls + k] -= w * dg_dls;
      out.gradient[(mz ? at_rmz : at_rdz) + k] -= w * dg_dr;
      out.gradient[at_beta] -= wm * c;
    }
    for (int j = 0; j + 1 < m; ++j)
      out.gradient[at_t + j] -= ek[j] * inv_sum - nat.p[j];
  }

  if (!std::isfinite(total)) return invalid();
  for (double g : out.gradient)
    if (!std::isfinite(g)) return invalid();
  out.nll = total;
  out.valid = true;
  return out;
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

struct SimLayout {
  int n_total = 1200;
  double frac_mz = 1.0 / 3.0;
  double frac_male = 0.5;
};

/// Simulate a twin dataset from natural parameters.
///
/// Group sizes are deterministic (rounded, crossed proportionally over
/// zygosity x sex); only the component labels and trait values are random.
/// The same seed always produces the same dataset.
inline TwinDataset simulate(const NaturalParams& params, const SimLayout& layout,
                            std::uint64_t seed) {
  if (layout.n_total <= 0) throw DomainError("n_total must be positive");
  if (!(layout.frac_mz > 0.0 && layout.frac_mz < 1.0))
    throw DomainError("frac_mz must lie in (0,1)");
  if (!(layout.frac_male > 0.0 && layout.frac_male < 1.0))
    throw DomainError("frac_male must lie in (0,1)");
  params.validate(/*allow_zero_weights=*/true);

  const long n_mz = std::lround(layout.n_total * layout.frac_mz);
  const long n_dz = layout.n_total - n_mz;
  const long n_mz_m = std::lround(n_mz * layout.frac_male);
  const long n_dz_m = std::lround(n_dz * layout.frac_male);

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> norm(0.0, 1.0);
  const int m = params.n_components();

  TwinDataset data;
  data.rows.reserve(static_cast<std::size_t>(layout.n_total));

  auto emit_block = [&](long count, Zygosity zyg, Sex sex) {
    for (long i = 0; i < count; ++i) {
      double uval = unif(rng);
      int k = 0;
      double acc = params.p[0];
      while (k + 1 < m && uval > acc) acc += params.p[++k];
      const double rho = zyg == Zygosity::MZ ? params.rho_mz[k] : params.rho_dz[k];
      const double mean = params.mu[k] + (sex == Sex::M ? params.beta : 0.0);
      const double z1 = norm(rng);
      const double z2 = norm(rng);
      TwinRow row;
      row.x1 = mean + params.sigma[k] * z1;
      row.x2 = mean + params.sigma[k] * (rho * z1 + std::sqrt(1.0 - rho * rho) * z2);
      row.zygosity = zyg;
      row.sex = sex;
      data.rows.push_back(row);
    }
  };

  emit_block(n_mz - n_mz_m, Zygosity::MZ, Sex::F);
  emit_block(n_mz_m, Zygosity::MZ, Sex::M);
  emit_block(n_dz - n_dz_m, Zygosity::DZ, Sex::F);
  emit_block(n_dz_m, Zygosity::DZ, Sex::M);
  return data;
}

}  // namespace mixprobe
