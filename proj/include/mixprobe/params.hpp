#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "mixprobe/errors.hpp"

namespace mixprobe {

constexpr double kInf = std::numeric_limits<double>::infinity();

// ---------------------------------------------------------------------------
// Coordinate layout
//
// The flat unconstrained vector for an m-component model is, in order:
//   (alpha_1..alpha_m, log_sigma_1..m, rho_mz_1..m, rho_dz_1..m, beta,
//    pre_p_1..pre_p_{m-1})
// giving 5m coordinates (15 for m = 3).
// ---------------------------------------------------------------------------

enum class ParamBlock { Alpha, LogSigma, RhoMz, RhoDz, Beta, PreP };

struct ParamLayout {
  int m = 3;

  std::size_t size() const { return static_cast<std::size_t>(5 * m); }

  std::size_t block_begin(ParamBlock b) const {
    switch (b) {
      case ParamBlock::Alpha: return 0;
      case ParamBlock::LogSigma: return static_cast<std::size_t>(m);
      case ParamBlock::RhoMz: return static_cast<std::size_t>(2 * m);
      case ParamBlock::RhoDz: return static_cast<std::size_t>(3 * m);
      case ParamBlock::Beta: return static_cast<std::size_t>(4 * m);
      case ParamBlock::PreP: return static_cast<std::size_t>(4 * m + 1);
    }
    return 0;
  }

  std::size_t block_size(ParamBlock b) const {
    switch (b) {
      case ParamBlock::Beta: return 1;
      case ParamBlock::PreP: return static_cast<std::size_t>(m - 1);
      default: return static_cast<std::size_t>(m);
    }
  }

  /// Human-readable name of coordinate i on the unconstrained scale.
  std::string coord_name(std::size_t i) const {
    const auto mm = static_cast<std::size_t>(m);
    if (i < mm) return "alpha" + std::to_string(i + 1);
    if (i < 2 * mm) return "log_sigma" + std::to_string(i - mm + 1);
    if (i < 3 * mm) return "rho_mz" + std::to_string(i - 2 * mm + 1);
    if (i < 4 * mm) return "rho_dz" + std::to_string(i - 3 * mm + 1);
    if (i == 4 * mm) return "beta";
    return "pre_p" + std::to_string(i - 4 * mm);
  }
};

// ---------------------------------------------------------------------------
// Parameter vectors
// ---------------------------------------------------------------------------

/// Parameters on the scale the sampler and optimizer operate on.
/// Means are generated as cumulative sums of exponentials (which orders
/// them), sigmas are stored as logs, correlations are raw, and the mixture
/// weights come from the two-generator softmax in to_natural().
struct UnconstrainedParams {
  std::vector<double> alpha;
  std::vector<double> log_sigma;
  std::vector<double> rho_mz;
  std::vector<double> rho_dz;
  double beta = 0.0;
  std::vector<double> pre_p;

  UnconstrainedParams() = default;
  explicit UnconstrainedParams(int m)
      : alpha(m, 0.0),
        log_sigma(m, 0.0),
        rho_mz(m, 0.0),
        rho_dz(m, 0.0),
        beta(0.0),
        pre_p(m > 0 ? m - 1 : 0, 0.0) {}

  int n_components() const { return static_cast<int>(alpha.size()); }
  ParamLayout layout() const { return ParamLayout{n_components()}; }
  std::size_t size() const { return layout().size(); }

  std::vector<double> flat() const {
    std::vector<double> v;
    v.reserve(size());
    v.insert(v.end(), alpha.begin(), alpha.end());
    v.insert(v.end(), log_sigma.begin(), log_sigma.end());
    v.insert(v.end(), rho_mz.begin(), rho_mz.end());
    v.insert(v.end(), rho_dz.begin(), rho_dz.end());
    v.push_back(beta);
    v.insert(v.end(), pre_p.begin(), pre_p.end());
    return v;
  }

  static UnconstrainedParams from_flat(const std::vector<double>& v) {
    if (v.size() % 5 != 0 || v.empty())
      throw LengthMismatch("flat parameter vector length must be 5m, got " +
                           std::to_string(v.size()));
    const int m = static_cast<int>(v.size() / 5);
    UnconstrainedParams u(m);
    std::size_t at = 0;
    for (int k = 0; k < m; ++k) u.alpha[k] = v[at++];
    for (int k = 0; k < m; ++k) u.log_sigma[k] = v[at++];
    for (int k = 0; k < m; ++k) u.rho_mz[k] = v[at++];
    for (int k = 0; k < m; ++k) u.rho_dz[k] = v[at++];
    u.beta = v[at++];
    for (int k = 0; k + 1 < m; ++k) u.pre_p[k] = v[at++];
    return u;
  }

  bool all_finite() const {
    for (double x : flat())
      if (!std::isfinite(x)) return false;
    return true;
  }
};

/// Interpretable mixture parameters: ordered means, positive SDs,
/// correlations in (-1,1), and simplex weights.
struct NaturalParams {
  std::vector<double> mu;
  std::vector<double> sigma;
  std::vector<double> rho_mz;
  std::vector<double> rho_dz;
  double beta = 0.0;
  std::vector<double> p;

  NaturalParams() = default;
  explicit NaturalParams(int m)
      : mu(m, 1.0),
        sigma(m, 1.0),
        rho_mz(m, 0.0),
        rho_dz(m, 0.0),
        beta(0.0),
        p(m, 1.0 / m) {}

  int n_components() const { return static_cast<int>(mu.size()); }

  /// Strict validity: what from_natural() requires. `allow_zero_weights`
  /// relaxes p_k > 0 to p_k >= 0 (a degenerate mixture is still simulable).
  void validate(bool allow_zero_weights = false) const {
    const int m = n_components();
    if (m < 1) throw DomainError("model needs at least one component");
    double psum = 0.0;
    for (int k = 0; k < m; ++k) {
      if (!std::isfinite(mu[k])) throw DomainError("non-finite mean");
      if (!(sigma[k] > 0.0) || !std::isfinite(sigma[k]))
        throw DomainError("sigma must be positive and finite");
      if (!(std::abs(rho_mz[k]) < 1.0) || !(std::abs(rho_dz[k]) < 1.0))
        throw DomainError("|rho| must be < 1");
      if (allow_zero_weights ? !(p[k] >= 0.0) : !(p[k] > 0.0))
        throw DomainError("mixture weights must be positive");
      psum += p[k];
    }
    if (!std::isfinite(beta)) throw DomainError("non-finite beta");
    if (std::abs(psum - 1.0) > 1e-9)
      throw DomainError("mixture weights must sum to 1");
  }
};

/// Natural-scale names for an m-component model: mu, sigma, rho_mz,
/// rho_dz, beta and the first m-1 weights. With `all_weights` the full
/// weight vector is included (the layout of the summary tables).
inline std::vector<std::string> natural_names(int m, bool all_weights = false) {
  std::vector<std::string> names;
  for (int k = 1; k <= m; ++k) names.push_back("mu" + std::to_string(k));
  for (int k = 1; k <= m; ++k) names.push_back("sigma" + std::to_string(k));
  for (int k = 1; k <= m; ++k) names.push_back("rho_mz" + std::to_string(k));
  for (int k = 1; k <= m; ++k) names.push_back("rho_dz" + std::to_string(k));
  names.push_back("beta");
  for (int k = 1; k <= (all_weights ? m : m - 1); ++k)
    names.push_back("p" + std::to_string(k));
  return names;
}

/// Flat natural-scale vector in the same order as natural_names().
inline std::vector<double> natural_values(const NaturalParams& n,
                                          bool all_weights = false) {
  std::vector<double> v;
  v.insert(v.end(), n.mu.begin(), n.mu.end());
  v.insert(v.end(), n.sigma.begin(), n.sigma.end());
  v.insert(v.end(), n.rho_mz.begin(), n.rho_mz.end());
  v.insert(v.end(), n.rho_dz.begin(), n.rho_dz.end());
  v.push_back(n.beta);
  const int last = all_weights ? n.n_components() : n.n_components() - 1;
  for (int k = 0; k < last; ++k) v.push_back(n.p[k]);
  return v;
}

// ---------------------------------------------------------------------------
// Transforms
// ---------------------------------------------------------------------------

inline NaturalParams to_natural(const UnconstrainedParams& u) {
  const int m = u.n_components();
  NaturalParams n(m);
  double acc = 0.0;
  for (int k = 0; k < m; ++k) {
    acc += std::exp(u.alpha[k]);
    n.mu[k] = acc;
    n.sigma[k] = std::exp(u.log_sigma[k]);
    n.rho_mz[k] = u.rho_mz[k];
    n.rho_dz[k] = u.rho_dz[k];
  }
  n.beta = u.beta;
  // Reference-category softmax: the last weight has implicit generator 0.
  // Shift by the max generator so the exponentials cannot overflow.
  double tmax = 0.0;
  for (double t : u.pre_p) tmax = std::max(tmax, t);
  double denom = std::exp(-tmax);
  for (double t : u.pre_p) denom += std::exp(t - tmax);
  for (int k = 0; k + 1 < m; ++k) n.p[k] = std::exp(u.pre_p[k] - tmax) / denom;
  n.p[m - 1] = std::exp(-tmax) / denom;
  return n;
}

inline UnconstrainedParams from_natural(const NaturalParams& n) {
  n.validate();
  const int m = n.n_components();
  if (!(n.mu[0] > 0.0)) throw DomainError("mu_1 must be positive");
  for (int k = 1; k < m; ++k)
    if (!(n.mu[k] > n.mu[k - 1]))
      throw DomainError("means must be strictly increasing");
  UnconstrainedParams u(m);
  u.alpha[0] = std::log(n.mu[0]);
  for (int k = 1; k < m; ++k) u.alpha[k] = std::log(n.mu[k] - n.mu[k - 1]);
  for (int k = 0; k < m; ++k) {
    u.log_sigma[k] = std::log(n.sigma[k]);
    u.rho_mz[k] = n.rho_mz[k];
    u.rho_dz[k] = n.rho_dz[k];
  }
  u.beta = n.beta;
  for (int k = 0; k + 1 < m; ++k) u.pre_p[k] = std::log(n.p[k] / n.p[m - 1]);
  return u;
}

// ---------------------------------------------------------------------------
// Fixing masks
// ---------------------------------------------------------------------------

/// Marks coordinates held at fixed values; the remaining coordinates form
/// the free subspace the optimizer and sampler actually move in.
struct FixedMask {
  std::vector<bool> fixed;    // length 5m
  std::vector<double> value;  // length 5m; meaningful where fixed

  FixedMask() = default;
  static FixedMask none(int m) {
    FixedMask f;
    f.fixed.assign(static_cast<std::size_t>(5 * m), false);
    f.value.assign(static_cast<std::size_t>(5 * m), 0.0);
    return f;
  }

  std::size_t size() const { return fixed.size(); }
  bool empty_or_none() const {
    return std::none_of(fixed.begin(), fixed.end(), [](bool b) { return b; });
  }

  std::size_t n_free() const {
    std::size_t n = 0;
    for (bool b : fixed)
      if (!b) ++n;
    return n;
  }

  void validate() const {
    if (fixed.size() != value.size())
      throw LengthMismatch("mask flag/value length mismatch");
    if (n_free() < 1) throw DomainError("mask must leave at least one free coordinate");
  }

  void fix_index(std::size_t i, double v) {
    fixed.at(i) = true;
    value.at(i) = v;
  }

  /// Fix a whole block (e.g. all alphas) at the values in `ref`.
  void fix_block(ParamBlock b, const UnconstrainedParams& ref) {
    const ParamLayout lay = ref.layout();
    if (fixed.size() != lay.size()) throw LengthMismatch("mask/model size mismatch");
    const std::vector<double> flat = ref.flat();
    const std::size_t beg = lay.block_begin(b);
    for (std::size_t i = beg; i < beg + lay.block_size(b); ++i) fix_index(i, flat[i]);
  }
};

/// Drop fixed coordinates, keeping the free ones in canonical order.
inline std::vector<double> apply_mask(const UnconstrainedParams& full,
                                      const FixedMask& m) {
  m.validate();
  const std::vector<double> flat = full.flat();
  if (flat.size() != m.size()) throw LengthMismatch("mask/parameter size mismatch");
  std::vector<double> free;
  free.reserve(m.n_free());
  for (std::size_t i = 0; i < flat.size(); ++i)
    if (!m.fixed[i]) free.push_back(flat[i]);
  return free;
}

/// Inverse of apply_mask: fill fixed coordinates from the mask.
inline UnconstrainedParams embed(const std::vector<double>& free,
                                 const FixedMask& m) {
  m.validate();
  if (free.size() != m.n_free())
    throw LengthMismatch("free vector length " + std::to_string(free.size()) +
                         " does not match mask free dimension " +
                         std::to_string(m.n_free()));
  std::vector<double> flat(m.size());
  std::size_t at = 0;
  for (std::size_t i = 0; i < m.size(); ++i)
    flat[i] = m.fixed[i] ? m.value[i] : free[at++];
  return UnconstrainedParams::from_flat(flat);
}

// ---------------------------------------------------------------------------
// Box bounds
// ---------------------------------------------------------------------------

/// Independent per-coordinate bounds on the unconstrained scale.
/// +-infinity means unbounded on that side.
struct BoxBounds {
  std::vector<double> lower;
  std::vector<double> upper;

  BoxBounds() = default;
  BoxBounds(std::vector<double> lo, std::vector<double> hi)
      : lower(std::move(lo)), upper(std::move(hi)) {}

  std::size_t size() const { return lower.size(); }

  static BoxBounds unbounded(std::size_t n) {
    return {std::vector<double>(n, -kInf), std::vector<double>(n, kInf)};
  }

  /// The box used by the bounded sampling strategy: +-5 on alpha,
  /// log_sigma, beta and the weight generators, +-1 on the correlations.
  static BoxBounds sampler_default(int m) {
    BoxBounds b = unbounded(static_cast<std::size_t>(5 * m));
    const ParamLayout lay{m};
    for (std::size_t i = 0; i < b.size(); ++i) {
      const bool is_rho = i >= lay.block_begin(ParamBlock::RhoMz) &&
                          i < lay.block_begin(ParamBlock::Beta);
      b.lower[i] = is_rho ? -1.0 : -5.0;
      b.upper[i] = is_rho ? 1.0 : 5.0;
    }
    return b;
  }

  /// Default optimizer box: same shape, widened to +-10 on the coordinates
  /// whose role is unbounded, so exp() cannot overflow during line search.
  static BoxBounds optimizer_default(int m) {
    BoxBounds b = sampler_default(m);
    for (std::size_t i = 0; i < b.size(); ++i) {
      if (b.lower[i] == -5.0) b.lower[i] = -10.0;
      if (b.upper[i] == 5.0) b.upper[i] = 10.0;
    }
    return b;
  }

  void validate() const {
    if (lower.size() != upper.size()) throw LengthMismatch("bounds length mismatch");
    for (std::size_t i = 0; i < lower.size(); ++i) {
      if (std::isnan(lower[i]) || std::isnan(upper[i]))
        throw DomainError("bounds must not be NaN");
      if (std::isfinite(lower[i]) && std::isfinite(upper[i]) &&
          !(lower[i] < upper[i]))
        throw DomainError("lower bound must be below upper bound");
    }
  }

  bool contains(const std::vector<double>& x) const {
    if (x.size() != size()) return false;
    for (std::size_t i = 0; i < x.size(); ++i)
      if (x[i] < lower[i] || x[i] > upper[i]) return false;
    return true;
  }

  /// Keep only the coordinates that are free under `m`.
  BoxBounds restrict_to_free(const FixedMask& m) const {
    if (m.size() != size()) throw LengthMismatch("mask/bounds size mismatch");
    BoxBounds out;
    for (std::size_t i = 0; i < size(); ++i) {
      if (m.fixed[i]) continue;
      out.lower.push_back(lower[i]);
      out.upper.push_back(upper[i]);
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// Bounded <-> unbounded reparameterization (logistic on bounded coordinates)
// ---------------------------------------------------------------------------

namespace detail {

inline double logistic(double y) {
  if (y >= 0.0) return 1.0 / (1.0 + std::exp(-y));
  const double e = std::exp(y);
  return e / (1.0 + e);
}

// log(1 + exp(t)) without overflow
inline double softplus(double t) {
  if (t > 30.0) return t;
  return std::log1p(std::exp(t));
}

}  // namespace detail

struct BoundTransformResult {
  std::vector<double> constrained;
  double log_jacobian = 0.0;
};

/// Map an unbounded vector into the open box via the scaled logistic,
/// accumulating the log-Jacobian of the map. Unbounded coordinates pass
/// through untouched; one-sided bounds use the usual exp shift.
inline BoundTransformResult bound_transform(const std::vector<double>& y,
                                            const BoxBounds& b) {
  b.validate();
  if (y.size() != b.size()) throw LengthMismatch("bound_transform size mismatch");
  BoundTransformResult r;
  r.constrained.resize(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double lo = b.lower[i], hi = b.upper[i];
    const bool lb = std::isfinite(lo), ub = std::isfinite(hi);
    if (lb && ub) {
      double s = detail::logistic(y[i]);
      // keep the image strictly inside the box even when logistic saturates
      constexpr double eps = std::numeric_limits<double>::epsilon();
      s = std::clamp(s, eps, 1.0 - eps);
      r.constrained[i] = lo + (hi - lo) * s;
      r.log_jacobian += std::log(hi - lo) - detail::softplus(-y[i]) -
                        detail::softplus(y[i]);
    } else if (lb) {
      r.constrained[i] = lo + std::exp(y[i]);
      r.log_jacobian += y[i];
    } else if (ub) {
      r.constrained[i] = hi - std::exp(y[i]);
      r.log_jacobian += y[i];
    } else {
      r.constrained[i] = y[i];
    }
  }
  return r;
}

/// Per-coordinate derivatives of the bound transform, for chain rules:
/// dx/dy and d(log_jacobian)/dy.
inline void bound_transform_derivs(const std::vector<double>& y,
                                   const BoxBounds& b,
                                   std::vector<double>& dx_dy,
                                   std::vector<double>& dlogjac_dy) {
  if (y.size() != b.size()) throw LengthMismatch("bound_transform size mismatch");
  dx_dy.assign(y.size(), 1.0);
  dlogjac_dy.assign(y.size(), 0.0);
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double lo = b.lower[i], hi = b.upper[i];
    const bool lb = std::isfinite(lo), ub = std::isfinite(hi);
    if (lb && ub) {
      const double s = detail::logistic(y[i]);
      dx_dy[i] = (hi - lo) * s * (1.0 - s);
      dlogjac_dy[i] = 1.0 - 2.0 * s;
    } else if (lb) {
      dx_dy[i] = std::exp(y[i]);
      dlogjac_dy[i] = 1.0;
    } else if (ub) {
      dx_dy[i] = -std::exp(y[i]);
      dlogjac_dy[i] = 1.0;
    }
  }
}

/// Inverse of bound_transform on the open box (logit / log shifts).
inline std::vector<double> bound_transform_inverse(const std::vector<double>& x,
                                                   const BoxBounds& b) {
  if (x.size() != b.size()) throw LengthMismatch("bound_transform size mismatch");
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double lo = b.lower[i], hi = b.upper[i];
    const bool lb = std::isfinite(lo), ub = std::isfinite(hi);
    if (lb && ub) {
      double s = (x[i] - lo) / (hi - lo);
      s = std::clamp(s, 1e-12, 1.0 - 1e-12);
      y[i] = std::log(s) - std::log1p(-s);
    } else if (lb) {
      y[i] = std::log(std::max(x[i] - lo, 1e-300));
    } else if (ub) {
      y[i] = std::log(std::max(hi - x[i], 1e-300));
    } else {
      y[i] = x[i];
    }
  }
  return y;
}

}  // namespace mixprobe
