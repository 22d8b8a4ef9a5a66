#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mixprobe/errors.hpp"
#include "mixprobe/params.hpp"
#include "mixprobe/target.hpp"
#include "mixprobe/twin_model.hpp"

namespace mixprobe {

enum class Termination { GradientTol, StepTol, MaxIter, InvalidStart, LineSearchFail };

inline const char* to_string(Termination t) {
  switch (t) {
    case Termination::GradientTol: return "GradientTol";
    case Termination::StepTol: return "StepTol";
    case Termination::MaxIter: return "MaxIter";
    case Termination::InvalidStart: return "InvalidStart";
    case Termination::LineSearchFail: return "LineSearchFail";
  }
  return "?";
}

struct OptimConfig {
  int max_iterations = 500;
  double gradient_tolerance = 1e-8;  // sup-norm of the projected gradient
  double step_tolerance = 1e-10;     // sup-norm of the accepted step
  int history_size = 10;             // limited-memory curvature pairs
  BoxBounds bounds;                  // empty => optimizer_default(m)
};

struct OptimResult {
  UnconstrainedParams argmin;
  double nll = kInf;
  bool converged = false;
  int iterations = 0;
  Termination termination = Termination::MaxIter;
};

namespace lbfgs_detail {

struct Pair {
  std::vector<double> s, y;
  double rho;  // 1 / (y.s)
};

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double r = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) r += a[i] * b[i];
  return r;
}

inline double sup_norm(const std::vector<double>& v) {
  double r = 0.0;
  for (double x : v) r = std::max(r, std::abs(x));
  return r;
}

// Two-loop recursion: d = -H g with H built from the stored pairs.
inline std::vector<double> two_loop(const std::deque<Pair>& pairs,
                                    const std::vector<double>& g) {
  std::vector<double> q = g;
  std::vector<double> alpha(pairs.size());
  for (std::size_t i = pairs.size(); i-- > 0;) {
    alpha[i] = pairs[i].rho * dot(pairs[i].s, q);
    for (std::size_t j = 0; j < q.size(); ++j) q[j] -= alpha[i] * pairs[i].y[j];
  }
  double gamma = 1.0;
  if (!pairs.empty()) {
    const Pair& last = pairs.back();
    gamma = dot(last.s, last.y) / std::max(dot(last.y, last.y), 1e-300);
  }
  for (double& x : q) x *= gamma;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const double beta = pairs[i].rho * dot(pairs[i].y, q);
    for (std::size_t j = 0; j < q.size(); ++j)
      q[j] += (alpha[i] - beta) * pairs[i].s[j];
  }
  for (double& x : q) x = -x;
  return q;
}

}  // namespace lbfgs_detail

struct GenericOptimResult {
  std::vector<double> x;
  double f = kInf;
  std::vector<double> gradient;
  bool converged = false;
  int iterations = 0;
  Termination termination = Termination::MaxIter;
};

/// Box-constrained limited-memory quasi-Newton minimizer.
///
/// The search direction comes from the L-BFGS two-loop recursion with
/// bound-active coordinates zeroed; steps are capped at the first bound
/// crossing and accepted under strong Wolfe conditions (with an Armijo
/// backtracking fallback). Convergence is declared on the sup-norm of the
/// projected gradient or on step stagnation.
///
/// F must be callable as `double f(const std::vector<double>& x,
/// std::vector<double>& grad)` and may return +inf for invalid points.
template <class F>
GenericOptimResult minimize_box(F&& f, std::vector<double> x0,
                                const BoxBounds& bounds, const OptimConfig& cfg) {
  using lbfgs_detail::dot;
  using lbfgs_detail::sup_norm;

  bounds.validate();
  const std::size_t n = x0.size();
  if (bounds.size() != n) throw LengthMismatch("bounds/start size mismatch");

  auto project = [&](std::vector<double>& x) {
    for (std::size_t i = 0; i < n; ++i)
      x[i] = std::clamp(x[i], bounds.lower[i], bounds.upper[i]);
  };
  project(x0);

  GenericOptimResult out;
  std::vector<double> g(n);
  double fx = f(x0, g);

  // geometric backoff toward the box center when the start is invalid
  if (!std::isfinite(fx)) {
    std::vector<double> center(n);
    for (std::size_t i = 0; i < n; ++i) {
      const bool lb = std::isfinite(bounds.lower[i]), ub = std::isfinite(bounds.upper[i]);
      if (lb && ub) center[i] = 0.5 * (bounds.lower[i] + bounds.upper[i]);
      else if (lb) center[i] = bounds.lower[i] + 1.0;
      else if (ub) center[i] = bounds.upper[i] - 1.0;
      else center[i] = 0.0;
    }
    double shrink = 1.0;
    for (int attempt = 0; attempt < 10 && !std::isfinite(fx); ++attempt) {
      shrink *= 0.5;
      std::vector<double> trial(n);
      for (std::size_t i = 0; i < n; ++i)
        trial[i] = center[i] + shrink * (x0[i] - center[i]);
      project(trial);
      fx = f(trial, g);
      if (std::isfinite(fx)) x0 = std::move(trial);
    }
    if (!std::isfinite(fx)) {
      out.x = x0;
      out.f = kInf;
      out.gradient.assign(n, 0.0);
      out.termination = Termination::InvalidStart;
      return out;
    }
  }

  std::vector<double> x = x0;
  std::deque<lbfgs_detail::Pair> pairs;

  auto projected_gradient = [&](const std::vector<double>& xx,
                                const std::vector<double>& gg) {
    std::vector<double> pg = gg;
    for (std::size_t i = 0; i < n; ++i) {
      if (xx[i] <= bounds.lower[i] && gg[i] > 0.0) pg[i] = 0.0;
      if (xx[i] >= bounds.upper[i] && gg[i] < 0.0) pg[i] = 0.0;
    }
    return pg;
  };

  const double c1 = 1e-4, c2 = 0.9;
  int iter = 0;
  for (; iter < cfg.max_iterations; ++iter) {
    std::vector<double> pg = projected_gradient(x, g);
    if (sup_norm(pg) <= cfg.gradient_tolerance) {
      out.termination = Termination::GradientTol;
      out.converged = true;
      break;
    }

    std::vector<double> d = lbfgs_detail::two_loop(pairs, g);
    for (std::size_t i = 0; i < n; ++i) {
      const bool active_lo = x[i] <= bounds.lower[i] && g[i] > 0.0;
      const bool active_hi = x[i] >= bounds.upper[i] && g[i] < 0.0;
      if (active_lo || active_hi) d[i] = 0.0;
    }
    double gd = dot(g, d);
    if (!(gd < 0.0)) {  // not a descent direction; fall back to steepest feasible
      for (std::size_t i = 0; i < n; ++i) d[i] = -pg[i];
      gd = dot(g, d);
      if (!(gd < 0.0)) {
        out.termination = Termination::GradientTol;
        out.converged = true;
        break;
      }
    }

    // longest step that stays in the box
    double a_bound = kInf;
    for (std::size_t i = 0; i < n; ++i) {
      if (d[i] > 0.0 && std::isfinite(bounds.upper[i]))
        a_bound = std::min(a_bound, (bounds.upper[i] - x[i]) / d[i]);
      else if (d[i] < 0.0 && std::isfinite(bounds.lower[i]))
        a_bound = std::min(a_bound, (bounds.lower[i] - x[i]) / d[i]);
    }

    auto eval_at = [&](double a, std::vector<double>& xt, std::vector<double>& gt) {
      xt.resize(n);
      for (std::size_t i = 0; i < n; ++i) xt[i] = x[i] + a * d[i];
      if (a >= a_bound) {  // snap exactly onto the limiting bound(s)
        for (std::size_t i = 0; i < n; ++i)
          xt[i] = std::clamp(xt[i], bounds.lower[i], bounds.upper[i]);
      }
      return f(xt, gt);
    };

    // strong-Wolfe search on [0, a_bound], bracketing then bisecting
    double lo = 0.0, hi = std::min(a_bound, 1e8);
    double flo = fx;
    double a = std::min(1.0, hi);
    bool accepted = false;
    double fa = kInf, ga_d = 0.0;
    std::vector<double> xt, gt;
    bool bracketed = false;
    for (int ls = 0; ls < 50; ++ls) {
      fa = eval_at(a, xt, gt);
      ga_d = std::isfinite(fa) ? dot(gt, d) : 0.0;
      const bool armijo = std::isfinite(fa) && fa <= fx + c1 * a * gd;
      if (armijo && std::abs(ga_d) <= c2 * std::abs(gd)) {
        accepted = true;  // strong Wolfe pair
        break;
      }
      if (!armijo || fa >= flo) {
        hi = a;  // overshoot: shrink toward lo
        bracketed = true;
      } else if (ga_d < 0.0) {
        lo = a;  // still descending: extend
        flo = fa;
        if (!bracketed && a < std::min(a_bound, 1e8)) {
          const double next = std::min(2.0 * a, std::min(a_bound, 1e8));
          if (next <= a) {  // pinned at bound with Armijo satisfied
            accepted = true;
            break;
          }
          a = next;
          continue;
        }
      } else {
        hi = a;  // positive slope: minimum behind us
        bracketed = true;
      }
      if (hi - lo < 1e-16 * std::max(1.0, std::abs(lo))) break;
      a = 0.5 * (lo + hi);
    }
    if (!accepted && std::isfinite(fa) && fa <= fx + c1 * a * gd)
      accepted = true;  // Armijo fallback
    if (!accepted && lo > 0.0 && std::isfinite(flo) && flo < fx) {
      a = lo;  // last sufficient-decrease point seen
      fa = eval_at(a, xt, gt);
      accepted = std::isfinite(fa) && fa < fx;
    }
    if (!accepted) {
      out.termination = Termination::LineSearchFail;
      break;
    }

    std::vector<double> s(n), yv(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = xt[i] - x[i];
      yv[i] = gt[i] - g[i];
    }
    const double sy = dot(s, yv);
    if (sy > 1e-10 * std::sqrt(dot(s, s)) * std::sqrt(dot(yv, yv))) {
      pairs.push_back({s, yv, 1.0 / sy});
      if (pairs.size() > static_cast<std::size_t>(std::max(1, cfg.history_size)))
        pairs.pop_front();
    }

    const double step = sup_norm(s);
    x = std::move(xt);
    g = std::move(gt);
    fx = fa;
    if (step <= cfg.step_tolerance) {
      out.termination = Termination::StepTol;
      out.converged = true;
      ++iter;
      break;
    }
  }
  if (iter >= cfg.max_iterations) out.termination = Termination::MaxIter;

  out.x = std::move(x);
  out.f = fx;
  out.gradient = std::move(g);
  out.iterations = std::min(iter, cfg.max_iterations);
  return out;
}

/// Minimize the twin-model NLL from `start`, optionally holding masked
/// coordinates fixed. Stand-in for the quasi-Newton runs the experiments
/// are built around.
inline OptimResult minimize(const UnconstrainedParams& start, const TwinDataset& data,
                            const ModelSpec& spec, const OptimConfig& cfg = {},
                            const FixedMask& mask = {}) {
  const int m = spec.n_components;
  FixedMask mk = mask.size() == 0 ? FixedMask::none(m) : mask;
  MaskedNll objective(data, spec, mk);

  BoxBounds box = cfg.bounds.size() == 0 ? BoxBounds::optimizer_default(m) : cfg.bounds;
  if (box.size() == static_cast<std::size_t>(5 * m)) box = box.restrict_to_free(mk);
  else if (box.size() != mk.n_free())
    throw LengthMismatch("bounds do not match model or free dimension");

  GenericOptimResult r =
      minimize_box(objective, apply_mask(start, mk), box, cfg);

  OptimResult out;
  out.argmin = embed(r.x, mk);
  out.nll = r.f;
  out.converged = r.converged;
  out.iterations = r.iterations;
  out.termination = r.termination;
  return out;
}

/// Delta-method standard errors of the natural-scale estimates at a
/// converged minimum: invert the finite-difference Hessian of the NLL in
/// unconstrained coordinates and push the covariance through the Jacobian
/// of to_natural. Returns one SE per canonical coordinate (mu, sigma, rho,
/// beta, p_1..p_{m-1}).
inline std::vector<double> standard_errors(const UnconstrainedParams& at,
                                           const TwinDataset& data,
                                           const ModelSpec& spec) {
  const int m = spec.n_components;
  const std::size_t n = at.size();
  const std::vector<double> x = at.flat();

  // central differences of the analytic gradient
  Eigen::MatrixXd hess(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    const double h = 1e-4 * std::max(1.0, std::abs(x[i]));
    std::vector<double> xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    const NllResult rp = nll(UnconstrainedParams::from_flat(xp), data, spec);
    const NllResult rm = nll(UnconstrainedParams::from_flat(xm), data, spec);
    if (!rp.valid || !rm.valid)
      throw SingularHessian("NLL invalid near the supplied optimum");
    for (std::size_t j = 0; j < n; ++j)
      hess(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          (rp.gradient[j] - rm.gradient[j]) / (2.0 * h);
  }
  hess = ((hess + hess.transpose()) / 2.0).eval();

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(hess);
  const double max_ev = eig.eigenvalues().maxCoeff();
  if (!(max_ev > 0.0) || eig.eigenvalues().minCoeff() <= 1e-10 * max_ev)
    throw SingularHessian("observed information is not positive definite");
  Eigen::MatrixXd cov = eig.eigenvectors() *
                        eig.eigenvalues().cwiseInverse().asDiagonal() *
                        eig.eigenvectors().transpose();

  // Jacobian of the unconstrained -> natural map, rows in canonical order
  const NaturalParams nat = to_natural(at);
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(n, n);
  const ParamLayout lay = at.layout();
  const auto ls0 = static_cast<Eigen::Index>(lay.block_begin(ParamBlock::LogSigma));
  const auto t0 = static_cast<Eigen::Index>(lay.block_begin(ParamBlock::PreP));
  for (int k = 0; k < m; ++k) {
    for (int j = 0; j <= k; ++j) jac(k, j) = std::exp(at.alpha[j]);
    jac(ls0 + k, ls0 + k) = nat.sigma[k];
  }
  for (Eigen::Index i = static_cast<Eigen::Index>(lay.block_begin(ParamBlock::RhoMz));
       i <= static_cast<Eigen::Index>(lay.block_begin(ParamBlock::Beta)); ++i)
    jac(i, i) = 1.0;
  for (int k = 0; k + 1 < m; ++k)
    for (int j = 0; j + 1 < m; ++j)
      jac(t0 + k, t0 + j) = nat.p[k] * ((k == j ? 1.0 : 0.0) - nat.p[j]);

  const Eigen::MatrixXd cov_nat = jac * cov * jac.transpose();
  std::vector<double> se(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double v = cov_nat(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i));
    se[i] = v > 0.0 ? std::sqrt(v) : 0.0;
  }
  return se;
}

}  // namespace mixprobe
