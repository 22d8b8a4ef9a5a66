#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mixprobe/errors.hpp"
#include "mixprobe/params.hpp"
#include "mixprobe/target.hpp"
#include "mixprobe/twin_model.hpp"

namespace mixprobe {

// ---------------------------------------------------------------------------
// Configuration and output
// ---------------------------------------------------------------------------

struct SamplerConfig {
  int n_iterations = 1000;
  int n_warmup = 500;  // half of the total, discarded from the chain
  double target_accept = 0.95;
  int max_tree_depth = 10;
  std::uint64_t seed = 0;
  FixedMask mask;                   // empty => nothing fixed
  std::optional<BoxBounds> bounds;  // absent => unbounded sampling

  void validate() const {
    if (n_warmup < 0 || n_warmup >= n_iterations)
      throw DomainError("need 0 <= n_warmup < n_iterations");
    if (!(target_accept > 0.0 && target_accept < 1.0))
      throw DomainError("target_accept must lie in (0,1)");
    if (max_tree_depth < 1) throw DomainError("max_tree_depth must be >= 1");
  }
};

/// Post-warmup draws plus per-draw sampler statistics.
struct Chain {
  int n_components = 3;
  std::vector<std::vector<double>> draws;  // unconstrained, fixed coords filled
  std::vector<double> nll_per_draw;
  std::vector<double> accept_stat;
  std::vector<int> tree_depth;
  std::vector<int> divergent;  // 0/1 per retained draw
  double step_size_final = 0.0;
  std::vector<double> inv_mass_diag;  // free dimension

  std::size_t size() const { return draws.size(); }
  int total_divergences() const {
    int n = 0;
    for (int d : divergent) n += d;
    return n;
  }
  double min_nll() const {
    double r = kInf;
    for (double v : nll_per_draw) r = std::min(r, v);
    return r;
  }
};

// ---------------------------------------------------------------------------
// Core pieces
// ---------------------------------------------------------------------------

/// Fresh Gaussian momenta with variances equal to the mass diagonal
/// (the inverse of inv_mass_diag).
inline std::vector<double> momentum_refresh(std::mt19937_64& rng,
                                            const std::vector<double>& inv_mass_diag) {
  std::normal_distribution<double> norm(0.0, 1.0);
  std::vector<double> p(inv_mass_diag.size());
  for (std::size_t i = 0; i < p.size(); ++i)
    p[i] = norm(rng) / std::sqrt(inv_mass_diag[i]);
  return p;
}

/// One leapfrog step (half kick / drift / half kick) with diagonal mass.
/// `grad` holds the gradient of log p at q on entry and at the updated q
/// on exit; the return value is log p at the updated q.
template <class Target>
double leapfrog(const Target& target, std::vector<double>& q, std::vector<double>& p,
                std::vector<double>& grad, double eps,
                const std::vector<double>& inv_mass) {
  const std::size_t n = q.size();
  for (std::size_t i = 0; i < n; ++i) p[i] += 0.5 * eps * grad[i];
  for (std::size_t i = 0; i < n; ++i) q[i] += eps * inv_mass[i] * p[i];
  const double logp = target.logp_grad(q, grad);
  for (std::size_t i = 0; i < n; ++i) p[i] += 0.5 * eps * grad[i];
  return logp;
}

namespace nuts_detail {

constexpr double kDivergenceThreshold = 1000.0;

inline double kinetic(const std::vector<double>& p, const std::vector<double>& inv_mass) {
  double k = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) k += p[i] * p[i] * inv_mass[i];
  return 0.5 * k;
}

inline double log_sum_exp(double a, double b) {
  if (a == -kInf) return b;
  if (b == -kInf) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

// Generalized no-U-turn criterion on the subtree spanned by momenta
// p_begin / p_end with summed momentum rho.
inline bool keep_going(const std::vector<double>& p_begin,
                       const std::vector<double>& p_end,
                       const std::vector<double>& rho,
                       const std::vector<double>& inv_mass) {
  double a = 0.0, b = 0.0;
  for (std::size_t i = 0; i < rho.size(); ++i) {
    a += rho[i] * inv_mass[i] * p_begin[i];
    b += rho[i] * inv_mass[i] * p_end[i];
  }
  return a > 0.0 && b > 0.0;
}

/// Dual-averaging step-size adaptation driving the mean acceptance
/// statistic toward a target (Hoffman-Gelman constants).
class DualAverage {
 public:
  DualAverage(double eps0, double target)
      : mu_(std::log(10.0 * eps0)),
        log_eps_(std::log(eps0)),
        target_(target) {}

  void update(double accept) {
    if (std::isnan(accept)) accept = 0.0;
    accept = std::min(accept, 1.0);
    ++m_;
    const double w = 1.0 / (m_ + t0_);
    h_bar_ = (1.0 - w) * h_bar_ + w * (target_ - accept);
    log_eps_ = mu_ - std::sqrt(static_cast<double>(m_)) / gamma_ * h_bar_;
    const double w2 = std::pow(static_cast<double>(m_), -kappa_);
    log_eps_bar_ = w2 * log_eps_ + (1.0 - w2) * log_eps_bar_;
  }

  void restart(double eps0) {
    mu_ = std::log(10.0 * eps0);
    log_eps_ = std::log(eps0);
    log_eps_bar_ = 0.0;
    h_bar_ = 0.0;
    m_ = 0;
  }

  double current() const { return std::exp(log_eps_); }
  double averaged() const { return std::exp(log_eps_bar_); }

 private:
  double mu_;
  double log_eps_;
  double log_eps_bar_ = 0.0;
  double h_bar_ = 0.0;
  long m_ = 0;
  double target_;
  static constexpr double gamma_ = 0.05;
  static constexpr double t0_ = 10.0;
  static constexpr double kappa_ = 0.75;
};

// Streaming mean/variance for the mass-matrix windows.
class Welford {
 public:
  void reset(std::size_t n) {
    mean_.assign(n, 0.0);
    m2_.assign(n, 0.0);
    count_ = 0;
  }
  void push(const std::vector<double>& x) {
    ++count_;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = x[i] - mean_[i];
      mean_[i] += d / count_;
      m2_[i] += d * (x[i] - mean_[i]);
    }
  }
  long count() const { return count_; }
  std::vector<double> variance() const {
    std::vector<double> v(mean_.size(), 1.0);
    if (count_ > 1)
      for (std::size_t i = 0; i < v.size(); ++i) v[i] = m2_[i] / (count_ - 1);
    return v;
  }

 private:
  std::vector<double> mean_, m2_;
  long count_ = 0;
};

}  // namespace nuts_detail

// ---------------------------------------------------------------------------
// Generic multinomial NUTS
// ---------------------------------------------------------------------------

struct RawChainStats {
  double accept_stat = 0.0;
  int tree_depth = 0;
  bool divergent = false;
};

struct RawChain {
  std::vector<std::vector<double>> draws;
  std::vector<double> logp;
  std::vector<RawChainStats> stats;
  double step_size_final = 0.0;
  std::vector<double> inv_mass_diag;
};

/// No-U-Turn sampler over an arbitrary differentiable log target.
///
/// Trajectories are grown by tree doubling with multinomial state
/// selection and the generalized U-turn criterion; warmup adapts the step
/// size by dual averaging toward `target_accept` and the diagonal inverse
/// mass from draw variances in expanding windows. Identical seeds give
/// identical output.
///
/// Target must provide `double logp_grad(const std::vector<double>& q,
/// std::vector<double>& grad) const`, returning -inf outside the support.
template <class Target>
class NutsSampler {
 public:
  NutsSampler(const Target& target, const SamplerConfig& cfg)
      : target_(&target), cfg_(cfg), rng_(cfg.seed) {
    cfg_.validate();
  }

  RawChain run(const std::vector<double>& q0) {
    const std::size_t n = q0.size();
    inv_mass_.assign(n, 1.0);

    q_ = q0;
    grad_.assign(n, 0.0);
    logp_ = target_->logp_grad(q_, grad_);
    if (!std::isfinite(logp_))
      throw DomainError("sampler start has non-finite log target");

    double eps = find_initial_step_size();
    nuts_detail::DualAverage averager(eps, cfg_.target_accept);

    // expanding mass-adaptation windows inside warmup
    const int init_buffer = 75, term_buffer = 50, first_window = 25;
    const bool adapt_mass = cfg_.n_warmup >= init_buffer + term_buffer + first_window;
    int window_end = adapt_mass ? init_buffer + first_window : -1;
    int window_size = first_window;
    nuts_detail::Welford acc;
    acc.reset(n);

    RawChain chain;
    const int n_keep = cfg_.n_iterations - cfg_.n_warmup;
    chain.draws.reserve(n_keep);

    int divergent_kept = 0;
    for (int iter = 0; iter < cfg_.n_iterations; ++iter) {
      const bool warm = iter < cfg_.n_warmup;
      RawChainStats st = transition(eps);

      if (warm) {
        averager.update(st.accept_stat);
        eps = averager.current();
        if (adapt_mass && iter >= init_buffer &&
            iter < cfg_.n_warmup - term_buffer) {
          acc.push(q_);
          if (iter + 1 == window_end) {
            const std::vector<double> var = acc.variance();
            const double w = static_cast<double>(acc.count());
            for (std::size_t i = 0; i < n; ++i) {
              double v = (w / (w + 5.0)) * var[i] + 1e-3 * (5.0 / (w + 5.0));
              inv_mass_[i] = std::max(v, 1e-10);
            }
            acc.reset(n);
            window_size *= 2;
            window_end = iter + 1 + window_size;
            if (window_end + window_size > cfg_.n_warmup - term_buffer)
              window_end = cfg_.n_warmup - term_buffer;
            eps = find_initial_step_size();
            averager.restart(eps);
          }
        }
        if (iter + 1 == cfg_.n_warmup) eps = averager.averaged();
      } else {
        chain.draws.push_back(q_);
        chain.logp.push_back(logp_);
        chain.stats.push_back(st);
        if (st.divergent) ++divergent_kept;
      }
    }

    if (n_keep > 0 && divergent_kept > 0.9 * n_keep)
      throw StuckChain(std::to_string(divergent_kept) + " of " +
                       std::to_string(n_keep) +
                       " post-warmup transitions diverged");

    chain.step_size_final = eps;
    chain.inv_mass_diag = inv_mass_;
    return chain;
  }

 private:
  struct Leaf {
    std::vector<double> q, p, grad;
    double logp = -kInf;
  };

  // State selected from a subtree, plus the subtree's bookkeeping.
  struct Subtree {
    Leaf begin, end;       // outermost states in build direction
    std::vector<double> q_sample;
    double logp_sample = -kInf;
    std::vector<double> rho;
    double log_sum_weight = -kInf;
    double sum_accept = 0.0;
    long n_leapfrog = 0;
    bool divergent = false;
    bool ok = false;
  };

  RawChainStats transition(double eps) {
    const std::size_t n = q_.size();
    std::vector<double> p0 = momentum_refresh(rng_, inv_mass_);
    const double h0 = -logp_ + nuts_detail::kinetic(p0, inv_mass_);

    Leaf minus{q_, p0, grad_, logp_};
    Leaf plus = minus;
    std::vector<double> q_sample = q_;
    double logp_sample = logp_;
    std::vector<double> rho = p0;
    double log_sum_weight = 0.0;
    double sum_accept = 0.0;
    long n_leapfrog = 0;

    RawChainStats st;
    int depth = 0;
    for (; depth < cfg_.max_tree_depth; ++depth) {
      const bool forward = unif_(rng_) < 0.5;
      Subtree sub = build_tree(depth, forward ? 1.0 : -1.0,
                               forward ? plus : minus, eps, h0);
      sum_accept += sub.sum_accept;
      n_leapfrog += sub.n_leapfrog;
      if (sub.divergent) st.divergent = true;
      if (!sub.ok) break;

      if (forward) plus = sub.end;
      else minus = sub.end;

      // biased progressive sampling toward the fresh subtree
      if (sub.log_sum_weight > log_sum_weight ||
          unif_(rng_) < std::exp(sub.log_sum_weight - log_sum_weight)) {
        q_sample = sub.q_sample;
        logp_sample = sub.logp_sample;
      }
      log_sum_weight = nuts_detail::log_sum_exp(log_sum_weight, sub.log_sum_weight);

      for (std::size_t i = 0; i < n; ++i) rho[i] += sub.rho[i];
      if (!nuts_detail::keep_going(minus.p, plus.p, rho, inv_mass_)) {
        ++depth;
        break;
      }
    }

    q_ = q_sample;
    logp_ = logp_sample;
    target_->logp_grad(q_, grad_);

    st.tree_depth = depth;
    st.accept_stat = n_leapfrog > 0 ? sum_accept / n_leapfrog : 0.0;
    return st;
  }

  Subtree build_tree(int depth, double dir, const Leaf& from, double eps, double h0) {
    Subtree t;
    if (depth == 0) {
      Leaf leaf = from;
      leaf.logp = leapfrog(*target_, leaf.q, leaf.p, leaf.grad, dir * eps, inv_mass_);
      const double h = -leaf.logp + nuts_detail::kinetic(leaf.p, inv_mass_);
      const double delta = h0 - h;  // log weight of this leaf
      t.n_leapfrog = 1;
      t.sum_accept = std::isfinite(delta) ? std::min(1.0, std::exp(delta)) : 0.0;
      if (!std::isfinite(h) || h - h0 > nuts_detail::kDivergenceThreshold) {
        t.divergent = true;
        t.ok = false;
        return t;
      }
      t.begin = leaf;
      t.end = leaf;
      t.q_sample = leaf.q;
      t.logp_sample = leaf.logp;
      t.rho = leaf.p;
      t.log_sum_weight = delta;
      t.ok = true;
      return t;
    }

    Subtree first = build_tree(depth - 1, dir, from, eps, h0);
    t.sum_accept = first.sum_accept;
    t.n_leapfrog = first.n_leapfrog;
    t.divergent = first.divergent;
    if (!first.ok) {
      t.ok = false;
      return t;
    }
    Subtree second = build_tree(depth - 1, dir, first.end, eps, h0);
    t.sum_accept += second.sum_accept;
    t.n_leapfrog += second.n_leapfrog;
    t.divergent = t.divergent || second.divergent;
    if (!second.ok) {
      t.ok = false;
      return t;
    }

    t.begin = first.begin;
    t.end = second.end;
    t.log_sum_weight =
        nuts_detail::log_sum_exp(first.log_sum_weight, second.log_sum_weight);
    // uniform multinomial choice between the two halves
    if (unif_(rng_) < std::exp(second.log_sum_weight - t.log_sum_weight)) {
      t.q_sample = std::move(second.q_sample);
      t.logp_sample = second.logp_sample;
    } else {
      t.q_sample = std::move(first.q_sample);
      t.logp_sample = first.logp_sample;
    }
    t.rho.resize(first.rho.size());
    for (std::size_t i = 0; i < t.rho.size(); ++i)
      t.rho[i] = first.rho[i] + second.rho[i];
    t.ok = nuts_detail::keep_going(t.begin.p, t.end.p, t.rho, inv_mass_);
    return t;
  }

  // Doubling/halving search for a step size whose one-step acceptance
  // crosses 1/2, started from eps = 1.
  double find_initial_step_size() {
    const double h0 = [&] {
      std::vector<double> p = momentum_refresh(rng_, inv_mass_);
      // reuse the same momentum for every probe below
      probe_p_ = p;
      return -logp_ + nuts_detail::kinetic(p, inv_mass_);
    }();

    auto accept_at = [&](double eps) {
      std::vector<double> q = q_, p = probe_p_, g = grad_;
      const double lp = leapfrog(*target_, q, p, g, eps, inv_mass_);
      const double h = -lp + nuts_detail::kinetic(p, inv_mass_);
      return std::isfinite(h) ? std::exp(h0 - h) : 0.0;
    };

    double eps = 1.0;
    double a = accept_at(eps);
    const double dir = a > 0.5 ? 2.0 : 0.5;
    for (int i = 0; i < 100; ++i) {
      eps *= dir;
      if (eps > 1e7 || eps < 1e-10) break;
      a = accept_at(eps);
      if ((dir > 1.0 && a <= 0.5) || (dir < 1.0 && a >= 0.5)) break;
    }
    return std::clamp(eps, 1e-10, 1e7);
  }

  const Target* target_;
  SamplerConfig cfg_;
  std::mt19937_64 rng_;
  std::uniform_real_distribution<double> unif_{0.0, 1.0};

  std::vector<double> q_, grad_, probe_p_;
  double logp_ = -kInf;
  std::vector<double> inv_mass_;
};

// ---------------------------------------------------------------------------
// Twin-model entry point
// ---------------------------------------------------------------------------

/// NUTS over the (optionally masked and bounded) twin-model likelihood.
/// Draws are recorded on the full unconstrained scale with fixed
/// coordinates filled in and each retained draw's NLL attached.
inline Chain sample(const UnconstrainedParams& start, const TwinDataset& data,
                    const ModelSpec& spec, const SamplerConfig& cfg) {
  cfg.validate();
  const int m = spec.n_components;
  FixedMask mask = cfg.mask.size() == 0 ? FixedMask::none(m) : cfg.mask;
  SamplerTarget target(data, spec, mask, cfg.bounds);

  NutsSampler<SamplerTarget> sampler(target, cfg);
  RawChain raw = sampler.run(target.state_from_params(start));

  Chain chain;
  chain.n_components = m;
  chain.step_size_final = raw.step_size_final;
  chain.inv_mass_diag = raw.inv_mass_diag;
  chain.draws.reserve(raw.draws.size());
  for (std::size_t i = 0; i < raw.draws.size(); ++i) {
    UnconstrainedParams full = target.full_params(raw.draws[i]);
    const NllResult r = nll(full, data, spec);
    chain.draws.push_back(full.flat());
    chain.nll_per_draw.push_back(r.nll);
    chain.accept_stat.push_back(raw.stats[i].accept_stat);
    chain.tree_depth.push_back(raw.stats[i].tree_depth);
    chain.divergent.push_back(raw.stats[i].divergent ? 1 : 0);
  }
  return chain;
}

}  // namespace mixprobe
