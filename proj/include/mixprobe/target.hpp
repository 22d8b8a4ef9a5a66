#pragma once

#include <optional>
#include <vector>

#include "mixprobe/params.hpp"
#include "mixprobe/twin_model.hpp"

namespace mixprobe {

/// Twin-model NLL restricted to the free subspace of a mask.
/// Used by the optimizer: bounds are handled by the optimizer itself,
/// so no reparameterization happens here.
class MaskedNll {
 public:
  MaskedNll(const TwinDataset& data, ModelSpec spec, FixedMask mask)
      : data_(&data), spec_(spec), mask_(std::move(mask)) {
    mask_.validate();
  }

  std::size_t dim() const { return mask_.n_free(); }
  const FixedMask& mask() const { return mask_; }

  UnconstrainedParams embed_free(const std::vector<double>& free) const {
    return embed(free, mask_);
  }

  /// Value and gradient in the free coordinates. Invalid points return
  /// +inf with a zero gradient.
  double operator()(const std::vector<double>& free,
                    std::vector<double>& grad) const {
    const UnconstrainedParams full = embed(free, mask_);
    const NllResult r = nll(full, *data_, spec_);
    grad.assign(dim(), 0.0);
    if (!r.valid) return kInf;
    std::size_t at = 0;
    for (std::size_t i = 0; i < mask_.size(); ++i)
      if (!mask_.fixed[i]) grad[at++] = r.gradient[i];
    return r.nll;
  }

 private:
  const TwinDataset* data_;
  ModelSpec spec_;
  FixedMask mask_;
};

/// Log target for the sampler: exp(-nll) under flat priors, optionally
/// masked and reparameterized onto an open box. In the bounded case the
/// sampler moves in the unbounded y-space and the log-Jacobian of the
/// box transform is added to the log target.
class SamplerTarget {
 public:
  SamplerTarget(const TwinDataset& data, ModelSpec spec, FixedMask mask,
                std::optional<BoxBounds> bounds)
      : data_(&data), spec_(spec), mask_(std::move(mask)), bounds_(std::move(bounds)) {
    mask_.validate();
    if (bounds_) {
      if (bounds_->size() == mask_.size())
        bounds_ = bounds_->restrict_to_free(mask_);
      else if (bounds_->size() != mask_.n_free())
        throw LengthMismatch("bounds do not match model or free dimension");
      bounds_->validate();
    }
  }

  std::size_t dim() const { return mask_.n_free(); }
  const FixedMask& mask() const { return mask_; }
  const std::optional<BoxBounds>& free_bounds() const { return bounds_; }

  /// Free constrained coordinates for a sampler state y.
  std::vector<double> constrained(const std::vector<double>& y) const {
    if (!bounds_) return y;
    return bound_transform(y, *bounds_).constrained;
  }

  UnconstrainedParams full_params(const std::vector<double>& y) const {
    return embed(constrained(y), mask_);
  }

  /// Sampler state for a full parameter vector (clamped into the open box
  /// when bounds are active).
  std::vector<double> state_from_params(const UnconstrainedParams& full) const {
    std::vector<double> free = apply_mask(full, mask_);
    if (!bounds_) return free;
    return bound_transform_inverse(free, *bounds_);
  }

  double logp_grad(const std::vector<double>& y, std::vector<double>& grad) const {
    grad.assign(dim(), 0.0);
    double logjac = 0.0;
    std::vector<double> x = y;
    if (bounds_) {
      BoundTransformResult t = bound_transform(y, *bounds_);
      x = std::move(t.constrained);
      logjac = t.log_jacobian;
    }
    const UnconstrainedParams full = embed(x, mask_);
    const NllResult r = nll(full, *data_, spec_);
    if (!r.valid) return -kInf;

    std::vector<double> gfree(dim());
    std::size_t at = 0;
    for (std::size_t i = 0; i < mask_.size(); ++i)
      if (!mask_.fixed[i]) gfree[at++] = r.gradient[i];

    if (bounds_) {
      std::vector<double> dx_dy, dj_dy;
      bound_transform_derivs(y, *bounds_, dx_dy, dj_dy);
      for (std::size_t i = 0; i < dim(); ++i)
        grad[i] = -gfree[i] * dx_dy[i] + dj_dy[i];
    } else {
      for (std::size_t i = 0; i < dim(); ++i) grad[i] = -gfree[i];
    }
    return -r.nll + logjac;
  }

 private:
  const TwinDataset* data_;
  ModelSpec spec_;
  FixedMask mask_;
  std::optional<BoxBounds> bounds_;
};

}  // namespace mixprobe
