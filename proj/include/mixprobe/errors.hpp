#pragma once

#include <stdexcept>
#include <string>

namespace mixprobe {

/// Invalid value for a domain type (non-positive sigma, |rho| >= 1, ...).
struct DomainError : std::runtime_error {
  explicit DomainError(const std::string& what) : std::runtime_error(what) {}
};

/// Vector length does not match the expected dimension.
struct LengthMismatch : std::runtime_error {
  explicit LengthMismatch(const std::string& what) : std::runtime_error(what) {}
};

struct EmptyDataset : std::runtime_error {
  explicit EmptyDataset(const std::string& what) : std::runtime_error(what) {}
};

/// Observed information matrix is not positive definite.
struct SingularHessian : std::runtime_error {
  explicit SingularHessian(const std::string& what) : std::runtime_error(what) {}
};

struct ChainTooShort : std::runtime_error {
  explicit ChainTooShort(const std::string& what) : std::runtime_error(what) {}
};

/// A diagnostic segment has no variance (constant chain column).
struct ZeroVariance : std::runtime_error {
  explicit ZeroVariance(const std::string& what) : std::runtime_error(what) {}
};

/// Nearly all post-warmup transitions diverged; the chain never moved.
struct StuckChain : std::runtime_error {
  explicit StuckChain(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace mixprobe
