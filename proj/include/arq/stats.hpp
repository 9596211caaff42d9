#pragma once

#include <cstdint>

#include "arq/tensor.hpp"

namespace arq::stats {

/// Standard normal CDF via the complementary error function.
Real norm_cdf(Real z);

/// Inverse standard normal CDF on (0, 1); throws DomainError outside.
Real inv_norm_cdf(Real p);

/// Regularized incomplete beta function I_x(a, b).
Real incomplete_beta(Real a, Real b, Real x);

/// One-sided Clopper-Pearson lower bound: the p with P[Bin(n, p) >= k] = alpha,
/// i.e. the alpha quantile of Beta(k, n - k + 1). Zero when k = 0.
Real binom_lower_bound(std::uint64_t k, std::uint64_t n, Real alpha);

/// One-sided Clopper-Pearson upper bound: the p with P[Bin(n, p) <= k] = alpha.
/// One when k = n.
Real binom_upper_bound(std::uint64_t k, std::uint64_t n, Real alpha);

}  // namespace arq::stats
