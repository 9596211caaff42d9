#include "arq/stats.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace arq::stats {

namespace {

constexpr Real kSqrt2 = 1.41421356237309504880;
constexpr Real kSqrt2Pi = 2.50662827463100050242;

// Lentz continued fraction for I_x(a, b); converges for x < (a + 1) / (a + b + 2).
Real beta_continued_fraction(Real a, Real b, Real x) {
  constexpr int kMaxIter = 100000;
  constexpr Real kEps = 1e-16;
  constexpr Real kTiny = 1e-300;
  const Real qab = a + b, qap = a + 1.0, qam = a - 1.0;
  Real c = 1.0;
  Real d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  Real h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const Real m2 = 2.0 * m;
    Real aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const Real del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

void check_binomial(std::uint64_t k, std::uint64_t n, Real alpha) {
  if (n == 0 || k > n) {
    throw DomainError("binomial bound needs 0 <= k <= n and n >= 1 (k=" + std::to_string(k) +
                      ", n=" + std::to_string(n) + ")");
  }
  if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("confidence level alpha must lie in (0, 1)");
}

/// Smallest p in [0,1] with f(p) >= target, f nondecreasing.
template <typename F>
Real bisect(F f, Real target) {
  Real lo = 0.0, hi = 1.0;
  while (hi - lo > 1e-13) {
    const Real mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (f(mid) >= target) hi = mid;
    else lo = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

Real norm_cdf(Real z) { return 0.5 * std::erfc(-z / kSqrt2); }

Real inv_norm_cdf(Real p) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("inv_norm_cdf needs p in (0, 1), got " + std::to_string(p));
  // Acklam's rational approximation, then Halley refinement against erfc.
  static constexpr Real a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                               1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr Real b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                               6.680131188771972e+01, -1.328068155288572e+01};
  static constexpr Real c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                               -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00};
  static constexpr Real d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                               3.754408661907416e+00};
  constexpr Real p_low = 0.02425;
  Real x;
  if (p < p_low) {
    const Real q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const Real q = p - 0.5;
    const Real r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const Real q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  for (int i = 0; i < 2; ++i) {
    const Real e = norm_cdf(x) - p;
    const Real u = e * kSqrt2Pi * std::exp(0.5 * x * x);
    x -= u / (1.0 + 0.5 * x * u);
  }
  return x;
}

Real incomplete_beta(Real a, Real b, Real x) {
  if (!(a > 0.0 && b > 0.0)) throw DomainError("incomplete beta needs a, b > 0");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const Real log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const Real front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

Real binom_lower_bound(std::uint64_t k, std::uint64_t n, Real alpha) {
  check_binomial(k, n, alpha);
  if (k == 0) return 0.0;
  if (k == n) return std::pow(alpha, 1.0 / static_cast<Real>(n));
  const Real a = static_cast<Real>(k), b = static_cast<Real>(n - k + 1);
  // P[Bin(n, p) >= k] = I_p(k, n - k + 1), increasing in p.
  return bisect([&](Real p) { return incomplete_beta(a, b, p); }, alpha);
}

Real binom_upper_bound(std::uint64_t k, std::uint64_t n, Real alpha) {
  check_binomial(k, n, alpha);
  if (k == n) return 1.0;
  if (k == 0) return 1.0 - std::pow(alpha, 1.0 / static_cast<Real>(n));
  const Real a = static_cast<Real>(k + 1), b = static_cast<Real>(n - k);
  // P[Bin(n, p) <= k] = 1 - I_p(k + 1, n - k), decreasing in p.
  return bisect([&](Real p) { return incomplete_beta(a, b, p); }, 1.0 - alpha);
}

}  // namespace arq::stats
