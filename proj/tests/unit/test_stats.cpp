#include <doctest.h>

#include <cmath>

#include "arq/stats.hpp"
#include "support/oracles.hpp"

using namespace arq;

TEST_CASE("norm_cdf agrees with erfc reference") {
  for (double z = -8.0; z <= 8.0; z += 0.125) {
    CHECK(stats::norm_cdf(z) == doctest::Approx(oracle::phi(z)).epsilon(1e-12));
  }
}

TEST_CASE("inv_norm_cdf known values") {
  CHECK(stats::inv_norm_cdf(0.5) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(std::abs(stats::inv_norm_cdf(0.975) - oracle::phi_inv(0.975)) < 1e-9);
  CHECK(std::abs(stats::inv_norm_cdf(0.975) - 1.959964) < 1e-6);
  CHECK(std::abs(stats::inv_norm_cdf(0.9) - 1.281552) < 1e-6);
}

TEST_CASE("inv_norm_cdf round trip on 1e4 grid") {
  double worst = 0.0;
  const int m = 10000;
  for (int i = 0; i < m; ++i) {
    const double p = 1e-6 + (1.0 - 2e-6) * i / (m - 1);
    worst = std::max(worst, std::abs(stats::norm_cdf(stats::inv_norm_cdf(p)) - p));
  }
  CHECK(worst <= 1e-9);
}

TEST_CASE("inv_norm_cdf rejects p outside (0,1)") {
  CHECK_THROWS_AS(stats::inv_norm_cdf(0.0), DomainError);
  CHECK_THROWS_AS(stats::inv_norm_cdf(1.0), DomainError);
  CHECK_THROWS_AS(stats::inv_norm_cdf(-0.2), DomainError);
  CHECK_THROWS_AS(stats::inv_norm_cdf(std::nan("")), DomainError);
}

TEST_CASE("binomial bound closed forms") {
  CHECK(stats::binom_lower_bound(0, 10, 0.01) == 0.0);
  CHECK(stats::binom_upper_bound(10, 10, 0.01) == 1.0);
  CHECK(std::abs(stats::binom_lower_bound(100, 100, 0.001) - std::pow(0.001, 0.01)) < 1e-9);
  CHECK(std::abs(stats::binom_lower_bound(100, 100, 0.001) - 0.933254) < 1e-6);
  CHECK(std::abs(stats::binom_upper_bound(0, 200, 0.001) - (1.0 - std::pow(0.001, 1.0 / 200))) < 1e-9);
}

TEST_CASE("binom_lower_bound k=5 n=10 alpha=0.5 against grid oracle") {
  const double expected = oracle::binom_lower_grid(5, 10, 0.5);
  CHECK(std::abs(stats::binom_lower_bound(5, 10, 0.5) - expected) < 1e-6);
}

TEST_CASE("binomial bounds match grid oracle for n <= 20") {
  for (std::uint64_t n = 1; n <= 20; ++n) {
    for (std::uint64_t k = 0; k <= n; ++k) {
      for (double alpha : {0.001, 0.05}) {
        CAPTURE(n);
        CAPTURE(k);
        CAPTURE(alpha);
        CHECK(std::abs(stats::binom_lower_bound(k, n, alpha) - oracle::binom_lower_grid(k, n, alpha)) < 1e-6);
        CHECK(std::abs(stats::binom_upper_bound(k, n, alpha) - oracle::binom_upper_grid(k, n, alpha)) < 1e-6);
      }
    }
  }
}

TEST_CASE("bounds bracket k/n and move the right way") {
  for (std::uint64_t n : {1u, 7u, 50u, 400u}) {
    double prev = -1.0;
    for (std::uint64_t k = 0; k <= n; ++k) {
      const double lo = stats::binom_lower_bound(k, n, 0.01);
      const double hi = stats::binom_upper_bound(k, n, 0.01);
      const double phat = static_cast<double>(k) / n;
      CHECK(lo <= phat + 1e-15);
      CHECK(hi >= phat - 1e-15);
      CHECK(lo >= prev);
      prev = lo;
      CHECK(stats::binom_lower_bound(k, n, 0.1) >= lo - 1e-15);
    }
  }
}

TEST_CASE("binomial bounds reject invalid ranges") {
  CHECK_THROWS_AS(stats::binom_lower_bound(5, 4, 0.01), DomainError);
  CHECK_THROWS_AS(stats::binom_lower_bound(1, 0, 0.01), DomainError);
  CHECK_THROWS_AS(stats::binom_lower_bound(1, 4, 0.0), DomainError);
  CHECK_THROWS_AS(stats::binom_upper_bound(1, 4, 1.0), DomainError);
}
