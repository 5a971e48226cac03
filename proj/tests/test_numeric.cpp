#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include <accel_eval/numeric.hpp>

using namespace accel_eval;

namespace {

// Independent CDF for the quantile cross-check: plain erfc, no shared code
// with the rational-approximation quantile.
double phi_oracle(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double quantile_oracle(double p) {
  double lo = -40.0, hi = 40.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (phi_oracle(mid) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

TEST_CASE("normal_cdf matches the erfc form and is symmetric") {
  CHECK(normal_cdf(0.0) == Catch::Approx(0.5).epsilon(1e-15));
  CHECK(normal_cdf(1.959963984540054) == Catch::Approx(0.975).epsilon(1e-12));
  for (double x : {-3.7, -1.2, -0.1, 0.4, 2.8}) {
    CHECK(normal_cdf(x) == Catch::Approx(phi_oracle(x)).epsilon(1e-14));
    CHECK(normal_cdf(-x) == Catch::Approx(1.0 - normal_cdf(x)).margin(1e-15));
  }
}

TEST_CASE("normal_quantile agrees with bisection on the CDF") {
  for (double p : {1e-9, 1e-4, 0.025, 0.2, 0.5, 0.8, 0.9, 0.975, 1.0 - 1e-9}) {
    const double q = normal_quantile(p);
    const double ref = quantile_oracle(p);
    CHECK(q == Catch::Approx(ref).margin(1e-9));
    // and it inverts the CDF
    CHECK(normal_cdf(q) == Catch::Approx(p).epsilon(1e-9));
  }
  CHECK(normal_quantile(0.5) == Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("normal_quantile round values") {
  CHECK(normal_quantile(0.80) == Catch::Approx(0.8416212335729143).margin(1e-12));
  CHECK(normal_quantile(0.90) == Catch::Approx(1.2815515655446004).margin(1e-12));
  CHECK(normal_quantile(0.975) == Catch::Approx(1.959963984540054).margin(1e-12));
}

TEST_CASE("central_interval_z covers the stated mass") {
  // central 80% interval -> z at the 90th percentile
  CHECK(central_interval_z(0.80) ==
        Catch::Approx(normal_quantile(0.90)).margin(1e-15));
  CHECK(central_interval_z(0.95) ==
        Catch::Approx(normal_quantile(0.975)).margin(1e-15));
  // mass check through the independent CDF
  const double z = central_interval_z(0.80);
  CHECK(phi_oracle(z) - phi_oracle(-z) == Catch::Approx(0.80).epsilon(1e-9));
}

TEST_CASE("normal_quantile rejects out-of-range p") {
  CHECK_THROWS_AS(normal_quantile(0.0), DomainError);
  CHECK_THROWS_AS(normal_quantile(1.0), DomainError);
  CHECK_THROWS_AS(normal_quantile(-0.2), DomainError);
}

TEST_CASE("nelder_mead finds a smooth minimum") {
  const auto quad = [](std::span<const double> x) {
    const double a = x[0] - 3.0, b = x[1] + 1.0;
    return a * a + 4.0 * b * b + 7.0;
  };
  const std::vector<double> x = nelder_mead(quad, {0.0, 0.0});
  CHECK(x[0] == Catch::Approx(3.0).margin(1e-5));
  CHECK(x[1] == Catch::Approx(-1.0).margin(1e-5));

  // mildly ill-conditioned valley
  const auto rosen = [](std::span<const double> x) {
    const double a = 1.0 - x[0], b = x[1] - x[0] * x[0];
    return a * a + 100.0 * b * b;
  };
  NelderMeadOptions opt;
  opt.max_iters = 4000;
  const std::vector<double> r = nelder_mead(rosen, {-1.2, 1.0}, opt);
  CHECK(r[0] == Catch::Approx(1.0).margin(1e-3));
  CHECK(r[1] == Catch::Approx(1.0).margin(1e-3));
}
