#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <vector>

#include <accel_eval/rng.hpp>

using namespace accel_eval;

TEST_CASE("derived streams reproduce exactly") {
  RngStream a = RngStream::derive(42, 3, 17);
  RngStream b = RngStream::derive(42, 3, 17);
  for (int i = 0; i < 32; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("distinct coordinates give distinct streams") {
  const std::uint64_t base = RngStream::derive(9, 0, 0).next_u64();
  CHECK(RngStream::derive(9, 0, 1).next_u64() != base);
  CHECK(RngStream::derive(9, 1, 0).next_u64() != base);
  CHECK(RngStream::derive(10, 0, 0).next_u64() != base);

  // no collisions across a block of episode indices
  std::set<std::uint64_t> seen;
  for (std::uint64_t i = 0; i < 4096; ++i) {
    seen.insert(RngStream::derive(7, 0, i).next_u64());
  }
  CHECK(seen.size() == 4096);
}

TEST_CASE("next_u01 stays in the unit interval") {
  RngStream rng = RngStream::derive(1, 0, 0);
  for (int i = 0; i < 100000; ++i) {
    const double u = rng.next_u01();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
  }
  RngStream rng2 = RngStream::derive(1, 0, 1);
  for (int i = 0; i < 100000; ++i) {
    const double u = rng2.next_u01_open();
    REQUIRE(u > 0.0);
    REQUIRE(u < 1.0);
  }
}

TEST_CASE("uniform draws pass a KS test") {
  const int n = 20000;
  std::vector<double> u(n);
  RngStream rng = RngStream::derive(123, 5, 0);
  for (double& x : u) x = rng.next_u01();
  std::sort(u.begin(), u.end());
  double d = 0.0;
  for (int i = 0; i < n; ++i) {
    const double cdf = u[i];
    d = std::max(d, std::fabs(cdf - (i + 1.0) / n));
    d = std::max(d, std::fabs(cdf - static_cast<double>(i) / n));
  }
  // alpha = 0.001 critical value ~ 1.95/sqrt(n)
  CHECK(d < 1.95 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("bit balance over many draws") {
  RngStream rng = RngStream::derive(77, 2, 0);
  int ones = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    ones += __builtin_popcountll(rng.next_u64());
  }
  const double mean = static_cast<double>(ones) / (64.0 * n);
  // 5 sigma band around 1/2 for Bernoulli(1/2) bits
  CHECK(std::fabs(mean - 0.5) < 5.0 * 0.5 / std::sqrt(64.0 * n));
}

TEST_CASE("mix64 and combine64 are stable and nondegenerate") {
  CHECK(mix64(0) == mix64(0));
  CHECK(mix64(1) != mix64(2));
  CHECK(combine64(1, 2) != combine64(2, 1));
  CHECK(combine64(0, 0) != 0);
}
