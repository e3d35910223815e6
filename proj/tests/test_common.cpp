#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "lfocv/common.hpp"

using namespace lfocv;
using Catch::Approx;

TEST_CASE("log_sum_exp matches naive computation at benign scales") {
  const std::vector<double> x{-1.0, 0.5, 0.2, -2.0};
  double naive = 0.0;
  for (double v : x) naive += std::exp(v);
  REQUIRE(log_sum_exp(x) == Approx(std::log(naive)).epsilon(1e-12));
}

TEST_CASE("log_sum_exp survives large magnitudes") {
  const std::vector<double> x{-1000.0, -1000.0};
  REQUIRE(log_sum_exp(x) == Approx(-1000.0 + std::log(2.0)));
  const std::vector<double> y{800.0, 800.0};
  REQUIRE(log_sum_exp(y) == Approx(800.0 + std::log(2.0)));
}

TEST_CASE("derive_seed separates streams and indices") {
  const std::uint64_t a = derive_seed(42, kStreamFit, 7);
  REQUIRE(a == derive_seed(42, kStreamFit, 7));
  REQUIRE(a != derive_seed(42, kStreamFit, 8));
  REQUIRE(a != derive_seed(42, kStreamPredict, 7));
  REQUIRE(a != derive_seed(43, kStreamFit, 7));
}

TEST_CASE("Rng is deterministic and produces sane normals") {
  Rng r1(123), r2(123);
  for (int i = 0; i < 100; ++i) REQUIRE(r1.normal() == r2.normal());

  Rng rng(7);
  const int n = 200000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    sum += z;
    sq += z * z;
  }
  REQUIRE(sum / n == Approx(0.0).margin(3.0 / std::sqrt(double(n))));
  REQUIRE(sq / n == Approx(1.0).margin(5.0 / std::sqrt(double(n))));
}

TEST_CASE("uniform stays in [0,1) and uniform_pos is positive") {
  Rng rng(99);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
  }
  for (int i = 0; i < 1000; ++i) REQUIRE(rng.uniform_pos() > 0.0);
}

TEST_CASE("sample_sd and quantile hand values") {
  const std::vector<double> x{-1.0, -3.0};
  REQUIRE(sample_sd(x) == Approx(std::sqrt(2.0)));
  std::vector<double> q{4.0, 1.0, 3.0, 2.0};
  REQUIRE(quantile(q, 0.0) == Approx(1.0));
  REQUIRE(quantile(q, 1.0) == Approx(4.0));
  REQUIRE(quantile(q, 0.5) == Approx(2.5));
}

TEST_CASE("fnv1a64 distinguishes contents") {
  const std::string a = "hello", b = "hellp";
  REQUIRE(fnv1a64({a.data(), a.size()}) != fnv1a64({b.data(), b.size()}));
  REQUIRE(fnv1a64({a.data(), a.size()}) == fnv1a64({a.data(), a.size()}));
}
