#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "lsattn/rng.hpp"

using namespace lsattn;

TEST_CASE("identical (seed, stream, counter) gives identical output") {
  Rng a(42, 7), b(42, 7);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng c(42, 7);
  c.set_counter(50);
  Rng d(42, 7);
  for (int i = 0; i < 50; ++i) d.next_u64();
  CHECK(c.next_u64() == d.next_u64());
}

TEST_CASE("streams with the same seed are distinct") {
  Rng a(42, 0), b(42, 1);
  int equal = 0;
  for (int i = 0; i < 64; ++i) {
    if (a.next_u64() == b.next_u64()) ++equal;
  }
  CHECK(equal == 0);
}

TEST_CASE("uniform draws stay strictly inside (0,1)") {
  Rng rng(3);
  for (int i = 0; i < 100000; ++i) {
    const double u = rng.next_uniform();
    CHECK(u > 0.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("uniform mean and variance look right") {
  Rng rng(9);
  const int n = 200000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double u = rng.next_uniform();
    s += u;
    s2 += u * u;
  }
  const double mean = s / n;
  const double var = s2 / n - mean * mean;
  CHECK(mean == doctest::Approx(0.5).epsilon(0.01));
  CHECK(var == doctest::Approx(1.0 / 12.0).epsilon(0.02));
}

TEST_CASE("normal draws have roughly unit variance") {
  Rng rng(11);
  const int n = 200000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.next_normal();
    s += x;
    s2 += x * x;
  }
  const double mean = s / n;
  CHECK(std::abs(mean) < 0.01);
  CHECK(s2 / n - mean * mean == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("split by stream id reproduces direct construction") {
  Rng base(77, 0);
  Rng s1 = base.split(5);
  Rng s2(77, 5);
  for (int i = 0; i < 10; ++i) CHECK(s1.next_u64() == s2.next_u64());
}
