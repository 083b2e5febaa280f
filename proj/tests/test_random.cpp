#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "excel/random.hpp"

#include <cmath>
#include <vector>

using excel::Philox;
using excel::Sampler;

TEST_CASE("philox4x32-10 known answers") {
  // Random123 kat_vectors.
  const auto zero = Philox::encrypt({0u, 0u, 0u, 0u}, {0u, 0u});
  CHECK(zero == Philox::Block{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});
  const auto ones = Philox::encrypt({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu});
  CHECK(ones == Philox::Block{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});
  const auto pi = Philox::encrypt({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u});
  CHECK(pi == Philox::Block{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u});
}

TEST_CASE("streams are reproducible and distinct") {
  auto a = Philox::stream(42, {1, 2});
  auto b = Philox::stream(42, {1, 2});
  auto c = Philox::stream(42, {2, 1});
  for (int i = 0; i < 10; ++i) {
    const auto va = a();
    CHECK(va == b());
    CHECK(va != c());
  }
}

TEST_CASE("sampler moments") {
  Sampler s(Philox::stream(7, {}));
  const int n = 200000;
  double sum = 0, sum2 = 0, tsum2 = 0, esum = 0, bsum = 0;
  for (int i = 0; i < n; ++i) {
    const double z = s.normal();
    sum += z;
    sum2 += z * z;
    const double t = s.student_t(5);
    tsum2 += t * t;
    esum += s.exponential();
    bsum += s.binomial(2, 0.3);
  }
  CHECK(std::abs(sum / n) < 4.0 / std::sqrt(n));
  CHECK(std::abs(sum2 / n - 1.0) < 0.02);
  CHECK(std::abs(tsum2 / n - 5.0 / 3.0) < 0.1);  // var t(5) = 5/3
  CHECK(std::abs(esum / n - 1.0) < 0.01);
  CHECK(std::abs(bsum / n - 0.6) < 0.01);
}

TEST_CASE("index is in range and covers all values") {
  Sampler s(Philox::stream(3, {}));
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 7000; ++i) {
    const auto k = s.index(7);
    REQUIRE(k < 7);
    ++counts[k];
  }
  for (int c : counts) CHECK(c > 800);
}
