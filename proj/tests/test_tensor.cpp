#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "bitlab/errors.hpp"
#include "bitlab/rng.hpp"
#include "bitlab/tensor.hpp"

using namespace bitlab;

TEST_CASE("softmax sums to one and is stable under shift") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<float> logits(10);
    for (auto& x : logits) x = rng.uniform(-30.f, 30.f);
    auto p = softmax(logits);
    double sum = 0.0;
    for (float x : p) {
      CHECK(x >= 0.f);
      sum += x;
    }
    CHECK(std::fabs(sum - 1.0) < 1e-6);
  }
}

TEST_CASE("cross entropy of uniform logits is ln(C)") {
  std::vector<float> logits(10, 0.5f);
  CHECK(cross_entropy(logits, 3) == doctest::Approx(std::log(10.0)).epsilon(1e-6));
}

TEST_CASE("cross entropy saturates to ~0 for a dominant target logit") {
  std::vector<float> logits(10, -20.f);
  logits[4] = 20.f;
  CHECK(cross_entropy(logits, 4) < 1e-6f);
  CHECK(cross_entropy(logits, 4) >= 0.f);
}

TEST_CASE("cross entropy matches direct softmax evaluation") {
  // Closed-form oracle computed here in double precision.
  std::vector<float> logits = {1.f, 2.f, 3.f};
  double denom = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  double expected = -std::log(std::exp(1.0) / denom);
  CHECK(cross_entropy(logits, 0) == doctest::Approx(expected).epsilon(1e-6));
}

TEST_CASE("cross entropy rejects out-of-range targets") {
  std::vector<float> logits = {0.f, 1.f};
  CHECK_THROWS_AS(cross_entropy(logits, 2), NumericError);
  CHECK_THROWS_AS(cross_entropy(logits, -1), NumericError);
}

TEST_CASE("cross entropy is non-negative on random logits") {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<float> logits(4);
    for (auto& x : logits) x = rng.uniform(-5.f, 5.f);
    CHECK(cross_entropy(logits, rng.uniform_int(4)) >= 0.f);
  }
}

TEST_CASE("argmax breaks ties toward the lowest index") {
  std::vector<float> v = {1.f, 3.f, 3.f, 2.f};
  CHECK(argmax(v.data(), 4) == 1);
}

TEST_CASE("tensor shape/value consistency is enforced") {
  CHECK_THROWS_AS(Tensor({2, 3}, {1.f, 2.f}), NumericError);
  Tensor t({2, 3});
  CHECK(t.numel() == 6);
  CHECK(t.all_finite());
  t[0] = std::nanf("");
  CHECK(!t.all_finite());
}

TEST_CASE("rng substreams are order-independent") {
  Rng a = stream_rng(42, {1, 7});
  Rng b = stream_rng(42, {1, 7});
  for (int i = 0; i < 16; ++i) CHECK(a.next_u64() == b.next_u64());
  // different path, different stream
  Rng c = stream_rng(42, {1, 8});
  CHECK(stream_rng(42, {1, 7}).next_u64() != c.next_u64());
}

TEST_CASE("rng uniform_int covers its range") {
  Rng rng(3);
  std::vector<int> seen(6, 0);
  for (int i = 0; i < 6000; ++i) {
    int k = rng.uniform_int(6);
    REQUIRE(k >= 0);
    REQUIRE(k < 6);
    seen[static_cast<size_t>(k)]++;
  }
  for (int c : seen) CHECK(c > 800);
}
