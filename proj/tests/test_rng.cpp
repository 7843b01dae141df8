#include <catch2/catch_amalgamated.hpp>

#include <set>
#include <vector>

#include "driftwatch/hash.hpp"
#include "driftwatch/rng.hpp"

using namespace driftwatch;

TEST_CASE("fnv1a64 matches published reference values") {
  CHECK(hash::fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(hash::fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(hash::fnv1a64("foobar") == 0x85944171f73967e8ULL);
  CHECK(hash::hex64(0xdeadbeefULL) == "00000000deadbeef");
}

TEST_CASE("substreams are reproducible and distinct") {
  auto a1 = rng::substream(42, 7);
  auto a2 = rng::substream(42, 7);
  auto b = rng::substream(42, 8);
  bool all_equal = true, any_equal_cross = false;
  for (int i = 0; i < 64; ++i) {
    auto x = a1.next(), y = a2.next(), z = b.next();
    all_equal = all_equal && x == y;
    any_equal_cross = any_equal_cross || x == z;
  }
  CHECK(all_equal);
  CHECK_FALSE(any_equal_cross);
}

TEST_CASE("mix depends on both arguments") {
  CHECK(rng::mix(1, 2) != rng::mix(2, 1));
  CHECK(rng::mix(1, 2) != rng::mix(1, 3));
  CHECK(rng::mix(1, "alpha") != rng::mix(1, "beta"));
}

TEST_CASE("uniform stays in the half-open unit interval") {
  auto g = rng::substream(5, 0);
  for (int i = 0; i < 10000; ++i) {
    double u = g.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("bounded draws cover exactly the requested range") {
  auto g = rng::substream(6, 0);
  std::vector<std::size_t> seen(5, 0);
  for (int i = 0; i < 5000; ++i) ++seen[g.bounded(5)];
  for (auto c : seen) CHECK(c > 800);
  CHECK(g.bounded(1) == 0);
}

TEST_CASE("shuffle produces a permutation") {
  auto g = rng::substream(7, 0);
  std::vector<int> v(20);
  for (int i = 0; i < 20; ++i) v[i] = i;
  rng::shuffle(v, g);
  std::set<int> s(v.begin(), v.end());
  CHECK(s.size() == 20);
}

TEST_CASE("sampling without replacement is sorted and distinct") {
  auto g = rng::substream(8, 0);
  auto s = rng::sample_without_replacement(100, 25, g);
  REQUIRE(s.size() == 25);
  for (std::size_t i = 1; i < s.size(); ++i) CHECK(s[i - 1] < s[i]);
  for (auto x : s) CHECK(x < 100);

  auto g2 = rng::substream(8, 0);
  CHECK(rng::sample_without_replacement(100, 25, g2) == s);

  auto all = rng::sample_without_replacement(10, 10, g);
  CHECK(all.size() == 10);
}
