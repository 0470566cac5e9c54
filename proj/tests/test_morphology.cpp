#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "milseg/morphology.hpp"

using namespace milseg;

namespace {

BinaryMask random_mask(int h, int w, double density, std::mt19937_64& rng) {
  BinaryMask m(h, w);
  std::bernoulli_distribution coin(density);
  for (auto& b : m.bits) b = coin(rng) ? 1 : 0;
  return m;
}

BinaryMask filled_rect(int h, int w, int r0, int c0, int rh, int rw) {
  BinaryMask m(h, w);
  for (int r = r0; r < r0 + rh; ++r)
    for (int c = c0; c < c0 + rw; ++c) m.set(r, c, true);
  return m;
}

bool subset_of(const BinaryMask& a, const BinaryMask& b) {
  for (size_t i = 0; i < a.bits.size(); ++i)
    if (a.bits[i] && !b.bits[i]) return false;
  return true;
}

}  // namespace

TEST_CASE("erosion of an all-ones mask shrinks only at the border") {
  BinaryMask m(8, 8, true);
  StructuringElement z{3, 3};
  auto e = erode(m, z);
  // window (i-1..i+1) must stay in bounds, so the one-pixel frame dies
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c)
      CHECK(e.at(r, c) == (r >= 1 && r <= 6 && c >= 1 && c <= 6));
}

TEST_CASE("dilation of a single pixel paints the reflected window") {
  BinaryMask m(9, 9);
  m.set(4, 4, true);
  StructuringElement z{3, 3};
  auto d = dilate(m, z);
  CHECK(d.count() == 9);
  for (int r = 3; r <= 5; ++r)
    for (int c = 3; c <= 5; ++c) CHECK(d.at(r, c));

  SUBCASE("even element is asymmetric about its anchor") {
    auto d2 = dilate(m, StructuringElement{2, 2});
    // anchor (1,1); reflected window offsets {-1+1, 0+1} - wait, offsets
    // are {0-1, 1-1} = {-1, 0}: pixel spreads up-left
    CHECK(d2.count() == 4);
    CHECK(d2.at(4, 4));
    CHECK(d2.at(3, 3));
    CHECK(d2.at(3, 4));
    CHECK(d2.at(4, 3));
  }
}

TEST_CASE("opening keeps a large square and kills small speckle") {
  // a 25x25 solid square survives a 20x20 opening
  auto square = filled_rect(64, 64, 10, 10, 25, 25);
  StructuringElement big{20, 20};
  auto opened = opening(square, big);
  CHECK(opened == square);

  // a 5x5 blob cannot fit the element anywhere
  auto blob = filled_rect(64, 64, 30, 30, 5, 5);
  CHECK(opening(blob, big).count() == 0);

  // speckle union: the square survives, the blob dies
  BinaryMask both = square;
  for (size_t i = 0; i < both.bits.size(); ++i)
    both.bits[i] = both.bits[i] | blob.bits[i];
  CHECK(opening(both, big) == square);
}

TEST_CASE("opening is an algebraic opening on random masks") {
  std::mt19937_64 rng(606);
  StructuringElement z{5, 5};
  for (int trial = 0; trial < 25; ++trial) {
    auto m = random_mask(32, 32, 0.4 + 0.02 * trial, rng);
    auto o = opening(m, z);
    // anti-extensive
    CHECK(subset_of(o, m));
    // idempotent
    CHECK(opening(o, z) == o);
    // increasing: opening a subset stays a subset
    auto sub = m;
    for (auto& b : sub.bits)
      if (b && std::bernoulli_distribution(0.3)(rng)) b = 0;
    CHECK(subset_of(opening(sub, z), o));
  }
}

TEST_CASE("erosion and dilation are exact duals") {
  std::mt19937_64 rng(707);
  for (const auto& z : {StructuringElement{3, 3}, StructuringElement{4, 4},
                        StructuringElement{2, 5}, StructuringElement{5, 2},
                        StructuringElement{1, 1}}) {
    for (int trial = 0; trial < 10; ++trial) {
      auto m = random_mask(20, 20, 0.5, rng);
      auto lhs = erode(m, z);
      auto rhs = invert(dilate(invert(m), z.reflected(), Border::kOne));
      CHECK(lhs == rhs);
    }
  }
}

TEST_CASE("largest component keeps the biggest region, earliest on ties") {
  BinaryMask m(10, 10);
  // 4 pixels top-left, 6 pixels bottom-right
  for (int c = 0; c < 4; ++c) m.set(0, c, true);
  for (int c = 2; c < 8; ++c) m.set(9, c, true);
  auto keep = largest_component(m);
  CHECK(keep.count() == 6);
  CHECK(keep.at(9, 2));
  CHECK(!keep.at(0, 0));

  SUBCASE("tie goes to the earlier row-major component") {
    BinaryMask t(6, 6);
    for (int c = 0; c < 3; ++c) t.set(1, c, true);
    for (int c = 3; c < 6; ++c) t.set(4, c, true);
    auto k = largest_component(t);
    CHECK(k.count() == 3);
    CHECK(k.at(1, 0));
    CHECK(!k.at(4, 3));
  }
  SUBCASE("diagonal neighbors are not connected") {
    BinaryMask d3(3, 3);
    d3.set(0, 0, true);
    d3.set(1, 1, true);
    d3.set(1, 2, true);
    auto k = largest_component(d3);
    CHECK(k.count() == 2);
    CHECK(!k.at(0, 0));
  }
  SUBCASE("empty stays empty") {
    CHECK(largest_component(BinaryMask(4, 4)).count() == 0);
  }
}

TEST_CASE("invalid elements and shapes are rejected") {
  BinaryMask m(8, 8, true);
  CHECK_THROWS_AS(erode(m, StructuringElement{0, 3}), ConfigError);
  CHECK_THROWS_AS(dilate(m, StructuringElement{3, 0}), ConfigError);
  CHECK_THROWS_AS(erode(m, StructuringElement{9, 9}), ConfigError);
}
