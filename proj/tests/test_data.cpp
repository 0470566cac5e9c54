#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "milseg/data.hpp"

using namespace milseg;
namespace fs = std::filesystem;

namespace {

double mean_of(const ImageGrid& img) {
  return std::accumulate(img.v.begin(), img.v.end(), 0.0) /
         static_cast<double>(img.v.size());
}

LabeledImage indexed_image(int n) {
  LabeledImage img;
  img.pixels = ImageGrid(n, n);
  img.truth_mask = BinaryMask(n, n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      img.pixels.v[r * n + c] = static_cast<float>(r * n + c) / (n * n);
      img.truth_mask->set(r, c, (r + c) % 2 != 0);
    }
  img.bag_label = kLabelGood;
  img.id = "idx";
  return img;
}

}  // namespace

TEST_CASE("mil bag label matches the any-positive rule exhaustively") {
  // all 2^8 sign patterns over 8 instances
  for (int bits = 0; bits < 256; ++bits) {
    std::vector<int> inst(8);
    bool any_pos = false;
    for (int i = 0; i < 8; ++i) {
      inst[i] = (bits >> i) & 1 ? kLabelGood : kLabelBad;
      any_pos = any_pos || inst[i] == kLabelGood;
    }
    CHECK(mil_bag_label(inst) == (any_pos ? kLabelGood : kLabelBad));
  }
  CHECK_THROWS_AS(mil_bag_label({}), InputError);
  CHECK_THROWS_AS(mil_bag_label({0}), InputError);
}

TEST_CASE("generator is deterministic and sized as requested") {
  SyntheticParams p;
  auto a = generate_synthetic(p, 54, 40);
  auto b = generate_synthetic(p, 54, 40);
  REQUIRE(a.items.size() == 94);
  CHECK(a.count_label(kLabelGood) == 54);
  CHECK(a.count_label(kLabelBad) == 40);
  for (size_t i = 0; i < a.items.size(); ++i) {
    CHECK(a.items[i].pixels.v == b.items[i].pixels.v);
    CHECK(a.items[i].id == b.items[i].id);
    REQUIRE(a.items[i].truth_mask.has_value());
    CHECK(a.items[i].truth_mask->bits == b.items[i].truth_mask->bits);
  }
  SyntheticParams q = p;
  q.seed = 999;
  auto c = generate_synthetic(q, 54, 40);
  CHECK(c.items[0].pixels.v != a.items[0].pixels.v);
}

TEST_CASE("good masks are substantial and mean intensity does not separate") {
  SyntheticParams p;
  auto d = generate_synthetic(p, 30, 30);
  double good_mean = 0.0, bad_mean = 0.0;
  const double total = static_cast<double>(p.image_size) * p.image_size;
  for (const auto& it : d.items) {
    if (it.bag_label == kLabelGood) {
      CHECK(it.truth_mask->count() >= 0.05 * total);
      good_mean += mean_of(it.pixels) / 30.0;
    } else {
      CHECK(it.truth_mask->count() > 0);
      bad_mean += mean_of(it.pixels) / 30.0;
    }
    for (float v : it.pixels.v) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }
  // the classes must not be separable by their mean intensity: the best
  // single-threshold classifier on per-image means stays near chance
  std::vector<std::pair<double, int>> by_mean;
  for (const auto& it : d.items)
    by_mean.emplace_back(mean_of(it.pixels), it.bag_label);
  std::sort(by_mean.begin(), by_mean.end());
  int best = 0;
  for (size_t cut = 0; cut <= by_mean.size(); ++cut) {
    int correct_lo = 0, correct_hi = 0;
    for (size_t i = 0; i < by_mean.size(); ++i) {
      const bool below = i < cut;
      if ((below && by_mean[i].second == kLabelBad) ||
          (!below && by_mean[i].second == kLabelGood))
        ++correct_lo;
      else
        ++correct_hi;
    }
    best = std::max({best, correct_lo, correct_hi});
  }
  CHECK(static_cast<double>(best) / by_mean.size() < 0.75);
  CHECK(std::abs(good_mean - bad_mean) < 0.05);
  CHECK(good_mean == doctest::Approx(p.target_mean).epsilon(0.15));

  // mask area, by contrast, does separate the classes almost perfectly
  std::vector<std::pair<double, int>> by_area;
  for (const auto& it : d.items)
    by_area.emplace_back(static_cast<double>(it.truth_mask->count()),
                         it.bag_label);
  std::sort(by_area.begin(), by_area.end());
  int area_best = 0;
  for (size_t cut = 0; cut <= by_area.size(); ++cut) {
    int correct = 0;
    for (size_t i = 0; i < by_area.size(); ++i)
      if ((i < cut) == (by_area[i].second == kLabelBad)) ++correct;
    area_best = std::max(area_best, correct);
  }
  CHECK(static_cast<double>(area_best) / by_area.size() >= 0.95);
}

TEST_CASE("augmentation matches index oracles on a 3x3 grid") {
  auto img = indexed_image(3);
  auto variants = augment(img);
  REQUIRE(variants.size() == 6);
  const std::vector<std::string> suffixes{"_id", "_hf", "_vf",
                                          "_r90", "_r180", "_r270"};
  for (size_t i = 0; i < 6; ++i) {
    CHECK(variants[i].id == img.id + suffixes[i]);
    CHECK(variants[i].bag_label == img.bag_label);
  }
  auto px = [&](const LabeledImage& v, int r, int c) {
    return v.pixels.v[r * 3 + c];
  };
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      CHECK(px(variants[0], r, c) == px(img, r, c));
      CHECK(px(variants[1], r, c) == px(img, r, 2 - c));          // hflip
      CHECK(px(variants[2], r, c) == px(img, 2 - r, c));          // vflip
      CHECK(px(variants[3], r, c) == px(img, 2 - c, r));          // rot90
      CHECK(px(variants[4], r, c) == px(img, 2 - r, 2 - c));      // rot180
      CHECK(px(variants[5], r, c) == px(img, c, 2 - r));          // rot270
      // masks transform in lockstep with pixels
      CHECK(variants[3].truth_mask->at(r, c) == img.truth_mask->at(2 - c, r));
    }
}

TEST_CASE("augmentation group identities") {
  auto img = indexed_image(8);
  auto v = augment(img);
  // rot180 == rot90 applied twice == hflip then vflip
  auto r90_twice = augment(v[3])[3];
  CHECK(r90_twice.pixels.v == v[4].pixels.v);
  auto hf_vf = augment(v[1])[2];
  CHECK(hf_vf.pixels.v == v[4].pixels.v);
  // rot270 then rot90 is the identity
  CHECK(augment(v[4])[4].pixels.v == img.pixels.v);
  CHECK(augment(v[5])[3].pixels.v == img.pixels.v);
}

TEST_CASE("stratified k-fold split") {
  auto d = generate_synthetic(SyntheticParams{}, 54, 40);
  auto split = kfold_split(d, 5, 42);
  REQUIRE(split.fold_of.size() == d.items.size());
  std::vector<int> sizes(5, 0);
  std::vector<int> good_in(5, 0);
  for (size_t i = 0; i < d.items.size(); ++i) {
    REQUIRE(split.fold_of[i] >= 0);
    REQUIRE(split.fold_of[i] < 5);
    ++sizes[split.fold_of[i]];
    if (d.items[i].bag_label == kLabelGood) ++good_in[split.fold_of[i]];
  }
  std::vector<int> sorted = sizes;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == std::vector<int>{18, 19, 19, 19, 19});
  // stratification: 54 good over 5 folds -> 10 or 11 per fold
  for (int g : good_in) {
    CHECK(g >= 10);
    CHECK(g <= 11);
  }
  auto again = kfold_split(d, 5, 42);
  CHECK(again.fold_of == split.fold_of);
  auto other = kfold_split(d, 5, 43);
  CHECK(other.fold_of != split.fold_of);
  CHECK_THROWS_AS(kfold_split(d, 0, 1), ConfigError);
  CHECK_THROWS_AS(kfold_split(d, 200, 1), ConfigError);
}

TEST_CASE("holdout split takes per-class train counts") {
  auto d = generate_synthetic(SyntheticParams{}, 54, 40);
  auto [train, test] = holdout_split(d, 44, 30, 7);
  CHECK(train.items.size() == 74);
  CHECK(test.items.size() == 20);
  CHECK(train.count_label(kLabelGood) == 44);
  CHECK(train.count_label(kLabelBad) == 30);
  CHECK(test.count_label(kLabelGood) == 10);
  CHECK(test.count_label(kLabelBad) == 10);
  std::set<std::string> train_ids, test_ids;
  for (const auto& it : train.items) train_ids.insert(it.id);
  for (const auto& it : test.items) test_ids.insert(it.id);
  CHECK(train_ids.size() == 74);
  for (const auto& id : test_ids) CHECK(train_ids.count(id) == 0);
  CHECK_THROWS_AS(holdout_split(d, 55, 30, 7), ConfigError);
}

TEST_CASE("pgm round trip with round-half-up quantization") {
  const fs::path dir = fs::temp_directory_path() / "milseg_pgm_test";
  fs::create_directories(dir);
  const std::string path = (dir / "t.pgm").string();

  ImageGrid img(2, 3);
  img.v = {0.0f, 0.5f, 1.0f, 0.25f, 0.75f, 128.0f / 255.0f};
  save_pgm(path, img);
  auto back = load_pgm(path);
  REQUIRE(back.h == 2);
  REQUIRE(back.w == 3);
  // 0.5 * 255 = 127.5 rounds half up to byte 128
  CHECK(back.v[1] == doctest::Approx(128.0 / 255.0).epsilon(1e-7));
  CHECK(back.v[0] == 0.0f);
  CHECK(back.v[2] == 1.0f);
  CHECK(back.v[5] == doctest::Approx(128.0 / 255.0).epsilon(1e-7));
  // a second trip is exact: quantization is idempotent
  save_pgm(path, back);
  CHECK(load_pgm(path).v == back.v);

  SUBCASE("truncated file") {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f << "P5\n3 2\n255\n";
    f.write("\x01\x02", 2);
    f.close();
    CHECK_THROWS_AS(load_pgm(path), IoError);
  }
  SUBCASE("wrong magic") {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f << "P6\n1 1\n255\nx";
    f.close();
    CHECK_THROWS_AS(load_pgm(path), IoError);
  }
}

TEST_CASE("dataset directory round trip") {
  const fs::path dir = fs::temp_directory_path() / "milseg_ds_test";
  fs::remove_all(dir);

  SyntheticParams p;
  p.image_size = 32;
  auto d = generate_synthetic(p, 3, 2);
  save_dataset(dir.string(), d);
  auto back = load_dataset(dir.string());
  REQUIRE(back.items.size() == d.items.size());
  // loaders sort by id; compare via lookup
  for (const auto& orig : d.items) {
    auto it = std::find_if(back.items.begin(), back.items.end(),
                           [&](const LabeledImage& x) { return x.id == orig.id; });
    REQUIRE(it != back.items.end());
    CHECK(it->bag_label == orig.bag_label);
    REQUIRE(it->truth_mask.has_value());
    CHECK(it->truth_mask->bits == orig.truth_mask->bits);
    // pixels already quantized by the generator path? compare after one trip
    ImageGrid expect = orig.pixels;
    const fs::path tmp = dir / "roundtrip.pgm";
    save_pgm(tmp.string(), expect);
    CHECK(it->pixels.v == load_pgm(tmp.string()).v);
  }
  CHECK_THROWS_AS(load_dataset((dir / "missing").string()), IoError);
}
