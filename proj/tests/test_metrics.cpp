#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "milseg/metrics.hpp"

using namespace milseg;

namespace {

// O(P*N) Mann-Whitney statistic, the textbook definition of AUC.
double pairwise_auc(const std::vector<double>& scores,
                    const std::vector<int>& labels) {
  double wins = 0.0;
  long long pairs = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != +1) continue;
    for (size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != -1) continue;
      ++pairs;
      if (scores[i] > scores[j])
        wins += 1.0;
      else if (scores[i] == scores[j])
        wins += 0.5;
    }
  }
  return wins / static_cast<double>(pairs);
}

}  // namespace

TEST_CASE("perfect and inverted rankings") {
  std::vector<double> s{0.9, 0.8, 0.2, 0.1};
  std::vector<int> y{+1, +1, -1, -1};
  CHECK(auc(s, y) == 1.0);
  std::vector<int> flipped{-1, -1, +1, +1};
  CHECK(auc(s, flipped) == 0.0);
  std::vector<double> tied{0.5, 0.5, 0.5, 0.5};
  CHECK(auc(tied, y) == 0.5);
}

TEST_CASE("confusion metrics for a hand-checked split") {
  // 10 positives, 10 negatives; 8 true positives, 2 false negatives,
  // all negatives correct: acc 0.90, prec 1.0, rec 0.8, f1 8/9.
  std::vector<double> s, l;
  std::vector<int> y;
  for (int i = 0; i < 8; ++i) { s.push_back(0.9); y.push_back(+1); }
  for (int i = 0; i < 2; ++i) { s.push_back(0.1); y.push_back(+1); }
  for (int i = 0; i < 10; ++i) { s.push_back(0.2); y.push_back(-1); }
  auto r = evaluate(s, y, 0.5);
  CHECK(r.tp == 8);
  CHECK(r.fn == 2);
  CHECK(r.tn == 10);
  CHECK(r.fp == 0);
  CHECK(r.accuracy == doctest::Approx(0.90).epsilon(1e-12));
  CHECK(r.precision == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.recall == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(r.f1 == doctest::Approx(8.0 / 9.0).epsilon(1e-12));
  REQUIRE(r.auc.has_value());
  CHECK(*r.auc == doctest::Approx(pairwise_auc(s, y)).epsilon(1e-12));
}

TEST_CASE("threshold boundary counts score == threshold as positive") {
  auto r = evaluate({0.5, 0.49}, {+1, -1}, 0.5);
  CHECK(r.tp == 1);
  CHECK(r.tn == 1);
}

TEST_CASE("trapezoidal AUC equals the pairwise oracle on random data") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  // quantized scores force plenty of ties
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 60);
    std::vector<double> s(n);
    std::vector<int> y(n);
    bool has_pos = false, has_neg = false;
    for (int i = 0; i < n; ++i) {
      s[i] = std::floor(uni(rng) * 8.0) / 8.0;
      y[i] = rng() % 2 ? +1 : -1;
      (y[i] == +1 ? has_pos : has_neg) = true;
    }
    if (!has_pos || !has_neg) {
      CHECK_THROWS_AS(auc(s, y), InputError);
      continue;
    }
    CHECK(auc(s, y) == doctest::Approx(pairwise_auc(s, y)).epsilon(1e-12));
  }
}

TEST_CASE("AUC is invariant under monotone transforms of the scores") {
  std::mt19937_64 rng(32);
  std::uniform_real_distribution<double> uni(0.01, 0.99);
  std::vector<double> s(40);
  std::vector<int> y(40);
  for (int i = 0; i < 40; ++i) {
    s[i] = uni(rng);
    y[i] = i % 3 == 0 ? +1 : -1;
  }
  const double base = auc(s, y);
  std::vector<double> logit(40), cubed(40);
  for (int i = 0; i < 40; ++i) {
    logit[i] = std::log(s[i] / (1.0 - s[i]));
    cubed[i] = s[i] * s[i] * s[i];
  }
  CHECK(auc(logit, y) == doctest::Approx(base).epsilon(1e-12));
  CHECK(auc(cubed, y) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("ROC runs from (0,0) to (1,1) and is monotone") {
  std::mt19937_64 rng(33);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<double> s(30);
  std::vector<int> y(30);
  for (int i = 0; i < 30; ++i) {
    s[i] = std::floor(uni(rng) * 4.0) / 4.0;
    y[i] = rng() % 2 ? +1 : -1;
  }
  auto roc = roc_curve(s, y);
  REQUIRE(roc.size() >= 2);
  CHECK(roc.front().fpr == 0.0);
  CHECK(roc.front().tpr == 0.0);
  CHECK(std::isinf(roc.front().threshold));
  CHECK(roc.back().fpr == 1.0);
  CHECK(roc.back().tpr == 1.0);
  for (size_t i = 1; i < roc.size(); ++i) {
    CHECK(roc[i].fpr >= roc[i - 1].fpr);
    CHECK(roc[i].tpr >= roc[i - 1].tpr);
    CHECK(roc[i].threshold < roc[i - 1].threshold);
  }
}

TEST_CASE("input validation") {
  CHECK_THROWS_AS(evaluate({}, {}), InputError);
  CHECK_THROWS_AS(evaluate({0.5}, {+1, -1}), InputError);
  CHECK_THROWS_AS(evaluate({0.5, 0.5}, {+1, 0}), InputError);
  CHECK_THROWS_AS(auc({0.5, 0.6}, {+1, +1}), InputError);
}

TEST_CASE("single-class evaluation has no AUC but valid counts") {
  auto r = evaluate({0.9, 0.2}, {+1, +1}, 0.5);
  CHECK(!r.auc.has_value());
  CHECK(r.tp == 1);
  CHECK(r.fn == 1);
  CHECK(r.roc_points.empty());
}

TEST_CASE("fold aggregation is the unweighted mean") {
  EvalReport a, b;
  a.accuracy = 0.8; a.precision = 1.0; a.recall = 0.6; a.f1 = 0.75; a.auc = 0.9;
  b.accuracy = 0.6; b.precision = 0.5; b.recall = 1.0; b.f1 = 2.0 / 3.0; b.auc = 0.7;
  auto m = aggregate_folds({a, b});
  CHECK(m.accuracy == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(m.precision == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(m.recall == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(m.f1 == doctest::Approx((0.75 + 2.0 / 3.0) / 2.0).epsilon(1e-12));
  REQUIRE(m.auc.has_value());
  CHECK(*m.auc == doctest::Approx(0.8).epsilon(1e-12));
  CHECK_THROWS_AS(aggregate_folds({}), InputError);
}

TEST_CASE("csv round trip") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "milseg_metrics_test";
  fs::create_directories(dir);

  std::vector<double> s{0.9, 0.7, 0.4, 0.1};
  std::vector<int> y{+1, -1, +1, -1};
  auto r = evaluate(s, y);
  const std::string roc_path = (dir / "roc.csv").string();
  write_roc_csv(roc_path, r.roc_points);
  auto back = read_roc_csv(roc_path);
  REQUIRE(back.size() == r.roc_points.size());
  for (size_t i = 0; i < back.size(); ++i) {
    if (std::isinf(r.roc_points[i].threshold))
      CHECK(std::isinf(back[i].threshold));
    else
      CHECK(back[i].threshold ==
            doctest::Approx(r.roc_points[i].threshold).epsilon(1e-12));
    CHECK(back[i].fpr == doctest::Approx(r.roc_points[i].fpr).epsilon(1e-12));
    CHECK(back[i].tpr == doctest::Approx(r.roc_points[i].tpr).epsilon(1e-12));
  }

  const std::string metrics_path = (dir / "metrics.csv").string();
  write_metrics_csv(metrics_path, {r, r}, aggregate_folds({r, r}));
  std::ifstream f(metrics_path);
  std::string line;
  std::getline(f, line);
  CHECK(line == "fold,accuracy,precision,recall,f1,auc");
  int rows = 0;
  std::string last;
  while (std::getline(f, line))
    if (!line.empty()) { ++rows; last = line; }
  CHECK(rows == 3);  // two folds plus the mean row
  CHECK(last.substr(0, 5) == "mean,");
}
