#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "milseg/optim.hpp"

using namespace milseg;

namespace {

std::vector<NamedParam<double>> single_param(double value) {
  Tensor<double> t = Tensor<double>::from_data({1}, {value}, true);
  return {{"p", t}};
}

// Straight transcription of the Adam recurrence, kept independent of the
// optimizer class so it can serve as an oracle.
struct RefAdam {
  double alpha, b1, b2, eps, wd;
  std::vector<double> m, v;
  long long t = 0;
  void step(std::vector<double>& x, const std::vector<double>& g, double lr) {
    if (m.empty()) {
      m.assign(x.size(), 0.0);
      v.assign(x.size(), 0.0);
    }
    ++t;
    for (size_t i = 0; i < x.size(); ++i) {
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(b1, t));
      const double vh = v[i] / (1 - std::pow(b2, t));
      x[i] -= lr * mh / (std::sqrt(vh) + eps) + lr * wd * x[i];
    }
  }
};

}  // namespace

TEST_CASE("first step with unit gradient moves by roughly alpha") {
  // m_hat = v_hat = 1 after one step, so the update is alpha/(1+eps).
  auto params = single_param(1.0);
  params[0].tensor.grad()[0] = 1.0;
  Adam<double> adam(0.1, 0.5, 0.999, 1e-8, 0.0);
  adam.step(params);
  CHECK(params[0].tensor.data()[0] ==
        doctest::Approx(1.0 - 0.1 / (1.0 + 1e-8)).epsilon(1e-12));
}

TEST_CASE("zero gradient leaves the parameter unchanged") {
  auto params = single_param(3.0);
  params[0].tensor.grad()[0] = 0.0;
  Adam<double> adam(0.1, 0.5, 0.999, 1e-8, 0.0);
  adam.step(params);
  CHECK(params[0].tensor.data()[0] == 3.0);
}

TEST_CASE("missing gradient is a usage error") {
  Tensor<double> t = Tensor<double>::from_data({1}, {1.0}, true);
  std::vector<NamedParam<double>> params{{"w", t}};
  Adam<double> adam;
  CHECK_THROWS_AS(adam.step(params), UsageError);
}

TEST_CASE("schedule decays by 0.9 every 20000 steps with a floor") {
  LrSchedule s;
  const double a = 0.0001;
  CHECK(s.rate_at(a, 0) == doctest::Approx(0.0001).epsilon(1e-15));
  CHECK(s.rate_at(a, 19999) == doctest::Approx(0.0001).epsilon(1e-15));
  CHECK(s.rate_at(a, 20000) == doctest::Approx(0.00009).epsilon(1e-12));
  CHECK(s.rate_at(a, 40000) == doctest::Approx(0.000081).epsilon(1e-12));
  // deep into the decay the floor takes over
  CHECK(s.rate_at(a, 20000ll * 400) == doctest::Approx(0.00001).epsilon(1e-15));
}

TEST_CASE("minimizes x^2 from 5 within 2000 steps") {
  auto params = single_param(5.0);
  Adam<double> adam(0.01, 0.5, 0.999, 1e-8, 0.0);
  for (int i = 0; i < 2000; ++i) {
    auto& x = params[0].tensor;
    x.zero_grad();
    x.grad()[0] = 2.0 * x.data()[0];
    adam.step(params);
  }
  CHECK(std::abs(params[0].tensor.data()[0]) < 1e-3);
}

TEST_CASE("matches a reference transcription of the recurrence") {
  std::mt19937_64 rng(404);
  std::normal_distribution<double> gauss(0.0, 1.0);

  Tensor<double> t = Tensor<double>::zeros({3, 2}, true);
  for (auto& v : t.data()) v = gauss(rng);
  std::vector<NamedParam<double>> params{{"w", t}};
  std::vector<double> ref = t.data();

  Adam<double> adam(0.003, 0.5, 0.999, 1e-8, 1e-6);
  RefAdam oracle{0.003, 0.5, 0.999, 1e-8, 1e-6};
  LrSchedule sched;
  sched.decay_interval = 4;  // force several decays within the loop

  for (int step = 0; step < 30; ++step) {
    std::vector<double> g(ref.size());
    for (auto& v : g) v = gauss(rng);
    t.zero_grad();
    std::copy(g.begin(), g.end(), t.grad().begin());
    const double lr = sched.rate_at(adam.alpha, step);
    adam.step(params, &sched);
    oracle.step(ref, g, lr);
    for (size_t i = 0; i < ref.size(); ++i)
      CHECK(t.data()[i] == doctest::Approx(ref[i]).epsilon(1e-10));
  }
}

TEST_CASE("zero_grads clears and is idempotent") {
  auto params = single_param(1.0);
  params[0].tensor.grad()[0] = 7.0;
  zero_grads(params);
  CHECK(params[0].tensor.grad()[0] == 0.0);
  zero_grads(params);
  CHECK(params[0].tensor.grad()[0] == 0.0);
}
