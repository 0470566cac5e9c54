#pragma once

// Adam with decoupled weight decay and the step-decay learning-rate
// schedule (x0.9 every 20000 iterations, floored at 1e-5).

#include <cmath>
#include <string>
#include <vector>

#include "milseg/model.hpp"
#include "milseg/tensor.hpp"

namespace milseg {

struct LrSchedule {
  double decay_factor = 0.9;
  long long decay_interval = 20000;
  double floor = 0.00001;

  double rate_at(double alpha, long long iteration) const {
    const double r =
        alpha * std::pow(decay_factor,
                         static_cast<double>(iteration / decay_interval));
    return std::max(floor, r);
  }
};

template <typename T>
class Adam {
 public:
  double alpha = 0.0001;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.000001;

  Adam() = default;
  Adam(double alpha, double beta1, double beta2, double epsilon,
       double weight_decay)
      : alpha(alpha), beta1(beta1), beta2(beta2), epsilon(epsilon),
        weight_decay(weight_decay) {}

  long long iterations() const { return t_; }

  double current_rate(const LrSchedule* schedule) const {
    return schedule ? schedule->rate_at(alpha, t_) : alpha;
  }

  // One Adam update with bias correction. The effective rate comes from
  // the schedule evaluated at the pre-increment iteration counter; weight
  // decay is applied as a separate rate*decay*param shrinkage.
  void step(std::vector<NamedParam<T>>& params,
            const LrSchedule* schedule = nullptr) {
    if (m_.empty()) {
      m_.resize(params.size());
      v_.resize(params.size());
      for (size_t i = 0; i < params.size(); ++i) {
        m_[i].assign(params[i].tensor.size(), T(0));
        v_[i].assign(params[i].tensor.size(), T(0));
      }
    }
    if (m_.size() != params.size())
      throw UsageError("adam: parameter set changed between steps");
    const double rate = current_rate(schedule);
    const long long t = ++t_;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i].tensor;
      if (!p.has_grad())
        throw UsageError("adam: missing gradient for " + params[i].name);
      auto& m = m_[i];
      auto& v = v_[i];
      if (m.size() != static_cast<size_t>(p.size()))
        throw UsageError("adam: moment shape mismatch for " + params[i].name);
      for (long long j = 0; j < p.size(); ++j) {
        const double g = static_cast<double>(p.grad()[j]);
        m[j] = static_cast<T>(beta1 * m[j] + (1.0 - beta1) * g);
        v[j] = static_cast<T>(beta2 * v[j] + (1.0 - beta2) * g * g);
        const double mhat = m[j] / bc1;
        const double vhat = v[j] / bc2;
        double upd = rate * mhat / (std::sqrt(vhat) + epsilon);
        upd += rate * weight_decay * static_cast<double>(p.data()[j]);
        p.data()[j] = static_cast<T>(p.data()[j] - upd);
      }
    }
  }

 private:
  long long t_ = 0;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
};

template <typename T>
void zero_grads(std::vector<NamedParam<T>>& params) {
  for (auto& p : params) p.tensor.zero_grad();
}

}  // namespace milseg
