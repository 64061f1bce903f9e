#ifndef GABORSCOPE_ADAM_HPP
#define GABORSCOPE_ADAM_HPP

#include <cmath>
#include <unordered_map>
#include <vector>

#include "gaborscope/autodiff.hpp"
#include "gaborscope/tensor.hpp"

namespace gaborscope {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second-moment state per parameter, keyed by the Param object. One
// shared timestep for all parameters, advanced once per step() call.
template <class T>
class AdamState {
 public:
  explicit AdamState(AdamConfig cfg = {}) : cfg_(cfg) {}

  // One update from the gradients currently held in each param. lr is the
  // already-scheduled learning rate for this step.
  void step(const std::vector<Param<T>*>& params, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (Param<T>* p : params) {
      Slot& s = slots_[p];
      if (s.m.size() == 0) {
        s.m = Tensor<T>(p->value.shape);
        s.v = Tensor<T>(p->value.shape);
      }
      for (std::int64_t i = 0; i < p->value.size(); ++i) {
        const double g = static_cast<double>(p->grad.data[i]);
        double m = cfg_.beta1 * static_cast<double>(s.m.data[i]) + (1.0 - cfg_.beta1) * g;
        double v = cfg_.beta2 * static_cast<double>(s.v.data[i]) + (1.0 - cfg_.beta2) * g * g;
        s.m.data[i] = static_cast<T>(m);
        s.v.data[i] = static_cast<T>(v);
        const double update = lr * (m / bc1) / (std::sqrt(v / bc2) + cfg_.eps);
        p->value.data[i] -= static_cast<T>(update);
      }
    }
  }

  long timestep() const { return t_; }

 private:
  struct Slot {
    Tensor<T> m, v;
  };
  AdamConfig cfg_;
  long t_ = 0;
  std::unordered_map<Param<T>*, Slot> slots_;
};

}  // namespace gaborscope

#endif
