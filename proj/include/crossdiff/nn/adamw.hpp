#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "crossdiff/nn/parameters.hpp"

namespace crossdiff::nn {

struct AdamWOptions {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Decoupled-weight-decay Adam over the non-frozen members of a ParameterSet.
template <typename T>
class AdamW {
 public:
  explicit AdamW(AdamWOptions options = {}) : options_(options) {}

  const AdamWOptions& options() const { return options_; }
  long steps() const { return step_; }

  /// Applies one update from the accumulated gradients, scaled by grad_scale,
  /// then zeroes them.
  void step(ParameterSet<T>& params, double grad_scale = 1.0) {
    ++step_;
    const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(step_));
    for (const auto& name : params.names()) {
      auto& p = params.at(name);
      if (p.frozen) continue;
      auto& st = state_[name];
      if (st.m.empty()) {
        st.m.assign(p.size(), 0.0);
        st.v.assign(p.size(), 0.0);
      }
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double g = static_cast<double>(p.grad[i]) * grad_scale;
        st.m[i] = options_.beta1 * st.m[i] + (1.0 - options_.beta1) * g;
        st.v[i] = options_.beta2 * st.v[i] + (1.0 - options_.beta2) * g * g;
        double w = static_cast<double>(p.value[i]);
        w -= options_.learning_rate * options_.weight_decay * w;
        w -= options_.learning_rate * (st.m[i] / bc1) / (std::sqrt(st.v[i] / bc2) + options_.eps);
        p.value[i] = static_cast<T>(w);
        p.grad[i] = T(0);
      }
    }
  }

 private:
  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
  };

  AdamWOptions options_;
  long step_ = 0;
  std::map<std::string, Moments> state_;
};

}  // namespace crossdiff::nn
