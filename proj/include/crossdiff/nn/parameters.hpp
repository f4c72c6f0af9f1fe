#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "crossdiff/nn/tensor.hpp"

namespace crossdiff::nn {

template <typename T>
struct Parameter {
  std::vector<int> shape;
  Buffer<T> value;
  mutable Buffer<T> grad;  // accumulation buffer, written by Graph::backward
  bool frozen = false;

  std::size_t size() const { return value.size(); }
};

/// Named parameter collection. Iteration follows insertion order; references
/// returned by add()/at() stay valid for the lifetime of the set.
template <typename T>
class ParameterSet {
 public:
  Parameter<T>& add(const std::string& name, std::vector<int> shape) {
    if (params_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
    std::size_t n = 1;
    for (int d : shape) {
      if (d < 1) throw std::invalid_argument("parameter dims must be positive: " + name);
      n *= static_cast<std::size_t>(d);
    }
    auto& p = params_[name];
    p.shape = std::move(shape);
    p.value.assign(n, T(0));
    p.grad.assign(n, T(0));
    order_.push_back(name);
    return p;
  }

  Parameter<T>& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::invalid_argument("unknown parameter: " + name);
    return it->second;
  }
  const Parameter<T>& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::invalid_argument("unknown parameter: " + name);
    return it->second;
  }
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  const std::vector<std::string>& names() const { return order_; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, p] : params_) n += p.size();
    return n;
  }

  void zero_grad() {
    for (auto& [_, p] : params_) std::fill(p.grad.begin(), p.grad.end(), T(0));
  }

  void set_frozen(bool frozen) {
    for (auto& [_, p] : params_) p.frozen = frozen;
  }

  template <typename U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out;
    for (const auto& name : order_) {
      const auto& src = at(name);
      auto& dst = out.add(name, src.shape);
      for (std::size_t i = 0; i < src.size(); ++i) dst.value[i] = static_cast<U>(src.value[i]);
      dst.frozen = src.frozen;
    }
    return out;
  }

  /// Bitwise equality of names, shapes and values.
  bool identical(const ParameterSet& other) const {
    if (order_ != other.order_) return false;
    for (const auto& name : order_) {
      const auto& a = at(name);
      const auto& b = other.at(name);
      if (a.shape != b.shape || a.value != b.value) return false;
    }
    return true;
  }

 private:
  std::vector<std::string> order_;
  std::map<std::string, Parameter<T>> params_;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.
template <typename T, typename Rng>
void init_uniform_fan_in(Parameter<T>& p, int fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : p.value) v = static_cast<T>(dist(rng));
}

}  // namespace crossdiff::nn
