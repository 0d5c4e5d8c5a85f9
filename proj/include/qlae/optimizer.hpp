#pragma once

#include "qlae/autodiff.hpp"
#include "qlae/tensor.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace qlae {

/// Adam with decoupled weight decay, applied per registered parameter.
/// Network weights register with the configured decay (AdamW); biases and
/// codebook entries register with decay zero, which is plain Adam. Updates
/// run in registration order, which is also the checkpoint payload order.
template <class T>
class GroupedAdamW {
public:
  struct Entry {
    Var<T> param;
    T weight_decay;
    Tensor<T> m;
    Tensor<T> v;
  };

  GroupedAdamW() = default;
  GroupedAdamW(T lr, T beta1, T beta2, T eps)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void add_parameter(Var<T> p, T weight_decay) {
    Entry e;
    e.m = Tensor<T>(p->value.shape());
    e.v = Tensor<T>(p->value.shape());
    e.param = std::move(p);
    e.weight_decay = weight_decay;
    entries_.push_back(std::move(e));
  }

  /// One update from a gradient map; parameters absent from the map are
  /// treated as having zero gradient.
  void step(const GradMap<T>& grads) {
    ++step_count_;
    const T bc1 = T(1) - std::pow(beta1_, static_cast<T>(step_count_));
    const T bc2 = T(1) - std::pow(beta2_, static_cast<T>(step_count_));
    for (Entry& e : entries_) {
      const auto it = grads.find(e.param.get());
      auto m = as_array(e.m);
      auto v = as_array(e.v);
      auto theta = as_array(e.param->value);
      if (it != grads.end()) {
        const auto g = as_array(it->second);
        m = beta1_ * m + (T(1) - beta1_) * g;
        v = beta2_ * v + (T(1) - beta2_) * g.square();
      } else {
        m *= beta1_;
        v *= beta2_;
      }
      theta -= lr_ * ((m / bc1) / ((v / bc2).sqrt() + eps_) + e.weight_decay * theta);
    }
  }

  long step_count() const { return step_count_; }
  void set_step_count(long c) { step_count_ = c; }
  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  T learning_rate() const { return lr_; }

private:
  T lr_ = T(1e-3);
  T beta1_ = T(0.9);
  T beta2_ = T(0.99);
  T eps_ = T(1e-8);
  long step_count_ = 0;
  std::vector<Entry> entries_;
};

}  // namespace qlae
