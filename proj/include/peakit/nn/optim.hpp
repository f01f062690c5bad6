#pragma once

#include <span>
#include <vector>

#include "peakit/error.hpp"
#include "peakit/nn/layers.hpp"

namespace peakit::nn {

/// One momentum-SGD update in place:
///   v <- momentum * v + grad + weight_decay * param
///   param <- param - lr * v
template <typename T>
void sgd_step(std::span<T> param, std::span<const T> grad, std::span<T> velocity, T lr, T momentum, T weight_decay) {
  if (grad.size() != param.size() || velocity.size() != param.size())
    fail(ErrorCode::ShapeMismatch, "sgd_step: parameter, gradient and velocity lengths differ");
  for (std::size_t i = 0; i < param.size(); ++i) {
    velocity[i] = momentum * velocity[i] + grad[i] + weight_decay * param[i];
    param[i] -= lr * velocity[i];
  }
}

/// Keeps one zero-initialized velocity buffer per parameter tensor.
template <typename T>
class Sgd {
 public:
  Sgd(std::vector<Parameter<T>*> params, T momentum, T weight_decay)
      : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
    if (momentum < 0 || momentum >= 1) fail(ErrorCode::InvalidArgument, "momentum must be in [0, 1)");
    if (weight_decay < 0) fail(ErrorCode::InvalidArgument, "weight decay must be >= 0");
    for (auto* p : params_) velocity_.emplace_back(p->value.shape());
  }

  void step(T lr) {
    for (std::size_t i = 0; i < params_.size(); ++i)
      sgd_step<T>(params_[i]->value.values(), params_[i]->grad.values(), velocity_[i].values(), lr, momentum_, weight_decay_);
  }

  const std::vector<Tensor<T>>& velocities() const { return velocity_; }

 private:
  std::vector<Parameter<T>*> params_;
  std::vector<Tensor<T>> velocity_;
  T momentum_;
  T weight_decay_;
};

/// Step schedule: lr = initial / factor^(number of drop epochs <= epoch).
inline double scheduled_lr(double initial, const std::vector<int>& drops, int epoch, double factor = 10.0) {
  double lr = initial;
  for (int d : drops)
    if (epoch >= d) lr /= factor;
  return lr;
}

}  // namespace peakit::nn
