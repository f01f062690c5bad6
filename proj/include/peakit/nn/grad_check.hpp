#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "peakit/nn/layers.hpp"
#include "peakit/nn/loss.hpp"

namespace peakit::nn {

/// Scalar loss of a layer output; fills `grad` with d(loss)/d(output) when non-null.
template <typename T>
using LossFn = std::function<T(const Tensor<T>& out, Tensor<T>* grad)>;

template <typename T>
LossFn<T> cross_entropy_loss(std::vector<int> labels) {
  return [labels = std::move(labels)](const Tensor<T>& out, Tensor<T>* grad) {
    auto r = softmax_cross_entropy(out, labels);
    if (grad) *grad = std::move(r.grad);
    return r.loss;
  };
}

/// L = sum_i w_i * y_i with fixed pseudo-random weights; exercises every output element.
template <typename T>
LossFn<T> projection_loss(std::uint64_t seed) {
  return [seed](const Tensor<T>& out, Tensor<T>* grad) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    T loss = 0;
    if (grad) *grad = Tensor<T>(out.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
      const T w = static_cast<T>(dist(rng));
      loss += w * out[i];
      if (grad) (*grad)[i] = w;
    }
    return loss;
  };
}

struct GradCheckOptions {
  double eps = 1e-4;
  std::size_t samples_per_tensor = 20;
  bool check_input = true;
  /// Denominator floor so vanishing gradients are compared absolutely.
  double floor = 1e-6;
  std::uint64_t seed = 7;
};

struct GradCheckResult {
  double max_rel_error = 0;
  std::size_t checked = 0;
  std::string worst;  // "<tensor>[index]" of the largest error
};

/// Central finite differences over a sample of parameter (and input) entries,
/// compared against backward(). Use 64-bit tensors.
template <typename T>
GradCheckResult grad_check(Layer<T>& model, const Tensor<T>& input, const LossFn<T>& loss, Mode mode = Mode::Train,
                           const GradCheckOptions& opt = {}) {
  zero_grad(model);
  Tensor<T> out = model.forward(input, mode);
  Tensor<T> gout;
  loss(out, &gout);
  const Tensor<T> dx = model.backward(gout);

  auto eval = [&](const Tensor<T>& x) { return loss(model.forward(x, mode), nullptr); };

  GradCheckResult res;
  std::mt19937_64 rng(opt.seed);
  auto record = [&](double analytic, double numeric, const std::string& where) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), opt.floor});
    const double rel = std::abs(analytic - numeric) / denom;
    ++res.checked;
    if (rel > res.max_rel_error) {
      res.max_rel_error = rel;
      res.worst = where + " analytic=" + std::to_string(analytic) + " numeric=" + std::to_string(numeric);
    }
  };
  auto pick = [&](std::size_t size) {
    std::vector<std::size_t> idx(size);
    for (std::size_t i = 0; i < size; ++i) idx[i] = i;
    if (size > opt.samples_per_tensor) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(opt.samples_per_tensor);
    }
    return idx;
  };

  const auto params = parameters_of(model);
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto* p = params[t];
    for (std::size_t i : pick(p->value.size())) {
      const T saved = p->value[i];
      p->value[i] = static_cast<T>(saved + opt.eps);
      const double lp = eval(input);
      p->value[i] = static_cast<T>(saved - opt.eps);
      const double lm = eval(input);
      p->value[i] = saved;
      record(p->grad[i], (lp - lm) / (2 * opt.eps), "param" + std::to_string(t) + ":" + p->name + "[" + std::to_string(i) + "]");
    }
  }
  if (opt.check_input) {
    Tensor<T> x = input;
    for (std::size_t i : pick(x.size())) {
      const T saved = x[i];
      x[i] = static_cast<T>(saved + opt.eps);
      const double lp = eval(x);
      x[i] = static_cast<T>(saved - opt.eps);
      const double lm = eval(x);
      x[i] = saved;
      record(dx[i], (lp - lm) / (2 * opt.eps), "input[" + std::to_string(i) + "]");
    }
  }
  return res;
}

}  // namespace peakit::nn
