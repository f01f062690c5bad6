#pragma once

#include <cmath>
#include <span>

#include "peakit/error.hpp"
#include "peakit/nn/tensor.hpp"

namespace peakit::nn {

template <typename T>
struct LossResult {
  T loss;
  Tensor<T> grad;  // d(loss)/d(logits)
  Tensor<T> probabilities;
};

/// Mean cross-entropy of softmax(logits) against integer labels.
/// Gradient is (p - onehot) / N.
template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  require_rank(logits, 2, "softmax_cross_entropy");
  const std::size_t N = logits.dim(0), K = logits.dim(1);
  if (labels.size() != N)
    fail(ErrorCode::ShapeMismatch, "got " + std::to_string(labels.size()) + " labels for " + std::to_string(N) + " rows");
  LossResult<T> r{T(0), Tensor<T>(logits.shape()), Tensor<T>(logits.shape())};
  double total = 0;
  for (std::size_t n = 0; n < N; ++n) {
    const int y = labels[n];
    if (y < 0 || static_cast<std::size_t>(y) >= K) fail(ErrorCode::InvalidArgument, "label out of range");
    T mx = logits[n * K];
    for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, logits[n * K + k]);
    T s = 0;
    for (std::size_t k = 0; k < K; ++k) s += std::exp(logits[n * K + k] - mx);
    const T log_s = std::log(s);
    for (std::size_t k = 0; k < K; ++k) {
      const T logp = logits[n * K + k] - mx - log_s;
      const T p = std::exp(logp);
      r.probabilities[n * K + k] = p;
      r.grad[n * K + k] = (p - (static_cast<int>(k) == y ? T(1) : T(0))) / static_cast<T>(N);
      if (static_cast<int>(k) == y) total -= static_cast<double>(logp);
    }
  }
  r.loss = static_cast<T>(total / static_cast<double>(N));
  return r;
}

}  // namespace peakit::nn
