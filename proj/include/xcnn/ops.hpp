#pragma once

#include <cstdint>
#include <span>

#include "xcnn/tensor.hpp"

namespace xcnn {

enum class ElementwiseKind { kAdd, kSub, kMul, kRelu, kExp, kLog };

// Binary kinds accept `b` with the same shape as `a`, a trailing-suffix
// shape (bias-style, repeated along a's leading axes), or a single value.
template <typename T>
Tensor<T> elementwise(ElementwiseKind kind, const Tensor<T>& a, const Tensor<T>& b = {});

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> relu(const Tensor<T>& a);
template <typename T>
Tensor<T> exp(const Tensor<T>& a);
/// Throws DomainError if any value is <= 0.
template <typename T>
Tensor<T> log(const Tensor<T>& a);

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T>
Tensor<T> sum(const Tensor<T>& a);
template <typename T>
Tensor<T> mean(const Tensor<T>& a);
template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape);
/// N x ... -> N x (product of the rest).
template <typename T>
Tensor<T> flatten(const Tensor<T>& a);

/// [M x K] . [K x N] -> [M x N]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// x [N x F], weight [F' x F], bias [F'] (may be undefined) -> x.W^T + b
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

/// Cross-correlation. x [N x C x H x W], weight [C' x C x k x k], bias [C'].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride, std::size_t padding);

/// Non-overlapping 2x2 max. Gradient goes to the first maximum in scan order.
template <typename T>
Tensor<T> maxpool2x2(const Tensor<T>& x);

struct BatchNormOptions {
  double epsilon = 1e-5;
  double momentum = 0.1;
  bool training = true;
};

/// Per-channel normalization of [N x C x H x W]. In training mode the batch
/// statistics are used and the running statistics are updated in place.
template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                      std::span<T> running_mean, std::span<T> running_var,
                      const BatchNormOptions& options);

/// Inverted dropout; identity in eval mode or at rate 0.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, bool training, std::uint64_t seed);

/// Row-wise softmax over the last axis of a 2-D tensor.
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits);

/// While alive, relu and maxpool fold their branch decisions into `hash`.
/// Finite-difference checks compare hashes to detect steps that cross a kink.
struct BranchTrace {
  BranchTrace();
  ~BranchTrace();
  BranchTrace(const BranchTrace&) = delete;
  BranchTrace& operator=(const BranchTrace&) = delete;
  std::uint64_t hash = 0xcbf29ce484222325ull;
  BranchTrace* previous = nullptr;
};

}  // namespace xcnn
