#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "cfhar/autograd.hpp"

namespace cfhar {

enum class Mode { kTrain, kEval };

inline std::size_t conv1d_out_length(std::size_t length, std::size_t kernel, std::size_t stride,
                                     std::size_t padding) {
  if (length + 2 * padding < kernel) return 0;
  return (length + 2 * padding - kernel) / stride + 1;
}

/// Cross-correlation of x[b, ci, l] with w[co, ci, k]; bias[co] may be undefined.
template <typename T>
Var<T> conv1d(const Var<T>& x, const Var<T>& w, const Var<T>& bias, std::size_t stride, std::size_t padding);

template <typename T>
struct BatchNormStats {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  bool initialized = false;

  explicit BatchNormStats(std::size_t channels = 0)
      : running_mean(Shape{channels}, T{0}), running_var(Shape{channels}, T{1}) {}
};

/// Per-channel normalization of x[n, ch, l] over (n, l). In train mode the batch
/// statistics are used and the running statistics are updated by EMA (unbiased
/// variance); eval mode requires a prior train-mode call.
template <typename T>
Var<T> batch_norm1d(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, BatchNormStats<T>& stats, Mode mode,
                    T eps = T(1e-5), T momentum = T(0.1));

/// Normalizes over the last axis.
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5));

/// y = x w^T + bias over the last axis; w is [d_out, d_in]; bias may be undefined.
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& bias);

/// Row gather from table[V, d]; output is [ids.size(), d].
template <typename T>
Var<T> embedding(const Var<T>& table, std::span<const int> ids);

template <typename T>
Var<T> relu(const Var<T>& x);

template <typename T>
Var<T> tanh(const Var<T>& x);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);

/// alpha * x + beta, elementwise with scalar coefficients.
template <typename T>
Var<T> affine(const Var<T>& x, T alpha, T beta = T{0});

/// x[n, ch, l] * scale[n, ch] + shift[n, ch], broadcast over l.
template <typename T>
Var<T> modulate(const Var<T>& x, const Var<T>& scale, const Var<T>& shift);

template <typename T>
Var<T> concat_last(const std::vector<Var<T>>& parts);

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape);

/// Mean over the last axis of x[n, ch, l] -> [n, ch].
template <typename T>
Var<T> global_avg_pool(const Var<T>& x);

/// Places row i of x[n, d] at row rows[i] of a zero [total, d] tensor.
template <typename T>
Var<T> scatter_rows(const Var<T>& x, std::span<const std::size_t> rows, std::size_t total);

/// Mean of z[b, c, d] over the channels whose mask entry (row-major [b, c]) is set.
template <typename T>
Var<T> masked_mean(const Var<T>& z, std::span<const std::uint8_t> mask);

/// Batched matrix product a[b, m, n] x c[b, n, p] -> [b, m, p].
template <typename T>
Var<T> bmm(const Var<T>& a, const Var<T>& c);

/// Slot assignment from logits[b, c, k]: softmax over slots for each valid channel,
/// then each slot's weights are renormalized over valid channels. Returns A[b, k, c];
/// masked channels get zero weight.
template <typename T>
Var<T> slot_assignment(const Var<T>& logits, std::span<const std::uint8_t> mask);

/// sum_i weights[i] * (-log softmax(logits[i])[labels[i]]), stabilized by max-subtraction.
template <typename T>
Var<T> weighted_cross_entropy(const Var<T>& logits, std::span<const int> labels, std::span<const T> weights);

/// Batch-mean softmax cross-entropy.
template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, std::span<const int> labels);

}  // namespace cfhar
