#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string>

#include "cfhar/ops.hpp"
#include "cfhar/optim.hpp"

namespace cfhar {

using Rng = std::mt19937_64;

/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <typename T>
Tensor<T> fan_in_uniform(Shape shape, std::size_t fan_in, Rng& rng);

/// N(0, stddev^2).
template <typename T>
Tensor<T> normal_init(Shape shape, double stddev, Rng& rng);

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true);

  Var<T> operator()(const Var<T>& x) const { return linear<T>(x, weight.var, with_bias_ ? bias.var : Var<T>()); }
  void register_params(ParamRegistry<T>& reg, const std::string& prefix);
  std::size_t in_features() const { return weight.shape()[1]; }
  std::size_t out_features() const { return weight.shape()[0]; }
  std::size_t macs() const { return in_features() * out_features(); }

  Param<T> weight;
  Param<T> bias;

 private:
  bool with_bias_ = true;
};

template <typename T>
class Conv1d {
 public:
  Conv1d() = default;
  Conv1d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, Rng& rng, bool with_bias = false);

  /// "Same" padding: symmetric (k-1)/2.
  Var<T> operator()(const Var<T>& x) const {
    return conv1d<T>(x, weight.var, with_bias_ ? bias.var : Var<T>(), stride_, padding());
  }
  void register_params(ParamRegistry<T>& reg, const std::string& prefix);
  std::size_t padding() const { return (kernel() - 1) / 2; }
  std::size_t kernel() const { return weight.shape()[2]; }
  std::size_t stride() const { return stride_; }
  std::size_t in_channels() const { return weight.shape()[1]; }
  std::size_t out_channels() const { return weight.shape()[0]; }
  std::size_t out_length(std::size_t len) const { return conv1d_out_length(len, kernel(), stride_, padding()); }
  /// Multiply-accumulates for one input row of length len.
  std::size_t macs(std::size_t len) const { return out_channels() * in_channels() * kernel() * out_length(len); }

  Param<T> weight;
  Param<T> bias;

 private:
  std::size_t stride_ = 1;
  bool with_bias_ = false;
};

template <typename T>
class BatchNorm1d {
 public:
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

  BatchNorm1d() = default;
  explicit BatchNorm1d(std::size_t channels);

  Var<T> operator()(const Var<T>& x, Mode mode) {
    return batch_norm1d<T>(x, gamma.var, beta.var, stats, mode, static_cast<T>(kEps), static_cast<T>(kMomentum));
  }
  void register_params(ParamRegistry<T>& reg, const std::string& prefix);
  std::size_t channels() const { return gamma.shape()[0]; }

  Param<T> gamma;
  Param<T> beta;
  BatchNormStats<T> stats;
};

template <typename T>
class LayerNorm {
 public:
  LayerNorm() = default;
  explicit LayerNorm(std::size_t width);

  Var<T> operator()(const Var<T>& x) const { return layer_norm<T>(x, gamma.var, beta.var, static_cast<T>(1e-5)); }
  void register_params(ParamRegistry<T>& reg, const std::string& prefix);

  Param<T> gamma;
  Param<T> beta;
};

template <typename T>
class Embedding {
 public:
  static constexpr double kInitStd = 0.02;

  Embedding() = default;
  Embedding(std::size_t vocab, std::size_t width, Rng& rng);

  Var<T> operator()(std::span<const int> ids) const { return embedding<T>(table.var, ids); }
  void register_params(ParamRegistry<T>& reg, const std::string& prefix);
  std::size_t vocab_size() const { return table.shape()[0]; }
  std::size_t width() const { return table.shape()[1]; }
  /// Appends freshly initialized rows up to new_vocab; existing rows are kept.
  void grow(std::size_t new_vocab, Rng& rng);

  Param<T> table;
};

}  // namespace cfhar
