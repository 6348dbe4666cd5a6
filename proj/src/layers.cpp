#include "cfhar/layers.hpp"

#include <cmath>

namespace cfhar {

template <typename T>
Tensor<T> fan_in_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor<T> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
Tensor<T> normal_init(Shape shape, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor<T> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
Linear<T>::Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias)
    : weight(fan_in_uniform<T>({out, in}, in, rng)), with_bias_(with_bias) {
  if (with_bias_) bias = Param<T>(fan_in_uniform<T>({out}, in, rng));
}

template <typename T>
void Linear<T>::register_params(ParamRegistry<T>& reg, const std::string& prefix) {
  reg.add(prefix + ".weight", weight);
  if (with_bias_) reg.add(prefix + ".bias", bias);
}

template <typename T>
Conv1d<T>::Conv1d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, Rng& rng, bool with_bias)
    : weight(fan_in_uniform<T>({out, in, kernel}, in * kernel, rng)), stride_(stride), with_bias_(with_bias) {
  if (kernel % 2 == 0) throw ConfigError("Conv1d: kernel size must be odd for same padding");
  if (with_bias_) bias = Param<T>(fan_in_uniform<T>({out}, in * kernel, rng));
}

template <typename T>
void Conv1d<T>::register_params(ParamRegistry<T>& reg, const std::string& prefix) {
  reg.add(prefix + ".weight", weight);
  if (with_bias_) reg.add(prefix + ".bias", bias);
}

template <typename T>
BatchNorm1d<T>::BatchNorm1d(std::size_t channels)
    : gamma(Tensor<T>({channels}, T{1})), beta(Tensor<T>({channels}, T{0})), stats(channels) {}

template <typename T>
void BatchNorm1d<T>::register_params(ParamRegistry<T>& reg, const std::string& prefix) {
  reg.add(prefix + ".gamma", gamma);
  reg.add(prefix + ".beta", beta);
  reg.add(prefix + ".stats", stats);
}

template <typename T>
LayerNorm<T>::LayerNorm(std::size_t width) : gamma(Tensor<T>({width}, T{1})), beta(Tensor<T>({width}, T{0})) {}

template <typename T>
void LayerNorm<T>::register_params(ParamRegistry<T>& reg, const std::string& prefix) {
  reg.add(prefix + ".gamma", gamma);
  reg.add(prefix + ".beta", beta);
}

template <typename T>
Embedding<T>::Embedding(std::size_t vocab, std::size_t width, Rng& rng)
    : table(normal_init<T>({vocab, width}, kInitStd, rng)) {}

template <typename T>
void Embedding<T>::register_params(ParamRegistry<T>& reg, const std::string& prefix) {
  reg.add(prefix + ".table", table);
}

template <typename T>
void Embedding<T>::grow(std::size_t new_vocab, Rng& rng) {
  const std::size_t old_vocab = vocab_size(), d = width();
  if (new_vocab <= old_vocab) return;
  Tensor<T> fresh = normal_init<T>({new_vocab, d}, kInitStd, rng);
  std::copy_n(table.value().raw(), old_vocab * d, fresh.raw());
  const bool frozen = table.frozen;
  table.reset(std::move(fresh));
  table.frozen = frozen;
}

template Tensor<float> fan_in_uniform(Shape, std::size_t, Rng&);
template Tensor<double> fan_in_uniform(Shape, std::size_t, Rng&);
template Tensor<float> normal_init(Shape, double, Rng&);
template Tensor<double> normal_init(Shape, double, Rng&);
template class Linear<float>;
template class Linear<double>;
template class Conv1d<float>;
template class Conv1d<double>;
template class BatchNorm1d<float>;
template class BatchNorm1d<double>;
template class LayerNorm<float>;
template class LayerNorm<double>;
template class Embedding<float>;
template class Embedding<double>;

}  // namespace cfhar
