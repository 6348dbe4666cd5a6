#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cfhar/autograd.hpp"
#include "cfhar/ops.hpp"

namespace cfhar {

/// Trainable tensor plus Adam moments.
template <typename T>
struct Param {
  Var<T> var;
  Tensor<T> m;
  Tensor<T> v;
  std::int64_t step = 0;
  bool frozen = false;

  Param() = default;
  explicit Param(Tensor<T> init) : var(std::move(init), true), m(var.shape()), v(var.shape()) {}

  const Shape& shape() const { return var.shape(); }
  Tensor<T>& value() { return var.mutable_value(); }
  const Tensor<T>& value() const { return var.value(); }

  /// Replaces the value and resets optimizer state; shape may change.
  void reset(Tensor<T> init) {
    var = Var<T>(std::move(init), true);
    m = Tensor<T>(var.shape());
    v = Tensor<T>(var.shape());
    step = 0;
  }
};

/// Named views onto a model's parameters and normalization buffers.
template <typename T>
struct ParamRegistry {
  std::vector<std::pair<std::string, Param<T>*>> params;
  std::vector<std::pair<std::string, BatchNormStats<T>*>> norms;

  void add(const std::string& name, Param<T>& p) { params.emplace_back(name, &p); }
  void add(const std::string& name, BatchNormStats<T>& s) { norms.emplace_back(name, &s); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, p] : params) n += p->value().size();
    return n;
  }

  void zero_grad() {
    for (auto& [name, p] : params) {
      p->var.grad_buffer().fill(T{0});
    }
  }
};

struct TrainSchedule {
  double learning_rate = 1e-3;
  double weight_decay = 0.0;
  int epochs = 50;
  int batch_size = 64;
  int cosine_t_max = 50;
  double min_learning_rate = 0.0;

  void validate() const;
};

/// Cosine-annealed learning rate for an epoch index in [0, t_max].
double cosine_lr(const TrainSchedule& schedule, int epoch);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One Adam update with bias correction. Weight decay is added to the gradient.
/// Frozen params are skipped; any other param without a gradient buffer is a
/// configuration error.
template <typename T>
void adam_step(std::span<Param<T>* const> params, double lr, double weight_decay, const AdamConfig& cfg = {});

template <typename T>
void adam_step(ParamRegistry<T>& registry, double lr, double weight_decay, const AdamConfig& cfg = {}) {
  std::vector<Param<T>*> ps;
  ps.reserve(registry.params.size());
  for (auto& [name, p] : registry.params) ps.push_back(p);
  adam_step<T>(std::span<Param<T>* const>(ps), lr, weight_decay, cfg);
}

}  // namespace cfhar
