#include "cfhar/optim.hpp"

#include <cmath>
#include <numbers>

namespace cfhar {

void TrainSchedule::validate() const {
  if (!(learning_rate > 0)) throw ConfigError("learning_rate must be positive");
  if (weight_decay < 0) throw ConfigError("weight_decay must be non-negative");
  if (epochs < 1) throw ConfigError("epochs must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (cosine_t_max < 1) throw ConfigError("cosine_t_max must be positive");
  if (min_learning_rate < 0 || min_learning_rate > learning_rate) {
    throw ConfigError("min_learning_rate must lie in [0, learning_rate]");
  }
}

double cosine_lr(const TrainSchedule& schedule, int epoch) {
  const double t = std::min(static_cast<double>(epoch), static_cast<double>(schedule.cosine_t_max));
  const double phase = std::cos(std::numbers::pi * t / schedule.cosine_t_max);
  return schedule.min_learning_rate + (schedule.learning_rate - schedule.min_learning_rate) * (1.0 + phase) / 2.0;
}

template <typename T>
void adam_step(std::span<Param<T>* const> params, double lr, double weight_decay, const AdamConfig& cfg) {
  for (Param<T>* p : params) {
    if (p->frozen) continue;
    if (!p->var.has_grad()) throw ConfigError("adam_step: parameter has no gradient");
  }
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2), eps = static_cast<T>(cfg.eps);
  const T wd = static_cast<T>(weight_decay), step_lr = static_cast<T>(lr);
  for (Param<T>* p : params) {
    if (p->frozen) continue;
    ++p->step;
    const T c1 = T{1} - static_cast<T>(std::pow(cfg.beta1, static_cast<double>(p->step)));
    const T c2 = T{1} - static_cast<T>(std::pow(cfg.beta2, static_cast<double>(p->step)));
    Tensor<T>& w = p->value();
    const Tensor<T>& g = p->var.grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const T gi = g[i] + wd * w[i];
      p->m[i] = b1 * p->m[i] + (T{1} - b1) * gi;
      p->v[i] = b2 * p->v[i] + (T{1} - b2) * gi * gi;
      const T mhat = p->m[i] / c1;
      const T vhat = p->v[i] / c2;
      w[i] -= step_lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

template void adam_step(std::span<Param<float>* const>, double, double, const AdamConfig&);
template void adam_step(std::span<Param<double>* const>, double, double, const AdamConfig&);

}  // namespace cfhar
