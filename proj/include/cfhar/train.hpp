#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "cfhar/metrics.hpp"
#include "cfhar/model.hpp"
#include "cfhar/optim.hpp"

namespace cfhar {

struct TrainOptions {
  TrainSchedule schedule;
  LossConfig loss;
  std::uint64_t seed = 0;
  /// Freeze everything but the classification heads and keep batch-norm statistics fixed.
  bool linear_probe = false;
  std::function<void(int epoch, double mean_loss)> on_epoch;
};

struct TrainLog {
  std::vector<double> epoch_loss;
  std::vector<double> epoch_fused;
  std::vector<double> epoch_dist;  // empty for models without an auxiliary head
  double seconds = 0.0;
};

/// Trains on one or more labelled sources; source i drives head i (multitask
/// pretraining when there are several). Batches from all sources are
/// interleaved in a seeded random order. Only the active head is updated.
template <typename T>
TrainLog train_model(HarModel<T>& model, std::span<const Dataset* const> sources, const TrainOptions& options);

template <typename T>
TrainLog train_model(HarModel<T>& model, const Dataset& data, const TrainOptions& options) {
  const Dataset* ptr = &data;
  return train_model<T>(model, std::span<const Dataset* const>(&ptr, 1), options);
}

/// Argmax of the fused logits, in eval mode.
template <typename T>
std::vector<int> predict(HarModel<T>& model, const Dataset& data, std::size_t batch_size = 128);

template <typename T>
ConfusionMatrix confusion(HarModel<T>& model, const Dataset& data, std::size_t batch_size = 128);

/// Double-precision copy of a model (same config, weights and buffers).
std::unique_ptr<HarModel<double>> to_double(HarModel<float>& model, const MetaVocab& vocab);

}  // namespace cfhar
