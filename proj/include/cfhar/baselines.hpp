#pragma once

#include <cstddef>
#include <span>

#include "cfhar/model.hpp"

namespace cfhar {

inline constexpr std::size_t kSummaryStats = 5;

/// mean, std, max, min, energy (mean of squares) of each channel of x[b, C, L] -> [b, C, 5].
template <typename T>
Tensor<T> channel_summaries(const Tensor<T>& x);

/// Conventional model: the stem convolves all C_fixed channels jointly.
template <typename T>
class FixedChannelModel : public HarModel<T> {
 public:
  explicit FixedChannelModel(const ModelConfig& cfg);

  /// Rejects batches whose channel count differs from C_fixed.
  ModelOutput<T> forward(const Batch<T>& batch, Mode mode) override;
  MacBreakdown macs(std::size_t channels, std::size_t length) const override;

 protected:
  void register_body(ParamRegistry<T>& reg) override;
  std::size_t feature_dim() const override { return backbone_.config().feature_dim(); }

 private:
  Backbone<T> backbone_;
};

/// Early / middle fusion: K learnable slot queries cross-attend to per-channel
/// waveform summaries and mix the C channels into K virtual channels, either on
/// raw waveforms (EF) or after the first residual stage (MF). The virtual
/// channels then go through the shared per-channel backbone and are mean-pooled.
template <typename T>
class SlotFusionModel : public HarModel<T> {
 public:
  explicit SlotFusionModel(const ModelConfig& cfg);

  /// A[b, K, C]; masked channels get zero weight.
  Var<T> slot_assign(const Batch<T>& batch) const;
  /// EF: y_k = sum_c A_kc x_c, returned as [b, K, L].
  Var<T> mix_waveforms(const Batch<T>& batch) const;
  ModelOutput<T> forward(const Batch<T>& batch, Mode mode) override;
  MacBreakdown macs(std::size_t channels, std::size_t length) const override;

  Param<T>& slot_queries() { return queries_; }
  Linear<T>& key_projection() { return key_proj_; }
  bool middle() const { return this->cfg_.kind == ModelKind::kMiddleFusion; }

 protected:
  void register_body(ParamRegistry<T>& reg) override;
  std::size_t feature_dim() const override { return backbone_.config().feature_dim(); }

 private:
  Linear<T> key_proj_;
  Param<T> queries_;
  Backbone<T> backbone_;
};

/// Mixes feature maps h[b, C, F, L] (flattened as [b, C, F*L]) with A[b, K, C].
template <typename T>
Var<T> slot_mix(const Var<T>& assignment, const Var<T>& maps) {
  return bmm<T>(assignment, maps);
}

}  // namespace cfhar
