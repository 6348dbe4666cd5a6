#include "cfhar/baselines.hpp"

#include <algorithm>
#include <cmath>

namespace cfhar {

template <typename T>
Tensor<T> channel_summaries(const Tensor<T>& x) {
  if (x.rank() != 3) throw ConfigError("channel_summaries: input must be [b, C, L]");
  const std::size_t b = x.dim(0), c = x.dim(1), l = x.dim(2);
  Tensor<T> out(Shape{b, c, kSummaryStats});
  for (std::size_t r = 0; r < b * c; ++r) {
    const T* row = x.raw() + r * l;
    T sum = 0, sq = 0, mx = row[0], mn = row[0];
    for (std::size_t t = 0; t < l; ++t) {
      sum += row[t];
      sq += row[t] * row[t];
      mx = std::max(mx, row[t]);
      mn = std::min(mn, row[t]);
    }
    const T mean = sum / static_cast<T>(l);
    T var = 0;
    for (std::size_t t = 0; t < l; ++t) var += (row[t] - mean) * (row[t] - mean);
    var /= static_cast<T>(l);
    T* dst = out.raw() + r * kSummaryStats;
    dst[0] = mean;
    dst[1] = std::sqrt(var);
    dst[2] = mx;
    dst[3] = mn;
    dst[4] = sq / static_cast<T>(l);
  }
  return out;
}

// ---------------------------------------------------------------------------

template <typename T>
FixedChannelModel<T>::FixedChannelModel(const ModelConfig& cfg) : HarModel<T>(cfg) {
  BackboneConfig bcfg = cfg.backbone;
  bcfg.in_channels = cfg.fixed_channels;
  Rng rng(cfg.seed);
  backbone_ = Backbone<T>(bcfg, 0, 0.0, rng);
  this->reset_heads(cfg.num_heads, cfg.num_classes, cfg.seed);
}

template <typename T>
ModelOutput<T> FixedChannelModel<T>::forward(const Batch<T>& batch, Mode mode) {
  if (batch.channels != this->cfg_.fixed_channels) {
    throw InputError("channel-fixed baseline expects exactly " + std::to_string(this->cfg_.fixed_channels) +
                     " channels, got " + std::to_string(batch.channels));
  }
  ModelOutput<T> out;
  out.z_bar = backbone_(batch.x, Var<T>(), mode);
  out.y_fused = this->head().fused(out.z_bar);
  out.valid = batch.valid;
  return out;
}

template <typename T>
MacBreakdown FixedChannelModel<T>::macs(std::size_t channels, std::size_t length) const {
  if (channels != this->cfg_.fixed_channels) {
    throw InputError("channel-fixed baseline is defined for " + std::to_string(this->cfg_.fixed_channels) +
                     " channels only");
  }
  MacBreakdown m;
  m.backbone = backbone_.macs(length);
  m.heads = this->head_macs(channels);
  return m;
}

template <typename T>
void FixedChannelModel<T>::register_body(ParamRegistry<T>& reg) {
  backbone_.register_params(reg, "backbone");
}

// ---------------------------------------------------------------------------

template <typename T>
SlotFusionModel<T>::SlotFusionModel(const ModelConfig& cfg) : HarModel<T>(cfg) {
  if (cfg.backbone.in_channels != 1) throw ConfigError("slot fusion backbone encodes one channel at a time");
  Rng rng(cfg.seed);
  key_proj_ = Linear<T>(kSummaryStats, cfg.slot_dim, rng);
  queries_ = Param<T>(fan_in_uniform<T>({cfg.slots, cfg.slot_dim}, cfg.slot_dim, rng));
  backbone_ = Backbone<T>(cfg.backbone, 0, 0.0, rng);
  this->reset_heads(cfg.num_heads, cfg.num_classes, cfg.seed);
}

template <typename T>
Var<T> SlotFusionModel<T>::slot_assign(const Batch<T>& batch) const {
  Var<T> summaries(channel_summaries(batch.x.value()));
  Var<T> keys = key_proj_(summaries);                     // [b, C, d_q]
  Var<T> logits = linear<T>(keys, queries_.var, Var<T>()); // [b, C, K]
  const T scale = T{1} / std::sqrt(static_cast<T>(this->cfg_.slot_dim));
  return slot_assignment<T>(affine<T>(logits, scale), batch.valid);
}

template <typename T>
Var<T> SlotFusionModel<T>::mix_waveforms(const Batch<T>& batch) const {
  return slot_mix<T>(slot_assign(batch), batch.x);
}

template <typename T>
ModelOutput<T> SlotFusionModel<T>::forward(const Batch<T>& batch, Mode mode) {
  const std::size_t b = batch.size, c = batch.channels, l = batch.length, k = this->cfg_.slots;
  Var<T> assignment = slot_assign(batch);
  Var<T> features;
  if (!middle()) {
    Var<T> mixed = slot_mix<T>(assignment, batch.x);  // [b, K, L]
    features = backbone_(reshape(mixed, Shape{b * k, 1, l}), Var<T>(), mode);
  } else {
    Var<T> h = backbone_.head_stages(reshape(batch.x, Shape{b * c, 1, l}), Var<T>(), mode, 1);
    const std::size_t f = h.shape()[1], lh = h.shape()[2];
    Var<T> mixed = slot_mix<T>(assignment, reshape(h, Shape{b, c, f * lh}));
    features = backbone_.tail_stages(reshape(mixed, Shape{b * k, f, lh}), Var<T>(), mode, 1);
  }
  const std::size_t d = features.shape()[1];
  ModelOutput<T> out;
  out.z = reshape(features, Shape{b, k, d});
  out.z_bar = masked_mean<T>(out.z, std::vector<std::uint8_t>(b * k, 1));
  out.y_fused = this->head().fused(out.z_bar);
  out.valid = batch.valid;
  return out;
}

template <typename T>
MacBreakdown SlotFusionModel<T>::macs(std::size_t channels, std::size_t length) const {
  const std::size_t k = this->cfg_.slots, dq = this->cfg_.slot_dim;
  MacBreakdown m;
  m.mixing = channels * (kSummaryStats * dq + k * dq);
  if (!middle()) {
    m.mixing += k * channels * length;
    m.backbone = k * backbone_.macs(length);
  } else {
    const std::size_t l1 = backbone_.length_before_block(length, 1);
    m.mixing += k * channels * backbone_.config().width(0) * l1;
    m.backbone = channels * backbone_.macs(length, 0, 1) + k * backbone_.macs(length, 1, SIZE_MAX, false);
  }
  m.heads = this->head_macs(channels);
  return m;
}

template <typename T>
void SlotFusionModel<T>::register_body(ParamRegistry<T>& reg) {
  key_proj_.register_params(reg, "slots.key");
  reg.add("slots.queries", queries_);
  backbone_.register_params(reg, "backbone");
}

template Tensor<float> channel_summaries(const Tensor<float>&);
template Tensor<double> channel_summaries(const Tensor<double>&);
template class FixedChannelModel<float>;
template class FixedChannelModel<double>;
template class SlotFusionModel<float>;
template class SlotFusionModel<double>;

}  // namespace cfhar
