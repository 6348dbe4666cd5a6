#include "cfhar/model.hpp"

#include <algorithm>
#include <map>

#include "cfhar/baselines.hpp"

namespace cfhar {

std::string_view model_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::kBaseline: return "baseline";
    case ModelKind::kEarlyFusion: return "ef";
    case ModelKind::kMiddleFusion: return "mf";
    case ModelKind::kLateFusion: return "lf";
    case ModelKind::kLateFusionComb: return "lf_comb";
    case ModelKind::kProposed: return "ours";
  }
  return "?";
}

ModelKind parse_model_kind(std::string_view name) {
  for (auto k : {ModelKind::kBaseline, ModelKind::kEarlyFusion, ModelKind::kMiddleFusion, ModelKind::kLateFusion,
                 ModelKind::kLateFusionComb, ModelKind::kProposed}) {
    if (model_name(k) == name) return k;
  }
  throw ConfigError("unknown model '" + std::string(name) + "' (expected baseline|ef|mf|lf|lf_comb|ours)");
}

void ModelConfig::validate() const {
  backbone.validate();
  if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
  if (num_heads < 1) throw ConfigError("num_heads must be at least 1");
  if (kind == ModelKind::kBaseline && fixed_channels == 0) {
    throw ConfigError("the channel-fixed baseline needs fixed_channels > 0");
  }
  if ((kind == ModelKind::kEarlyFusion || kind == ModelKind::kMiddleFusion) && (slots == 0 || slot_dim == 0)) {
    throw ConfigError("slot fusion needs positive slots and slot_dim");
  }
  if (kind == ModelKind::kMiddleFusion && backbone.num_blocks < 2) {
    throw ConfigError("middle fusion needs at least two residual blocks");
  }
  if (lambda_gamma < 0) throw ConfigError("lambda_gamma must be non-negative");
}

void LossConfig::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("loss lambda must lie in [0, 1]");
}

template <typename T>
Batch<T> make_batch(std::span<const Sample* const> samples) {
  if (samples.empty()) throw InputError("empty batch");
  Batch<T> batch;
  batch.size = samples.size();
  batch.length = samples[0]->length;
  for (const Sample* s : samples) {
    s->check();
    if (s->length != batch.length) throw InputError("batch samples have different window lengths");
    batch.channels = std::max(batch.channels, s->channels);
  }
  const std::size_t b = batch.size, c = batch.channels, l = batch.length;
  Tensor<T> x(Shape{b, c, l});
  batch.meta.assign(b * c, kPaddingMeta);
  batch.valid.assign(b * c, 0);
  batch.labels.resize(b);
  for (std::size_t i = 0; i < b; ++i) {
    const Sample& s = *samples[i];
    for (std::size_t ch = 0; ch < s.channels; ++ch) {
      const auto src = s.channel(ch);
      T* dst = x.raw() + (i * c + ch) * l;
      for (std::size_t t = 0; t < l; ++t) dst[t] = static_cast<T>(src[t]);
      batch.meta[i * c + ch] = s.meta[ch];
      batch.valid[i * c + ch] = s.valid[ch];
    }
    batch.labels[i] = s.label;
  }
  batch.x = Var<T>(std::move(x));
  return batch;
}

template <typename T>
Batch<T> make_batch(std::span<const Sample> samples) {
  std::vector<const Sample*> ptrs;
  ptrs.reserve(samples.size());
  for (const auto& s : samples) ptrs.push_back(&s);
  return make_batch<T>(std::span<const Sample* const>(ptrs));
}

// ---------------------------------------------------------------------------

template <typename T>
LossTerms<T> combination_loss(const ModelOutput<T>& output, std::span<const int> labels, const LossConfig& cfg) {
  cfg.validate();
  if (!output.y_channel.defined()) throw ConfigError("combination_loss: model has no channel-wise head");
  const std::size_t b = output.y_channel.shape()[0], c = output.y_channel.shape()[1],
                    ncls = output.y_channel.shape()[2];
  if (labels.size() != b || output.valid.size() != b * c) throw InputError("combination_loss: batch size mismatch");

  LossTerms<T> terms;
  terms.fused = softmax_cross_entropy<T>(output.y_fused, labels);

  std::vector<int> channel_labels(b * c);
  std::vector<T> weights(b * c, T{0});
  for (std::size_t s = 0; s < b; ++s) {
    std::size_t count = 0;
    for (std::size_t i = 0; i < c; ++i) count += output.valid[s * c + i] ? 1 : 0;
    if (count == 0) throw InputError("combination_loss: sample " + std::to_string(s) + " has no valid channels");
    for (std::size_t i = 0; i < c; ++i) {
      channel_labels[s * c + i] = labels[s];
      if (output.valid[s * c + i]) weights[s * c + i] = T{1} / static_cast<T>(count * b);
    }
  }
  terms.dist = weighted_cross_entropy<T>(reshape(output.y_channel, Shape{b * c, ncls}), channel_labels, weights);
  const T lam = static_cast<T>(cfg.lambda);
  terms.total = add(affine<T>(terms.fused, lam), affine<T>(terms.dist, T{1} - lam));
  return terms;
}

template <typename T>
LossTerms<T> training_loss(const ModelOutput<T>& output, std::span<const int> labels, const LossConfig& cfg) {
  if (output.y_channel.defined()) return combination_loss(output, labels, cfg);
  LossTerms<T> terms;
  terms.fused = softmax_cross_entropy<T>(output.y_fused, labels);
  terms.total = terms.fused;
  return terms;
}

// ---------------------------------------------------------------------------

template <typename T>
HarModel<T>::HarModel(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
}

template <typename T>
ParamRegistry<T> HarModel<T>::registry() {
  ParamRegistry<T> reg;
  register_body(reg);
  for (std::size_t i = 0; i < heads_.size(); ++i) {
    const std::string prefix = "heads." + std::to_string(i);
    heads_[i].fused.register_params(reg, prefix + ".fused");
    if (heads_[i].has_aux) heads_[i].aux.register_params(reg, prefix + ".aux");
  }
  return reg;
}

template <typename T>
void HarModel<T>::select_head(std::size_t i) {
  if (i >= heads_.size()) throw ConfigError("head index " + std::to_string(i) + " out of range");
  active_head_ = i;
}

template <typename T>
void HarModel<T>::reset_heads(std::size_t num_heads, std::size_t num_classes, std::uint64_t seed) {
  if (num_heads == 0 || num_classes < 2) throw ConfigError("reset_heads: need >= 1 head and >= 2 classes");
  Rng rng(seed ^ 0x68656164ULL);
  heads_.clear();
  const std::size_t d = feature_dim();
  for (std::size_t i = 0; i < num_heads; ++i) {
    HeadPair<T> h;
    h.fused = Linear<T>(d, num_classes, rng);
    h.has_aux = cfg_.uses_aux_head();
    if (h.has_aux) h.aux = Linear<T>(d, num_classes, rng);
    heads_.push_back(std::move(h));
  }
  cfg_.num_heads = num_heads;
  cfg_.num_classes = num_classes;
  active_head_ = 0;
}

template <typename T>
void HarModel<T>::grow_vocab(const MetaVocab&, std::uint64_t) {}

template <typename T>
std::size_t HarModel<T>::head_macs(std::size_t channels) const {
  const std::size_t per = feature_dim() * cfg_.num_classes;
  return per + (cfg_.uses_aux_head() ? channels * per : 0);
}

// ---------------------------------------------------------------------------

template <typename T>
ChannelFreeModel<T>::ChannelFreeModel(const ModelConfig& cfg, const MetaVocab& vocab) : HarModel<T>(cfg) {
  if (cfg.backbone.in_channels != 1) throw ConfigError("channel-free backbone encodes one channel at a time");
  Rng rng(cfg.seed);
  const std::size_t meta_dim = cfg.uses_metadata() ? cfg.meta.meta_dim : 0;
  backbone_ = Backbone<T>(cfg.backbone, meta_dim, cfg.lambda_gamma, rng);
  if (cfg.uses_metadata()) meta_ = MetaEncoder<T>(vocab, cfg.meta, rng);
  this->reset_heads(cfg.num_heads, cfg.num_classes, cfg.seed);
}

template <typename T>
Var<T> ChannelFreeModel<T>::meta_vectors(std::span<const ChannelMeta> metas) const {
  if (!this->cfg_.uses_metadata()) return Var<T>();
  return meta_(metas);
}

template <typename T>
ChannelFeatures<T> ChannelFreeModel<T>::encode_channels(const Batch<T>& batch, Mode mode) {
  const std::size_t b = batch.size, c = batch.channels, l = batch.length;
  std::vector<std::size_t> rows;
  for (std::size_t s = 0; s < b; ++s) {
    bool any = false;
    for (std::size_t i = 0; i < c; ++i) {
      if (batch.valid[s * c + i]) {
        rows.push_back(s * c + i);
        any = true;
      }
    }
    if (!any) throw InputError("sample " + std::to_string(s) + " has no valid channels");
  }
  Tensor<T> packed(Shape{rows.size(), 1, l});
  std::vector<ChannelMeta> metas;
  metas.reserve(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::copy_n(batch.x.value().raw() + rows[r] * l, l, packed.raw() + r * l);
    metas.push_back(batch.meta[rows[r]]);
  }
  Var<T> m = meta_vectors(metas);
  Var<T> feats = backbone_(Var<T>(std::move(packed)), m, mode);
  const std::size_t d = feats.shape()[1];
  ChannelFeatures<T> out;
  out.z = reshape(scatter_rows<T>(feats, rows, b * c), Shape{b, c, d});
  out.valid = batch.valid;
  return out;
}

template <typename T>
Var<T> fuse_mean(const ChannelFeatures<T>& features) {
  return masked_mean<T>(features.z, features.valid);
}

template <typename T>
ModelOutput<T> ChannelFreeModel<T>::forward(const Batch<T>& batch, Mode mode) {
  ChannelFeatures<T> feats = encode_channels(batch, mode);
  ModelOutput<T> out;
  out.z = feats.z;
  out.z_bar = fuse_mean(feats);
  out.y_fused = this->head().fused(out.z_bar);
  if (this->head().has_aux) out.y_channel = this->head().aux(feats.z);
  out.valid = std::move(feats.valid);
  return out;
}

template <typename T>
MacBreakdown ChannelFreeModel<T>::macs(std::size_t channels, std::size_t length) const {
  MacBreakdown m;
  m.backbone = channels * backbone_.macs(length);
  if (this->cfg_.uses_metadata()) m.metadata = channels * (meta_.macs_per_channel() + backbone_.cbn_macs());
  m.heads = this->head_macs(channels);
  return m;
}

template <typename T>
void ChannelFreeModel<T>::grow_vocab(const MetaVocab& vocab, std::uint64_t seed) {
  if (!this->cfg_.uses_metadata()) return;
  Rng rng(seed ^ 0x766f636162ULL);
  meta_.grow(vocab, rng);
}

template <typename T>
void ChannelFreeModel<T>::register_body(ParamRegistry<T>& reg) {
  backbone_.register_params(reg, "backbone");
  if (this->cfg_.uses_metadata()) meta_.register_params(reg, "meta");
}

// ---------------------------------------------------------------------------

template <typename T>
std::unique_ptr<HarModel<T>> make_model(const ModelConfig& cfg, const MetaVocab& vocab) {
  switch (cfg.kind) {
    case ModelKind::kBaseline: return std::make_unique<FixedChannelModel<T>>(cfg);
    case ModelKind::kEarlyFusion:
    case ModelKind::kMiddleFusion: return std::make_unique<SlotFusionModel<T>>(cfg);
    case ModelKind::kLateFusion:
    case ModelKind::kLateFusionComb:
    case ModelKind::kProposed: return std::make_unique<ChannelFreeModel<T>>(cfg, vocab);
  }
  throw ConfigError("unhandled model kind");
}

template <typename T>
std::size_t copy_matching(ParamRegistry<T>& from, ParamRegistry<T>& to) {
  std::map<std::string, Param<T>*> src;
  for (auto& [name, p] : from.params) src[name] = p;
  std::map<std::string, BatchNormStats<T>*> src_norms;
  for (auto& [name, s] : from.norms) src_norms[name] = s;
  std::size_t copied = 0;
  for (auto& [name, p] : to.params) {
    auto it = src.find(name);
    if (it == src.end() || it->second->shape() != p->shape()) continue;
    p->value() = it->second->value();
    ++copied;
  }
  for (auto& [name, s] : to.norms) {
    auto it = src_norms.find(name);
    if (it == src_norms.end() || it->second->running_mean.size() != s->running_mean.size()) continue;
    *s = *it->second;
    ++copied;
  }
  return copied;
}

#define CFHAR_INSTANTIATE_MODEL(T)                                                                          \
  template Batch<T> make_batch(std::span<const Sample* const>);                                             \
  template Batch<T> make_batch(std::span<const Sample>);                                                    \
  template LossTerms<T> combination_loss(const ModelOutput<T>&, std::span<const int>, const LossConfig&);   \
  template LossTerms<T> training_loss(const ModelOutput<T>&, std::span<const int>, const LossConfig&);      \
  template class HarModel<T>;                                                                               \
  template class ChannelFreeModel<T>;                                                                       \
  template Var<T> fuse_mean(const ChannelFeatures<T>&);                                                     \
  template std::unique_ptr<HarModel<T>> make_model(const ModelConfig&, const MetaVocab&);                   \
  template std::size_t copy_matching(ParamRegistry<T>&, ParamRegistry<T>&);

CFHAR_INSTANTIATE_MODEL(float)
CFHAR_INSTANTIATE_MODEL(double)

}  // namespace cfhar
