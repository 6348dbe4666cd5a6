#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cfhar/backbone.hpp"
#include "cfhar/sample.hpp"

namespace cfhar {

enum class ModelKind { kBaseline, kEarlyFusion, kMiddleFusion, kLateFusion, kLateFusionComb, kProposed };

std::string_view model_name(ModelKind kind);
/// baseline | ef | mf | lf | lf_comb | ours
ModelKind parse_model_kind(std::string_view name);

struct ModelConfig {
  ModelKind kind = ModelKind::kProposed;
  BackboneConfig backbone;
  std::size_t num_classes = 4;
  std::size_t fixed_channels = 0;  // channel-fixed baseline only
  std::size_t slots = 16;
  std::size_t slot_dim = 16;
  MetaEncoderConfig meta;
  double lambda_gamma = CbnLayer<double>::kDefaultLambda;
  std::size_t num_heads = 1;
  std::uint64_t seed = 0;

  bool uses_metadata() const { return kind == ModelKind::kProposed; }
  bool uses_aux_head() const { return kind == ModelKind::kLateFusionComb || kind == ModelKind::kProposed; }
  bool channel_free() const { return kind != ModelKind::kBaseline; }
  void validate() const;
};

/// Model input: samples padded to a common channel count with invalid channels.
template <typename T>
struct Batch {
  std::size_t size = 0;
  std::size_t channels = 0;
  std::size_t length = 0;
  Var<T> x;                        // [b, C, L], no gradient
  std::vector<ChannelMeta> meta;   // [b * C]
  std::vector<std::uint8_t> valid; // [b * C]
  std::vector<int> labels;         // [b]
};

template <typename T>
Batch<T> make_batch(std::span<const Sample* const> samples);

template <typename T>
Batch<T> make_batch(std::span<const Sample> samples);

/// Per-channel encoder output: z[b, C, D] with invalid rows left at zero.
template <typename T>
struct ChannelFeatures {
  Var<T> z;
  std::vector<std::uint8_t> valid;
};

template <typename T>
struct ModelOutput {
  Var<T> y_fused;    // [b, n_cls]
  Var<T> y_channel;  // [b, C, n_cls]; undefined without an auxiliary head
  Var<T> z_bar;      // [b, D]
  Var<T> z;          // [b, C, D] for late-fusion models
  std::vector<std::uint8_t> valid;
};

struct LossConfig {
  double lambda = 0.5;
  void validate() const;
};

template <typename T>
struct LossTerms {
  Var<T> total;
  Var<T> fused;
  Var<T> dist;  // undefined when the model has no auxiliary head
};

/// L_fused = CE(y_fused); L_dist = per-sample mean over valid channels of CE(y_i),
/// averaged over the batch; L_comb = lambda * L_fused + (1 - lambda) * L_dist.
template <typename T>
LossTerms<T> combination_loss(const ModelOutput<T>& output, std::span<const int> labels, const LossConfig& cfg);

/// Combination loss for models with an auxiliary head, plain CE otherwise.
template <typename T>
LossTerms<T> training_loss(const ModelOutput<T>& output, std::span<const int> labels, const LossConfig& cfg);

struct MacBreakdown {
  std::size_t backbone = 0;
  std::size_t metadata = 0;
  std::size_t mixing = 0;
  std::size_t heads = 0;
  std::size_t total() const { return backbone + metadata + mixing + heads; }
  bool operator==(const MacBreakdown&) const = default;
};

template <typename T>
struct HeadPair {
  Linear<T> fused;
  Linear<T> aux;
  bool has_aux = false;
};

/// Common surface of the proposed model and the baselines.
template <typename T>
class HarModel {
 public:
  explicit HarModel(const ModelConfig& cfg);
  virtual ~HarModel() = default;
  HarModel(const HarModel&) = delete;
  HarModel& operator=(const HarModel&) = delete;

  virtual ModelOutput<T> forward(const Batch<T>& batch, Mode mode) = 0;
  /// Analytic multiply-accumulate count per sample.
  virtual MacBreakdown macs(std::size_t channels, std::size_t length) const = 0;

  ParamRegistry<T> registry();
  std::size_t parameter_count() { return registry().parameter_count(); }
  const ModelConfig& config() const { return cfg_; }

  std::size_t num_heads() const { return heads_.size(); }
  std::size_t active_head() const { return active_head_; }
  void select_head(std::size_t i);
  /// Discards all classification heads and builds fresh ones.
  void reset_heads(std::size_t num_heads, std::size_t num_classes, std::uint64_t seed);

  /// Grows metadata embedding tables to cover vocab (no-op for meta-free models).
  virtual void grow_vocab(const MetaVocab& vocab, std::uint64_t seed);

 protected:
  virtual void register_body(ParamRegistry<T>& reg) = 0;
  virtual std::size_t feature_dim() const = 0;
  HeadPair<T>& head() { return heads_[active_head_]; }
  std::size_t head_macs(std::size_t channels) const;

  ModelConfig cfg_;
  std::vector<HeadPair<T>> heads_;
  std::size_t active_head_ = 0;
};

/// Late-fusion family (LF, LF + L_comb, LF + L_comb + Meta): every channel goes
/// through the same backbone, features are mean-pooled over valid channels.
template <typename T>
class ChannelFreeModel : public HarModel<T> {
 public:
  ChannelFreeModel(const ModelConfig& cfg, const MetaVocab& vocab);

  /// Valid channels are packed to (n_valid, 1, L) and encoded in one backbone call.
  ChannelFeatures<T> encode_channels(const Batch<T>& batch, Mode mode);
  ModelOutput<T> forward(const Batch<T>& batch, Mode mode) override;
  MacBreakdown macs(std::size_t channels, std::size_t length) const override;
  void grow_vocab(const MetaVocab& vocab, std::uint64_t seed) override;

  Backbone<T>& backbone() { return backbone_; }
  MetaEncoder<T>* meta_encoder() { return this->cfg_.uses_metadata() ? &meta_ : nullptr; }
  /// The metadata vectors for a list of channels (undefined Var for meta-free models).
  Var<T> meta_vectors(std::span<const ChannelMeta> metas) const;

 protected:
  void register_body(ParamRegistry<T>& reg) override;
  std::size_t feature_dim() const override { return backbone_.config().feature_dim(); }

 private:
  Backbone<T> backbone_;
  MetaEncoder<T> meta_;
};

/// Masked mean of features over valid channels.
template <typename T>
Var<T> fuse_mean(const ChannelFeatures<T>& features);

template <typename T>
std::unique_ptr<HarModel<T>> make_model(const ModelConfig& cfg, const MetaVocab& vocab);

/// Copies every parameter and norm buffer present in both registries with equal shapes.
/// Returns the number of tensors copied.
template <typename T>
std::size_t copy_matching(ParamRegistry<T>& from, ParamRegistry<T>& to);

inline bool is_head_param(std::string_view name) { return name.starts_with("heads."); }

}  // namespace cfhar
