#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "cfhar/layers.hpp"

namespace cfhar {

enum class MetaField : std::size_t { kLocation = 0, kSide = 1, kSensor = 2, kAxis = 3 };
inline constexpr std::size_t kMetaFields = 4;

std::string_view field_name(MetaField field);

/// Discrete channel descriptors. Id 0 is the padding / unknown token in every field.
struct ChannelMeta {
  int location = 0;
  int side = 0;
  int sensor = 0;
  int axis = 0;

  int operator[](MetaField f) const { return ids()[static_cast<std::size_t>(f)]; }
  std::array<int, kMetaFields> ids() const { return {location, side, sensor, axis}; }
  bool is_padding() const { return location == 0 && side == 0 && sensor == 0 && axis == 0; }

  auto operator<=>(const ChannelMeta&) const = default;
};

inline constexpr ChannelMeta kPaddingMeta{};

/// Which metadata fields feed the embedding; disabled fields are looked up as id 0.
using FieldMask = std::array<bool, kMetaFields>;
inline constexpr FieldMask kAllFields{true, true, true, true};

ChannelMeta apply_mask(const ChannelMeta& meta, const FieldMask& mask);
std::string mask_to_string(const FieldMask& mask);
FieldMask mask_from_string(std::string_view text);

/// Global, append-only name->id maps (one per field). Id 0 is never assigned.
class MetaVocab {
 public:
  /// Returns the id for name, allocating a fresh one if unseen. "" and "-" map to 0.
  int intern(MetaField field, std::string_view name);
  /// 0 if the name is unknown.
  int lookup(MetaField field, std::string_view name) const;
  const std::string& name(MetaField field, int id) const;
  /// Number of ids including padding.
  std::size_t size(MetaField field) const { return names_[static_cast<std::size_t>(field)].size() + 1; }
  const std::vector<std::string>& names(MetaField field) const { return names_[static_cast<std::size_t>(field)]; }

  void validate(const ChannelMeta& meta) const;
  /// True when every assignment in this vocabulary is also present, with the same id, in other.
  bool is_prefix_of(const MetaVocab& other) const;

  bool operator==(const MetaVocab&) const = default;

 private:
  std::array<std::vector<std::string>, kMetaFields> names_;
};

/// One channel row of a dataset descriptor; empty strings mean unknown.
struct ChannelDescriptor {
  std::size_t index = 0;
  std::string location;
  std::string side;
  std::string sensor;
  std::string axis;
};

/// Dataset descriptor: optional `key = value` header lines followed by rows
/// `index, location, side, sensor, axis` with `-` for unknown fields.
struct DatasetDescriptor {
  double rate_hz = 100.0;
  std::string timestamp_column = "timestamp";
  std::string subject_column = "subject";
  std::string label_column = "activity";
  std::vector<ChannelDescriptor> channels;

  static DatasetDescriptor parse(std::string_view text);
  static DatasetDescriptor load(const std::filesystem::path& path);
  std::string to_text() const;
};

/// Maps each descriptor channel onto the shared vocabulary, extending it as needed.
std::vector<ChannelMeta> register_metadata(const DatasetDescriptor& descriptor, MetaVocab& vocab);

struct MetaEncoderConfig {
  std::size_t field_width = 16;
  std::size_t meta_dim = 64;
  FieldMask enabled = kAllFields;
};

/// m = LN(MLP(cat(e_location, e_side, e_sensor, e_axis))).
template <typename T>
class MetaEncoder {
 public:
  MetaEncoder() = default;
  MetaEncoder(const MetaVocab& vocab, const MetaEncoderConfig& cfg, Rng& rng);

  /// One row of width meta_dim per channel.
  Var<T> operator()(std::span<const ChannelMeta> metas) const;
  void register_params(ParamRegistry<T>& reg, const std::string& prefix);
  /// Extends the embedding tables to cover vocab; new rows are freshly initialized.
  void grow(const MetaVocab& vocab, Rng& rng);
  const MetaEncoderConfig& config() const { return cfg_; }
  void set_enabled(const FieldMask& mask) { cfg_.enabled = mask; }
  std::size_t macs_per_channel() const { return hidden_.macs() + out_.macs(); }

  std::array<Embedding<T>, kMetaFields> tables;

 private:
  MetaEncoderConfig cfg_;
  Linear<T> hidden_;
  Linear<T> out_;
  LayerNorm<T> norm_;
};

/// Conditional batch norm: (1 + lambda * tanh(gamma(m))) * BN(u) + beta(m).
template <typename T>
class CbnLayer {
 public:
  static constexpr double kDefaultLambda = 0.1;

  CbnLayer() = default;
  /// meta_dim == 0 builds an unconditioned layer (plain batch norm).
  CbnLayer(std::size_t channels, std::size_t meta_dim, double lambda, Rng& rng);

  /// meta holds one row per item of u. Unconditioned layers ignore it.
  Var<T> operator()(const Var<T>& u, const Var<T>& meta, Mode mode);
  /// Batch-norm params register directly under prefix so weights transfer
  /// between conditioned and unconditioned backbones by name.
  void register_params(ParamRegistry<T>& reg, const std::string& prefix);
  bool conditioned() const { return conditioned_; }
  double lambda() const { return lambda_; }
  std::size_t macs_per_row() const { return conditioned_ ? gamma_proj.macs() + beta_proj.macs() : 0; }

  BatchNorm1d<T> bn;
  Linear<T> gamma_proj;
  Linear<T> beta_proj;

 private:
  double lambda_ = kDefaultLambda;
  bool conditioned_ = false;
};

}  // namespace cfhar
