#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "cfhar/metadata.hpp"

namespace cfhar {

/// 1D ResNet: stem conv (stride 2) + BN + ReLU, then one basic block per stage
/// with widths base * 2^i, each stage downsampling by 2, then global average pooling.
struct BackboneConfig {
  std::size_t num_blocks = 4;
  std::size_t base_channels = 32;
  std::size_t kernel = 3;
  std::size_t in_channels = 1;
  std::size_t stem_stride = 2;
  std::size_t block_stride = 2;

  std::size_t width(std::size_t block) const { return base_channels << block; }
  std::size_t feature_dim() const { return width(num_blocks - 1); }
  void validate() const;
  bool operator==(const BackboneConfig&) const = default;
};

template <typename T>
class ResidualBlock {
 public:
  ResidualBlock() = default;
  ResidualBlock(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, std::size_t meta_dim,
                double lambda, Rng& rng);

  Var<T> operator()(const Var<T>& x, const Var<T>& meta, Mode mode);
  void register_params(ParamRegistry<T>& reg, const std::string& prefix);
  std::size_t macs(std::size_t len) const;
  std::size_t cbn_macs() const { return norm1.macs_per_row() + norm2.macs_per_row(); }
  std::size_t out_length(std::size_t len) const { return conv1.out_length(len); }

  Conv1d<T> conv1;
  CbnLayer<T> norm1;
  Conv1d<T> conv2;
  CbnLayer<T> norm2;
  bool has_projection = false;
  Conv1d<T> proj;
  BatchNorm1d<T> proj_norm;
};

template <typename T>
class Backbone {
 public:
  Backbone() = default;
  /// meta_dim > 0 replaces the block batch norms by metadata-conditioned ones.
  Backbone(const BackboneConfig& cfg, std::size_t meta_dim, double lambda, Rng& rng);

  /// x[n, in_channels, l] -> features[n, feature_dim].
  Var<T> operator()(const Var<T>& x, const Var<T>& meta, Mode mode);

  /// Stem plus blocks [0, last_block); output [n, width, l'].
  Var<T> head_stages(const Var<T>& x, const Var<T>& meta, Mode mode, std::size_t last_block);
  /// Blocks [first_block, num_blocks) followed by global average pooling.
  Var<T> tail_stages(const Var<T>& h, const Var<T>& meta, Mode mode, std::size_t first_block);

  void register_params(ParamRegistry<T>& reg, const std::string& prefix);
  const BackboneConfig& config() const { return cfg_; }
  bool conditioned() const { return meta_dim_ > 0; }

  /// Multiply-accumulates (conv layers only) for one input row of length len,
  /// restricted to the stem and blocks [first_block, last_block).
  std::size_t macs(std::size_t len, std::size_t first_block = 0, std::size_t last_block = SIZE_MAX,
                   bool include_stem = true) const;
  /// Length of the activation entering block b for an input of length len.
  std::size_t length_before_block(std::size_t len, std::size_t block) const;
  std::size_t cbn_macs() const;

 private:
  BackboneConfig cfg_;
  std::size_t meta_dim_ = 0;
  Conv1d<T> stem_;
  BatchNorm1d<T> stem_norm_;
  std::vector<ResidualBlock<T>> blocks_;
};

}  // namespace cfhar
