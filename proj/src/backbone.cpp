#include "cfhar/backbone.hpp"

#include <algorithm>
#include <cstdint>

namespace cfhar {

void BackboneConfig::validate() const {
  if (num_blocks == 0) throw ConfigError("backbone needs at least one residual block");
  if (base_channels == 0) throw ConfigError("backbone base_channels must be positive");
  if (kernel % 2 == 0) throw ConfigError("backbone kernel must be odd");
  if (in_channels == 0) throw ConfigError("backbone in_channels must be positive");
  if (stem_stride == 0 || block_stride == 0) throw ConfigError("backbone strides must be positive");
}

template <typename T>
ResidualBlock<T>::ResidualBlock(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                                std::size_t meta_dim, double lambda, Rng& rng)
    : conv1(in, out, kernel, stride, rng),
      norm1(out, meta_dim, lambda, rng),
      conv2(out, out, kernel, 1, rng),
      norm2(out, meta_dim, lambda, rng),
      has_projection(stride != 1 || in != out) {
  if (has_projection) {
    proj = Conv1d<T>(in, out, 1, stride, rng);
    proj_norm = BatchNorm1d<T>(out);
  }
}

template <typename T>
Var<T> ResidualBlock<T>::operator()(const Var<T>& x, const Var<T>& meta, Mode mode) {
  Var<T> h = relu(norm1(conv1(x), meta, mode));
  h = norm2(conv2(h), meta, mode);
  Var<T> skip = has_projection ? proj_norm(proj(x), mode) : x;
  return relu(add(h, skip));
}

template <typename T>
void ResidualBlock<T>::register_params(ParamRegistry<T>& reg, const std::string& prefix) {
  conv1.register_params(reg, prefix + ".conv1");
  norm1.register_params(reg, prefix + ".bn1");
  conv2.register_params(reg, prefix + ".conv2");
  norm2.register_params(reg, prefix + ".bn2");
  if (has_projection) {
    proj.register_params(reg, prefix + ".proj");
    proj_norm.register_params(reg, prefix + ".proj_bn");
  }
}

template <typename T>
std::size_t ResidualBlock<T>::macs(std::size_t len) const {
  const std::size_t mid = conv1.out_length(len);
  std::size_t n = conv1.macs(len) + conv2.macs(mid);
  if (has_projection) n += proj.macs(len);
  return n;
}

template <typename T>
Backbone<T>::Backbone(const BackboneConfig& cfg, std::size_t meta_dim, double lambda, Rng& rng)
    : cfg_(cfg), meta_dim_(meta_dim) {
  cfg.validate();
  stem_ = Conv1d<T>(cfg.in_channels, cfg.base_channels, cfg.kernel, cfg.stem_stride, rng);
  stem_norm_ = BatchNorm1d<T>(cfg.base_channels);
  std::size_t in = cfg.base_channels;
  for (std::size_t b = 0; b < cfg.num_blocks; ++b) {
    const std::size_t out = cfg.width(b);
    blocks_.emplace_back(in, out, cfg.kernel, cfg.block_stride, meta_dim, lambda, rng);
    in = out;
  }
}

template <typename T>
Var<T> Backbone<T>::head_stages(const Var<T>& x, const Var<T>& meta, Mode mode, std::size_t last_block) {
  Var<T> h = relu(stem_norm_(stem_(x), mode));
  for (std::size_t b = 0; b < std::min(last_block, blocks_.size()); ++b) h = blocks_[b](h, meta, mode);
  return h;
}

template <typename T>
Var<T> Backbone<T>::tail_stages(const Var<T>& h, const Var<T>& meta, Mode mode, std::size_t first_block) {
  Var<T> out = h;
  for (std::size_t b = first_block; b < blocks_.size(); ++b) out = blocks_[b](out, meta, mode);
  return global_avg_pool(out);
}

template <typename T>
Var<T> Backbone<T>::operator()(const Var<T>& x, const Var<T>& meta, Mode mode) {
  return tail_stages(head_stages(x, meta, mode, 0), meta, mode, 0);
}

template <typename T>
void Backbone<T>::register_params(ParamRegistry<T>& reg, const std::string& prefix) {
  stem_.register_params(reg, prefix + ".stem");
  stem_norm_.register_params(reg, prefix + ".stem_bn");
  for (std::size_t b = 0; b < blocks_.size(); ++b) blocks_[b].register_params(reg, prefix + ".block" + std::to_string(b));
}

template <typename T>
std::size_t Backbone<T>::length_before_block(std::size_t len, std::size_t block) const {
  std::size_t l = stem_.out_length(len);
  for (std::size_t b = 0; b < std::min(block, blocks_.size()); ++b) l = blocks_[b].out_length(l);
  return l;
}

template <typename T>
std::size_t Backbone<T>::macs(std::size_t len, std::size_t first_block, std::size_t last_block,
                              bool include_stem) const {
  std::size_t total = include_stem ? stem_.macs(len) : 0;
  std::size_t l = stem_.out_length(len);
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    if (b >= first_block && b < last_block) total += blocks_[b].macs(l);
    l = blocks_[b].out_length(l);
  }
  return total;
}

template <typename T>
std::size_t Backbone<T>::cbn_macs() const {
  std::size_t n = 0;
  for (const auto& b : blocks_) n += b.cbn_macs();
  return n;
}

template class ResidualBlock<float>;
template class ResidualBlock<double>;
template class Backbone<float>;
template class Backbone<double>;

}  // namespace cfhar
