#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "cfhar/metadata.hpp"

namespace cfhar {

/// One window: a set of (waveform, metadata) channel pairs with a class label.
struct Sample {
  std::size_t channels = 0;
  std::size_t length = 0;
  std::vector<double> data;  // [channels, length], row-major
  std::vector<ChannelMeta> meta;
  std::vector<std::uint8_t> valid;
  int label = 0;
  int subject = 0;

  Sample() = default;
  Sample(std::size_t channels, std::size_t length)
      : channels(channels), length(length), data(channels * length, 0.0), meta(channels), valid(channels, 1) {}

  std::span<double> channel(std::size_t c) { return {data.data() + c * length, length}; }
  std::span<const double> channel(std::size_t c) const { return {data.data() + c * length, length}; }
  std::size_t valid_count() const {
    std::size_t n = 0;
    for (auto v : valid) n += v ? 1 : 0;
    return n;
  }
  void check() const;

  bool operator==(const Sample&) const = default;
};

inline void Sample::check() const {
  if (channels == 0) throw InputError("sample has no channels");
  if (data.size() != channels * length || meta.size() != channels || valid.size() != channels) {
    throw InputError("sample arrays disagree with its channel count");
  }
}

using Dataset = std::vector<Sample>;

}  // namespace cfhar
