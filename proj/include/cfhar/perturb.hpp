#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cfhar/sample.hpp"

namespace cfhar {

enum class PerturbKind {
  kChannelMissing,
  kPartialShuffle,
  kShuffleMissing,
  kMetaPad,
  kShuffleFixedMeta,
  kShuffleFixedMetaMissing,
};

inline constexpr PerturbKind kAllPerturbKinds[] = {
    PerturbKind::kChannelMissing,  PerturbKind::kPartialShuffle,   PerturbKind::kShuffleMissing,
    PerturbKind::kMetaPad,         PerturbKind::kShuffleFixedMeta, PerturbKind::kShuffleFixedMetaMissing,
};

/// channel_missing | partial_shuffle | shuffle_missing | meta_pad | shuffle_fixed_meta | shuffle_fixed_meta_missing
std::string_view perturb_name(PerturbKind kind);
PerturbKind parse_perturb_kind(std::string_view name);
/// Meta-consistent kinds move metadata together with waveforms. The
/// meta-inconsistent kinds (meta_pad, shuffle_fixed_meta*) leave every
/// waveform in place and only move or pad metadata rows, which breaks the
/// pairing without changing what a metadata-free model sees.
bool meta_consistent(PerturbKind kind);

struct PerturbationSpec {
  PerturbKind kind = PerturbKind::kChannelMissing;
  double intensity = 0.0;
  /// Second-stage intensity for the composite kinds; defaults to intensity.
  std::optional<double> second_intensity;
  std::uint64_t seed = 0;
  /// Report label; empty means derived from kind and intensity.
  std::string label;

  double first() const;
  double second() const;
  std::string name() const;
};

/// Number of channels affected at intensity t: floor(t * C).
std::size_t affected_count(double intensity, std::size_t channels);

/// Composite kinds run their second stage as the single kind seeded with seed ^ kSecondStageSalt.
inline constexpr std::uint64_t kSecondStageSalt = 0x5eed;

/// Applies one perturbation. Deterministic in (sample, spec).
Sample perturb(const Sample& sample, const PerturbationSpec& spec);

/// Perturbs each sample with a seed derived from spec.seed and the sample's position.
Dataset perturb_dataset(const Dataset& data, const PerturbationSpec& spec);

/// Shuffle (PartialShuffle 1.0), Missing (ChannelMissing 0.5), Shfl+Miss (1.0 then 0.5).
std::vector<PerturbationSpec> standard_conditions(std::uint64_t seed = 0);

}  // namespace cfhar
