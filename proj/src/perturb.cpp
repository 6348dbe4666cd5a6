#include "cfhar/perturb.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <random>

#include "cfhar/errors.hpp"

namespace cfhar {

namespace {

constexpr std::array<std::string_view, 6> kNames = {
    "channel_missing", "partial_shuffle", "shuffle_missing", "meta_pad", "shuffle_fixed_meta", "shuffle_fixed_meta_missing",
};

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::vector<std::size_t> pick(std::size_t n, std::size_t channels, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(channels);
  for (std::size_t i = 0; i < channels; ++i) idx[i] = i;
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(n);
  return idx;
}

void channel_missing(Sample& s, double t, std::mt19937_64& rng) {
  const std::size_t n = affected_count(t, s.channels);
  if (n == 0) return;
  const auto drop = pick(n, s.channels, rng);
  const Sample before = s;
  for (std::size_t c : drop) {
    std::fill(s.channel(c).begin(), s.channel(c).end(), 0.0);
    s.meta[c] = kPaddingMeta;
    s.valid[c] = 0;
  }
  if (s.valid_count() == 0) {
    std::vector<std::size_t> candidates;
    for (std::size_t c : drop)
      if (before.valid[c]) candidates.push_back(c);
    if (candidates.empty()) return;  // input already had no valid channel
    const std::size_t keep = candidates[rng() % candidates.size()];
    std::copy_n(before.channel(keep).data(), s.length, s.channel(keep).data());
    s.meta[keep] = before.meta[keep];
    s.valid[keep] = 1;
  }
}

// Permutes a random subset of floor(t*C) channels among themselves. With
// meta_only the waveforms stay put and only the metadata rows move.
void partial_shuffle(Sample& s, double t, bool meta_only, std::mt19937_64& rng) {
  const std::size_t n = affected_count(t, s.channels);
  if (n < 2) return;
  auto subset = pick(n, s.channels, rng);
  std::sort(subset.begin(), subset.end());
  auto targets = subset;
  std::shuffle(targets.begin(), targets.end(), rng);
  const Sample before = s;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t src = subset[i], dst = targets[i];
    s.meta[dst] = before.meta[src];
    if (meta_only) continue;
    std::copy_n(before.channel(src).data(), s.length, s.channel(dst).data());
    s.valid[dst] = before.valid[src];
  }
}

void meta_pad(Sample& s, double t, std::mt19937_64& rng) {
  const std::size_t n = affected_count(t, s.channels);
  for (std::size_t c : pick(n, s.channels, rng)) s.meta[c] = kPaddingMeta;
}

}  // namespace

std::string_view perturb_name(PerturbKind kind) { return kNames[static_cast<std::size_t>(kind)]; }

PerturbKind parse_perturb_kind(std::string_view name) {
  for (std::size_t i = 0; i < kNames.size(); ++i)
    if (kNames[i] == name) return static_cast<PerturbKind>(i);
  throw ConfigError("unknown perturbation kind '" + std::string(name) + "'");
}

bool meta_consistent(PerturbKind kind) {
  return kind == PerturbKind::kChannelMissing || kind == PerturbKind::kPartialShuffle ||
         kind == PerturbKind::kShuffleMissing;
}

double PerturbationSpec::first() const { return std::clamp(intensity, 0.0, 1.0); }

double PerturbationSpec::second() const { return std::clamp(second_intensity.value_or(intensity), 0.0, 1.0); }

std::string PerturbationSpec::name() const {
  if (!label.empty()) return label;
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f", first());
  return std::string(perturb_name(kind)) + "@" + buf;
}

std::size_t affected_count(double intensity, std::size_t channels) {
  const double t = std::clamp(intensity, 0.0, 1.0);
  // The small slack keeps products such as 0.3 * 10 from rounding down to 2.
  return std::min(channels, static_cast<std::size_t>(std::floor(t * static_cast<double>(channels) + 1e-9)));
}

Sample perturb(const Sample& sample, const PerturbationSpec& spec) {
  sample.check();
  Sample s = sample;
  std::mt19937_64 rng(splitmix(spec.seed));
  std::mt19937_64 rng2(splitmix(spec.seed ^ kSecondStageSalt));
  switch (spec.kind) {
    case PerturbKind::kChannelMissing: channel_missing(s, spec.first(), rng); break;
    case PerturbKind::kPartialShuffle: partial_shuffle(s, spec.first(), false, rng); break;
    case PerturbKind::kShuffleMissing:
      partial_shuffle(s, spec.first(), false, rng);
      channel_missing(s, spec.second(), rng2);
      break;
    case PerturbKind::kMetaPad: meta_pad(s, spec.first(), rng); break;
    case PerturbKind::kShuffleFixedMeta: partial_shuffle(s, spec.first(), true, rng); break;
    case PerturbKind::kShuffleFixedMetaMissing:
      partial_shuffle(s, spec.first(), true, rng);
      meta_pad(s, spec.second(), rng2);
      break;
  }
  return s;
}

Dataset perturb_dataset(const Dataset& data, const PerturbationSpec& spec) {
  Dataset out;
  out.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    PerturbationSpec per = spec;
    per.seed = splitmix(spec.seed * 0x100000001b3ULL + i);
    out.push_back(perturb(data[i], per));
  }
  return out;
}

std::vector<PerturbationSpec> standard_conditions(std::uint64_t seed) {
  PerturbationSpec shfl{PerturbKind::kPartialShuffle, 1.0, std::nullopt, seed, "Shfl"};
  PerturbationSpec miss{PerturbKind::kChannelMissing, 0.5, std::nullopt, seed, "Miss"};
  PerturbationSpec both{PerturbKind::kShuffleMissing, 1.0, 0.5, seed, "Shfl+Miss"};
  return {shfl, miss, both};
}

}  // namespace cfhar
