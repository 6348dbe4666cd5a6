#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "cfhar/sample.hpp"

namespace cfhar {

inline constexpr double kTargetRateHz = 100.0;
inline constexpr std::size_t kWindowLength = 256;

/// One subject's continuous recording. All channels share one time base.
struct Recording {
  int subject = 0;
  double rate_hz = kTargetRateHz;
  std::vector<std::vector<double>> channels;
  std::vector<ChannelMeta> meta;
  std::vector<int> labels;  // one per time step

  std::size_t length() const { return labels.size(); }
  void check() const;
};

/// Linear interpolation onto a uniform to_hz grid over [0, (n-1)/from_hz].
std::vector<double> resample_linear(std::span<const double> series, double from_hz, double to_hz = kTargetRateHz);

/// Resamples every channel linearly and the labels by nearest neighbour.
Recording resample_recording(const Recording& rec, double to_hz = kTargetRateHz);

/// Majority label of a window: the most frequent label, ties to the lowest id.
/// Returns nullopt when that label covers less than half the window.
std::optional<int> majority_label(std::span<const int> labels);

/// Non-overlapping (by default) windows; the remainder is dropped, as are
/// windows without a majority label. Too-short recordings give no windows.
Dataset segment_windows(const Recording& rec, std::size_t length = kWindowLength, std::size_t stride = kWindowLength);

/// Per-channel z-scoring keyed by the channel's metadata tuple.
class Standardizer {
 public:
  static constexpr double kStdFloor = 1e-8;

  struct Stats {
    double mean = 0.0;
    double std = 1.0;
    std::size_t count = 0;
  };

  /// Fits on the valid channels of samples; may be called only once.
  void fit(const Dataset& samples, std::span<const std::size_t> indices);
  void fit(const Dataset& samples);
  void apply(Sample& s) const;
  Dataset apply(const Dataset& samples, std::span<const std::size_t> indices) const;

  bool fitted() const { return fitted_; }
  /// Subjects whose samples contributed to the fit.
  const std::set<int>& fitted_subjects() const { return subjects_; }
  const std::map<ChannelMeta, Stats>& stats() const { return stats_; }

 private:
  bool fitted_ = false;
  std::map<ChannelMeta, Stats> stats_;
  std::set<int> subjects_;
  mutable std::set<ChannelMeta> warned_;
};

struct Fold {
  int test_subject = 0;
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Leave-one-subject-out: one fold per subject, ordered by subject id.
std::vector<Fold> loso_splits(const Dataset& data);

Dataset subset(const Dataset& data, std::span<const std::size_t> indices);

enum class SynthSemantics {
  kShared,             // class frequency is the same on every informative channel
  kLocationDependent,  // the frequency a class produces depends on the channel's body location
};

/// Synthetic multichannel sinusoid-plus-noise data.
struct SynthSpec {
  std::size_t subjects = 6;
  std::size_t classes = 4;
  std::size_t windows_per_subject = 100;
  std::size_t length = kWindowLength;
  double rate_hz = kTargetRateHz;
  std::size_t channels_min = 6;
  std::size_t channels_max = 6;
  /// Catalog channels are laid out location-major with this many axes per location.
  std::size_t axes_per_location = 3;
  /// Number of catalog channels that carry the class frequency (kShared).
  std::size_t redundancy = 2;
  SynthSemantics semantics = SynthSemantics::kShared;
  double base_freq_hz = 2.0;
  double freq_step_hz = 2.0;
  double amplitude = 1.0;
  double noise = 0.5;
  /// Amplitude of distractor sinusoids on non-informative channels.
  double distractor = 0.5;
  /// Class-dependent DC offset pattern over catalog positions (cyclically shifted per class).
  double position_cue = 0.0;
  /// Amplitude of a location-independent class cue (kLocationDependent only).
  double shared_cue = 0.0;
  /// Catalog channels [0, cue_channels) carry the shared cue; 0 means all of them.
  std::size_t cue_channels = 0;
  /// Relative per-subject frequency scaling spread.
  double subject_jitter = 0.03;
  std::uint64_t seed = 0;

  double class_freq(std::size_t c) const { return base_freq_hz + freq_step_hz * static_cast<double>(c); }
  std::size_t catalog_size() const { return channels_max; }
  void validate() const;
};

/// Metadata of catalog channel k; names are interned into vocab.
ChannelMeta synth_channel_meta(const SynthSpec& spec, std::size_t k, MetaVocab& vocab);

/// Deterministic given spec (including spec.seed).
Dataset synth_generate(const SynthSpec& spec, MetaVocab& vocab);

/// Reads a CSV with a header row. The descriptor names the timestamp, subject
/// and label columns; its channel rows give 0-based CSV column indices.
/// Returns one resampled recording per subject, in order of first appearance.
std::vector<Recording> load_csv(const std::filesystem::path& path, const DatasetDescriptor& descriptor,
                                MetaVocab& vocab);
std::vector<Recording> parse_csv(const std::string& text, const DatasetDescriptor& descriptor, MetaVocab& vocab);

/// Fills interior non-finite values by linear interpolation. Returns the
/// [first, last) range where every channel is finite at both ends.
std::pair<std::size_t, std::size_t> impute_linear(std::vector<std::vector<double>>& channels);

/// Processed-dataset cache: a binary container stamped with a format version and a config hash.
void save_dataset_cache(const std::filesystem::path& path, const Dataset& data, std::uint64_t config_hash);
/// nullopt when the file is missing or stamped with another version or hash.
std::optional<Dataset> load_dataset_cache(const std::filesystem::path& path, std::uint64_t config_hash);

}  // namespace cfhar
