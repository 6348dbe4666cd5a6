#include "cfhar/data.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <unordered_map>

#include "cfhar/text.hpp"

namespace cfhar {

void Recording::check() const {
  if (channels.empty()) throw InputError("recording has no channels");
  if (meta.size() != channels.size()) throw InputError("recording metadata count differs from channel count");
  for (const auto& ch : channels) {
    if (ch.size() != labels.size()) throw InputError("recording channels and labels differ in length");
  }
  if (!(rate_hz > 0)) throw InputError("recording sampling rate must be positive");
}

std::vector<double> resample_linear(std::span<const double> series, double from_hz, double to_hz) {
  if (!(from_hz > 0) || !(to_hz > 0)) throw InputError("resample_linear: rates must be positive");
  if (series.size() < 2) throw InputError("resample_linear: need at least two samples");
  const double duration = static_cast<double>(series.size() - 1) / from_hz;
  const auto n_out = static_cast<std::size_t>(std::floor(duration * to_hz + 1e-9)) + 1;
  std::vector<double> out(n_out);
  for (std::size_t k = 0; k < n_out; ++k) {
    const double pos = static_cast<double>(k) * from_hz / to_hz;
    auto i = static_cast<std::size_t>(std::floor(pos));
    if (i >= series.size() - 1) {
      out[k] = series.back();
      continue;
    }
    const double frac = pos - static_cast<double>(i);
    out[k] = frac == 0.0 ? series[i] : series[i] + frac * (series[i + 1] - series[i]);
  }
  return out;
}

Recording resample_recording(const Recording& rec, double to_hz) {
  rec.check();
  Recording out;
  out.subject = rec.subject;
  out.rate_hz = to_hz;
  out.meta = rec.meta;
  for (const auto& ch : rec.channels) out.channels.push_back(resample_linear(ch, rec.rate_hz, to_hz));
  const std::size_t n = out.channels.front().size();
  out.labels.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    const auto i = static_cast<std::size_t>(std::llround(static_cast<double>(k) * rec.rate_hz / to_hz));
    out.labels[k] = rec.labels[std::min(i, rec.labels.size() - 1)];
  }
  return out;
}

std::optional<int> majority_label(std::span<const int> labels) {
  if (labels.empty()) return std::nullopt;
  std::map<int, std::size_t> counts;
  for (int l : labels) ++counts[l];
  int best = 0;
  std::size_t best_count = 0;
  for (const auto& [label, count] : counts) {  // ascending ids: strict > keeps the lowest on ties
    if (count > best_count) {
      best = label;
      best_count = count;
    }
  }
  if (2 * best_count < labels.size()) return std::nullopt;
  return best;
}

Dataset segment_windows(const Recording& rec, std::size_t length, std::size_t stride) {
  rec.check();
  if (length == 0 || stride == 0) throw ConfigError("segment_windows: length and stride must be positive");
  Dataset out;
  for (std::size_t start = 0; start + length <= rec.length(); start += stride) {
    const auto label = majority_label(std::span<const int>(rec.labels).subspan(start, length));
    if (!label) continue;
    Sample s(rec.channels.size(), length);
    for (std::size_t c = 0; c < rec.channels.size(); ++c) {
      std::copy_n(rec.channels[c].begin() + static_cast<std::ptrdiff_t>(start), length, s.channel(c).begin());
    }
    s.meta = rec.meta;
    s.label = *label;
    s.subject = rec.subject;
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------

void Standardizer::fit(const Dataset& samples, std::span<const std::size_t> indices) {
  if (fitted_) throw ConfigError("standardizer already fitted for this fold");
  struct Acc {
    double sum = 0.0;
    std::size_t count = 0;
    double sq = 0.0;
  };
  std::map<ChannelMeta, Acc> acc;
  for (std::size_t i : indices) {
    const Sample& s = samples.at(i);
    subjects_.insert(s.subject);
    for (std::size_t c = 0; c < s.channels; ++c) {
      if (!s.valid[c]) continue;
      Acc& a = acc[s.meta[c]];
      for (double v : s.channel(c)) a.sum += v;
      a.count += s.length;
    }
  }
  for (std::size_t i : indices) {
    const Sample& s = samples[i];
    for (std::size_t c = 0; c < s.channels; ++c) {
      if (!s.valid[c]) continue;
      Acc& a = acc[s.meta[c]];
      const double mean = a.sum / static_cast<double>(a.count);
      for (double v : s.channel(c)) a.sq += (v - mean) * (v - mean);
    }
  }
  for (const auto& [key, a] : acc) {
    Stats st;
    st.count = a.count;
    st.mean = a.sum / static_cast<double>(a.count);
    st.std = std::max(std::sqrt(a.sq / static_cast<double>(a.count)), kStdFloor);
    stats_[key] = st;
  }
  fitted_ = true;
}

void Standardizer::fit(const Dataset& samples) {
  std::vector<std::size_t> all(samples.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  fit(samples, all);
}

void Standardizer::apply(Sample& s) const {
  if (!fitted_) throw ConfigError("standardizer used before fit");
  for (std::size_t c = 0; c < s.channels; ++c) {
    auto it = stats_.find(s.meta[c]);
    if (it == stats_.end()) {
      if (warned_.insert(s.meta[c]).second) {
        spdlog::warn("standardizer: channel (location {}, side {}, sensor {}, axis {}) unseen at fit time; passed "
                     "through unscaled",
                     s.meta[c].location, s.meta[c].side, s.meta[c].sensor, s.meta[c].axis);
      }
      continue;
    }
    const double mean = it->second.mean, inv = 1.0 / it->second.std;
    for (double& v : s.channel(c)) v = (v - mean) * inv;
  }
}

Dataset Standardizer::apply(const Dataset& samples, std::span<const std::size_t> indices) const {
  Dataset out = subset(samples, indices);
  for (auto& s : out) apply(s);
  return out;
}

std::vector<Fold> loso_splits(const Dataset& data) {
  std::map<int, Fold> folds;
  for (const auto& s : data) folds[s.subject].test_subject = s.subject;
  if (folds.size() < 2) throw InputError("leave-one-subject-out needs at least two subjects");
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (auto& [subject, fold] : folds) (subject == data[i].subject ? fold.test : fold.train).push_back(i);
  }
  std::vector<Fold> out;
  for (auto& [subject, fold] : folds) out.push_back(std::move(fold));
  return out;
}

Dataset subset(const Dataset& data, std::span<const std::size_t> indices) {
  Dataset out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(data.at(i));
  return out;
}

// ---------------------------------------------------------------------------

void SynthSpec::validate() const {
  if (subjects < 1 || classes < 2 || windows_per_subject < 1 || length < 8) {
    throw ConfigError("synth: need >= 1 subject, >= 2 classes, >= 1 window, length >= 8");
  }
  if (channels_min < 1 || channels_min > channels_max) throw ConfigError("synth: need 1 <= channels_min <= channels_max");
  if (axes_per_location < 1) throw ConfigError("synth: axes_per_location must be positive");
  if (redundancy < 1 || redundancy > channels_max) throw ConfigError("synth: redundancy must lie in [1, channels_max]");
  if (!(rate_hz > 0) || noise < 0 || amplitude < 0) throw ConfigError("synth: invalid rate, noise or amplitude");
  if (class_freq(classes - 1) >= rate_hz / 2) throw ConfigError("synth: class frequencies exceed Nyquist");
}

namespace {

constexpr const char* kSynthLocations[] = {"hand", "chest", "ankle", "thigh", "wrist", "back", "head", "waist"};
constexpr const char* kSynthAxes[] = {"x", "y", "z"};

bool synth_informative(const SynthSpec& spec, std::size_t k) {
  const std::size_t stride = std::max<std::size_t>(1, spec.catalog_size() / spec.redundancy);
  return k % stride == 0 && k / stride < spec.redundancy;
}

}  // namespace

ChannelMeta synth_channel_meta(const SynthSpec& spec, std::size_t k, MetaVocab& vocab) {
  const std::size_t loc = k / spec.axes_per_location, axis = k % spec.axes_per_location;
  const std::string loc_name = loc < std::size(kSynthLocations) ? kSynthLocations[loc] : "loc" + std::to_string(loc);
  const std::string axis_name = axis < std::size(kSynthAxes) ? kSynthAxes[axis] : "a" + std::to_string(axis);
  ChannelMeta m;
  m.location = vocab.intern(MetaField::kLocation, loc_name);
  m.side = vocab.intern(MetaField::kSide, loc % 2 == 0 ? "left" : "right");
  m.sensor = vocab.intern(MetaField::kSensor, "acc");
  m.axis = vocab.intern(MetaField::kAxis, axis_name);
  return m;
}

Dataset synth_generate(const SynthSpec& spec, MetaVocab& vocab) {
  spec.validate();
  const std::size_t catalog = spec.catalog_size();
  std::vector<ChannelMeta> metas;
  for (std::size_t k = 0; k < catalog; ++k) metas.push_back(synth_channel_meta(spec, k, vocab));

  const double two_pi = 2.0 * std::numbers::pi;
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double max_freq = spec.class_freq(spec.classes - 1) + spec.freq_step_hz;
  Dataset out;
  for (std::size_t subj = 0; subj < spec.subjects; ++subj) {
    std::mt19937_64 rng(spec.seed * 0x9e3779b97f4a7c15ULL + subj + 1);
    const double scale = 1.0 + spec.subject_jitter * std::clamp(gauss(rng), -2.0, 2.0);
    for (std::size_t w = 0; w < spec.windows_per_subject; ++w) {
      const std::size_t label = w % spec.classes;
      const std::size_t c_count =
          spec.channels_min + static_cast<std::size_t>(rng() % (spec.channels_max - spec.channels_min + 1));
      std::vector<std::size_t> chosen(catalog);
      for (std::size_t k = 0; k < catalog; ++k) chosen[k] = k;
      std::shuffle(chosen.begin(), chosen.end(), rng);
      chosen.resize(c_count);
      std::sort(chosen.begin(), chosen.end());

      Sample s(c_count, spec.length);
      s.label = static_cast<int>(label);
      s.subject = static_cast<int>(subj);
      for (std::size_t i = 0; i < c_count; ++i) {
        const std::size_t k = chosen[i];
        s.meta[i] = metas[k];
        double freq = 0.0, amp = spec.amplitude;
        if (spec.semantics == SynthSemantics::kShared) {
          if (synth_informative(spec, k)) {
            freq = spec.class_freq(label);
          } else {
            freq = 0.5 + unit(rng) * (max_freq - 0.5);
            amp = spec.distractor;
          }
        } else {
          const std::size_t loc = k / spec.axes_per_location;
          freq = spec.class_freq((label + loc) % spec.classes);
        }
        freq *= scale;
        const double phase = two_pi * unit(rng);
        const double offset =
            catalog > 1 ? spec.position_cue *
                              (-1.0 + 2.0 * static_cast<double>((k + label) % catalog) / static_cast<double>(catalog - 1))
                        : 0.0;
        const double shared_freq = spec.class_freq(label) + spec.freq_step_hz * static_cast<double>(spec.classes);
        const double shared_phase = two_pi * unit(rng);
        const bool cued = spec.shared_cue > 0 && (spec.cue_channels == 0 || k < spec.cue_channels);
        auto x = s.channel(i);
        for (std::size_t t = 0; t < spec.length; ++t) {
          const double time = static_cast<double>(t) / spec.rate_hz;
          double v = amp * std::sin(two_pi * freq * time + phase) + offset + spec.noise * gauss(rng);
          if (cued) v += spec.shared_cue * std::sin(two_pi * shared_freq * scale * time + shared_phase);
          x[t] = v;
        }
      }
      out.push_back(std::move(s));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

std::pair<std::size_t, std::size_t> impute_linear(std::vector<std::vector<double>>& channels) {
  if (channels.empty()) return {0, 0};
  const std::size_t n = channels.front().size();
  std::size_t first = 0, last = n;
  for (auto& ch : channels) {
    std::size_t lo = 0;
    while (lo < n && !std::isfinite(ch[lo])) ++lo;
    if (lo == n) throw InputError("a channel has no finite values");
    std::size_t hi = n;
    while (hi > 0 && !std::isfinite(ch[hi - 1])) --hi;
    first = std::max(first, lo);
    last = std::min(last, hi);
    std::size_t prev = lo;
    for (std::size_t t = lo + 1; t < hi; ++t) {
      if (!std::isfinite(ch[t])) continue;
      for (std::size_t g = prev + 1; g < t; ++g) {
        const double frac = static_cast<double>(g - prev) / static_cast<double>(t - prev);
        ch[g] = ch[prev] + frac * (ch[t] - ch[prev]);
      }
      prev = t;
    }
  }
  if (first >= last) return {0, 0};
  return {first, last};
}

std::vector<Recording> parse_csv(const std::string& text, const DatasetDescriptor& descriptor, MetaVocab& vocab) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) {
      header = split(line, ',');
      break;
    }
  }
  if (header.empty()) throw InputError("CSV file is empty");
  auto find_column = [&](const std::string& name) {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (trim(header[i]) == name) return i;
    throw ConfigError("descriptor names column '" + name + "', which the CSV header lacks");
  };
  const std::size_t ts_col = find_column(descriptor.timestamp_column);
  const std::size_t subj_col = find_column(descriptor.subject_column);
  const std::size_t label_col = find_column(descriptor.label_column);
  if (descriptor.channels.empty()) throw ConfigError("descriptor lists no channels");
  for (const auto& ch : descriptor.channels) {
    if (ch.index >= header.size()) {
      throw ConfigError("descriptor channel column " + std::to_string(ch.index) + " is beyond the CSV header");
    }
  }
  const std::vector<ChannelMeta> metas = register_metadata(descriptor, vocab);

  std::vector<Recording> recs;
  std::unordered_map<long long, std::size_t> by_subject;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split(line, ',');
    if (fields.size() != header.size()) {
      throw ParseError("expected " + std::to_string(header.size()) + " fields, found " + std::to_string(fields.size()),
                       line_no);
    }
    parse_double(fields[ts_col], line_no);
    const long long subject = parse_int(fields[subj_col], line_no);
    const long long label = parse_int(fields[label_col], line_no);
    auto [it, inserted] = by_subject.try_emplace(subject, recs.size());
    if (inserted) {
      Recording r;
      r.subject = static_cast<int>(subject);
      r.rate_hz = descriptor.rate_hz;
      r.meta = metas;
      r.channels.resize(metas.size());
      recs.push_back(std::move(r));
    }
    Recording& r = recs[it->second];
    for (std::size_t c = 0; c < descriptor.channels.size(); ++c) {
      const std::string v = trim(fields[descriptor.channels[c].index]);
      r.channels[c].push_back(v.empty() ? std::nan("") : parse_double(v, line_no));
    }
    r.labels.push_back(static_cast<int>(label));
  }

  std::vector<Recording> out;
  for (auto& r : recs) {
    const auto [first, last] = impute_linear(r.channels);
    if (last - first < 2) {
      spdlog::warn("subject {}: fewer than two complete rows, skipped", r.subject);
      continue;
    }
    for (auto& ch : r.channels) ch = std::vector<double>(ch.begin() + first, ch.begin() + last);
    r.labels = std::vector<int>(r.labels.begin() + first, r.labels.begin() + last);
    out.push_back(r.rate_hz == kTargetRateHz ? std::move(r) : resample_recording(r));
  }
  return out;
}

std::vector<Recording> load_csv(const std::filesystem::path& path, const DatasetDescriptor& descriptor,
                                MetaVocab& vocab) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open CSV " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str(), descriptor, vocab);
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kCacheMagic[8] = {'C', 'F', 'H', 'A', 'R', 'D', 'S', '\0'};
constexpr std::uint32_t kCacheVersion = 1;

template <typename V>
void put(std::ostream& out, const V& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V get(std::istream& in) {
  V v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!in) throw InputError("dataset cache is truncated");
  return v;
}

}  // namespace

void save_dataset_cache(const std::filesystem::path& path, const Dataset& data, std::uint64_t config_hash) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write dataset cache " + path.string());
  out.write(kCacheMagic, sizeof(kCacheMagic));
  put(out, kCacheVersion);
  put(out, config_hash);
  put(out, static_cast<std::uint64_t>(data.size()));
  for (const auto& s : data) {
    put(out, static_cast<std::uint64_t>(s.channels));
    put(out, static_cast<std::uint64_t>(s.length));
    put(out, static_cast<std::int32_t>(s.label));
    put(out, static_cast<std::int32_t>(s.subject));
    for (const auto& m : s.meta)
      for (int id : m.ids()) put(out, static_cast<std::int32_t>(id));
    out.write(reinterpret_cast<const char*>(s.valid.data()), static_cast<std::streamsize>(s.valid.size()));
    out.write(reinterpret_cast<const char*>(s.data.data()), static_cast<std::streamsize>(s.data.size() * sizeof(double)));
  }
  if (!out) throw InputError("failed writing dataset cache " + path.string());
}

std::optional<Dataset> load_dataset_cache(const std::filesystem::path& path, std::uint64_t config_hash) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  char magic[sizeof(kCacheMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCacheMagic, sizeof(magic)) != 0) throw InputError(path.string() + " is not a dataset cache");
  if (get<std::uint32_t>(in) != kCacheVersion) return std::nullopt;
  if (get<std::uint64_t>(in) != config_hash) return std::nullopt;
  const auto n = get<std::uint64_t>(in);
  Dataset data;
  data.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto channels = get<std::uint64_t>(in);
    const auto length = get<std::uint64_t>(in);
    if (channels == 0 || channels > (1u << 16) || length > (1u << 24)) throw InputError("dataset cache is corrupt");
    Sample s(channels, length);
    s.label = get<std::int32_t>(in);
    s.subject = get<std::int32_t>(in);
    for (auto& m : s.meta) {
      m.location = get<std::int32_t>(in);
      m.side = get<std::int32_t>(in);
      m.sensor = get<std::int32_t>(in);
      m.axis = get<std::int32_t>(in);
    }
    in.read(reinterpret_cast<char*>(s.valid.data()), static_cast<std::streamsize>(s.valid.size()));
    in.read(reinterpret_cast<char*>(s.data.data()), static_cast<std::streamsize>(s.data.size() * sizeof(double)));
    if (!in) throw InputError("dataset cache is truncated");
    data.push_back(std::move(s));
  }
  return data;
}

}  // namespace cfhar
