#include <algorithm>
#include <cmath>
#include <complex>
#include <filesystem>
#include <map>
#include <numbers>
#include <random>

#include "cfhar/data.hpp"
#include "doctest.h"

using namespace cfhar;

namespace {

Recording uniform_recording(std::size_t n, std::size_t channels, int label, std::mt19937_64& rng) {
  Recording r;
  r.subject = 1;
  r.channels.assign(channels, std::vector<double>(n));
  for (auto& ch : r.channels)
    for (auto& v : ch) v = std::normal_distribution<double>(0, 1)(rng);
  for (std::size_t c = 0; c < channels; ++c) r.meta.push_back({static_cast<int>(c + 1), 1, 1, 1});
  r.labels.assign(n, label);
  return r;
}

// Frequency (Hz) of the largest DFT magnitude over all channels, DC excluded.
double peak_frequency(const Sample& s, double rate) {
  double best = -1, best_f = 0;
  const std::size_t n = s.length;
  for (std::size_t c = 0; c < s.channels; ++c) {
    const auto x = s.channel(c);
    for (std::size_t k = 1; k < n / 2; ++k) {
      std::complex<double> acc = 0;
      for (std::size_t t = 0; t < n; ++t) acc += x[t] * std::polar(1.0, -2.0 * std::numbers::pi * k * t / n);
      if (std::abs(acc) > best) {
        best = std::abs(acc);
        best_f = static_cast<double>(k) * rate / static_cast<double>(n);
      }
    }
  }
  return best_f;
}

// Leave-one-subject-out 1-NN accuracy on the FFT peak.
double fft_oracle_accuracy(const Dataset& data, double rate) {
  std::vector<double> f;
  for (const auto& s : data) f.push_back(peak_frequency(s, rate));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    double best = 1e300;
    int pred = -1;
    for (std::size_t j = 0; j < data.size(); ++j) {
      if (data[j].subject == data[i].subject) continue;
      if (std::abs(f[i] - f[j]) < best) {
        best = std::abs(f[i] - f[j]);
        pred = data[j].label;
      }
    }
    correct += pred == data[i].label;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace

TEST_CASE("resample_linear") {
  SUBCASE("same rate is the identity") {
    const std::vector<double> x{1, -2, 3.5, 0.25};
    CHECK(resample_linear(x, 100.0) == x);
  }
  SUBCASE("constant 9 Hz series stays constant") {
    const std::vector<double> x(20, 72.0);
    const auto y = resample_linear(x, 9.0);
    CHECK(y.size() == static_cast<std::size_t>(std::floor(19.0 / 9.0 * 100.0)) + 1);
    for (double v : y) CHECK(v == doctest::Approx(72.0).epsilon(1e-15));
  }
  SUBCASE("ramp at 50 Hz against analytic interpolation") {
    std::vector<double> x(51);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(i) / 50.0;
    const auto y = resample_linear(x, 50.0);
    REQUIRE(y.size() == 101);
    for (std::size_t j = 0; j < y.size(); ++j) CHECK(std::abs(y[j] - static_cast<double>(j) / 100.0) < 1e-12);
  }
  SUBCASE("nonlinear series: midpoints are neighbour means") {
    const std::vector<double> x{0, 4, 1, 9};
    const auto y = resample_linear(x, 50.0);
    REQUIRE(y.size() == 7);
    CHECK(std::abs(y[1] - 2.0) < 1e-12);
    CHECK(std::abs(y[3] - 2.5) < 1e-12);
    CHECK(std::abs(y[5] - 5.0) < 1e-12);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(resample_linear(std::vector<double>{1.0}, 50.0), InputError);
    CHECK_THROWS_AS(resample_linear(std::vector<double>{1.0, 2.0}, 0.0), InputError);
  }
}

TEST_CASE("segment_windows") {
  std::mt19937_64 rng(3);
  SUBCASE("512 uniform samples give two windows") {
    const auto w = segment_windows(uniform_recording(512, 3, 2, rng));
    REQUIRE(w.size() == 2);
    for (const auto& s : w) {
      CHECK(s.channels == 3);
      CHECK(s.length == 256);
      CHECK(s.label == 2);
      CHECK(s.subject == 1);
    }
  }
  SUBCASE("remainder is dropped") { CHECK(segment_windows(uniform_recording(300, 2, 0, rng)).size() == 1); }
  SUBCASE("too short gives no windows") { CHECK(segment_windows(uniform_recording(255, 2, 0, rng)).empty()); }
  SUBCASE("window content is the slice") {
    const auto rec = uniform_recording(600, 2, 0, rng);
    const auto w = segment_windows(rec, 256, 128);
    REQUIRE(w.size() == 3);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t t = 0; t < 256; ++t) CHECK(w[i].channel(c)[t] == rec.channels[c][i * 128 + t]);
  }
  SUBCASE("130/126 split against a counting oracle") {
    for (int order = 0; order < 2; ++order) {
      auto rec = uniform_recording(256, 1, 0, rng);
      for (std::size_t t = 0; t < 256; ++t) rec.labels[t] = (t < 130) == (order == 0) ? 4 : 1;
      std::map<int, int> counts;
      for (int l : rec.labels) ++counts[l];
      const int oracle = std::max_element(counts.begin(), counts.end(), [](auto a, auto b) {
                           return a.second < b.second;
                         })->first;
      const auto w = segment_windows(rec);
      REQUIRE(w.size() == 1);
      CHECK(w[0].label == oracle);
    }
  }
  SUBCASE("ties go to the lowest id, no majority drops the window") {
    std::vector<int> tie(256, 5);
    std::fill(tie.begin(), tie.begin() + 128, 3);
    CHECK(majority_label(tie) == 3);
    std::vector<int> three(256, 0);
    for (std::size_t t = 0; t < 256; ++t) three[t] = static_cast<int>(t % 3);
    CHECK_FALSE(majority_label(three).has_value());
    auto rec = uniform_recording(256, 1, 0, rng);
    rec.labels = three;
    CHECK(segment_windows(rec).empty());
  }
  SUBCASE("deterministic through resampling") {
    auto rec = uniform_recording(400, 2, 1, rng);
    rec.rate_hz = 50.0;
    const auto a = segment_windows(resample_recording(rec));
    const auto b = segment_windows(resample_recording(rec));
    CHECK(a.size() == 3);
    CHECK(a == b);
  }
}

TEST_CASE("Standardizer") {
  std::mt19937_64 rng(11);
  Dataset data;
  for (int i = 0; i < 12; ++i) {
    Sample s(3, 32);
    s.subject = i % 3;
    for (std::size_t c = 0; c < 3; ++c) {
      s.meta[c] = {static_cast<int>(c + 1), 1, 1, 1};
      for (auto& v : s.channel(c)) v = 5.0 * c + (c + 1) * std::normal_distribution<double>(0, 1)(rng);
    }
    std::shuffle(s.meta.begin(), s.meta.end(), rng);
    data.push_back(s);
  }
  std::map<ChannelMeta, std::vector<double>> pooled;
  for (const auto& s : data)
    for (std::size_t c = 0; c < s.channels; ++c)
      pooled[s.meta[c]].insert(pooled[s.meta[c]].end(), s.channel(c).begin(), s.channel(c).end());

  SUBCASE("two-pass oracle") {
    Standardizer st;
    st.fit(data);
    for (const auto& [meta, xs] : pooled) {
      double mean = 0;
      for (double x : xs) mean += x;
      mean /= xs.size();
      double var = 0;
      for (double x : xs) var += (x - mean) * (x - mean);
      const double sd = std::sqrt(var / xs.size());
      CHECK(std::abs(st.stats().at(meta).mean - mean) < 1e-10);
      CHECK(std::abs(st.stats().at(meta).std - sd) < 1e-10);
    }
  }
  SUBCASE("fit set becomes zero mean unit variance") {
    Standardizer st;
    st.fit(data);
    std::vector<std::size_t> all(data.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    const Dataset out = st.apply(data, all);
    std::map<ChannelMeta, std::vector<double>> z;
    for (const auto& s : out)
      for (std::size_t c = 0; c < s.channels; ++c)
        z[s.meta[c]].insert(z[s.meta[c]].end(), s.channel(c).begin(), s.channel(c).end());
    for (const auto& [meta, xs] : z) {
      double mean = 0, sq = 0;
      for (double x : xs) mean += x;
      mean /= xs.size();
      for (double x : xs) sq += (x - mean) * (x - mean);
      CHECK(std::abs(mean) < 1e-8);
      CHECK(std::abs(std::sqrt(sq / xs.size()) - 1.0) < 1e-6);
    }
  }
  SUBCASE("constant channel maps to zero") {
    Dataset c(2, Sample(1, 16));
    for (auto& s : c) {
      s.meta[0] = {1, 1, 1, 1};
      std::fill(s.data.begin(), s.data.end(), 3.25);
    }
    Standardizer st;
    st.fit(c);
    CHECK(st.stats().begin()->second.std == Standardizer::kStdFloor);
    Sample s = c[0];
    st.apply(s);
    for (double v : s.data) CHECK(v == 0.0);
  }
  SUBCASE("unseen channels pass through") {
    Standardizer st;
    st.fit(data);
    Sample s(1, 8);
    s.meta[0] = {9, 9, 9, 9};
    s.data.assign(8, 7.5);
    const Sample before = s;
    st.apply(s);
    CHECK(s == before);
  }
  SUBCASE("fits only on the train split, and only once") {
    const auto folds = loso_splits(data);
    Standardizer st;
    st.fit(data, folds[0].train);
    CHECK(st.fitted_subjects() == std::set<int>{1, 2});
    CHECK(st.fitted_subjects().count(folds[0].test_subject) == 0);
    CHECK_THROWS_AS(st.fit(data), ConfigError);
  }
  SUBCASE("invalid channels do not contribute") {
    Dataset d = data;
    for (auto& s : d) {
      s.valid[0] = 0;
      for (auto& v : s.channel(0)) v = 1e6;
    }
    Standardizer st;
    st.fit(d);
    for (const auto& [meta, stats] : st.stats()) CHECK(stats.mean < 100.0);
  }
}

TEST_CASE("loso_splits") {
  SUBCASE("sizes 5/7/9") {
    Dataset d;
    for (int subj : {0, 1, 2})
      for (int i = 0; i < 5 + 2 * subj; ++i) {
        Sample s(1, 4);
        s.subject = subj;
        d.push_back(s);
      }
    std::shuffle(d.begin(), d.end(), std::mt19937_64(1));
    const auto folds = loso_splits(d);
    REQUIRE(folds.size() == 3);
    CHECK(folds[0].test.size() == 5);
    CHECK(folds[1].test.size() == 7);
    CHECK(folds[2].test.size() == 9);
    std::vector<int> seen(d.size(), 0);
    for (const auto& f : folds) {
      CHECK(f.train.size() + f.test.size() == d.size());
      for (auto i : f.test) {
        ++seen[i];
        CHECK(d[i].subject == f.test_subject);
      }
      for (auto i : f.train) CHECK(d[i].subject != f.test_subject);
    }
    for (int v : seen) CHECK(v == 1);
  }
  SUBCASE("nine subjects give nine folds") {
    Dataset d;
    for (int subj = 0; subj < 9; ++subj) {
      Sample s(1, 4);
      s.subject = subj;
      d.push_back(s);
    }
    CHECK(loso_splits(d).size() == 9);
  }
  SUBCASE("one subject is an error") { CHECK_THROWS_AS(loso_splits(Dataset(3, Sample(1, 4))), InputError); }
}

TEST_CASE("synth_generate") {
  SUBCASE("FFT-peak 1-NN oracle separates 2 Hz from 8 Hz") {
    SynthSpec spec;
    spec.classes = 2;
    spec.base_freq_hz = 2.0;
    spec.freq_step_hz = 6.0;
    spec.noise = 0.0;
    spec.subjects = 3;
    spec.windows_per_subject = 10;
    MetaVocab vocab;
    CHECK(fft_oracle_accuracy(synth_generate(spec, vocab), spec.rate_hz) == 1.0);
  }
  SUBCASE("redundancy 2 survives dropping any single channel") {
    SynthSpec spec;
    spec.noise = 0.0;
    spec.subjects = 3;
    spec.windows_per_subject = 8;
    MetaVocab vocab;
    const Dataset full = synth_generate(spec, vocab);
    for (std::size_t drop = 0; drop < spec.channels_max; ++drop) {
      Dataset d;
      for (const auto& s : full) {
        Sample t(s.channels - 1, s.length);
        t.label = s.label;
        t.subject = s.subject;
        for (std::size_t c = 0, o = 0; c < s.channels; ++c) {
          if (c == drop) continue;
          std::copy(s.channel(c).begin(), s.channel(c).end(), t.channel(o).begin());
          t.meta[o++] = s.meta[c];
        }
        d.push_back(t);
      }
      CHECK(fft_oracle_accuracy(d, spec.rate_hz) == 1.0);
    }
  }
  SUBCASE("bit-identical regeneration") {
    SynthSpec spec;
    spec.seed = 77;
    spec.windows_per_subject = 5;
    MetaVocab a, b;
    CHECK(synth_generate(spec, a) == synth_generate(spec, b));
    CHECK(a == b);
    spec.seed = 78;
    CHECK_FALSE(synth_generate(spec, b) == synth_generate(SynthSpec{.windows_per_subject = 5, .seed = 77}, a));
  }
  SUBCASE("variable channel counts stay in range") {
    SynthSpec spec;
    spec.channels_min = 3;
    spec.channels_max = 8;
    spec.windows_per_subject = 30;
    MetaVocab vocab;
    std::set<std::size_t> counts;
    for (const auto& s : synth_generate(spec, vocab)) {
      CHECK(s.channels >= 3);
      CHECK(s.channels <= 8);
      counts.insert(s.channels);
      s.check();
    }
    CHECK(counts.size() > 1);
  }
  SUBCASE("labels, subjects and metadata") {
    SynthSpec spec;
    spec.windows_per_subject = 8;
    MetaVocab vocab;
    const auto d = synth_generate(spec, vocab);
    CHECK(d.size() == 48);
    std::map<int, int> per_label;
    for (const auto& s : d) {
      ++per_label[s.label];
      for (const auto& m : s.meta) CHECK_FALSE(m.is_padding());
    }
    CHECK(per_label.size() == 4);
    for (auto [l, n] : per_label) CHECK(n == 12);
  }
  SUBCASE("invalid spec") {
    MetaVocab vocab;
    CHECK_THROWS_AS(synth_generate(SynthSpec{.classes = 1}, vocab), ConfigError);
    CHECK_THROWS_AS(synth_generate(SynthSpec{.channels_min = 7, .channels_max = 6}, vocab), ConfigError);
    CHECK_THROWS_AS(synth_generate(SynthSpec{.classes = 30}, vocab), ConfigError);
  }
}

TEST_CASE("CSV loading") {
  const auto desc = DatasetDescriptor::parse(
      "label_column = activity\n"
      "3, hand, right, acc, x\n"
      "4, hand, right, acc, y\n"
      "5, chest, -, gyro, z\n");
  SUBCASE("well-formed three-channel file") {
    std::string csv = "timestamp,subject,activity,a,b,c\n";
    for (int t = 0; t < 10; ++t)
      csv += std::to_string(t * 0.01) + ",7,2," + std::to_string(t) + "," + std::to_string(-t) + ",0.5\n";
    MetaVocab vocab;
    const auto recs = parse_csv(csv, desc, vocab);
    REQUIRE(recs.size() == 1);
    CHECK(recs[0].subject == 7);
    REQUIRE(recs[0].channels.size() == 3);
    CHECK(recs[0].length() == 10);
    CHECK(recs[0].channels[1][4] == -4.0);
    CHECK(recs[0].meta[2].side == 0);
    CHECK(vocab.name(MetaField::kSensor, recs[0].meta[2].sensor) == "gyro");
  }
  SUBCASE("mid-stream NaN is imputed, edge gaps trimmed") {
    const std::string csv =
        "timestamp,subject,activity,a,b,c\n"
        "0,1,0,,1,1\n"
        "1,1,0,1.0,2,2\n"
        "2,1,0,NaN,3,3\n"
        "3,1,0,4.0,4,4\n"
        "4,1,0,5.0,5,5\n"
        "5,1,0,6.0,6,\n";
    MetaVocab vocab;
    const auto recs = parse_csv(csv, desc, vocab);
    REQUIRE(recs.size() == 1);
    const auto& r = recs[0];
    CHECK(r.length() == 4);
    CHECK(r.channels[0][1] == doctest::Approx((1.0 + 4.0) / 2.0).epsilon(1e-15));
    CHECK(r.channels[1].front() == 2.0);
  }
  SUBCASE("impute_linear against an interpolation oracle") {
    std::vector<std::vector<double>> ch{{1.0, NAN, NAN, 7.0}};
    const auto [first, last] = impute_linear(ch);
    CHECK(first == 0);
    CHECK(last == 4);
    CHECK(std::abs(ch[0][1] - 3.0) < 1e-15);
    CHECK(std::abs(ch[0][2] - 5.0) < 1e-15);
  }
  SUBCASE("subjects are grouped") {
    const std::string csv =
        "timestamp,subject,activity,a,b,c\n"
        "0,2,0,1,1,1\n0,5,1,1,1,1\n1,2,0,2,2,2\n1,5,1,2,2,2\n";
    MetaVocab vocab;
    const auto recs = parse_csv(csv, desc, vocab);
    REQUIRE(recs.size() == 2);
    CHECK(recs[0].subject == 2);
    CHECK(recs[1].labels == std::vector<int>{1, 1});
  }
  SUBCASE("lower rates are resampled to 100 Hz") {
    auto d = desc;
    d.rate_hz = 50.0;
    std::string csv = "timestamp,subject,activity,a,b,c\n";
    for (int t = 0; t < 5; ++t) csv += "0,1,0," + std::to_string(t) + ",0,0\n";
    MetaVocab vocab;
    const auto recs = parse_csv(csv, d, vocab);
    CHECK(recs[0].length() == 9);
    CHECK(recs[0].channels[0][1] == doctest::Approx(0.5));
  }
  SUBCASE("missing label column") {
    MetaVocab vocab;
    CHECK_THROWS_AS(parse_csv("timestamp,subject,label,a,b,c\n0,1,0,1,1,1\n", desc, vocab), ConfigError);
  }
  SUBCASE("malformed row reports its line") {
    MetaVocab vocab;
    try {
      parse_csv("timestamp,subject,activity,a,b,c\n0,1,0,1,1,1\n0,1,0,1,oops,1\n", desc, vocab);
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find("3") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_csv("timestamp,subject,activity,a,b,c\n0,1,0,1,1\n", desc, vocab), ParseError);
  }
  SUBCASE("channel column beyond the header") {
    MetaVocab vocab;
    CHECK_THROWS_AS(parse_csv("timestamp,subject,activity,a\n0,1,0,1\n", desc, vocab), ConfigError);
  }
}

TEST_CASE("dataset cache") {
  SynthSpec spec;
  spec.windows_per_subject = 3;
  MetaVocab vocab;
  const auto d = synth_generate(spec, vocab);
  const auto path = std::filesystem::temp_directory_path() / "cfhar_test_cache.bin";
  save_dataset_cache(path, d, 42);
  const auto back = load_dataset_cache(path, 42);
  REQUIRE(back.has_value());
  CHECK(*back == d);
  CHECK_FALSE(load_dataset_cache(path, 43).has_value());
  CHECK_FALSE(load_dataset_cache(path.string() + ".missing", 42).has_value());
  std::filesystem::remove(path);
}
