#include "cfhar/harness.hpp"

#include <algorithm>
#include <chrono>
#include <random>

#include <spdlog/spdlog.h>

namespace cfhar {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t fold_seed(std::uint64_t trial_seed, int test_subject) {
  return mix(trial_seed, static_cast<std::uint64_t>(test_subject) + 1);
}

template <typename T>
std::vector<ConditionResult> evaluate_with(HarModel<T>& model, const Dataset& test,
                                           std::span<const PerturbationSpec> specs, std::size_t batch_size) {
  auto run = [&](const std::string& name, const Dataset& data) {
    const ConfusionMatrix cm = confusion(model, data, batch_size);
    ConditionResult r;
    r.condition = name;
    r.accuracy = cm.accuracy();
    r.macro_f1 = cm.macro_f1();
    r.samples = cm.total();
    for (std::size_t c = 0; c < cm.classes(); ++c) r.class_f1.push_back(cm.f1(c));
    return r;
  };
  std::vector<ConditionResult> out{run("Clean", test)};
  for (const auto& spec : specs) out.push_back(run(spec.name(), perturb_dataset(test, spec)));
  return out;
}

EvalReport base_report(const ExperimentConfig& cfg, std::string command) {
  EvalReport r;
  r.run_id = cfg.run_id;
  r.command = std::move(command);
  r.model = std::string(model_name(cfg.model.kind));
  r.config_hash = cfg.hash_hex();
  r.config_text = cfg.to_text();
  r.build_id = build_id();
  r.seeds = cfg.seeds;
  return r;
}

FoldResult fold_result(const FoldModel& fm, std::vector<ConditionResult> conditions) {
  FoldResult r;
  r.test_subject = fm.test_subject;
  r.seed = fm.seed;
  r.train_size = fm.train_size;
  r.epoch_loss = fm.log.epoch_loss;
  r.conditions = std::move(conditions);
  return r;
}

bool is_embedding_table(const std::string& name) {
  for (const char* f : {"meta.location", "meta.side", "meta.sensor", "meta.axis"})
    if (name.starts_with(std::string(f) + ".")) return true;
  return false;
}

/// Non-head parameters agree in name and shape; embedding tables may only have grown in rows.
bool same_body(const Checkpoint& a, const Checkpoint& b) {
  auto body = [](const Checkpoint& c) {
    std::map<std::string, Shape> out;
    for (const auto& [n, t] : c.params)
      if (!is_head_param(n)) out[n] = t.shape();
    return out;
  };
  const auto ba = body(a), bb = body(b);
  if (ba.size() != bb.size()) return false;
  for (const auto& [n, s] : ba) {
    auto it = bb.find(n);
    if (it == bb.end()) return false;
    if (is_embedding_table(n)) {
      if (s.size() != 2 || it->second.size() != 2 || s[1] != it->second[1] || s[0] > it->second[0]) return false;
    } else if (s != it->second) {
      return false;
    }
  }
  for (const auto& [n, s] : a.norms)
    if (!b.norms.count(n)) return false;
  return a.norms.size() == b.norms.size();
}

}  // namespace

PreparedData prepare_data(const ExperimentConfig& cfg, MetaVocab vocab) {
  PreparedData out;
  if (cfg.source == DataSource::kSynth) {
    out.samples = synth_generate(cfg.synth, vocab);
    out.num_classes = cfg.synth.classes;
  } else {
    if (cfg.csv_paths.empty()) throw ConfigError("data.csv lists no files");
    if (cfg.descriptor_path.empty()) throw ConfigError("data.descriptor is required for CSV data");
    const auto desc = DatasetDescriptor::load(cfg.descriptor_path);
    register_metadata(desc, vocab);
    std::optional<Dataset> cached;
    if (!cfg.cache_path.empty()) cached = load_dataset_cache(cfg.cache_path, cfg.hash());
    if (cached) {
      spdlog::info("loaded {} windows from cache {}", cached->size(), cfg.cache_path);
      out.samples = std::move(*cached);
    } else {
      for (const auto& path : cfg.csv_paths) {
        for (const auto& rec : load_csv(path, desc, vocab)) {
          auto windows = segment_windows(rec, cfg.window, cfg.stride);
          std::move(windows.begin(), windows.end(), std::back_inserter(out.samples));
        }
      }
      if (!cfg.cache_path.empty()) save_dataset_cache(cfg.cache_path, out.samples, cfg.hash());
    }
    int max_label = -1;
    for (const auto& s : out.samples) {
      if (s.label < 0) throw InputError("negative activity label " + std::to_string(s.label));
      max_label = std::max(max_label, s.label);
    }
    out.num_classes = static_cast<std::size_t>(max_label + 1);
  }
  if (out.samples.empty()) throw InputError("the dataset has no windows");
  out.min_channels = out.max_channels = out.samples.front().channels;
  for (const auto& s : out.samples) {
    out.min_channels = std::min(out.min_channels, s.channels);
    out.max_channels = std::max(out.max_channels, s.channels);
  }
  out.vocab = std::move(vocab);
  return out;
}

ModelConfig resolve_model_config(const ExperimentConfig& cfg, const PreparedData& data, std::uint64_t seed,
                                 int test_subject) {
  ModelConfig m = cfg.model;
  m.num_classes = data.num_classes;
  if (!m.channel_free()) {
    if (data.min_channels != data.max_channels) {
      throw ConfigError("the channel-fixed baseline needs a constant channel count; the data has " +
                        std::to_string(data.min_channels) + " to " + std::to_string(data.max_channels));
    }
    m.fixed_channels = data.max_channels;
  }
  m.seed = mix(cfg.model.seed, fold_seed(seed, test_subject));
  return m;
}

std::vector<PreparedFold> prepare_folds(const Dataset& data, std::size_t max_folds) {
  auto folds = loso_splits(data);
  if (max_folds > 0 && folds.size() > max_folds) folds.resize(max_folds);
  std::vector<PreparedFold> out;
  for (auto& f : folds) {
    Standardizer st;
    st.fit(data, f.train);
    PreparedFold pf;
    pf.train = st.apply(data, f.train);
    pf.test = st.apply(data, f.test);
    pf.fold = std::move(f);
    out.push_back(std::move(pf));
  }
  return out;
}

std::vector<ConditionResult> evaluate_conditions(HarModel<float>& model, const MetaVocab& vocab, const Dataset& test,
                                                 std::span<const PerturbationSpec> specs, const ExperimentConfig& cfg) {
  if (cfg.eval_double) {
    auto copy = to_double(model, vocab);
    return evaluate_with(*copy, test, specs, cfg.eval_batch_size);
  }
  return evaluate_with(model, test, specs, cfg.eval_batch_size);
}

std::filesystem::path fold_checkpoint_path(const std::filesystem::path& dir, const std::string& run_id,
                                           std::uint64_t seed, int test_subject) {
  return dir / (run_id + ".seed" + std::to_string(seed) + ".subject" + std::to_string(test_subject) + ".ckpt");
}

TrainOutcome train_run(const ExperimentConfig& cfg, const PreparedData& data,
                       const std::filesystem::path& checkpoint_dir) {
  cfg.validate();
  const auto start = Clock::now();
  const auto folds = prepare_folds(data.samples, cfg.max_folds);
  const auto specs = cfg.conditions();
  if (!checkpoint_dir.empty()) std::filesystem::create_directories(checkpoint_dir);
  TrainOutcome out;
  out.report = base_report(cfg, "train");
  for (std::uint64_t seed : cfg.seeds) {
    for (const auto& pf : folds) {
      FoldModel fm;
      fm.test_subject = pf.fold.test_subject;
      fm.seed = seed;
      fm.train_size = pf.train.size();
      fm.model = make_model<float>(resolve_model_config(cfg, data, seed, fm.test_subject), data.vocab);
      TrainOptions opts;
      opts.schedule = cfg.effective_schedule();
      opts.loss = cfg.loss;
      opts.seed = fold_seed(seed, fm.test_subject);
      try {
        fm.log = train_model(*fm.model, pf.train, opts);
      } catch (const NumericError& e) {
        throw NumericError("fold with test subject " + std::to_string(fm.test_subject) + ", seed " +
                           std::to_string(seed) + ": " + e.what());
      }
      if (!checkpoint_dir.empty()) {
        Checkpoint::capture(*fm.model, cfg.loss, data.vocab)
            .save(fold_checkpoint_path(checkpoint_dir, cfg.run_id, seed, fm.test_subject));
      }
      fm.test = pf.test;
      auto results = evaluate_conditions(*fm.model, data.vocab, fm.test, specs, cfg);
      spdlog::info("seed {} subject {}: clean accuracy {:.4f}, final loss {:.4f} ({:.1f}s)", seed, fm.test_subject,
                   results.front().accuracy, fm.log.epoch_loss.empty() ? 0.0 : fm.log.epoch_loss.back(),
                   fm.log.seconds);
      out.report.folds.push_back(fold_result(fm, std::move(results)));
      out.folds.push_back(std::move(fm));
    }
  }
  out.report.summary = summarize(out.report.folds);
  out.report.runtime_seconds = seconds_since(start);
  return out;
}

std::vector<FoldModel> load_fold_models(const ExperimentConfig& cfg, const PreparedData& data,
                                        const std::filesystem::path& checkpoint_dir) {
  const auto folds = prepare_folds(data.samples, cfg.max_folds);
  std::vector<FoldModel> out;
  for (std::uint64_t seed : cfg.seeds) {
    for (const auto& pf : folds) {
      FoldModel fm;
      fm.test_subject = pf.fold.test_subject;
      fm.seed = seed;
      fm.train_size = pf.train.size();
      const Checkpoint ckpt = Checkpoint::load(fold_checkpoint_path(checkpoint_dir, cfg.run_id, seed, fm.test_subject));
      if (!(ckpt.vocab == data.vocab)) throw ConfigError("checkpoint vocabulary differs from the dataset's");
      fm.model = rebuild<float>(ckpt);
      fm.test = pf.test;
      out.push_back(std::move(fm));
    }
  }
  return out;
}

EvalReport evaluate_run(const ExperimentConfig& cfg, const PreparedData& data, std::vector<FoldModel>& folds) {
  const auto start = Clock::now();
  const auto specs = cfg.conditions();
  EvalReport r = base_report(cfg, "eval");
  for (auto& fm : folds) r.folds.push_back(fold_result(fm, evaluate_conditions(*fm.model, data.vocab, fm.test, specs, cfg)));
  r.summary = summarize(r.folds);
  r.runtime_seconds = seconds_since(start);
  return r;
}

std::vector<double> default_intensity_grid() {
  std::vector<double> g;
  for (int i = 0; i <= 10; ++i) g.push_back(i / 10.0);
  return g;
}

std::vector<CurvePoint> sweep_intensity(std::vector<FoldModel>& folds, const MetaVocab& vocab,
                                        std::span<const PerturbKind> kinds, std::span<const double> grid,
                                        const ExperimentConfig& cfg) {
  std::vector<std::vector<ConditionResult>> per_fold;
  std::vector<PerturbationSpec> specs;
  for (auto kind : kinds)
    for (double t : grid) specs.push_back({kind, t, std::nullopt, cfg.eval_seed, ""});
  for (auto& fm : folds) per_fold.push_back(evaluate_conditions(*fm.model, vocab, fm.test, specs, cfg));
  std::vector<CurvePoint> out;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    std::vector<double> acc, f1;
    for (const auto& results : per_fold) {
      acc.push_back(results[i + 1].accuracy);  // index 0 is the clean run
      f1.push_back(results[i + 1].macro_f1);
    }
    CurvePoint p;
    p.kind = std::string(perturb_name(specs[i].kind));
    p.intensity = specs[i].intensity;
    p.count = acc.size();
    std::tie(p.acc_mean, p.acc_std) = mean_std(acc);
    std::tie(p.f1_mean, p.f1_std) = mean_std(f1);
    out.push_back(p);
  }
  return out;
}

std::string_view transfer_mode_name(TransferMode mode) { return mode == TransferMode::kFineTune ? "ft" : "lp"; }

TransferMode parse_transfer_mode(std::string_view name) {
  if (name == "ft") return TransferMode::kFineTune;
  if (name == "lp") return TransferMode::kLinearProbe;
  throw ConfigError("unknown transfer mode '" + std::string(name) + "' (expected ft or lp)");
}

TransferOutcome transfer_run(std::span<const ExperimentConfig> sources, const ExperimentConfig& target,
                             const TransferOptions& options) {
  target.validate();
  const auto start = Clock::now();
  if (!target.model.channel_free()) throw ConfigError("transfer needs a channel-free model");
  TransferOutcome out;

  MetaVocab vocab;
  std::vector<PreparedData> source_data;
  if (!options.source_checkpoint) {
    if (sources.empty()) throw ConfigError("transfer needs at least one source dataset or a source checkpoint");
    for (const auto& s : sources) {
      s.validate();
      source_data.push_back(prepare_data(s, vocab));
      vocab = source_data.back().vocab;
    }
  } else {
    vocab = options.source_checkpoint->vocab;
    // The stored vocabulary must be the one the embedding tables were built from.
    for (std::size_t f = 0; f < kMetaFields; ++f) {
      const auto field = static_cast<MetaField>(f);
      const auto it = options.source_checkpoint->params.find("meta." + std::string(field_name(field)) + ".table");
      if (it != options.source_checkpoint->params.end() && it->second.shape().front() != vocab.size(field)) {
        throw ConfigError("vocabulary mismatch: checkpoint " + std::string(field_name(field)) + " vocabulary has " +
                          std::to_string(vocab.size(field)) + " ids but its table has " +
                          std::to_string(it->second.shape().front()) + " rows");
      }
    }
  }
  const PreparedData tgt = prepare_data(target, vocab);

  if (options.source_checkpoint) {
    out.source = *options.source_checkpoint;
  } else {
    ModelConfig m = sources.front().model;
    if (!m.channel_free()) throw ConfigError("transfer needs a channel-free model");
    m.num_heads = sources.size();
    m.num_classes = 0;
    for (const auto& d : source_data) m.num_classes = std::max(m.num_classes, d.num_classes);
    auto model = make_model<float>(m, vocab);
    std::vector<Dataset> standardized;
    for (const auto& d : source_data) {
      Standardizer st;
      st.fit(d.samples);
      std::vector<std::size_t> all(d.samples.size());
      for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
      standardized.push_back(st.apply(d.samples, all));
    }
    std::vector<const Dataset*> ptrs;
    for (const auto& d : standardized) ptrs.push_back(&d);
    TrainOptions opts;
    opts.schedule = sources.front().effective_schedule();
    opts.loss = sources.front().loss;
    opts.seed = sources.front().seeds.front();
    const auto log = train_model(*model, std::span<const Dataset* const>(ptrs), opts);
    spdlog::info("pretrained on {} source(s): final loss {:.4f} ({:.1f}s)", sources.size(), log.epoch_loss.back(),
                 log.seconds);
    out.source = Checkpoint::capture(*model, opts.loss, vocab);
  }
  if (!out.source.vocab.is_prefix_of(tgt.vocab)) {
    throw ConfigError("vocabulary mismatch: the source vocabulary is not a prefix of the target's");
  }

  const bool lp = options.mode == TransferMode::kLinearProbe;
  const auto folds = prepare_folds(tgt.samples, target.max_folds);
  const auto specs = target.conditions();
  out.report = base_report(target, std::string("transfer-") + std::string(transfer_mode_name(options.mode)) +
                                       (options.pretrained ? "" : "-random"));
  out.report.model = std::string(model_name(out.source.model.kind));
  for (std::uint64_t seed : target.seeds) {
    for (const auto& pf : folds) {
      FoldModel fm;
      fm.test_subject = pf.fold.test_subject;
      fm.seed = seed;
      fm.train_size = pf.train.size();
      const std::uint64_t fseed = fold_seed(seed, fm.test_subject);
      if (options.pretrained) {
        fm.model = rebuild<float>(out.source);
      } else {
        ModelConfig m = out.source.model;
        m.seed = mix(m.seed, fseed);
        fm.model = make_model<float>(m, out.source.vocab);
      }
      fm.model->grow_vocab(tgt.vocab, fseed);
      fm.model->reset_heads(1, tgt.num_classes, fseed);
      if (!options.pretrained) {
        // Random weights still get batch-norm statistics from the target training data.
        NoGradGuard guard;
        const std::size_t bs = static_cast<std::size_t>(target.effective_schedule().batch_size);
        for (std::size_t b = 0; b < pf.train.size(); b += bs) {
          const std::size_t e = std::min(pf.train.size(), b + bs);
          fm.model->forward(make_batch<float>(std::span<const Sample>(pf.train.data() + b, e - b)), Mode::kTrain);
        }
      }
      const Checkpoint before = Checkpoint::capture(*fm.model, target.loss, tgt.vocab);
      out.same_architecture.push_back(same_body(out.source, before));
      TrainOptions opts;
      opts.schedule = target.effective_schedule();
      opts.loss = target.loss;
      opts.seed = fseed;
      opts.linear_probe = lp;
      fm.log = train_model(*fm.model, pf.train, opts);
      const Checkpoint after = Checkpoint::capture(*fm.model, target.loss, tgt.vocab);
      std::vector<std::string> changed;
      for (auto& name : checkpoint_diff(before, after))
        if (!is_head_param(name)) changed.push_back(name);
      out.body_changes.push_back(std::move(changed));
      fm.test = pf.test;
      auto results = evaluate_conditions(*fm.model, tgt.vocab, fm.test, specs, target);
      spdlog::info("transfer {} seed {} subject {}: clean accuracy {:.4f}", transfer_mode_name(options.mode), seed,
                   fm.test_subject, results.front().accuracy);
      out.report.folds.push_back(fold_result(fm, std::move(results)));
    }
  }
  out.report.summary = summarize(out.report.folds);
  out.report.runtime_seconds = seconds_since(start);
  return out;
}

EfficiencyReport efficiency_bench(const ExperimentConfig& cfg, const BenchOptions& options) {
  if (options.channels.empty()) throw ConfigError("bench needs at least one channel count");
  if (options.timed && (options.warmup < 5 || options.iterations < 30)) {
    throw ConfigError("timing needs at least 5 warmup and 30 timed iterations");
  }
  EfficiencyReport r;
  r.run_id = cfg.run_id;
  r.model = std::string(model_name(cfg.model.kind));
  r.config_hash = cfg.hash_hex();
  r.build_id = build_id();
  r.length = options.length;
  r.warmup = options.timed ? options.warmup : 0;
  r.iterations = options.timed ? options.iterations : 0;

  SynthSpec catalog = cfg.synth;
  catalog.channels_max = std::max(catalog.channels_max, *std::max_element(options.channels.begin(), options.channels.end()));
  MetaVocab vocab;
  std::vector<ChannelMeta> metas;
  for (std::size_t k = 0; k < catalog.channels_max; ++k) metas.push_back(synth_channel_meta(catalog, k, vocab));

  auto median_ms = [&](auto&& fn) {
    for (int i = 0; i < options.warmup; ++i) fn();
    std::vector<double> ms;
    for (int i = 0; i < options.iterations; ++i) {
      const auto t0 = Clock::now();
      fn();
      ms.push_back(1e3 * seconds_since(t0));
    }
    std::nth_element(ms.begin(), ms.begin() + ms.size() / 2, ms.end());
    return ms[ms.size() / 2];
  };

  for (std::size_t c : options.channels) {
    ModelConfig m = cfg.model;
    m.fixed_channels = m.channel_free() ? 0 : c;
    auto model = make_model<float>(m, vocab);
    EfficiencyPoint base;
    base.channels = c;
    base.params = model->parameter_count();
    base.macs = model->macs(c, options.length);
    if (!options.timed) {
      r.points.push_back(base);
      continue;
    }
    for (std::size_t b : options.batches) {
      std::mt19937_64 rng(mix(c, b));
      Dataset data;
      for (std::size_t i = 0; i < b; ++i) {
        Sample s(c, options.length);
        s.label = static_cast<int>(i % m.num_classes);
        for (auto& v : s.data) v = std::normal_distribution<double>(0, 1)(rng);
        for (std::size_t k = 0; k < c; ++k) s.meta[k] = metas[k];
        data.push_back(std::move(s));
      }
      const Batch<float> batch = make_batch<float>(std::span<const Sample>(data));
      {
        NoGradGuard guard;
        model->forward(batch, Mode::kTrain);
      }
      EfficiencyPoint p = base;
      p.batch = b;
      p.infer_ms = median_ms([&] {
        NoGradGuard guard;
        model->forward(batch, Mode::kEval);
      });
      auto reg = model->registry();
      std::vector<Param<float>*> params;
      for (auto& [name, q] : reg.params) params.push_back(q);
      // A batch of one has no batch statistics for the channel-fixed model; train mode needs two.
      if (b >= 2 || m.channel_free()) {
        p.train_ms = median_ms([&] {
          reg.zero_grad();
          const auto out = model->forward(batch, Mode::kTrain);
          const auto loss = training_loss<float>(out, batch.labels, cfg.loss);
          backward(loss.total);
          adam_step<float>(std::span<Param<float>* const>(params), 1e-4, 0.0);
        });
      }
      r.points.push_back(p);
    }
  }
  return r;
}

}  // namespace cfhar
