#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "cfhar/harness.hpp"

using namespace cfhar;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> sets;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Common& common) {
  cmd->add_option("--config", common.config_path, "plain-text key = value config file");
  cmd->add_option("--set", common.sets, "override one config key (key=value); repeatable");
  cmd->add_flag("-q,--quiet", common.quiet, "only log warnings and errors");
  // Any other --key value / --key=value pair is applied as a config key.
  cmd->allow_extras();
}

void apply_override(ExperimentConfig& cfg, const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + kv + "'");
  cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
}

ExperimentConfig load_config(const CLI::App* cmd, const Common& common) {
  ExperimentConfig cfg = common.config_path.empty() ? ExperimentConfig{} : ExperimentConfig::load(common.config_path);
  for (const auto& kv : common.sets) apply_override(cfg, kv);
  const auto extras = cmd->remaining();
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& a = extras[i];
    if (!a.starts_with("--") || a.size() < 3) throw ConfigError("unexpected argument '" + a + "'");
    const std::string body = a.substr(2);
    if (body.find('=') != std::string::npos) {
      apply_override(cfg, body);
    } else {
      if (i + 1 >= extras.size()) throw ConfigError("flag --" + body + " needs a value");
      cfg.set(body, extras[++i]);
    }
  }
  cfg.validate();
  if (common.quiet) spdlog::set_level(spdlog::level::warn);
  return cfg;
}

void print_written(const std::filesystem::path& json_path) {
  std::cout << "wrote " << json_path.string() << " and "
            << std::filesystem::path(json_path).replace_extension(".txt").string() << "\n";
}

std::filesystem::path checkpoint_dir(const ExperimentConfig& cfg) {
  return std::filesystem::path(cfg.output_dir) / "checkpoints";
}

// Fixed-channel synthetic data as one CSV (windows laid end to end per
// subject) plus a matching descriptor, so it can be read back by load_csv.
void write_synth_csv(const Dataset& data, const MetaVocab& vocab, const SynthSpec& spec,
                     const std::filesystem::path& csv_path, const std::filesystem::path& desc_path) {
  const std::size_t c = data.front().channels;
  DatasetDescriptor desc;
  desc.rate_hz = spec.rate_hz;
  for (std::size_t k = 0; k < c; ++k) {
    const ChannelMeta& m = data.front().meta[k];
    desc.channels.push_back({3 + k, vocab.name(MetaField::kLocation, m.location), vocab.name(MetaField::kSide, m.side),
                             vocab.name(MetaField::kSensor, m.sensor), vocab.name(MetaField::kAxis, m.axis)});
  }
  std::ofstream d(desc_path);
  d << desc.to_text();
  std::ofstream out(csv_path);
  if (!out || !d) throw InputError("cannot write " + csv_path.string());
  out << "timestamp,subject,activity";
  for (std::size_t k = 0; k < c; ++k) out << ",ch" << k;
  out << "\n";
  char buf[32];
  std::map<int, std::size_t> step;
  for (const auto& s : data) {
    if (s.channels != c || s.meta != data.front().meta) {
      throw ConfigError("CSV export needs every window to carry the same channels in the same order");
    }
    for (std::size_t t = 0; t < s.length; ++t) {
      std::snprintf(buf, sizeof(buf), "%.2f", static_cast<double>(step[s.subject]++) / spec.rate_hz);
      out << buf << "," << s.subject << "," << s.label;
      for (std::size_t k = 0; k < c; ++k) {
        std::snprintf(buf, sizeof(buf), "%.17g", s.channel(k)[t]);
        out << "," << buf;
      }
      out << "\n";
    }
  }
}

std::vector<std::size_t> parse_sizes(const std::string& list) {
  std::vector<std::size_t> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stoul(item));
    } catch (const std::exception&) {
      throw ConfigError("expected a comma-separated list of counts, got '" + list + "'");
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Channel-free human activity recognition: training, evaluation and benchmarks"};
  app.require_subcommand(1);
  Common common;

  auto* train = app.add_subcommand("train", "LOSO training and evaluation; saves fold checkpoints");
  add_common(train, common);

  auto* eval = app.add_subcommand("eval", "re-evaluate the fold checkpoints saved by train");
  add_common(eval, common);

  auto* sweep = app.add_subcommand("sweep", "accuracy versus perturbation intensity");
  add_common(sweep, common);
  std::vector<std::string> kinds;
  std::vector<double> grid;
  bool from_checkpoints = false;
  sweep->add_option("--kinds", kinds, "perturbation kinds (default: all six)")->delimiter(',');
  sweep->add_option("--grid", grid, "intensities (default: 0, 0.1, ..., 1)")->delimiter(',');
  sweep->add_flag("--from-checkpoints", from_checkpoints, "use saved fold checkpoints instead of training");

  auto* transfer = app.add_subcommand("transfer", "pretrain on source configs, then FT or LP on the target config");
  add_common(transfer, common);
  std::vector<std::string> source_paths;
  std::string mode = "lp", source_ckpt;
  bool random_init = false;
  transfer->add_option("--source", source_paths, "source experiment config; repeat for multitask pretraining");
  transfer->add_option("--mode", mode, "ft or lp")->check(CLI::IsMember({"ft", "lp"}));
  transfer->add_option("--source-checkpoint", source_ckpt, "reuse a saved source checkpoint");
  transfer->add_flag("--random-init", random_init, "start from random backbone weights");

  auto* bench = app.add_subcommand("bench", "parameter, MAC and latency benchmark");
  add_common(bench, common);
  std::string channels = "1,3,6,12,24,40", batches = "1,32";
  int iterations = 30, warmup = 5;
  bool no_timing = false;
  bench->add_option("--channels", channels, "channel counts");
  bench->add_option("--batches", batches, "batch sizes");
  bench->add_option("--iterations", iterations, "timed iterations (>= 30)");
  bench->add_option("--warmup", warmup, "warmup iterations (>= 5)");
  bench->add_flag("--no-timing", no_timing, "analytic counts only");

  auto* synth = app.add_subcommand("synth", "write the configured synthetic dataset (cache, plus CSV when possible)");
  add_common(synth, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (train->parsed()) {
      const auto cfg = load_config(train, common);
      const auto data = prepare_data(cfg);
      const auto outcome = train_run(cfg, data, checkpoint_dir(cfg));
      print_written(report_emit(outcome.report, cfg.output_dir));
      std::cout << summary_table(outcome.report);
    } else if (eval->parsed()) {
      const auto cfg = load_config(eval, common);
      const auto data = prepare_data(cfg);
      auto folds = load_fold_models(cfg, data, checkpoint_dir(cfg));
      auto report = evaluate_run(cfg, data, folds);
      report.run_id += "-eval";
      print_written(report_emit(report, cfg.output_dir));
      std::cout << summary_table(report);
    } else if (sweep->parsed()) {
      const auto cfg = load_config(sweep, common);
      std::vector<PerturbKind> ks;
      for (const auto& k : kinds) ks.push_back(parse_perturb_kind(k));
      if (ks.empty()) ks.assign(std::begin(kAllPerturbKinds), std::end(kAllPerturbKinds));
      if (grid.empty()) grid = default_intensity_grid();
      const auto data = prepare_data(cfg);
      EvalReport report;
      std::vector<FoldModel> folds;
      if (from_checkpoints) {
        folds = load_fold_models(cfg, data, checkpoint_dir(cfg));
        report = evaluate_run(cfg, data, folds);
      } else {
        auto outcome = train_run(cfg, data, checkpoint_dir(cfg));
        report = std::move(outcome.report);
        folds = std::move(outcome.folds);
      }
      report.command = "sweep";
      report.run_id += "-sweep";
      report.curves = sweep_intensity(folds, data.vocab, ks, grid, cfg);
      print_written(report_emit(report, cfg.output_dir));
      std::cout << summary_table(report);
    } else if (transfer->parsed()) {
      const auto target = load_config(transfer, common);
      std::vector<ExperimentConfig> sources;
      for (const auto& p : source_paths) sources.push_back(ExperimentConfig::load(p));
      TransferOptions opts;
      opts.mode = parse_transfer_mode(mode);
      opts.pretrained = !random_init;
      if (!source_ckpt.empty()) opts.source_checkpoint = Checkpoint::load(source_ckpt);
      const auto outcome = transfer_run(sources, target, opts);
      std::filesystem::create_directories(checkpoint_dir(target));
      if (source_ckpt.empty()) outcome.source.save(checkpoint_dir(target) / (target.run_id + ".source.ckpt"));
      auto report = outcome.report;
      report.run_id += "-" + std::string(transfer_mode_name(opts.mode));
      print_written(report_emit(report, target.output_dir));
      std::cout << summary_table(report);
    } else if (bench->parsed()) {
      const auto cfg = load_config(bench, common);
      BenchOptions opts;
      opts.channels = parse_sizes(channels);
      opts.batches = parse_sizes(batches);
      opts.iterations = iterations;
      opts.warmup = warmup;
      opts.timed = !no_timing;
      opts.length = cfg.synth.length;
      auto report = efficiency_bench(cfg, opts);
      report.run_id += "-bench";
      print_written(report_emit(report, cfg.output_dir));
      std::cout << efficiency_table(report);
    } else if (synth->parsed()) {
      const auto cfg = load_config(synth, common);
      MetaVocab vocab;
      const Dataset data = synth_generate(cfg.synth, vocab);
      const std::filesystem::path dir(cfg.output_dir);
      std::filesystem::create_directories(dir);
      save_dataset_cache(dir / (cfg.run_id + ".cfds"), data, cfg.hash());
      std::cout << "wrote " << (dir / (cfg.run_id + ".cfds")).string() << " (" << data.size() << " windows)\n";
      if (cfg.synth.channels_min == cfg.synth.channels_max) {
        write_synth_csv(data, vocab, cfg.synth, dir / (cfg.run_id + ".csv"), dir / (cfg.run_id + ".descriptor"));
        std::cout << "wrote " << (dir / (cfg.run_id + ".csv")).string() << " and "
                  << (dir / (cfg.run_id + ".descriptor")).string() << "\n";
      }
    }
  } catch (const NumericError& e) {
    spdlog::error("numeric failure: {}", e.what());
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
