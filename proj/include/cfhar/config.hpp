#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cfhar/data.hpp"
#include "cfhar/model.hpp"
#include "cfhar/optim.hpp"
#include "cfhar/perturb.hpp"

namespace cfhar {

enum class DataSource { kSynth, kCsv };

struct ExperimentConfig {
  ModelConfig model;
  LossConfig loss;
  /// cosine_t_max = 0 means "anneal over all epochs".
  TrainSchedule schedule = [] {
    TrainSchedule s;
    s.cosine_t_max = 0;
    return s;
  }();

  DataSource source = DataSource::kSynth;
  SynthSpec synth;
  std::vector<std::string> csv_paths;
  std::string descriptor_path;
  std::size_t window = kWindowLength;
  std::size_t stride = kWindowLength;
  std::string cache_path;

  /// Evaluate the Shfl / Miss / Shfl+Miss conditions besides Clean.
  bool standard_conditions = true;
  std::optional<PerturbationSpec> extra_condition;
  std::uint64_t eval_seed = 0;
  std::size_t eval_batch_size = 128;
  /// Evaluation runs on a double-precision copy of the trained weights.
  bool eval_double = true;

  std::vector<std::uint64_t> seeds{0};
  /// 0 runs every leave-one-subject-out fold; otherwise the first max_folds.
  std::size_t max_folds = 0;

  std::string output_dir = ".";
  std::string run_id = "run";

  /// Parses `key = value` lines ('#' starts a comment). Unknown keys are errors.
  static ExperimentConfig parse(std::string_view text);
  static ExperimentConfig load(const std::filesystem::path& path);
  /// Applies one key; used by parse and by command-line overrides.
  void set(const std::string& key, const std::string& value);
  /// Canonical text: every key, sorted, one per line.
  std::string to_text() const;
  std::uint64_t hash() const;
  std::string hash_hex() const;
  void validate() const;
  TrainSchedule effective_schedule() const;

  /// Every perturbation condition to evaluate, in report order.
  std::vector<PerturbationSpec> conditions() const;
};

std::string hex64(std::uint64_t v);

}  // namespace cfhar
