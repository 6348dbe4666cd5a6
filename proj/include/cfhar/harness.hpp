#pragma once

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cfhar/checkpoint.hpp"
#include "cfhar/config.hpp"
#include "cfhar/report.hpp"
#include "cfhar/train.hpp"

namespace cfhar {

/// Windowed, unstandardized samples plus the vocabulary their metadata ids refer to.
struct PreparedData {
  Dataset samples;
  MetaVocab vocab;
  std::size_t num_classes = 0;
  std::size_t min_channels = 0;
  std::size_t max_channels = 0;
};

/// Synthesizes or loads the configured dataset. Ids are interned into vocab,
/// so several datasets prepared in sequence share one vocabulary.
PreparedData prepare_data(const ExperimentConfig& cfg, MetaVocab vocab = {});

/// The model config a run actually builds: class count and (for the baseline)
/// channel count come from the data, the seed from the trial and fold.
ModelConfig resolve_model_config(const ExperimentConfig& cfg, const PreparedData& data, std::uint64_t seed,
                                 int test_subject);

/// One trained LOSO fold: its model and its standardized held-out samples.
struct FoldModel {
  int test_subject = 0;
  std::uint64_t seed = 0;
  std::size_t train_size = 0;
  std::unique_ptr<HarModel<float>> model;
  Dataset test;
  TrainLog log;
};

/// The first max_folds LOSO folds (all when 0), each standardized with
/// statistics fitted on its own training split.
struct PreparedFold {
  Fold fold;
  Dataset train;
  Dataset test;
};
std::vector<PreparedFold> prepare_folds(const Dataset& data, std::size_t max_folds);

/// Clean plus each spec; evaluation runs on a double copy when cfg.eval_double.
std::vector<ConditionResult> evaluate_conditions(HarModel<float>& model, const MetaVocab& vocab, const Dataset& test,
                                                 std::span<const PerturbationSpec> specs, const ExperimentConfig& cfg);

struct TrainOutcome {
  EvalReport report;
  std::vector<FoldModel> folds;
};

/// LOSO training and evaluation for every trial seed. With checkpoint_dir set,
/// each fold's weights are saved there (see fold_checkpoint_path).
TrainOutcome train_run(const ExperimentConfig& cfg, const PreparedData& data,
                       const std::filesystem::path& checkpoint_dir = {});

std::filesystem::path fold_checkpoint_path(const std::filesystem::path& dir, const std::string& run_id,
                                           std::uint64_t seed, int test_subject);

/// Rebuilds the fold models saved by train_run (fails if any is missing).
std::vector<FoldModel> load_fold_models(const ExperimentConfig& cfg, const PreparedData& data,
                                        const std::filesystem::path& checkpoint_dir);

/// Evaluates already-trained folds (used by `eval`).
EvalReport evaluate_run(const ExperimentConfig& cfg, const PreparedData& data, std::vector<FoldModel>& folds);

/// 0, 0.1, ..., 1.0
std::vector<double> default_intensity_grid();

/// Accuracy and macro-F1 per (kind, intensity), mean and std over folds.
std::vector<CurvePoint> sweep_intensity(std::vector<FoldModel>& folds, const MetaVocab& vocab,
                                        std::span<const PerturbKind> kinds, std::span<const double> grid,
                                        const ExperimentConfig& cfg);

enum class TransferMode { kFineTune, kLinearProbe };
std::string_view transfer_mode_name(TransferMode mode);
TransferMode parse_transfer_mode(std::string_view name);

struct TransferOptions {
  TransferMode mode = TransferMode::kLinearProbe;
  /// false starts the target from a randomly initialised backbone instead of the source weights.
  bool pretrained = true;
  /// Reuse this source checkpoint instead of pretraining.
  std::optional<Checkpoint> source_checkpoint;
};

struct TransferOutcome {
  EvalReport report;
  Checkpoint source;
  /// Per target fold: names of non-head tensors whose values changed while training on the target.
  std::vector<std::vector<std::string>> body_changes;
  /// Per target fold: whether the non-head parameter names and shapes (metadata tables aside) match the source model.
  std::vector<bool> same_architecture;
};

/// Pretrains one shared backbone on the sources (one head per source), then
/// trains a fresh head (LP) or everything (FT) on each target LOSO fold.
/// The target config supplies data, schedule, folds and evaluation settings.
TransferOutcome transfer_run(std::span<const ExperimentConfig> sources, const ExperimentConfig& target,
                             const TransferOptions& options);

struct BenchOptions {
  std::vector<std::size_t> channels{1, 3, 6, 12, 24, 40};
  std::vector<std::size_t> batches{1, 32};
  std::size_t length = kWindowLength;
  int warmup = 5;
  int iterations = 30;
  /// false reports only the analytic counts.
  bool timed = true;
};

/// Parameter and MAC counts per channel count, and median timings per (C, batch).
EfficiencyReport efficiency_bench(const ExperimentConfig& cfg, const BenchOptions& options);

}  // namespace cfhar
