#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "cfhar/model.hpp"

namespace cfhar {

struct ConditionResult {
  std::string condition;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::vector<double> class_f1;  // one entry per class; absent classes are reported as 0
  std::size_t samples = 0;

  bool operator==(const ConditionResult&) const = default;
};

struct FoldResult {
  int test_subject = 0;
  std::uint64_t seed = 0;
  std::size_t train_size = 0;
  std::vector<double> epoch_loss;
  std::vector<ConditionResult> conditions;

  const ConditionResult& condition(std::string_view name) const;
  bool operator==(const FoldResult&) const = default;
};

/// Mean and sample standard deviation over every (fold, trial) result, plus the
/// spread of the per-trial means.
struct SummaryRow {
  std::string condition;
  std::size_t count = 0;
  double acc_mean = 0.0, acc_std = 0.0;
  double f1_mean = 0.0, f1_std = 0.0;
  double acc_trial_std = 0.0, f1_trial_std = 0.0;

  bool operator==(const SummaryRow&) const = default;
};

struct CurvePoint {
  std::string kind;
  double intensity = 0.0;
  std::size_t count = 0;
  double acc_mean = 0.0, acc_std = 0.0;
  double f1_mean = 0.0, f1_std = 0.0;

  bool operator==(const CurvePoint&) const = default;
};

struct EvalReport {
  static constexpr int kSchemaVersion = 1;

  std::string run_id;
  std::string command;
  std::string model;
  std::string config_hash;
  std::string config_text;
  std::string build_id;
  std::vector<std::uint64_t> seeds;
  std::vector<FoldResult> folds;
  std::vector<SummaryRow> summary;
  std::vector<CurvePoint> curves;
  double runtime_seconds = 0.0;

  const SummaryRow& row(std::string_view condition) const;
  /// Every field except the runtime and build metadata.
  bool same_metrics(const EvalReport& other) const;
  bool operator==(const EvalReport&) const = default;
};

std::vector<SummaryRow> summarize(const std::vector<FoldResult>& folds);

/// Mean and sample standard deviation (0 for fewer than two values).
std::pair<double, double> mean_std(const std::vector<double>& values);

std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(std::string_view text);
/// Plain-text table with the clean and perturbed conditions as columns.
std::string summary_table(const EvalReport& report);

struct EfficiencyPoint {
  std::size_t channels = 0;
  std::size_t batch = 0;
  std::size_t params = 0;
  MacBreakdown macs;
  double infer_ms = 0.0;  // per batch, median
  double train_ms = 0.0;  // per step, median

  bool operator==(const EfficiencyPoint&) const = default;
};

struct EfficiencyReport {
  std::string run_id;
  std::string model;
  std::string config_hash;
  std::string build_id;
  std::size_t length = 0;
  int warmup = 0;
  int iterations = 0;
  std::vector<EfficiencyPoint> points;

  bool operator==(const EfficiencyReport&) const = default;
};

std::string efficiency_to_json(const EfficiencyReport& report);
EfficiencyReport efficiency_from_json(std::string_view text);
std::string efficiency_table(const EfficiencyReport& report);

/// Writes report.<id>.json and report.<id>.txt into dir; returns the JSON path.
std::filesystem::path report_emit(const EvalReport& report, const std::filesystem::path& dir);
std::filesystem::path report_emit(const EfficiencyReport& report, const std::filesystem::path& dir);

/// `git describe` of the source tree at configure time, or "unknown".
std::string build_id();

}  // namespace cfhar
