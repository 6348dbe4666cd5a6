#include "cfhar/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "json.hpp"

#ifndef CFHAR_BUILD_ID
#define CFHAR_BUILD_ID "unknown"
#endif

namespace cfhar {

using nlohmann::json;

std::string build_id() { return CFHAR_BUILD_ID; }

const ConditionResult& FoldResult::condition(std::string_view name) const {
  for (const auto& c : conditions)
    if (c.condition == name) return c;
  throw InputError("fold has no condition '" + std::string(name) + "'");
}

const SummaryRow& EvalReport::row(std::string_view condition) const {
  for (const auto& r : summary)
    if (r.condition == condition) return r;
  throw InputError("report has no condition '" + std::string(condition) + "'");
}

bool EvalReport::same_metrics(const EvalReport& other) const {
  return config_hash == other.config_hash && seeds == other.seeds && folds == other.folds &&
         summary == other.summary && curves == other.curves;
}

std::pair<double, double> mean_std(const std::vector<double>& values) {
  if (values.empty()) return {0.0, 0.0};
  double mean = 0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  if (values.size() < 2) return {mean, 0.0};
  double ss = 0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / static_cast<double>(values.size() - 1))};
}

std::vector<SummaryRow> summarize(const std::vector<FoldResult>& folds) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<double>> acc, f1;
  std::map<std::string, std::map<std::uint64_t, std::vector<double>>> trial_acc, trial_f1;
  for (const auto& fold : folds) {
    for (const auto& c : fold.conditions) {
      if (!acc.count(c.condition)) order.push_back(c.condition);
      acc[c.condition].push_back(c.accuracy);
      f1[c.condition].push_back(c.macro_f1);
      trial_acc[c.condition][fold.seed].push_back(c.accuracy);
      trial_f1[c.condition][fold.seed].push_back(c.macro_f1);
    }
  }
  std::vector<SummaryRow> out;
  for (const auto& name : order) {
    SummaryRow r;
    r.condition = name;
    r.count = acc[name].size();
    std::tie(r.acc_mean, r.acc_std) = mean_std(acc[name]);
    std::tie(r.f1_mean, r.f1_std) = mean_std(f1[name]);
    std::vector<double> ta, tf;
    for (const auto& [seed, v] : trial_acc[name]) ta.push_back(mean_std(v).first);
    for (const auto& [seed, v] : trial_f1[name]) tf.push_back(mean_std(v).first);
    r.acc_trial_std = mean_std(ta).second;
    r.f1_trial_std = mean_std(tf).second;
    out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------

void to_json(json& j, const ConditionResult& c) {
  j = {{"condition", c.condition}, {"accuracy", c.accuracy}, {"macro_f1", c.macro_f1},
       {"class_f1", c.class_f1},   {"samples", c.samples}};
}
void from_json(const json& j, ConditionResult& c) {
  j.at("condition").get_to(c.condition);
  j.at("accuracy").get_to(c.accuracy);
  j.at("macro_f1").get_to(c.macro_f1);
  j.at("class_f1").get_to(c.class_f1);
  j.at("samples").get_to(c.samples);
}
void to_json(json& j, const FoldResult& f) {
  j = {{"test_subject", f.test_subject},
       {"seed", f.seed},
       {"train_size", f.train_size},
       {"epoch_loss", f.epoch_loss},
       {"conditions", f.conditions}};
}
void from_json(const json& j, FoldResult& f) {
  j.at("test_subject").get_to(f.test_subject);
  j.at("seed").get_to(f.seed);
  j.at("train_size").get_to(f.train_size);
  j.at("epoch_loss").get_to(f.epoch_loss);
  j.at("conditions").get_to(f.conditions);
}
void to_json(json& j, const SummaryRow& r) {
  j = {{"condition", r.condition},         {"count", r.count},       {"acc_mean", r.acc_mean},
       {"acc_std", r.acc_std},             {"f1_mean", r.f1_mean},   {"f1_std", r.f1_std},
       {"acc_trial_std", r.acc_trial_std}, {"f1_trial_std", r.f1_trial_std}};
}
void from_json(const json& j, SummaryRow& r) {
  j.at("condition").get_to(r.condition);
  j.at("count").get_to(r.count);
  j.at("acc_mean").get_to(r.acc_mean);
  j.at("acc_std").get_to(r.acc_std);
  j.at("f1_mean").get_to(r.f1_mean);
  j.at("f1_std").get_to(r.f1_std);
  j.at("acc_trial_std").get_to(r.acc_trial_std);
  j.at("f1_trial_std").get_to(r.f1_trial_std);
}
void to_json(json& j, const CurvePoint& p) {
  j = {{"kind", p.kind},       {"intensity", p.intensity}, {"count", p.count}, {"acc_mean", p.acc_mean},
       {"acc_std", p.acc_std}, {"f1_mean", p.f1_mean},     {"f1_std", p.f1_std}};
}
void from_json(const json& j, CurvePoint& p) {
  j.at("kind").get_to(p.kind);
  j.at("intensity").get_to(p.intensity);
  j.at("count").get_to(p.count);
  j.at("acc_mean").get_to(p.acc_mean);
  j.at("acc_std").get_to(p.acc_std);
  j.at("f1_mean").get_to(p.f1_mean);
  j.at("f1_std").get_to(p.f1_std);
}
void to_json(json& j, const MacBreakdown& m) {
  j = {{"backbone", m.backbone}, {"metadata", m.metadata}, {"mixing", m.mixing}, {"heads", m.heads}, {"total", m.total()}};
}
void from_json(const json& j, MacBreakdown& m) {
  j.at("backbone").get_to(m.backbone);
  j.at("metadata").get_to(m.metadata);
  j.at("mixing").get_to(m.mixing);
  j.at("heads").get_to(m.heads);
}
void to_json(json& j, const EfficiencyPoint& p) {
  j = {{"channels", p.channels}, {"batch", p.batch},       {"params", p.params},
       {"macs", p.macs},         {"infer_ms", p.infer_ms}, {"train_ms", p.train_ms}};
}
void from_json(const json& j, EfficiencyPoint& p) {
  j.at("channels").get_to(p.channels);
  j.at("batch").get_to(p.batch);
  j.at("params").get_to(p.params);
  j.at("macs").get_to(p.macs);
  j.at("infer_ms").get_to(p.infer_ms);
  j.at("train_ms").get_to(p.train_ms);
}

namespace {

json parse_checked(std::string_view text, std::string_view kind) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw InputError(std::string(kind) + " is not valid JSON: " + e.what());
  }
  if (j.value("schema", std::string()) != kind) throw InputError("not a " + std::string(kind));
  if (j.value("schema_version", 0) != EvalReport::kSchemaVersion) {
    throw InputError("unsupported " + std::string(kind) + " schema version");
  }
  return j;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
  if (!out) throw InputError("failed writing " + path.string());
}

std::string fmt(const char* format, double a, double b) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), format, a, b);
  return buf;
}

std::string pad(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

}  // namespace

std::string report_to_json(const EvalReport& r) {
  json j = {{"schema", "cfhar.eval_report"},
            {"schema_version", EvalReport::kSchemaVersion},
            {"run_id", r.run_id},
            {"command", r.command},
            {"model", r.model},
            {"config_hash", r.config_hash},
            {"config_text", r.config_text},
            {"build_id", r.build_id},
            {"seeds", r.seeds},
            {"folds", r.folds},
            {"summary", r.summary},
            {"curves", r.curves},
            {"runtime_seconds", r.runtime_seconds}};
  return j.dump(2);
}

EvalReport report_from_json(std::string_view text) {
  const json j = parse_checked(text, "cfhar.eval_report");
  EvalReport r;
  try {
    j.at("run_id").get_to(r.run_id);
    j.at("command").get_to(r.command);
    j.at("model").get_to(r.model);
    j.at("config_hash").get_to(r.config_hash);
    j.at("config_text").get_to(r.config_text);
    j.at("build_id").get_to(r.build_id);
    j.at("seeds").get_to(r.seeds);
    j.at("folds").get_to(r.folds);
    j.at("summary").get_to(r.summary);
    j.at("curves").get_to(r.curves);
    j.at("runtime_seconds").get_to(r.runtime_seconds);
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed report: ") + e.what());
  }
  return r;
}

std::string summary_table(const EvalReport& r) {
  std::string out = "run " + r.run_id + "  model " + r.model + "  config " + r.config_hash + "  build " + r.build_id + "\n";
  if (!r.summary.empty()) {
    out += "\n" + pad("metric", 10);
    for (const auto& row : r.summary) out += pad(row.condition, 18);
    out += "\n" + pad("accuracy", 10);
    for (const auto& row : r.summary) out += pad(fmt("%.2f +- %.2f", 100 * row.acc_mean, 100 * row.acc_std), 18);
    out += "\n" + pad("macro-F1", 10);
    for (const auto& row : r.summary) out += pad(fmt("%.2f +- %.2f", 100 * row.f1_mean, 100 * row.f1_std), 18);
    out += "\n" + pad("n", 10);
    for (const auto& row : r.summary) out += pad(std::to_string(row.count), 18);
    out += "\n";
  }
  if (!r.curves.empty()) {
    out += "\n" + pad("kind", 28) + pad("intensity", 11) + pad("accuracy", 18) + "macro-F1\n";
    for (const auto& p : r.curves) {
      char t[16];
      std::snprintf(t, sizeof(t), "%.2f", p.intensity);
      out += pad(p.kind, 28) + pad(t, 11) + pad(fmt("%.2f +- %.2f", 100 * p.acc_mean, 100 * p.acc_std), 18) +
             fmt("%.2f +- %.2f", 100 * p.f1_mean, 100 * p.f1_std) + "\n";
    }
  }
  return out;
}

std::string efficiency_to_json(const EfficiencyReport& r) {
  json j = {{"schema", "cfhar.efficiency_report"},
            {"schema_version", EvalReport::kSchemaVersion},
            {"run_id", r.run_id},
            {"model", r.model},
            {"config_hash", r.config_hash},
            {"build_id", r.build_id},
            {"length", r.length},
            {"warmup", r.warmup},
            {"iterations", r.iterations},
            {"points", r.points}};
  return j.dump(2);
}

EfficiencyReport efficiency_from_json(std::string_view text) {
  const json j = parse_checked(text, "cfhar.efficiency_report");
  EfficiencyReport r;
  try {
    j.at("run_id").get_to(r.run_id);
    j.at("model").get_to(r.model);
    j.at("config_hash").get_to(r.config_hash);
    j.at("build_id").get_to(r.build_id);
    j.at("length").get_to(r.length);
    j.at("warmup").get_to(r.warmup);
    j.at("iterations").get_to(r.iterations);
    j.at("points").get_to(r.points);
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed efficiency report: ") + e.what());
  }
  return r;
}

std::string efficiency_table(const EfficiencyReport& r) {
  std::string out = "run " + r.run_id + "  model " + r.model + "  config " + r.config_hash + "  window " +
                    std::to_string(r.length) + "\n\n" + pad("C", 6) + pad("batch", 8) + pad("params", 12) +
                    pad("MACs/sample", 16) + pad("infer ms", 12) + "train ms\n";
  for (const auto& p : r.points) {
    char a[32], b[32];
    std::snprintf(a, sizeof(a), "%.3f", p.infer_ms);
    std::snprintf(b, sizeof(b), "%.3f", p.train_ms);
    out += pad(std::to_string(p.channels), 6) + pad(std::to_string(p.batch), 8) + pad(std::to_string(p.params), 12) +
           pad(std::to_string(p.macs.total()), 16) + pad(a, 12) + b + "\n";
  }
  return out;
}

std::filesystem::path report_emit(const EvalReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto json_path = dir / ("report." + report.run_id + ".json");
  write_text(json_path, report_to_json(report));
  write_text(dir / ("report." + report.run_id + ".txt"), summary_table(report));
  return json_path;
}

std::filesystem::path report_emit(const EfficiencyReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto json_path = dir / ("report." + report.run_id + ".json");
  write_text(json_path, efficiency_to_json(report));
  write_text(dir / ("report." + report.run_id + ".txt"), efficiency_table(report));
  return json_path;
}

}  // namespace cfhar
