#include "cfhar/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "cfhar/text.hpp"

namespace cfhar {

namespace {

std::string fmt(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::string fmt(std::uint64_t v) { return std::to_string(v); }

double to_double(const std::string& key, const std::string& v) {
  try {
    return parse_double(v, 0);
  } catch (const ParseError&) {
    throw ConfigError("config key '" + key + "' expects a number, got '" + v + "'");
  }
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  try {
    const long long x = parse_int(v, 0);
    if (x < 0) throw ParseError("negative", 0);
    return static_cast<std::uint64_t>(x);
  } catch (const ParseError&) {
    throw ConfigError("config key '" + key + "' expects a non-negative integer, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key '" + key + "' expects true/false, got '" + v + "'");
}

std::vector<std::string> to_list(const std::string& v) {
  std::vector<std::string> out;
  for (const auto& part : split(v, ','))
    if (!trim(part).empty()) out.push_back(trim(part));
  return out;
}

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? "," : "") + parts[i];
  return out;
}

struct Key {
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set;
};

#define CFHAR_SIZE_KEY(name, field)                                                                  \
  {name, Key{[](const ExperimentConfig& c) { return fmt(static_cast<std::uint64_t>(c.field)); },   \
             [](ExperimentConfig& c, const std::string& k, const std::string& v) {                  \
               c.field = static_cast<decltype(c.field)>(to_uint(k, v));                             \
             }}}
#define CFHAR_REAL_KEY(name, field)                                                               \
  {name, Key{[](const ExperimentConfig& c) { return fmt(static_cast<double>(c.field)); },       \
             [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.field = to_double(k, v); }}}

const std::map<std::string, Key>& keys() {
  static const std::map<std::string, Key> table = {
      {"model", Key{[](const ExperimentConfig& c) { return std::string(model_name(c.model.kind)); },
                    [](ExperimentConfig& c, const std::string&, const std::string& v) {
                      c.model.kind = parse_model_kind(v);
                    }}},
      CFHAR_SIZE_KEY("backbone.num_blocks", model.backbone.num_blocks),
      CFHAR_SIZE_KEY("backbone.base_channels", model.backbone.base_channels),
      CFHAR_SIZE_KEY("backbone.kernel", model.backbone.kernel),
      CFHAR_SIZE_KEY("slots", model.slots),
      CFHAR_SIZE_KEY("slot_dim", model.slot_dim),
      CFHAR_SIZE_KEY("meta.dim", model.meta.meta_dim),
      CFHAR_SIZE_KEY("meta.field_width", model.meta.field_width),
      {"meta.fields", Key{[](const ExperimentConfig& c) { return mask_to_string(c.model.meta.enabled); },
                          [](ExperimentConfig& c, const std::string&, const std::string& v) {
                            c.model.meta.enabled = mask_from_string(v);
                          }}},
      CFHAR_REAL_KEY("cbn.lambda_gamma", model.lambda_gamma),
      CFHAR_REAL_KEY("loss.lambda", loss.lambda),
      CFHAR_SIZE_KEY("train.epochs", schedule.epochs),
      CFHAR_SIZE_KEY("train.batch_size", schedule.batch_size),
      CFHAR_REAL_KEY("train.lr", schedule.learning_rate),
      CFHAR_REAL_KEY("train.min_lr", schedule.min_learning_rate),
      CFHAR_REAL_KEY("train.weight_decay", schedule.weight_decay),
      CFHAR_SIZE_KEY("train.cosine_t_max", schedule.cosine_t_max),
      {"data.source", Key{[](const ExperimentConfig& c) {
                            return std::string(c.source == DataSource::kSynth ? "synth" : "csv");
                          },
                          [](ExperimentConfig& c, const std::string& k, const std::string& v) {
                            if (v == "synth") c.source = DataSource::kSynth;
                            else if (v == "csv") c.source = DataSource::kCsv;
                            else throw ConfigError("config key '" + k + "' expects synth or csv");
                          }}},
      {"data.csv", Key{[](const ExperimentConfig& c) { return join(c.csv_paths); },
                       [](ExperimentConfig& c, const std::string&, const std::string& v) { c.csv_paths = to_list(v); }}},
      {"data.descriptor", Key{[](const ExperimentConfig& c) { return c.descriptor_path; },
                              [](ExperimentConfig& c, const std::string&, const std::string& v) { c.descriptor_path = v; }}},
      {"data.cache", Key{[](const ExperimentConfig& c) { return c.cache_path; },
                         [](ExperimentConfig& c, const std::string&, const std::string& v) { c.cache_path = v; }}},
      CFHAR_SIZE_KEY("data.window", window),
      CFHAR_SIZE_KEY("data.stride", stride),
      CFHAR_SIZE_KEY("synth.subjects", synth.subjects),
      CFHAR_SIZE_KEY("synth.classes", synth.classes),
      CFHAR_SIZE_KEY("synth.windows_per_subject", synth.windows_per_subject),
      CFHAR_SIZE_KEY("synth.length", synth.length),
      CFHAR_SIZE_KEY("synth.channels_min", synth.channels_min),
      CFHAR_SIZE_KEY("synth.channels_max", synth.channels_max),
      CFHAR_SIZE_KEY("synth.axes_per_location", synth.axes_per_location),
      CFHAR_SIZE_KEY("synth.redundancy", synth.redundancy),
      {"synth.semantics", Key{[](const ExperimentConfig& c) {
                                return std::string(c.synth.semantics == SynthSemantics::kShared ? "shared" : "location");
                              },
                              [](ExperimentConfig& c, const std::string& k, const std::string& v) {
                                if (v == "shared") c.synth.semantics = SynthSemantics::kShared;
                                else if (v == "location") c.synth.semantics = SynthSemantics::kLocationDependent;
                                else throw ConfigError("config key '" + k + "' expects shared or location");
                              }}},
      CFHAR_REAL_KEY("synth.rate_hz", synth.rate_hz),
      CFHAR_SIZE_KEY("synth.cue_channels", synth.cue_channels),
      CFHAR_REAL_KEY("synth.base_freq_hz", synth.base_freq_hz),
      CFHAR_REAL_KEY("synth.freq_step_hz", synth.freq_step_hz),
      CFHAR_REAL_KEY("synth.amplitude", synth.amplitude),
      CFHAR_REAL_KEY("synth.noise", synth.noise),
      CFHAR_REAL_KEY("synth.distractor", synth.distractor),
      CFHAR_REAL_KEY("synth.position_cue", synth.position_cue),
      CFHAR_REAL_KEY("synth.shared_cue", synth.shared_cue),
      CFHAR_REAL_KEY("synth.subject_jitter", synth.subject_jitter),
      CFHAR_SIZE_KEY("synth.seed", synth.seed),
      {"eval.conditions", Key{[](const ExperimentConfig& c) {
                                return std::string(c.standard_conditions ? "standard" : "none");
                              },
                              [](ExperimentConfig& c, const std::string& k, const std::string& v) {
                                if (v == "standard") c.standard_conditions = true;
                                else if (v == "none") c.standard_conditions = false;
                                else throw ConfigError("config key '" + k + "' expects standard or none");
                              }}},
      {"perturb.kind", Key{[](const ExperimentConfig& c) {
                             return c.extra_condition ? std::string(perturb_name(c.extra_condition->kind)) : "";
                           },
                           [](ExperimentConfig& c, const std::string&, const std::string& v) {
                             if (v.empty()) {
                               c.extra_condition.reset();
                               return;
                             }
                             if (!c.extra_condition) c.extra_condition = PerturbationSpec{};
                             c.extra_condition->kind = parse_perturb_kind(v);
                           }}},
      {"perturb.intensity", Key{[](const ExperimentConfig& c) {
                                  return c.extra_condition ? fmt(c.extra_condition->intensity) : "";
                                },
                                [](ExperimentConfig& c, const std::string& k, const std::string& v) {
                                  if (v.empty()) return;
                                  if (!c.extra_condition) c.extra_condition = PerturbationSpec{};
                                  c.extra_condition->intensity = to_double(k, v);
                                }}},
      {"perturb.seed", Key{[](const ExperimentConfig& c) {
                             return c.extra_condition ? fmt(c.extra_condition->seed) : "";
                           },
                           [](ExperimentConfig& c, const std::string& k, const std::string& v) {
                             if (v.empty()) return;
                             if (!c.extra_condition) c.extra_condition = PerturbationSpec{};
                             c.extra_condition->seed = to_uint(k, v);
                           }}},
      CFHAR_SIZE_KEY("eval.seed", eval_seed),
      CFHAR_SIZE_KEY("eval.batch_size", eval_batch_size),
      {"eval.double", Key{[](const ExperimentConfig& c) { return std::string(c.eval_double ? "true" : "false"); },
                          [](ExperimentConfig& c, const std::string& k, const std::string& v) {
                            c.eval_double = to_bool(k, v);
                          }}},
      {"seeds", Key{[](const ExperimentConfig& c) {
                      std::vector<std::string> s;
                      for (auto v : c.seeds) s.push_back(fmt(v));
                      return join(s);
                    },
                    [](ExperimentConfig& c, const std::string& k, const std::string& v) {
                      c.seeds.clear();
                      for (const auto& part : to_list(v)) c.seeds.push_back(to_uint(k, part));
                    }}},
      CFHAR_SIZE_KEY("folds.max", max_folds),
      {"output.dir", Key{[](const ExperimentConfig& c) { return c.output_dir; },
                         [](ExperimentConfig& c, const std::string&, const std::string& v) { c.output_dir = v; }}},
      {"output.id", Key{[](const ExperimentConfig& c) { return c.run_id; },
                        [](ExperimentConfig& c, const std::string&, const std::string& v) { c.run_id = v; }}},
  };
  return table;
}

#undef CFHAR_SIZE_KEY
#undef CFHAR_REAL_KEY

// Keys that describe where results go rather than what is computed.
bool excluded_from_hash(const std::string& key) { return key == "output.dir" || key == "output.id"; }

}  // namespace

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  auto it = keys().find(key);
  if (it == keys().end()) throw ConfigError("unknown config key '" + key + "'");
  it->second.set(*this, key, trim(value));
}

ExperimentConfig ExperimentConfig::parse(std::string_view text) {
  ExperimentConfig cfg;
  std::size_t line_no = 0;
  for (const auto& raw : split(text, '\n')) {
    ++line_no;
    std::string line = raw;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    cfg.set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string ExperimentConfig::to_text() const {
  std::string out;
  for (const auto& [key, k] : keys()) out += key + " = " + k.get(*this) + "\n";
  return out;
}

std::uint64_t ExperimentConfig::hash() const {
  std::string text;
  for (const auto& [key, k] : keys())
    if (!excluded_from_hash(key)) text += key + "=" + k.get(*this) + "\n";
  return fnv1a64(text);
}

std::string ExperimentConfig::hash_hex() const { return hex64(hash()); }

void ExperimentConfig::validate() const {
  ModelConfig m = model;
  if (m.kind == ModelKind::kBaseline && m.fixed_channels == 0) m.fixed_channels = 1;  // set from the data later
  m.validate();
  loss.validate();
  effective_schedule().validate();
  if (source == DataSource::kSynth) synth.validate();
  if (source == DataSource::kCsv && (csv_paths.empty() || descriptor_path.empty())) {
    throw ConfigError("csv data needs data.csv and data.descriptor");
  }
  if (window == 0 || stride == 0) throw ConfigError("data.window and data.stride must be positive");
  if (seeds.empty()) throw ConfigError("at least one trial seed is required");
  if (eval_batch_size == 0) throw ConfigError("eval.batch_size must be positive");
}

TrainSchedule ExperimentConfig::effective_schedule() const {
  TrainSchedule s = schedule;
  if (s.cosine_t_max == 0) s.cosine_t_max = s.epochs;
  return s;
}

std::vector<PerturbationSpec> ExperimentConfig::conditions() const {
  std::vector<PerturbationSpec> out;
  if (standard_conditions) out = ::cfhar::standard_conditions(eval_seed);
  if (extra_condition) out.push_back(*extra_condition);
  return out;
}

}  // namespace cfhar
