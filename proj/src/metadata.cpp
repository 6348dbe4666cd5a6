#include "cfhar/metadata.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "cfhar/text.hpp"

namespace cfhar {

namespace {

constexpr std::array<std::string_view, kMetaFields> kFieldNames{"location", "side", "sensor", "axis"};

bool is_unknown(std::string_view name) { return name.empty() || name == "-"; }

}  // namespace

std::string_view field_name(MetaField field) { return kFieldNames[static_cast<std::size_t>(field)]; }

ChannelMeta apply_mask(const ChannelMeta& meta, const FieldMask& mask) {
  ChannelMeta out = meta;
  if (!mask[0]) out.location = 0;
  if (!mask[1]) out.side = 0;
  if (!mask[2]) out.sensor = 0;
  if (!mask[3]) out.axis = 0;
  return out;
}

std::string mask_to_string(const FieldMask& mask) {
  std::string out;
  for (std::size_t i = 0; i < kMetaFields; ++i) {
    if (!mask[i]) continue;
    if (!out.empty()) out += '+';
    out += kFieldNames[i];
  }
  return out.empty() ? "none" : out;
}

FieldMask mask_from_string(std::string_view text) {
  const std::string t = trim(text);
  if (t == "all") return kAllFields;
  FieldMask mask{false, false, false, false};
  if (t == "none" || t.empty()) return mask;
  for (const auto& part : split(t, '+')) {
    const std::string name = trim(part);
    auto it = std::find(kFieldNames.begin(), kFieldNames.end(), name);
    if (it == kFieldNames.end()) throw ConfigError("unknown metadata field '" + name + "'");
    mask[static_cast<std::size_t>(it - kFieldNames.begin())] = true;
  }
  return mask;
}

int MetaVocab::intern(MetaField field, std::string_view name) {
  if (is_unknown(name)) return 0;
  auto& names = names_[static_cast<std::size_t>(field)];
  auto it = std::find(names.begin(), names.end(), name);
  if (it != names.end()) return static_cast<int>(it - names.begin()) + 1;
  names.emplace_back(name);
  return static_cast<int>(names.size());
}

int MetaVocab::lookup(MetaField field, std::string_view name) const {
  if (is_unknown(name)) return 0;
  const auto& names = names_[static_cast<std::size_t>(field)];
  auto it = std::find(names.begin(), names.end(), name);
  return it == names.end() ? 0 : static_cast<int>(it - names.begin()) + 1;
}

const std::string& MetaVocab::name(MetaField field, int id) const {
  static const std::string kPad = "-";
  if (id == 0) return kPad;
  const auto& names = names_[static_cast<std::size_t>(field)];
  if (id < 0 || static_cast<std::size_t>(id) > names.size()) {
    throw InputError(std::string(field_name(field)) + " id " + std::to_string(id) + " not in vocabulary");
  }
  return names[static_cast<std::size_t>(id) - 1];
}

void MetaVocab::validate(const ChannelMeta& meta) const {
  for (std::size_t f = 0; f < kMetaFields; ++f) {
    const int id = meta.ids()[f];
    if (id < 0 || static_cast<std::size_t>(id) >= size(static_cast<MetaField>(f))) {
      throw InputError(std::string(kFieldNames[f]) + " id " + std::to_string(id) + " outside vocabulary of size " +
                       std::to_string(size(static_cast<MetaField>(f))));
    }
  }
}

bool MetaVocab::is_prefix_of(const MetaVocab& other) const {
  for (std::size_t f = 0; f < kMetaFields; ++f) {
    const auto& mine = names_[f];
    const auto& theirs = other.names_[f];
    if (mine.size() > theirs.size() || !std::equal(mine.begin(), mine.end(), theirs.begin())) return false;
  }
  return true;
}

DatasetDescriptor DatasetDescriptor::parse(std::string_view text) {
  DatasetDescriptor d;
  std::size_t line_no = 0;
  for (const auto& raw : split(text, '\n')) {
    ++line_no;
    std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    if (line.find('=') != std::string::npos && line.find(',') == std::string::npos) {
      const auto eq = line.find('=');
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (key == "rate_hz") {
        d.rate_hz = parse_double(value, line_no);
        if (!(d.rate_hz > 0)) throw ParseError("rate_hz must be positive", line_no);
      } else if (key == "timestamp_column") {
        d.timestamp_column = value;
      } else if (key == "subject_column") {
        d.subject_column = value;
      } else if (key == "label_column") {
        d.label_column = value;
      } else {
        throw ParseError("unknown descriptor key '" + key + "'", line_no);
      }
      continue;
    }
    auto fields = split(line, ',');
    if (fields.size() != 5) throw ParseError("expected 'index, location, side, sensor, axis'", line_no);
    ChannelDescriptor ch;
    ch.index = static_cast<std::size_t>(parse_int(trim(fields[0]), line_no));
    std::string* slots[] = {&ch.location, &ch.side, &ch.sensor, &ch.axis};
    for (std::size_t i = 0; i < 4; ++i) {
      std::string v = trim(fields[i + 1]);
      *slots[i] = v == "-" ? std::string() : v;
    }
    d.channels.push_back(std::move(ch));
  }
  return d;
}

DatasetDescriptor DatasetDescriptor::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open descriptor " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string DatasetDescriptor::to_text() const {
  std::ostringstream out;
  out << "rate_hz = " << rate_hz << "\n";
  out << "timestamp_column = " << timestamp_column << "\n";
  out << "subject_column = " << subject_column << "\n";
  out << "label_column = " << label_column << "\n";
  out << "# index, location, side, sensor, axis\n";
  auto f = [](const std::string& s) { return s.empty() ? std::string("-") : s; };
  for (const auto& ch : channels) {
    out << ch.index << ", " << f(ch.location) << ", " << f(ch.side) << ", " << f(ch.sensor) << ", " << f(ch.axis)
        << "\n";
  }
  return out.str();
}

std::vector<ChannelMeta> register_metadata(const DatasetDescriptor& descriptor, MetaVocab& vocab) {
  std::vector<ChannelMeta> out;
  out.reserve(descriptor.channels.size());
  for (const auto& ch : descriptor.channels) {
    ChannelMeta m;
    m.location = vocab.intern(MetaField::kLocation, ch.location);
    m.side = vocab.intern(MetaField::kSide, ch.side);
    m.sensor = vocab.intern(MetaField::kSensor, ch.sensor);
    m.axis = vocab.intern(MetaField::kAxis, ch.axis);
    out.push_back(m);
  }
  return out;
}

// ---------------------------------------------------------------------------

template <typename T>
MetaEncoder<T>::MetaEncoder(const MetaVocab& vocab, const MetaEncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.field_width == 0 || cfg.meta_dim == 0) throw ConfigError("MetaEncoder: widths must be positive");
  for (std::size_t f = 0; f < kMetaFields; ++f) {
    tables[f] = Embedding<T>(vocab.size(static_cast<MetaField>(f)), cfg.field_width, rng);
  }
  hidden_ = Linear<T>(kMetaFields * cfg.field_width, cfg.meta_dim, rng);
  out_ = Linear<T>(cfg.meta_dim, cfg.meta_dim, rng);
  norm_ = LayerNorm<T>(cfg.meta_dim);
}

template <typename T>
Var<T> MetaEncoder<T>::operator()(std::span<const ChannelMeta> metas) const {
  std::vector<Var<T>> parts;
  parts.reserve(kMetaFields);
  std::vector<int> ids(metas.size());
  for (std::size_t f = 0; f < kMetaFields; ++f) {
    for (std::size_t i = 0; i < metas.size(); ++i) ids[i] = cfg_.enabled[f] ? metas[i].ids()[f] : 0;
    parts.push_back(tables[f](ids));
  }
  return norm_(out_(relu(hidden_(concat_last(parts)))));
}

template <typename T>
void MetaEncoder<T>::register_params(ParamRegistry<T>& reg, const std::string& prefix) {
  for (std::size_t f = 0; f < kMetaFields; ++f) tables[f].register_params(reg, prefix + "." + std::string(kFieldNames[f]));
  hidden_.register_params(reg, prefix + ".mlp_hidden");
  out_.register_params(reg, prefix + ".mlp_out");
  norm_.register_params(reg, prefix + ".norm");
}

template <typename T>
void MetaEncoder<T>::grow(const MetaVocab& vocab, Rng& rng) {
  for (std::size_t f = 0; f < kMetaFields; ++f) tables[f].grow(vocab.size(static_cast<MetaField>(f)), rng);
}

template <typename T>
CbnLayer<T>::CbnLayer(std::size_t channels, std::size_t meta_dim, double lambda, Rng& rng)
    : bn(channels), lambda_(lambda), conditioned_(meta_dim > 0) {
  if (lambda < 0) throw ConfigError("CbnLayer: lambda_gamma must be non-negative");
  if (conditioned_) {
    gamma_proj = Linear<T>(meta_dim, channels, rng);
    beta_proj = Linear<T>(meta_dim, channels, rng);
  }
}

template <typename T>
Var<T> CbnLayer<T>::operator()(const Var<T>& u, const Var<T>& meta, Mode mode) {
  Var<T> normed = bn(u, mode);
  if (!conditioned_) return normed;
  if (!meta.defined() || meta.shape().size() != 2 || meta.shape()[0] != u.shape()[0]) {
    throw InputError("CbnLayer: expected one metadata vector per row (" + std::to_string(u.shape()[0]) + "), got " +
                     (meta.defined() ? shape_str(meta.shape()) : std::string("none")));
  }
  Var<T> scale = affine<T>(tanh<T>(gamma_proj(meta)), static_cast<T>(lambda_), T{1});
  return modulate<T>(normed, scale, beta_proj(meta));
}

template <typename T>
void CbnLayer<T>::register_params(ParamRegistry<T>& reg, const std::string& prefix) {
  bn.register_params(reg, prefix);
  if (conditioned_) {
    gamma_proj.register_params(reg, prefix + ".gamma_proj");
    beta_proj.register_params(reg, prefix + ".beta_proj");
  }
}

template class MetaEncoder<float>;
template class MetaEncoder<double>;
template class CbnLayer<float>;
template class CbnLayer<double>;

}  // namespace cfhar
