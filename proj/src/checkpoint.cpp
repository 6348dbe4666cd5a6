#include "cfhar/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "cfhar/serialize.hpp"
#include "json.hpp"

namespace cfhar {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'C', 'F', 'H', 'A', 'R', 'C', 'K', '\n'};

json shape_json(const Shape& s) { return json(std::vector<std::size_t>(s.begin(), s.end())); }

}  // namespace

template <typename T>
Checkpoint Checkpoint::capture(HarModel<T>& model, const LossConfig& loss, const MetaVocab& vocab) {
  Checkpoint c;
  c.model = model.config();
  c.loss = loss;
  c.vocab = vocab;
  auto reg = model.registry();
  for (auto& [name, p] : reg.params) c.params[name] = tensor_cast<double>(p->value());
  for (auto& [name, s] : reg.norms) {
    BatchNormStats<double> d;
    d.running_mean = tensor_cast<double>(s->running_mean);
    d.running_var = tensor_cast<double>(s->running_var);
    d.initialized = s->initialized;
    c.norms[name] = std::move(d);
  }
  return c;
}

std::string Checkpoint::serialize() const {
  json header;
  header["format_version"] = kFormatVersion;
  header["model"] = model_config_to_json(model);
  header["loss"] = {{"lambda", loss.lambda}};
  header["vocab"] = vocab_to_json(vocab);
  std::string blob;
  auto append = [&](const Tensor<double>& t) {
    const std::size_t offset = blob.size() / sizeof(double);
    blob.append(reinterpret_cast<const char*>(t.raw()), t.size() * sizeof(double));
    return offset;
  };
  json tensors = json::array();
  for (const auto& [name, t] : params) {
    tensors.push_back({{"name", name}, {"kind", "param"}, {"shape", shape_json(t.shape())}, {"offset", append(t)}});
  }
  for (const auto& [name, s] : norms) {
    tensors.push_back({{"name", name},
                       {"kind", "norm"},
                       {"shape", shape_json(s.running_mean.shape())},
                       {"initialized", s.initialized},
                       {"offset", append(s.running_mean)},
                       {"var_offset", append(s.running_var)}});
  }
  header["tensors"] = tensors;
  const std::string text = header.dump();
  std::string out(kMagic, sizeof(kMagic));
  const std::uint64_t len = text.size();
  out.append(reinterpret_cast<const char*>(&len), sizeof(len));
  out += text;
  out += blob;
  return out;
}

Checkpoint Checkpoint::deserialize(const std::string& bytes) {
  if (bytes.size() < sizeof(kMagic) + 8 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw InputError("not a cfhar checkpoint");
  }
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + sizeof(kMagic), sizeof(len));
  const std::size_t start = sizeof(kMagic) + sizeof(len);
  if (start + len > bytes.size()) throw InputError("checkpoint header is truncated");
  json header;
  try {
    header = json::parse(bytes.substr(start, len));
  } catch (const json::exception& e) {
    throw InputError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  if (header.value("format_version", 0) != kFormatVersion) throw InputError("unsupported checkpoint format version");
  const char* blob = bytes.data() + start + len;
  const std::size_t blob_doubles = (bytes.size() - start - len) / sizeof(double);
  auto read = [&](const Shape& shape, std::size_t offset) {
    Tensor<double> t(shape);
    if (offset + t.size() > blob_doubles) throw InputError("checkpoint tensor data is truncated");
    std::memcpy(t.raw(), blob + offset * sizeof(double), t.size() * sizeof(double));
    return t;
  };
  Checkpoint c;
  try {
    c.model = model_config_from_json(header.at("model"));
    c.loss.lambda = header.at("loss").at("lambda").get<double>();
    c.vocab = vocab_from_json(header.at("vocab"));
    for (const auto& t : header.at("tensors")) {
      const auto shape = t.at("shape").get<std::vector<std::size_t>>();
      const std::string name = t.at("name").get<std::string>();
      if (t.at("kind") == "param") {
        c.params[name] = read(Shape(shape.begin(), shape.end()), t.at("offset").get<std::size_t>());
      } else {
        BatchNormStats<double> s;
        s.running_mean = read(Shape(shape.begin(), shape.end()), t.at("offset").get<std::size_t>());
        s.running_var = read(Shape(shape.begin(), shape.end()), t.at("var_offset").get<std::size_t>());
        s.initialized = t.at("initialized").get<bool>();
        c.norms[name] = std::move(s);
      }
    }
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed checkpoint header: ") + e.what());
  }
  return c;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write checkpoint " + path.string());
  const std::string bytes = serialize();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InputError("failed writing checkpoint " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str());
}

template <typename T>
void restore(HarModel<T>& model, const Checkpoint& ckpt, bool replace_heads) {
  auto reg = model.registry();
  std::set<std::string> seen;
  for (auto& [name, p] : reg.params) {
    if (replace_heads && is_head_param(name)) continue;
    auto it = ckpt.params.find(name);
    if (it == ckpt.params.end()) throw InputError("checkpoint lacks parameter '" + name + "'");
    if (it->second.shape() != p->shape()) {
      throw InputError("checkpoint parameter '" + name + "' has shape " + shape_str(it->second.shape()) +
                       ", model expects " + shape_str(p->shape()));
    }
    p->reset(tensor_cast<T>(it->second));
    seen.insert(name);
  }
  for (const auto& [name, t] : ckpt.params) {
    if (replace_heads && is_head_param(name)) continue;
    if (!seen.count(name)) throw InputError("checkpoint parameter '" + name + "' does not exist in the model");
  }
  std::size_t norms = 0;
  for (auto& [name, s] : reg.norms) {
    auto it = ckpt.norms.find(name);
    if (it == ckpt.norms.end()) throw InputError("checkpoint lacks batch-norm buffer '" + name + "'");
    if (it->second.running_mean.shape() != s->running_mean.shape()) {
      throw InputError("checkpoint batch-norm buffer '" + name + "' has the wrong width");
    }
    s->running_mean = tensor_cast<T>(it->second.running_mean);
    s->running_var = tensor_cast<T>(it->second.running_var);
    s->initialized = it->second.initialized;
    ++norms;
  }
  if (norms != ckpt.norms.size()) throw InputError("checkpoint has batch-norm buffers the model lacks");
}

template <typename T>
std::unique_ptr<HarModel<T>> rebuild(const Checkpoint& ckpt) {
  auto model = make_model<T>(ckpt.model, ckpt.vocab);
  restore(*model, ckpt);
  return model;
}

std::vector<std::string> checkpoint_diff(const Checkpoint& a, const Checkpoint& b) {
  std::vector<std::string> out;
  std::set<std::string> names;
  for (const auto& [n, t] : a.params) names.insert(n);
  for (const auto& [n, t] : b.params) names.insert(n);
  for (const auto& n : names) {
    auto ia = a.params.find(n), ib = b.params.find(n);
    if (ia == a.params.end() || ib == b.params.end() || !(ia->second == ib->second)) out.push_back(n);
  }
  names.clear();
  for (const auto& [n, s] : a.norms) names.insert(n);
  for (const auto& [n, s] : b.norms) names.insert(n);
  for (const auto& n : names) {
    auto ia = a.norms.find(n), ib = b.norms.find(n);
    if (ia == a.norms.end() || ib == b.norms.end() || !(ia->second.running_mean == ib->second.running_mean) ||
        !(ia->second.running_var == ib->second.running_var)) {
      out.push_back("norm:" + n);
    }
  }
  return out;
}

template Checkpoint Checkpoint::capture(HarModel<float>&, const LossConfig&, const MetaVocab&);
template Checkpoint Checkpoint::capture(HarModel<double>&, const LossConfig&, const MetaVocab&);
template void restore(HarModel<float>&, const Checkpoint&, bool);
template void restore(HarModel<double>&, const Checkpoint&, bool);
template std::unique_ptr<HarModel<float>> rebuild(const Checkpoint&);
template std::unique_ptr<HarModel<double>> rebuild(const Checkpoint&);

}  // namespace cfhar
