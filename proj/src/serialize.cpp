#include "cfhar/serialize.hpp"

namespace cfhar {

using nlohmann::json;

json model_config_to_json(const ModelConfig& cfg) {
  json b = {{"num_blocks", cfg.backbone.num_blocks},   {"base_channels", cfg.backbone.base_channels},
            {"kernel", cfg.backbone.kernel},           {"in_channels", cfg.backbone.in_channels},
            {"stem_stride", cfg.backbone.stem_stride}, {"block_stride", cfg.backbone.block_stride}};
  json m = {{"field_width", cfg.meta.field_width},
            {"meta_dim", cfg.meta.meta_dim},
            {"fields", mask_to_string(cfg.meta.enabled)}};
  return {{"kind", std::string(model_name(cfg.kind))},
          {"backbone", b},
          {"num_classes", cfg.num_classes},
          {"fixed_channels", cfg.fixed_channels},
          {"slots", cfg.slots},
          {"slot_dim", cfg.slot_dim},
          {"meta", m},
          {"lambda_gamma", cfg.lambda_gamma},
          {"num_heads", cfg.num_heads},
          {"seed", cfg.seed}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig cfg;
  cfg.kind = parse_model_kind(j.at("kind").get<std::string>());
  const auto& b = j.at("backbone");
  cfg.backbone.num_blocks = b.at("num_blocks").get<std::size_t>();
  cfg.backbone.base_channels = b.at("base_channels").get<std::size_t>();
  cfg.backbone.kernel = b.at("kernel").get<std::size_t>();
  cfg.backbone.in_channels = b.at("in_channels").get<std::size_t>();
  cfg.backbone.stem_stride = b.at("stem_stride").get<std::size_t>();
  cfg.backbone.block_stride = b.at("block_stride").get<std::size_t>();
  cfg.num_classes = j.at("num_classes").get<std::size_t>();
  cfg.fixed_channels = j.at("fixed_channels").get<std::size_t>();
  cfg.slots = j.at("slots").get<std::size_t>();
  cfg.slot_dim = j.at("slot_dim").get<std::size_t>();
  const auto& m = j.at("meta");
  cfg.meta.field_width = m.at("field_width").get<std::size_t>();
  cfg.meta.meta_dim = m.at("meta_dim").get<std::size_t>();
  cfg.meta.enabled = mask_from_string(m.at("fields").get<std::string>());
  cfg.lambda_gamma = j.at("lambda_gamma").get<double>();
  cfg.num_heads = j.at("num_heads").get<std::size_t>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.validate();
  return cfg;
}

json vocab_to_json(const MetaVocab& vocab) {
  json out = json::object();
  for (std::size_t f = 0; f < kMetaFields; ++f) {
    const auto field = static_cast<MetaField>(f);
    out[std::string(field_name(field))] = vocab.names(field);
  }
  return out;
}

MetaVocab vocab_from_json(const json& j) {
  MetaVocab vocab;
  for (std::size_t f = 0; f < kMetaFields; ++f) {
    const auto field = static_cast<MetaField>(f);
    for (const auto& name : j.at(std::string(field_name(field))).get<std::vector<std::string>>()) {
      vocab.intern(field, name);
    }
  }
  return vocab;
}

}  // namespace cfhar
