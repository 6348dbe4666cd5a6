#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "cfhar/model.hpp"

namespace cfhar {

/// Everything needed to rebuild a model: configs, the metadata vocabulary and
/// every named parameter and batch-norm buffer (stored as double).
struct Checkpoint {
  static constexpr int kFormatVersion = 1;

  ModelConfig model;
  LossConfig loss;
  MetaVocab vocab;
  std::map<std::string, Tensor<double>> params;
  std::map<std::string, BatchNormStats<double>> norms;

  template <typename T>
  static Checkpoint capture(HarModel<T>& model, const LossConfig& loss, const MetaVocab& vocab);

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
  std::string serialize() const;
  static Checkpoint deserialize(const std::string& bytes);
};

/// Copies checkpoint tensors into a model built from a compatible config.
/// Any body tensor that is missing, extra or of another shape is an error.
/// With replace_heads, head tensors are ignored and the model keeps its own heads.
template <typename T>
void restore(HarModel<T>& model, const Checkpoint& ckpt, bool replace_heads = false);

/// Builds a model from the checkpoint's config and vocabulary and restores it.
template <typename T>
std::unique_ptr<HarModel<T>> rebuild(const Checkpoint& ckpt);

/// Parameter names whose values differ between two checkpoints (norm buffers included, prefixed "norm:").
std::vector<std::string> checkpoint_diff(const Checkpoint& a, const Checkpoint& b);

}  // namespace cfhar
