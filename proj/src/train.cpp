#include "cfhar/train.hpp"

#include <algorithm>
#include <chrono>
#include <random>
#include <string>

#include "cfhar/checkpoint.hpp"

namespace cfhar {

namespace {

bool belongs_to_other_head(const std::string& name, std::size_t head) {
  if (!is_head_param(name)) return false;
  return !name.starts_with("heads." + std::to_string(head) + ".");
}

}  // namespace

template <typename T>
TrainLog train_model(HarModel<T>& model, std::span<const Dataset* const> sources, const TrainOptions& options) {
  options.schedule.validate();
  options.loss.validate();
  if (sources.empty()) throw ConfigError("train_model: no training data");
  if (sources.size() > model.num_heads()) throw ConfigError("train_model: more sources than classification heads");

  auto reg = model.registry();
  for (auto& [name, p] : reg.params) p->frozen = options.linear_probe && !is_head_param(name);
  std::vector<std::vector<Param<T>*>> trainable(sources.size());
  for (std::size_t h = 0; h < sources.size(); ++h) {
    for (auto& [name, p] : reg.params) {
      if (!p->frozen && !belongs_to_other_head(name, h)) trainable[h].push_back(p);
    }
  }

  // (source, first index into its shuffled order, count)
  struct Chunk {
    std::size_t source, begin, count;
  };
  const auto batch = static_cast<std::size_t>(options.schedule.batch_size);
  const Mode mode = options.linear_probe ? Mode::kEval : Mode::kTrain;
  std::mt19937_64 rng(options.seed ^ 0x747261696eULL);
  TrainLog log;
  const auto start = std::chrono::steady_clock::now();

  for (int epoch = 0; epoch < options.schedule.epochs; ++epoch) {
    const double lr = cosine_lr(options.schedule, epoch);
    std::vector<std::vector<std::size_t>> order(sources.size());
    std::vector<Chunk> chunks;
    for (std::size_t s = 0; s < sources.size(); ++s) {
      order[s].resize(sources[s]->size());
      for (std::size_t i = 0; i < order[s].size(); ++i) order[s][i] = i;
      std::shuffle(order[s].begin(), order[s].end(), rng);
      for (std::size_t b = 0; b < order[s].size(); b += batch) {
        const std::size_t count = std::min(batch, order[s].size() - b);
        // A single-window batch has no batch-norm statistics over channels of one item; skip it.
        if (count < 2 && mode == Mode::kTrain && b > 0) continue;
        chunks.push_back({s, b, count});
      }
    }
    std::shuffle(chunks.begin(), chunks.end(), rng);

    double sum_loss = 0, sum_fused = 0, sum_dist = 0;
    std::size_t seen = 0;
    bool has_dist = false;
    for (const Chunk& ch : chunks) {
      std::vector<const Sample*> items;
      for (std::size_t i = 0; i < ch.count; ++i) items.push_back(&(*sources[ch.source])[order[ch.source][ch.begin + i]]);
      Batch<T> b = make_batch<T>(std::span<const Sample* const>(items));
      model.select_head(ch.source);
      reg.zero_grad();
      ModelOutput<T> out;
      LossTerms<T> loss;
      try {
        out = model.forward(b, mode);
        loss = training_loss<T>(out, b.labels, options.loss);
        backward(loss.total);
      } catch (const NumericError& e) {
        throw NumericError("non-finite value during training at epoch " + std::to_string(epoch) + ": " + e.what());
      }
      adam_step<T>(std::span<Param<T>* const>(trainable[ch.source]), lr, options.schedule.weight_decay);
      sum_loss += static_cast<double>(loss.total.item()) * static_cast<double>(ch.count);
      sum_fused += static_cast<double>(loss.fused.item()) * static_cast<double>(ch.count);
      if (loss.dist.defined()) {
        has_dist = true;
        sum_dist += static_cast<double>(loss.dist.item()) * static_cast<double>(ch.count);
      }
      seen += ch.count;
    }
    const double denom = static_cast<double>(std::max<std::size_t>(seen, 1));
    log.epoch_loss.push_back(sum_loss / denom);
    log.epoch_fused.push_back(sum_fused / denom);
    if (has_dist) log.epoch_dist.push_back(sum_dist / denom);
    if (options.on_epoch) options.on_epoch(epoch, log.epoch_loss.back());
  }
  model.select_head(0);
  for (auto& [name, p] : reg.params) p->frozen = false;
  log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return log;
}

template <typename T>
std::vector<int> predict(HarModel<T>& model, const Dataset& data, std::size_t batch_size) {
  NoGradGuard guard;
  std::vector<int> out;
  out.reserve(data.size());
  for (std::size_t begin = 0; begin < data.size(); begin += batch_size) {
    const std::size_t end = std::min(data.size(), begin + batch_size);
    std::vector<const Sample*> items;
    for (std::size_t i = begin; i < end; ++i) items.push_back(&data[i]);
    const Batch<T> b = make_batch<T>(std::span<const Sample* const>(items));
    const auto logits = model.forward(b, Mode::kEval).y_fused.value();
    const std::size_t k = logits.dim(1);
    for (std::size_t i = 0; i < b.size; ++i) {
      const T* row = logits.raw() + i * k;
      out.push_back(static_cast<int>(std::max_element(row, row + k) - row));
    }
  }
  return out;
}

template <typename T>
ConfusionMatrix confusion(HarModel<T>& model, const Dataset& data, std::size_t batch_size) {
  ConfusionMatrix cm(model.config().num_classes);
  const auto pred = predict(model, data, batch_size);
  for (std::size_t i = 0; i < data.size(); ++i) cm.add(data[i].label, pred[i]);
  return cm;
}

std::unique_ptr<HarModel<double>> to_double(HarModel<float>& model, const MetaVocab& vocab) {
  const Checkpoint ckpt = Checkpoint::capture(model, LossConfig{}, vocab);
  auto out = make_model<double>(ckpt.model, vocab);
  restore(*out, ckpt);
  out->select_head(model.active_head());
  return out;
}

template TrainLog train_model(HarModel<float>&, std::span<const Dataset* const>, const TrainOptions&);
template TrainLog train_model(HarModel<double>&, std::span<const Dataset* const>, const TrainOptions&);
template std::vector<int> predict(HarModel<float>&, const Dataset&, std::size_t);
template std::vector<int> predict(HarModel<double>&, const Dataset&, std::size_t);
template ConfusionMatrix confusion(HarModel<float>&, const Dataset&, std::size_t);
template ConfusionMatrix confusion(HarModel<double>&, const Dataset&, std::size_t);

}  // namespace cfhar
