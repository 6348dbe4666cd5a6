#include "cfhar/metrics.hpp"

#include <string>

#include "cfhar/errors.hpp"

namespace cfhar {

void ConfusionMatrix::add(int truth, int pred) {
  if (truth < 0 || pred < 0 || static_cast<std::size_t>(truth) >= n_ || static_cast<std::size_t>(pred) >= n_) {
    throw InputError("confusion matrix: class id out of range (" + std::to_string(truth) + ", " +
                     std::to_string(pred) + ")");
  }
  ++counts_[static_cast<std::size_t>(truth) * n_ + static_cast<std::size_t>(pred)];
}

void ConfusionMatrix::add(std::span<const int> truth, std::span<const int> pred) {
  if (truth.size() != pred.size()) throw InputError("confusion matrix: label and prediction counts differ");
  for (std::size_t i = 0; i < truth.size(); ++i) add(truth[i], pred[i]);
}

std::size_t ConfusionMatrix::total() const {
  std::size_t n = 0;
  for (auto c : counts_) n += c;
  return n;
}

std::size_t ConfusionMatrix::support(std::size_t cls) const {
  std::size_t n = 0;
  for (std::size_t p = 0; p < n_; ++p) n += at(cls, p);
  return n;
}

double ConfusionMatrix::accuracy() const {
  const std::size_t n = total();
  if (n == 0) return 0.0;
  std::size_t correct = 0;
  for (std::size_t c = 0; c < n_; ++c) correct += at(c, c);
  return static_cast<double>(correct) / static_cast<double>(n);
}

double ConfusionMatrix::f1(std::size_t cls) const {
  const std::size_t tp = at(cls, cls);
  std::size_t predicted = 0;
  for (std::size_t t = 0; t < n_; ++t) predicted += at(t, cls);
  const std::size_t denom = predicted + support(cls);
  return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

double ConfusionMatrix::macro_f1() const {
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < n_; ++c) {
    if (support(c) == 0) continue;
    sum += f1(c);
    ++present;
  }
  return present == 0 ? 0.0 : sum / static_cast<double>(present);
}

}  // namespace cfhar
