#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace cfhar {

/// counts[true][pred]
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes = 0) : n_(classes), counts_(classes * classes, 0) {}

  void add(int truth, int pred);
  void add(std::span<const int> truth, std::span<const int> pred);

  std::size_t classes() const { return n_; }
  std::size_t at(std::size_t truth, std::size_t pred) const { return counts_[truth * n_ + pred]; }
  std::size_t total() const;
  std::size_t support(std::size_t cls) const;

  double accuracy() const;
  /// F1 of one class; 0 when the class is neither present nor predicted.
  double f1(std::size_t cls) const;
  /// Unweighted mean of per-class F1 over classes present in the ground truth.
  double macro_f1() const;

 private:
  std::size_t n_;
  std::vector<std::size_t> counts_;
};

}  // namespace cfhar
