#include "cfhar/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace cfhar {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

template <typename T>
bool wants_grad(const Node<T>& node, std::size_t i) {
  return node.parents.size() > i && node.parents[i]->requires_grad;
}

template <typename T>
Tensor<T>& parent_grad(Node<T>& node, std::size_t i) {
  return node.parents[i]->grad_buffer();
}

template <typename T>
std::vector<Var<T>> parent_list(std::initializer_list<Var<T>> vars) {
  std::vector<Var<T>> out;
  for (const auto& v : vars) {
    if (v.defined()) out.push_back(v);
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// conv1d via im2col + GEMM.

template <typename T>
Var<T> conv1d(const Var<T>& x, const Var<T>& w, const Var<T>& bias, std::size_t stride, std::size_t padding) {
  require(x.shape().size() == 3, "conv1d: input must be [b, ch_in, l], got " + shape_str(x.shape()));
  require(w.shape().size() == 3, "conv1d: weight must be [ch_out, ch_in, k]");
  const std::size_t batch = x.shape()[0], cin = x.shape()[1], len = x.shape()[2];
  const std::size_t cout = w.shape()[0], k = w.shape()[2];
  require(w.shape()[1] == cin, "conv1d: weight expects " + std::to_string(w.shape()[1]) + " input channels, got " +
                                   std::to_string(cin));
  require(stride >= 1, "conv1d: stride must be >= 1");
  if (bias.defined()) require(bias.shape() == Shape{cout}, "conv1d: bias must be [ch_out]");
  const std::size_t lout = conv1d_out_length(len, k, stride, padding);
  require(lout > 0, "conv1d: input length " + std::to_string(len) + " too short for kernel");
  if (!x.value().all_finite()) throw NumericError("conv1d: non-finite input");

  const std::size_t rows = cin * k, cols_n = batch * lout;
  auto cols = std::make_shared<std::vector<T>>(rows * cols_n, T{0});
  const T* xd = x.value().raw();
  for (std::size_t c = 0; c < cin; ++c) {
    for (std::size_t j = 0; j < k; ++j) {
      T* crow = cols->data() + (c * k + j) * cols_n;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* xrow = xd + (b * cin + c) * len;
        T* dst = crow + b * lout;
        for (std::size_t t = 0; t < lout; ++t) {
          const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(t * stride + j) - static_cast<std::ptrdiff_t>(padding);
          if (pos >= 0 && pos < static_cast<std::ptrdiff_t>(len)) dst[t] = xrow[pos];
        }
      }
    }
  }

  RowMat<T> ymat = ConstMatMap<T>(w.value().raw(), cout, rows) * ConstMatMap<T>(cols->data(), rows, cols_n);
  Tensor<T> out(Shape{batch, cout, lout});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t o = 0; o < cout; ++o) {
      const T bv = bias.defined() ? bias.value()[o] : T{0};
      T* dst = out.raw() + (b * cout + o) * lout;
      const T* src = ymat.data() + o * cols_n + b * lout;
      for (std::size_t t = 0; t < lout; ++t) dst[t] = src[t] + bv;
    }
  }

  const bool has_bias = bias.defined();
  auto backward = [=](Node<T>& node) {
    const T* gout = node.grad.raw();
    RowMat<T> gmat(cout, cols_n);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t o = 0; o < cout; ++o) {
        const T* src = gout + (b * cout + o) * lout;
        T* dst = gmat.data() + o * cols_n + b * lout;
        std::copy(src, src + lout, dst);
      }
    }
    // parents: x, w, [bias]
    if (wants_grad(node, 1)) {
      MatMap<T> gw(parent_grad(node, 1).raw(), cout, rows);
      gw.noalias() += gmat * ConstMatMap<T>(cols->data(), rows, cols_n).transpose();
    }
    if (has_bias && wants_grad(node, 2)) {
      auto& gb = parent_grad(node, 2);
      for (std::size_t o = 0; o < cout; ++o) gb[o] += gmat.row(o).sum();
    }
    if (wants_grad(node, 0)) {
      RowMat<T> gcols = ConstMatMap<T>(node.parents[1]->value.raw(), cout, rows).transpose() * gmat;
      T* gx = parent_grad(node, 0).raw();
      for (std::size_t c = 0; c < cin; ++c) {
        for (std::size_t j = 0; j < k; ++j) {
          const T* crow = gcols.data() + (c * k + j) * cols_n;
          for (std::size_t b = 0; b < batch; ++b) {
            T* xrow = gx + (b * cin + c) * len;
            const T* src = crow + b * lout;
            for (std::size_t t = 0; t < lout; ++t) {
              const std::ptrdiff_t pos =
                  static_cast<std::ptrdiff_t>(t * stride + j) - static_cast<std::ptrdiff_t>(padding);
              if (pos >= 0 && pos < static_cast<std::ptrdiff_t>(len)) xrow[pos] += src[t];
            }
          }
        }
      }
    }
  };
  return make_result<T>(std::move(out), parent_list<T>({x, w, bias}), backward, "conv1d");
}

// ---------------------------------------------------------------------------
// batch_norm1d

template <typename T>
Var<T> batch_norm1d(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, BatchNormStats<T>& stats, Mode mode,
                    T eps, T momentum) {
  require(x.shape().size() == 3, "batch_norm1d: input must be [n, ch, l], got " + shape_str(x.shape()));
  const std::size_t n = x.shape()[0], ch = x.shape()[1], len = x.shape()[2];
  require(gamma.shape() == Shape{ch} && beta.shape() == Shape{ch}, "batch_norm1d: affine params must be [ch]");
  require(stats.running_mean.size() == ch, "batch_norm1d: running stats sized for a different channel count");
  const std::size_t count = n * len;
  const T* xd = x.value().raw();

  std::vector<T> mean(ch), invstd(ch);
  if (mode == Mode::kTrain) {
    if (count < 2) throw InputError("batch_norm1d: train mode needs at least 2 values per channel");
    for (std::size_t c = 0; c < ch; ++c) {
      T sum = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const T* row = xd + (i * ch + c) * len;
        for (std::size_t t = 0; t < len; ++t) sum += row[t];
      }
      const T mu = sum / static_cast<T>(count);
      T sq = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const T* row = xd + (i * ch + c) * len;
        for (std::size_t t = 0; t < len; ++t) sq += (row[t] - mu) * (row[t] - mu);
      }
      const T var = sq / static_cast<T>(count);
      mean[c] = mu;
      invstd[c] = T{1} / std::sqrt(var + eps);
      const T unbiased = sq / static_cast<T>(count - 1);
      stats.running_mean[c] = (T{1} - momentum) * stats.running_mean[c] + momentum * mu;
      stats.running_var[c] = (T{1} - momentum) * stats.running_var[c] + momentum * unbiased;
    }
    stats.initialized = true;
  } else {
    if (!stats.initialized) throw ConfigError("batch_norm1d: eval mode before running statistics were initialized");
    for (std::size_t c = 0; c < ch; ++c) {
      mean[c] = stats.running_mean[c];
      invstd[c] = T{1} / std::sqrt(stats.running_var[c] + eps);
    }
  }

  auto xhat = std::make_shared<std::vector<T>>(x.size());
  Tensor<T> out(x.shape());
  const T* g = gamma.value().raw();
  const T* bta = beta.value().raw();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < ch; ++c) {
      const std::size_t off = (i * ch + c) * len;
      for (std::size_t t = 0; t < len; ++t) {
        const T h = (xd[off + t] - mean[c]) * invstd[c];
        (*xhat)[off + t] = h;
        out[off + t] = g[c] * h + bta[c];
      }
    }
  }

  const bool train = mode == Mode::kTrain;
  auto backward = [=](Node<T>& node) {
    const T* gout = node.grad.raw();
    const T* gam = node.parents[1]->value.raw();
    std::vector<T> sum_dy(ch, T{0}), sum_dy_xhat(ch, T{0});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < ch; ++c) {
        const std::size_t off = (i * ch + c) * len;
        for (std::size_t t = 0; t < len; ++t) {
          sum_dy[c] += gout[off + t];
          sum_dy_xhat[c] += gout[off + t] * (*xhat)[off + t];
        }
      }
    }
    if (wants_grad(node, 1)) {
      auto& gg = parent_grad(node, 1);
      for (std::size_t c = 0; c < ch; ++c) gg[c] += sum_dy_xhat[c];
    }
    if (wants_grad(node, 2)) {
      auto& gb = parent_grad(node, 2);
      for (std::size_t c = 0; c < ch; ++c) gb[c] += sum_dy[c];
    }
    if (wants_grad(node, 0)) {
      T* gx = parent_grad(node, 0).raw();
      const T inv_count = T{1} / static_cast<T>(count);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < ch; ++c) {
          const std::size_t off = (i * ch + c) * len;
          const T scale = gam[c] * invstd[c];
          for (std::size_t t = 0; t < len; ++t) {
            if (train) {
              gx[off + t] +=
                  scale * (gout[off + t] - inv_count * sum_dy[c] - (*xhat)[off + t] * inv_count * sum_dy_xhat[c]);
            } else {
              gx[off + t] += scale * gout[off + t];
            }
          }
        }
      }
    }
  };
  return make_result<T>(std::move(out), {x, gamma, beta}, backward, "batch_norm1d");
}

// ---------------------------------------------------------------------------
// layer_norm

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
  require(!x.shape().empty(), "layer_norm: scalar input");
  const std::size_t d = x.shape().back();
  require(d >= 1, "layer_norm: zero width");
  require(gamma.shape() == Shape{d} && beta.shape() == Shape{d}, "layer_norm: affine params must be [d]");
  const std::size_t rows = x.size() / d;
  const T* xd = x.value().raw();
  auto xhat = std::make_shared<std::vector<T>>(x.size());
  auto invstd = std::make_shared<std::vector<T>>(rows);
  Tensor<T> out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xd + r * d;
    T mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<T>(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<T>(d);
    const T is = T{1} / std::sqrt(var + eps);
    (*invstd)[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (row[j] - mu) * is;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = gamma.value()[j] * h + beta.value()[j];
    }
  }
  auto backward = [=](Node<T>& node) {
    const T* gout = node.grad.raw();
    const T* gam = node.parents[1]->value.raw();
    const bool gx_needed = wants_grad(node, 0);
    T* gx = gx_needed ? parent_grad(node, 0).raw() : nullptr;
    T* gg = wants_grad(node, 1) ? parent_grad(node, 1).raw() : nullptr;
    T* gb = wants_grad(node, 2) ? parent_grad(node, 2).raw() : nullptr;
    for (std::size_t r = 0; r < rows; ++r) {
      T mean_g = 0, mean_gh = 0;
      for (std::size_t j = 0; j < d; ++j) {
        const T dy = gout[r * d + j];
        const T h = (*xhat)[r * d + j];
        if (gg) gg[j] += dy * h;
        if (gb) gb[j] += dy;
        mean_g += dy * gam[j];
        mean_gh += dy * gam[j] * h;
      }
      if (!gx) continue;
      mean_g /= static_cast<T>(d);
      mean_gh /= static_cast<T>(d);
      for (std::size_t j = 0; j < d; ++j) {
        const T h = (*xhat)[r * d + j];
        gx[r * d + j] += (*invstd)[r] * (gout[r * d + j] * gam[j] - mean_g - h * mean_gh);
      }
    }
  };
  return make_result<T>(std::move(out), {x, gamma, beta}, backward, "layer_norm");
}

// ---------------------------------------------------------------------------
// linear

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& bias) {
  require(!x.shape().empty() && w.shape().size() == 2, "linear: bad ranks");
  const std::size_t din = x.shape().back(), dout = w.shape()[0];
  require(w.shape()[1] == din, "linear: weight expects d_in=" + std::to_string(w.shape()[1]) + ", got " +
                                   std::to_string(din));
  if (bias.defined()) require(bias.shape() == Shape{dout}, "linear: bias must be [d_out]");
  const std::size_t rows = x.size() / din;
  Shape oshape = x.shape();
  oshape.back() = dout;
  Tensor<T> out(oshape);
  MatMap<T> y(out.raw(), rows, dout);
  y.noalias() = ConstMatMap<T>(x.value().raw(), rows, din) * ConstMatMap<T>(w.value().raw(), dout, din).transpose();
  if (bias.defined()) {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t o = 0; o < dout; ++o) y(r, o) += bias.value()[o];
    }
  }
  const bool has_bias = bias.defined();
  auto backward = [=](Node<T>& node) {
    ConstMatMap<T> gy(node.grad.raw(), rows, dout);
    if (wants_grad(node, 0)) {
      MatMap<T> gx(parent_grad(node, 0).raw(), rows, din);
      gx.noalias() += gy * ConstMatMap<T>(node.parents[1]->value.raw(), dout, din);
    }
    if (wants_grad(node, 1)) {
      MatMap<T> gw(parent_grad(node, 1).raw(), dout, din);
      gw.noalias() += gy.transpose() * ConstMatMap<T>(node.parents[0]->value.raw(), rows, din);
    }
    if (has_bias && wants_grad(node, 2)) {
      auto& gb = parent_grad(node, 2);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t o = 0; o < dout; ++o) gb[o] += gy(r, o);
      }
    }
  };
  return make_result<T>(std::move(out), parent_list<T>({x, w, bias}), backward, "linear");
}

// ---------------------------------------------------------------------------
// embedding

template <typename T>
Var<T> embedding(const Var<T>& table, std::span<const int> ids) {
  require(table.shape().size() == 2, "embedding: table must be [V, d]");
  const std::size_t vocab = table.shape()[0], d = table.shape()[1];
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw InputError("embedding: id " + std::to_string(id) + " outside vocabulary of size " + std::to_string(vocab));
    }
  }
  Tensor<T> out(Shape{ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(table.value().raw() + static_cast<std::size_t>(ids[i]) * d, d, out.raw() + i * d);
  }
  auto id_copy = std::make_shared<std::vector<int>>(ids.begin(), ids.end());
  auto backward = [=](Node<T>& node) {
    if (!wants_grad(node, 0)) return;
    T* gt = parent_grad(node, 0).raw();
    for (std::size_t i = 0; i < id_copy->size(); ++i) {
      const T* src = node.grad.raw() + i * d;
      T* dst = gt + static_cast<std::size_t>((*id_copy)[i]) * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  };
  return make_result<T>(std::move(out), {table}, backward, "embedding");
}

// ---------------------------------------------------------------------------
// elementwise

template <typename T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x.value()[i] > T{0} ? x.value()[i] : T{0};
  auto backward = [](Node<T>& node) {
    if (!wants_grad(node, 0)) return;
    auto& gx = parent_grad(node, 0);
    const auto& xv = node.parents[0]->value;
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (xv[i] > T{0}) gx[i] += node.grad[i];
    }
  };
  return make_result<T>(std::move(out), {x}, backward, "relu");
}

template <typename T>
Var<T> tanh(const Var<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::tanh(x.value()[i]);
  auto backward = [](Node<T>& node) {
    if (!wants_grad(node, 0)) return;
    auto& gx = parent_grad(node, 0);
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const T y = node.value[i];
      gx[i] += node.grad[i] * (T{1} - y * y);
    }
  };
  return make_result<T>(std::move(out), {x}, backward, "tanh");
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require(a.shape() == b.shape(), "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  auto backward = [](Node<T>& node) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (!wants_grad(node, p)) continue;
      auto& g = parent_grad(node, p);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i];
    }
  };
  return make_result<T>(std::move(out), {a, b}, backward, "add");
}

template <typename T>
Var<T> affine(const Var<T>& x, T alpha, T beta) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = alpha * x.value()[i] + beta;
  auto backward = [alpha](Node<T>& node) {
    if (!wants_grad(node, 0)) return;
    auto& g = parent_grad(node, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += alpha * node.grad[i];
  };
  return make_result<T>(std::move(out), {x}, backward, "affine");
}

template <typename T>
Var<T> modulate(const Var<T>& x, const Var<T>& scale, const Var<T>& shift) {
  require(x.shape().size() == 3, "modulate: input must be [n, ch, l]");
  const std::size_t n = x.shape()[0], ch = x.shape()[1], len = x.shape()[2];
  require(scale.shape() == Shape{n, ch} && shift.shape() == Shape{n, ch},
          "modulate: scale/shift must be [n, ch] = " + shape_str({n, ch}));
  Tensor<T> out(x.shape());
  for (std::size_t r = 0; r < n * ch; ++r) {
    const T s = scale.value()[r], b = shift.value()[r];
    for (std::size_t t = 0; t < len; ++t) out[r * len + t] = s * x.value()[r * len + t] + b;
  }
  auto backward = [=](Node<T>& node) {
    const auto& xv = node.parents[0]->value;
    const auto& sv = node.parents[1]->value;
    T* gx = wants_grad(node, 0) ? parent_grad(node, 0).raw() : nullptr;
    T* gs = wants_grad(node, 1) ? parent_grad(node, 1).raw() : nullptr;
    T* gb = wants_grad(node, 2) ? parent_grad(node, 2).raw() : nullptr;
    for (std::size_t r = 0; r < n * ch; ++r) {
      T acc_s = 0, acc_b = 0;
      for (std::size_t t = 0; t < len; ++t) {
        const T dy = node.grad[r * len + t];
        if (gx) gx[r * len + t] += sv[r] * dy;
        acc_s += dy * xv[r * len + t];
        acc_b += dy;
      }
      if (gs) gs[r] += acc_s;
      if (gb) gb[r] += acc_b;
    }
  };
  return make_result<T>(std::move(out), {x, scale, shift}, backward, "modulate");
}

// ---------------------------------------------------------------------------
// shape plumbing

template <typename T>
Var<T> concat_last(const std::vector<Var<T>>& parts) {
  require(!parts.empty(), "concat_last: no inputs");
  const Shape& first = parts[0].shape();
  require(!first.empty(), "concat_last: scalar input");
  const std::size_t rows = parts[0].size() / first.back();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape lead(p.shape().begin(), p.shape().end() - 1);
    require(Shape(first.begin(), first.end() - 1) == lead, "concat_last: leading shapes differ");
    widths.push_back(p.shape().back());
    total += p.shape().back();
  }
  Shape oshape = first;
  oshape.back() = total;
  Tensor<T> out(oshape);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(parts[p].value().raw() + r * widths[p], widths[p], out.raw() + r * total + offset);
    }
    offset += widths[p];
  }
  auto backward = [=](Node<T>& node) {
    std::size_t off = 0;
    for (std::size_t p = 0; p < widths.size(); ++p) {
      if (wants_grad(node, p)) {
        T* g = parent_grad(node, p).raw();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < widths[p]; ++j) g[r * widths[p] + j] += node.grad[r * total + off + j];
        }
      }
      off += widths[p];
    }
  };
  return make_result<T>(std::move(out), parts, backward, "concat_last");
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  auto backward = [](Node<T>& node) {
    if (!wants_grad(node, 0)) return;
    auto& g = parent_grad(node, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i];
  };
  return make_result<T>(std::move(out), {x}, backward, "reshape");
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  require(x.shape().size() == 3, "global_avg_pool: input must be [n, ch, l]");
  const std::size_t n = x.shape()[0], ch = x.shape()[1], len = x.shape()[2];
  Tensor<T> out(Shape{n, ch});
  for (std::size_t r = 0; r < n * ch; ++r) {
    T s = 0;
    for (std::size_t t = 0; t < len; ++t) s += x.value()[r * len + t];
    out[r] = s / static_cast<T>(len);
  }
  auto backward = [=](Node<T>& node) {
    if (!wants_grad(node, 0)) return;
    auto& g = parent_grad(node, 0);
    const T inv = T{1} / static_cast<T>(len);
    for (std::size_t r = 0; r < n * ch; ++r) {
      for (std::size_t t = 0; t < len; ++t) g[r * len + t] += node.grad[r] * inv;
    }
  };
  return make_result<T>(std::move(out), {x}, backward, "global_avg_pool");
}

template <typename T>
Var<T> scatter_rows(const Var<T>& x, std::span<const std::size_t> rows, std::size_t total) {
  require(x.shape().size() == 2 && x.shape()[0] == rows.size(), "scatter_rows: x must be [rows.size(), d]");
  const std::size_t d = x.shape()[1];
  Tensor<T> out(Shape{total, d});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] < total, "scatter_rows: row index out of range");
    std::copy_n(x.value().raw() + i * d, d, out.raw() + rows[i] * d);
  }
  auto idx = std::make_shared<std::vector<std::size_t>>(rows.begin(), rows.end());
  auto backward = [=](Node<T>& node) {
    if (!wants_grad(node, 0)) return;
    T* g = parent_grad(node, 0).raw();
    for (std::size_t i = 0; i < idx->size(); ++i) {
      for (std::size_t j = 0; j < d; ++j) g[i * d + j] += node.grad[(*idx)[i] * d + j];
    }
  };
  return make_result<T>(std::move(out), {x}, backward, "scatter_rows");
}

template <typename T>
Var<T> masked_mean(const Var<T>& z, std::span<const std::uint8_t> mask) {
  require(z.shape().size() == 3, "masked_mean: input must be [b, c, d]");
  const std::size_t b = z.shape()[0], c = z.shape()[1], d = z.shape()[2];
  require(mask.size() == b * c, "masked_mean: mask must have b*c entries");
  Tensor<T> out(Shape{b, d});
  auto weight = std::make_shared<std::vector<T>>(b);
  for (std::size_t s = 0; s < b; ++s) {
    std::size_t count = 0;
    for (std::size_t i = 0; i < c; ++i) count += mask[s * c + i] ? 1 : 0;
    if (count == 0) throw InputError("masked_mean: sample " + std::to_string(s) + " has no valid channels");
    (*weight)[s] = T{1} / static_cast<T>(count);
    for (std::size_t i = 0; i < c; ++i) {
      if (!mask[s * c + i]) continue;
      for (std::size_t j = 0; j < d; ++j) out[s * d + j] += z.value()[(s * c + i) * d + j];
    }
    for (std::size_t j = 0; j < d; ++j) out[s * d + j] *= (*weight)[s];
  }
  auto m = std::make_shared<std::vector<std::uint8_t>>(mask.begin(), mask.end());
  auto backward = [=](Node<T>& node) {
    if (!wants_grad(node, 0)) return;
    T* g = parent_grad(node, 0).raw();
    for (std::size_t s = 0; s < b; ++s) {
      for (std::size_t i = 0; i < c; ++i) {
        if (!(*m)[s * c + i]) continue;
        for (std::size_t j = 0; j < d; ++j) g[(s * c + i) * d + j] += (*weight)[s] * node.grad[s * d + j];
      }
    }
  };
  return make_result<T>(std::move(out), {z}, backward, "masked_mean");
}

template <typename T>
Var<T> bmm(const Var<T>& a, const Var<T>& c) {
  require(a.shape().size() == 3 && c.shape().size() == 3, "bmm: inputs must be rank 3");
  const std::size_t b = a.shape()[0], m = a.shape()[1], n = a.shape()[2], p = c.shape()[2];
  require(c.shape()[0] == b && c.shape()[1] == n,
          "bmm: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(c.shape()));
  Tensor<T> out(Shape{b, m, p});
  for (std::size_t s = 0; s < b; ++s) {
    MatMap<T>(out.raw() + s * m * p, m, p).noalias() =
        ConstMatMap<T>(a.value().raw() + s * m * n, m, n) * ConstMatMap<T>(c.value().raw() + s * n * p, n, p);
  }
  auto backward = [=](Node<T>& node) {
    const auto& av = node.parents[0]->value;
    const auto& cv = node.parents[1]->value;
    for (std::size_t s = 0; s < b; ++s) {
      ConstMatMap<T> gy(node.grad.raw() + s * m * p, m, p);
      if (wants_grad(node, 0)) {
        MatMap<T>(parent_grad(node, 0).raw() + s * m * n, m, n).noalias() +=
            gy * ConstMatMap<T>(cv.raw() + s * n * p, n, p).transpose();
      }
      if (wants_grad(node, 1)) {
        MatMap<T>(parent_grad(node, 1).raw() + s * n * p, n, p).noalias() +=
            ConstMatMap<T>(av.raw() + s * m * n, m, n).transpose() * gy;
      }
    }
  };
  return make_result<T>(std::move(out), {a, c}, backward, "bmm");
}

// ---------------------------------------------------------------------------
// slot assignment

template <typename T>
Var<T> slot_assignment(const Var<T>& logits, std::span<const std::uint8_t> mask) {
  require(logits.shape().size() == 3, "slot_assignment: logits must be [b, c, k]");
  const std::size_t b = logits.shape()[0], c = logits.shape()[1], k = logits.shape()[2];
  require(mask.size() == b * c, "slot_assignment: mask must have b*c entries");
  auto soft = std::make_shared<std::vector<T>>(b * c * k, T{0});  // [b, c, k]
  auto slot_sum = std::make_shared<std::vector<T>>(b * k, T{0});  // [b, k]
  for (std::size_t s = 0; s < b; ++s) {
    bool any = false;
    for (std::size_t i = 0; i < c; ++i) {
      if (!mask[s * c + i]) continue;
      any = true;
      const T* row = logits.value().raw() + (s * c + i) * k;
      const T mx = *std::max_element(row, row + k);
      T z = 0;
      for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
      for (std::size_t j = 0; j < k; ++j) {
        const T v = std::exp(row[j] - mx) / z;
        (*soft)[(s * c + i) * k + j] = v;
        (*slot_sum)[s * k + j] += v;
      }
    }
    if (!any) throw InputError("slot_assignment: sample " + std::to_string(s) + " has no valid channels");
  }
  Tensor<T> out(Shape{b, k, c});
  for (std::size_t s = 0; s < b; ++s) {
    for (std::size_t j = 0; j < k; ++j) {
      for (std::size_t i = 0; i < c; ++i) {
        out[(s * k + j) * c + i] = (*soft)[(s * c + i) * k + j] / (*slot_sum)[s * k + j];
      }
    }
  }
  auto m = std::make_shared<std::vector<std::uint8_t>>(mask.begin(), mask.end());
  auto backward = [=](Node<T>& node) {
    if (!wants_grad(node, 0)) return;
    T* g = parent_grad(node, 0).raw();
    const auto& a = node.value;
    std::vector<T> dsoft(c * k);
    for (std::size_t s = 0; s < b; ++s) {
      // Through the per-slot renormalization.
      for (std::size_t j = 0; j < k; ++j) {
        T dot = 0;
        for (std::size_t i = 0; i < c; ++i) dot += node.grad[(s * k + j) * c + i] * a[(s * k + j) * c + i];
        for (std::size_t i = 0; i < c; ++i) {
          dsoft[i * k + j] = (node.grad[(s * k + j) * c + i] - dot) / (*slot_sum)[s * k + j];
        }
      }
      // Through the per-channel softmax.
      for (std::size_t i = 0; i < c; ++i) {
        if (!(*m)[s * c + i]) continue;
        const T* sv = soft->data() + (s * c + i) * k;
        T dot = 0;
        for (std::size_t j = 0; j < k; ++j) dot += dsoft[i * k + j] * sv[j];
        for (std::size_t j = 0; j < k; ++j) g[(s * c + i) * k + j] += sv[j] * (dsoft[i * k + j] - dot);
      }
    }
  };
  return make_result<T>(std::move(out), {logits}, backward, "slot_assignment");
}

// ---------------------------------------------------------------------------
// cross entropy

template <typename T>
Var<T> weighted_cross_entropy(const Var<T>& logits, std::span<const int> labels, std::span<const T> weights) {
  require(logits.shape().size() == 2, "cross_entropy: logits must be [n, classes]");
  const std::size_t n = logits.shape()[0], ncls = logits.shape()[1];
  require(labels.size() == n && weights.size() == n, "cross_entropy: labels/weights must have n entries");
  if (!logits.value().all_finite()) throw NumericError("cross_entropy: non-finite logits");
  auto probs = std::make_shared<std::vector<T>>(n * ncls);
  T loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= ncls) {
      throw InputError("cross_entropy: label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(ncls) +
                       ")");
    }
    const T* row = logits.value().raw() + i * ncls;
    const T mx = *std::max_element(row, row + ncls);
    T z = 0;
    for (std::size_t j = 0; j < ncls; ++j) z += std::exp(row[j] - mx);
    const T lse = mx + std::log(z);
    for (std::size_t j = 0; j < ncls; ++j) (*probs)[i * ncls + j] = std::exp(row[j] - lse);
    if (weights[i] != T{0}) loss += weights[i] * (lse - row[labels[i]]);
  }
  auto lab = std::make_shared<std::vector<int>>(labels.begin(), labels.end());
  auto wts = std::make_shared<std::vector<T>>(weights.begin(), weights.end());
  auto backward = [=](Node<T>& node) {
    if (!wants_grad(node, 0)) return;
    T* g = parent_grad(node, 0).raw();
    const T up = node.grad[0];
    for (std::size_t i = 0; i < n; ++i) {
      const T w = (*wts)[i] * up;
      if (w == T{0}) continue;
      for (std::size_t j = 0; j < ncls; ++j) {
        const T target = static_cast<int>(j) == (*lab)[i] ? T{1} : T{0};
        g[i * ncls + j] += w * ((*probs)[i * ncls + j] - target);
      }
    }
  };
  return make_result<T>(Tensor<T>(Shape{1}, std::vector<T>{loss}), {logits}, backward, "cross_entropy");
}

template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, std::span<const int> labels) {
  require(logits.shape().size() == 2 && logits.shape()[0] > 0, "cross_entropy: logits must be [n>0, classes]");
  std::vector<T> w(logits.shape()[0], T{1} / static_cast<T>(logits.shape()[0]));
  return weighted_cross_entropy<T>(logits, labels, w);
}

// ---------------------------------------------------------------------------

#define CFHAR_INSTANTIATE_OPS(T)                                                                                 \
  template Var<T> conv1d(const Var<T>&, const Var<T>&, const Var<T>&, std::size_t, std::size_t);                \
  template Var<T> batch_norm1d(const Var<T>&, const Var<T>&, const Var<T>&, BatchNormStats<T>&, Mode, T, T);     \
  template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, T);                                    \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                                           \
  template Var<T> embedding(const Var<T>&, std::span<const int>);                                                \
  template Var<T> relu(const Var<T>&);                                                                           \
  template Var<T> tanh(const Var<T>&);                                                                           \
  template Var<T> add(const Var<T>&, const Var<T>&);                                                             \
  template Var<T> affine(const Var<T>&, T, T);                                                                   \
  template Var<T> modulate(const Var<T>&, const Var<T>&, const Var<T>&);                                         \
  template Var<T> concat_last(const std::vector<Var<T>>&);                                                       \
  template Var<T> reshape(const Var<T>&, Shape);                                                                 \
  template Var<T> global_avg_pool(const Var<T>&);                                                                \
  template Var<T> scatter_rows(const Var<T>&, std::span<const std::size_t>, std::size_t);                        \
  template Var<T> masked_mean(const Var<T>&, std::span<const std::uint8_t>);                                     \
  template Var<T> bmm(const Var<T>&, const Var<T>&);                                                             \
  template Var<T> slot_assignment(const Var<T>&, std::span<const std::uint8_t>);                                 \
  template Var<T> weighted_cross_entropy(const Var<T>&, std::span<const int>, std::span<const T>);               \
  template Var<T> softmax_cross_entropy(const Var<T>&, std::span<const int>);

CFHAR_INSTANTIATE_OPS(float)
CFHAR_INSTANTIATE_OPS(double)

}  // namespace cfhar
