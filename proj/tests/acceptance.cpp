// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any hard check fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <random>
#include <string>

#include <spdlog/spdlog.h>

#include "cfhar/baselines.hpp"
#include "cfhar/gradcheck.hpp"
#include "cfhar/harness.hpp"
#include "cfhar/metrics.hpp"
#include "cfhar/ops.hpp"

using namespace cfhar;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

MetaVocab test_vocab() {
  MetaVocab v;
  for (auto n : {"hand", "chest", "ankle", "wrist"}) v.intern(MetaField::kLocation, n);
  for (auto n : {"left", "right"}) v.intern(MetaField::kSide, n);
  for (auto n : {"acc", "gyro", "mag"}) v.intern(MetaField::kSensor, n);
  for (auto n : {"x", "y", "z"}) v.intern(MetaField::kAxis, n);
  return v;
}

ModelConfig small_model(ModelKind kind, std::size_t base = 8) {
  ModelConfig cfg;
  cfg.kind = kind;
  cfg.backbone.base_channels = base;
  cfg.num_classes = 4;
  cfg.meta.field_width = 4;
  cfg.meta.meta_dim = 8;
  cfg.slots = 4;
  cfg.slot_dim = 8;
  cfg.seed = 11;
  return cfg;
}

Dataset random_samples(std::size_t n, std::size_t channels, std::size_t length, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-2, 2);
  Dataset out;
  for (std::size_t i = 0; i < n; ++i) {
    Sample s(channels, length);
    s.label = static_cast<int>(rng() % 4);
    for (auto& v : s.data) v = u(rng);
    for (auto& m : s.meta) {
      m = {static_cast<int>(1 + rng() % 4), static_cast<int>(rng() % 3), static_cast<int>(1 + rng() % 3),
           static_cast<int>(1 + rng() % 3)};
    }
    out.push_back(std::move(s));
  }
  return out;
}

Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<double> t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = u(rng);
  return t;
}

Var<double> random_var(Shape shape, std::mt19937_64& rng) { return Var<double>(random_tensor(shape, rng), true); }

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

Batch<double> batch_of(const Dataset& d) { return make_batch<double>(std::span<const Sample>(d)); }

void warm_up(HarModel<double>& model, const Dataset& data) {
  NoGradGuard guard;
  model.forward(batch_of(data), Mode::kTrain);
}

// sum(out * r) through the linear op, so the scalar stays on the tape.
Var<double> dot_loss(const Var<double>& out, const Tensor<double>& r) {
  Var<double> w(r.reshaped({1, r.size()}));
  return reshape(linear<double>(reshape(out, {1, out.size()}), w, Var<double>()), {1});
}

Verdict permutation_invariance() {
  std::mt19937_64 rng(1);
  auto model = make_model<double>(small_model(ModelKind::kProposed), test_vocab());
  warm_up(*model, random_samples(16, 6, 64, rng));
  Dataset samples = random_samples(100, 6, 64, rng);
  for (auto& s : samples) {
    for (auto& v : s.valid) v = rng() % 4 != 0;
    s.valid[rng() % 6] = 1;
  }
  NoGradGuard guard;
  const auto ref = model->forward(batch_of(samples), Mode::kEval).y_fused.value();
  double worst = 0;
  std::vector<std::size_t> perm(6);
  for (int p = 0; p < 20; ++p) {
    std::iota(perm.begin(), perm.end(), 0);
    Dataset permuted;
    for (const auto& s : samples) {
      std::shuffle(perm.begin(), perm.end(), rng);
      Sample t = s;
      for (std::size_t i = 0; i < 6; ++i) {
        std::copy_n(s.channel(perm[i]).data(), s.length, t.channel(i).data());
        t.meta[i] = s.meta[perm[i]];
        t.valid[i] = s.valid[perm[i]];
      }
      permuted.push_back(std::move(t));
    }
    worst = std::max(worst, max_abs_diff(ref, model->forward(batch_of(permuted), Mode::kEval).y_fused.value()));
  }
  return {worst < 1e-10, fmt("max |dlogit| = %.2e over 100 samples x 20 permutations", worst)};
}

Verdict cbn_degeneration() {
  std::mt19937_64 rng(2);
  const MetaVocab vocab = test_vocab();
  auto lf = make_model<double>(small_model(ModelKind::kLateFusion), vocab);
  auto ours = make_model<double>(small_model(ModelKind::kProposed), vocab);
  warm_up(*lf, random_samples(16, 5, 64, rng));
  auto from = lf->registry();
  auto to = ours->registry();
  copy_matching(from, to);
  std::size_t zeroed = 0;
  for (auto& [name, p] : to.params) {
    if (name.find("gamma_proj") != std::string::npos || name.find("beta_proj") != std::string::npos) {
      p->value().fill(0.0);
      ++zeroed;
    }
  }
  const Dataset test = random_samples(32, 5, 64, rng);
  NoGradGuard guard;
  const double d = max_abs_diff(lf->forward(batch_of(test), Mode::kEval).y_fused.value(),
                                ours->forward(batch_of(test), Mode::kEval).y_fused.value());
  return {zeroed > 0 && d < 1e-12, fmt("max |diff| = %.2e with %zu projection tensors zeroed", d, zeroed)};
}

Verdict gradient_correctness() {
  using Case = std::function<std::pair<std::function<Var<double>()>, std::vector<Var<double>>>(std::mt19937_64&)>;
  std::vector<std::pair<std::string, Case>> cases;
  auto scalarize = [](std::function<Var<double>()> f, std::size_t n, std::mt19937_64& rng) {
    auto r = random_tensor({n}, rng);
    return std::function<Var<double>()>([f, r] { return dot_loss(f(), r); });
  };
  cases.emplace_back("conv1d", [&](std::mt19937_64& rng) {
    auto x = random_var({2, 2, 7}, rng), w = random_var({3, 2, 3}, rng), b = random_var({3}, rng);
    return std::make_pair(scalarize([=] { return conv1d(x, w, b, 2, 1); }, 24, rng), std::vector{x, w, b});
  });
  cases.emplace_back("batch_norm train", [&](std::mt19937_64& rng) {
    auto x = random_var({3, 2, 4}, rng), g = random_var({2}, rng), b = random_var({2}, rng);
    auto stats = std::make_shared<BatchNormStats<double>>(2);
    return std::make_pair(scalarize([=] { return batch_norm1d(x, g, b, *stats, Mode::kTrain); }, 24, rng),
                          std::vector{x, g, b});
  });
  cases.emplace_back("batch_norm eval", [&](std::mt19937_64& rng) {
    auto x = random_var({3, 2, 4}, rng), g = random_var({2}, rng), b = random_var({2}, rng);
    auto stats = std::make_shared<BatchNormStats<double>>(2);
    stats->running_mean = random_tensor({2}, rng);
    stats->running_var = random_tensor({2}, rng, 0.5, 2.0);
    stats->initialized = true;
    return std::make_pair(scalarize([=] { return batch_norm1d(x, g, b, *stats, Mode::kEval); }, 24, rng),
                          std::vector{x, g, b});
  });
  cases.emplace_back("layer_norm", [&](std::mt19937_64& rng) {
    auto x = random_var({3, 5}, rng), g = random_var({5}, rng), b = random_var({5}, rng);
    return std::make_pair(scalarize([=] { return layer_norm(x, g, b); }, 15, rng), std::vector{x, g, b});
  });
  cases.emplace_back("linear", [&](std::mt19937_64& rng) {
    auto x = random_var({3, 4}, rng), w = random_var({2, 4}, rng), b = random_var({2}, rng);
    return std::make_pair(scalarize([=] { return linear(x, w, b); }, 6, rng), std::vector{x, w, b});
  });
  cases.emplace_back("embedding", [&](std::mt19937_64& rng) {
    auto t = random_var({4, 3}, rng);
    std::vector<int> ids{0, 3, 1, 3};
    return std::make_pair(scalarize([=] { return embedding(t, ids); }, 12, rng), std::vector{t});
  });
  cases.emplace_back("relu/tanh/affine/add", [&](std::mt19937_64& rng) {
    auto a = random_var({2, 5}, rng), b = random_var({2, 5}, rng);
    return std::make_pair(scalarize([=] { return add(relu(a), affine(tanh(b), 0.7, 1.0)); }, 10, rng),
                          std::vector{a, b});
  });
  cases.emplace_back("modulate", [&](std::mt19937_64& rng) {
    auto x = random_var({2, 3, 4}, rng), s = random_var({2, 3}, rng), b = random_var({2, 3}, rng);
    return std::make_pair(scalarize([=] { return modulate(x, s, b); }, 24, rng), std::vector{x, s, b});
  });
  cases.emplace_back("pool/concat/masked_mean", [&](std::mt19937_64& rng) {
    auto a = random_var({2, 3, 2}, rng), b = random_var({2, 3, 3}, rng);
    std::vector<std::uint8_t> mask{1, 0, 1, 1, 1, 0};
    return std::make_pair(
        scalarize([=] { return masked_mean(reshape(global_avg_pool(concat_last<double>({a, b})), {2, 3, 1}), mask); },
                  2, rng),
        std::vector{a, b});
  });
  cases.emplace_back("slot assignment and mixing", [&](std::mt19937_64& rng) {
    auto logits = random_var({2, 4, 3}, rng), maps = random_var({2, 4, 5}, rng);
    std::vector<std::uint8_t> mask{1, 1, 0, 1, 1, 1, 1, 1};
    return std::make_pair(scalarize([=] { return slot_mix(slot_assignment(logits, mask), maps); }, 30, rng),
                          std::vector{logits, maps});
  });
  cases.emplace_back("cross-entropy", [&](std::mt19937_64& rng) {
    auto logits = random_var({3, 4}, rng);
    std::vector<int> labels{1, 0, 3};
    return std::make_pair(std::function<Var<double>()>([=] { return softmax_cross_entropy(logits, labels); }),
                          std::vector{logits});
  });
  cases.emplace_back("metadata encoder + CBN", [&](std::mt19937_64& rng) {
    Rng init(rng());
    auto enc = std::make_shared<MetaEncoder<double>>(test_vocab(), MetaEncoderConfig{4, 8, kAllFields}, init);
    auto cbn = std::make_shared<CbnLayer<double>>(3, 8, 0.5, init);
    std::vector<ChannelMeta> metas{{1, 2, 1, 3}, {3, 0, 2, 1}, {2, 1, 1, 2}, {0, 0, 0, 0}};
    auto u = random_var({4, 3, 6}, rng);
    ParamRegistry<double> reg;
    enc->register_params(reg, "meta");
    cbn->register_params(reg, "cbn");
    std::vector<Var<double>> inputs{u};
    for (auto& [name, p] : reg.params) inputs.push_back(p->var);
    return std::make_pair(scalarize([=] { return (*cbn)(u, (*enc)(metas), Mode::kTrain); }, 72, rng), inputs);
  });

  double worst_op = 0;
  std::string worst_name;
  for (auto& [name, build] : cases) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      std::mt19937_64 rng(100 + seed);
      auto [fn, inputs] = build(rng);
      const double e = grad_check(fn, inputs).max_rel_error;
      if (e > worst_op) worst_op = e, worst_name = name;
    }
  }

  // Full composite loss of a tiny proposed model, every parameter tensor sampled.
  double worst_loss = 0;
  const MetaVocab vocab = test_vocab();
  // A whole network with tiny train-mode batches is strongly curved; 1e-5 steps
  // leave truncation error above 1e-4 on some seeds, 1e-6 does not.
  GradCheckOptions opts;
  opts.step = 1e-6;
  opts.max_elements_per_input = 3;
  for (double lambda : {0.0, 0.5, 1.0}) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      std::mt19937_64 rng(500 + seed);
      ModelConfig mc = small_model(ModelKind::kProposed, 2);
      mc.seed = seed;
      mc.lambda_gamma = 0.5;
      auto model = make_model<double>(mc, vocab);
      const Dataset data = random_samples(3, 3, 32, rng);
      const auto batch = batch_of(data);
      auto reg = model->registry();
      std::vector<Var<double>> inputs;
      for (auto& [name, p] : reg.params) inputs.push_back(p->var);
      auto loss = [&] { return combination_loss(model->forward(batch, Mode::kTrain), batch.labels, {lambda}).total; };
      worst_loss = std::max(worst_loss, grad_check(loss, inputs, opts).max_rel_error);
    }
  }
  return {worst_op < 1e-4 && worst_loss < 1e-4,
          fmt("worst layer rel. error %.1e (%s), composite loss %.1e over 3 lambdas x 20 seeds", worst_op,
              worst_name.c_str(), worst_loss)};
}

Verdict loss_path_isolation() {
  std::mt19937_64 rng(4);
  bool ok = true;
  std::string detail;
  for (auto kind : {ModelKind::kProposed, ModelKind::kLateFusionComb}) {
    auto model = make_model<double>(small_model(kind), test_vocab());
    const Dataset data = random_samples(6, 4, 64, rng);
    const auto batch = batch_of(data);
    auto reg = model->registry();
    auto grad_sum = [&](std::string_view part) {
      double n = 0;
      for (auto& [name, p] : reg.params)
        if (name.find(part) != std::string::npos)
          for (std::size_t i = 0; i < p->var.grad().size(); ++i) n += std::abs(p->var.grad()[i]);
      return n;
    };
    for (double lambda : {1.0, 0.0}) {
      reg.zero_grad();
      backward(combination_loss(model->forward(batch, Mode::kTrain), batch.labels, {lambda}).total);
      const double aux = grad_sum(".aux."), fused = grad_sum(".fused.");
      const bool good = lambda == 1.0 ? (aux == 0.0 && fused > 0.0) : (fused == 0.0 && aux > 0.0);
      ok = ok && good;
      detail += fmt("%s l=%g |g_aux|=%g |g_fused|=%.3g; ", std::string(model_name(kind)).c_str(), lambda, aux, fused);
    }
  }
  return {ok, detail};
}

Verdict perturbation_identity() {
  std::mt19937_64 rng(5);
  bool identity = true;
  for (std::size_t c : {1, 6, 40}) {
    for (const auto& s : random_samples(20, c, 32, rng)) {
      for (auto kind : kAllPerturbKinds) {
        identity = identity && perturb(s, {kind, 0.0, std::nullopt, rng()}) == s;
      }
    }
  }
  bool exact = true;
  for (const auto& s : random_samples(50, 40, 16, rng)) {
    const Sample p = perturb(s, {PerturbKind::kChannelMissing, 0.5, std::nullopt, rng()});
    exact = exact && p.valid_count() == 20;
  }
  return {identity && exact, fmt("intensity 0 identity %s; ChannelMissing(0.5) on C=40 masks 20 in %s of 50 draws",
                                 identity ? "holds" : "BROKEN", exact ? "all" : "not all")};
}

Verdict oracle_equivalence() {
  std::mt19937_64 rng(6);
  const int n = 50;
  double conv = 0, bn = 0, mean = 0, slot = 0, ce = 0, f1 = 0;
  for (int trial = 0; trial < n; ++trial) {
    const std::size_t b = 1 + rng() % 3, ci = 1 + rng() % 3, co = 1 + rng() % 4, k = 1 + 2 * (rng() % 2),
                      l = 5 + rng() % 8, stride = 1 + rng() % 2, pad = k / 2;
    {
      auto x = random_tensor({b, ci, l}, rng), w = random_tensor({co, ci, k}, rng), bias = random_tensor({co}, rng);
      auto y = conv1d(Var<double>(x), Var<double>(w), Var<double>(bias), stride, pad).value();
      const std::size_t lo = (l + 2 * pad - k) / stride + 1;
      Tensor<double> ref({b, co, lo});
      for (std::size_t s = 0; s < b; ++s)
        for (std::size_t o = 0; o < co; ++o)
          for (std::size_t t = 0; t < lo; ++t) {
            double acc = bias[o];
            for (std::size_t c = 0; c < ci; ++c)
              for (std::size_t j = 0; j < k; ++j) {
                const long pos = static_cast<long>(t * stride + j) - static_cast<long>(pad);
                if (pos >= 0 && pos < static_cast<long>(l)) acc += w[(o * ci + c) * k + j] * x[(s * ci + c) * l + pos];
              }
            ref[(s * co + o) * lo + t] = acc;
          }
      conv = std::max(conv, max_abs_diff(y, ref));
    }
    {
      const std::size_t bb = b + 1;
      auto x = random_tensor({bb, ci, l}, rng, -3, 3);
      auto g = random_tensor({ci}, rng), beta = random_tensor({ci}, rng);
      BatchNormStats<double> stats(ci);
      auto y = batch_norm1d(Var<double>(x), Var<double>(g), Var<double>(beta), stats, Mode::kTrain).value();
      for (std::size_t c = 0; c < ci; ++c) {
        double mu = 0, var = 0;
        const double cnt = static_cast<double>(bb * l);
        for (std::size_t s = 0; s < bb; ++s)
          for (std::size_t t = 0; t < l; ++t) mu += x[(s * ci + c) * l + t] / cnt;
        for (std::size_t s = 0; s < bb; ++s)
          for (std::size_t t = 0; t < l; ++t) var += std::pow(x[(s * ci + c) * l + t] - mu, 2) / cnt;
        bn = std::max(bn, std::abs(stats.running_mean[c] - 0.1 * mu));
        bn = std::max(bn, std::abs(stats.running_var[c] - (0.9 + 0.1 * var * cnt / (cnt - 1))));
        for (std::size_t s = 0; s < bb; ++s)
          for (std::size_t t = 0; t < l; ++t) {
            const std::size_t i = (s * ci + c) * l + t;
            bn = std::max(bn, std::abs(y[i] - (g[c] * (x[i] - mu) / std::sqrt(var + 1e-5) + beta[c])));
          }
      }
    }
    {
      const std::size_t c = 1 + rng() % 6, d = 1 + rng() % 5;
      auto z = random_tensor({b, c, d}, rng);
      std::vector<std::uint8_t> mask(b * c);
      for (std::size_t s = 0; s < b; ++s) {
        for (std::size_t i = 0; i < c; ++i) mask[s * c + i] = rng() % 2;
        mask[s * c + rng() % c] = 1;
      }
      auto y = masked_mean(Var<double>(z), mask).value();
      for (std::size_t s = 0; s < b; ++s)
        for (std::size_t j = 0; j < d; ++j) {
          double sum = 0, cnt = 0;
          for (std::size_t i = 0; i < c; ++i)
            if (mask[s * c + i]) sum += z[(s * c + i) * d + j], ++cnt;
          mean = std::max(mean, std::abs(y[s * d + j] - sum / cnt));
        }
    }
    {
      const std::size_t c = 1 + rng() % 5, slots = 1 + rng() % 4, f = 1 + rng() % 6;
      auto logits = random_tensor({b, c, slots}, rng, -2, 2), maps = random_tensor({b, c, f}, rng);
      std::vector<std::uint8_t> mask(b * c);
      for (std::size_t s = 0; s < b; ++s) {
        for (std::size_t i = 0; i < c; ++i) mask[s * c + i] = rng() % 3 != 0;
        mask[s * c + rng() % c] = 1;
      }
      auto y = slot_mix(slot_assignment(Var<double>(logits), mask), Var<double>(maps)).value();
      for (std::size_t s = 0; s < b; ++s) {
        // softmax over slots per channel, then renormalize each slot over valid channels
        std::vector<double> a(slots * c, 0.0);
        for (std::size_t i = 0; i < c; ++i) {
          if (!mask[s * c + i]) continue;
          double z = 0;
          for (std::size_t q = 0; q < slots; ++q) z += std::exp(logits[(s * c + i) * slots + q]);
          for (std::size_t q = 0; q < slots; ++q) a[q * c + i] = std::exp(logits[(s * c + i) * slots + q]) / z;
        }
        for (std::size_t q = 0; q < slots; ++q) {
          double col = 0;
          for (std::size_t i = 0; i < c; ++i) col += a[q * c + i];
          for (std::size_t i = 0; i < c; ++i) a[q * c + i] /= col;
        }
        for (std::size_t q = 0; q < slots; ++q)
          for (std::size_t t = 0; t < f; ++t) {
            double acc = 0;
            for (std::size_t i = 0; i < c; ++i) acc += a[q * c + i] * maps[(s * c + i) * f + t];
            slot = std::max(slot, std::abs(y[(s * slots + q) * f + t] - acc));
          }
      }
    }
    {
      const std::size_t classes = 2 + rng() % 5;
      auto logits = random_tensor({b, classes}, rng, -5, 5);
      std::vector<int> labels(b);
      for (auto& y : labels) y = static_cast<int>(rng() % classes);
      double expect = 0;
      for (std::size_t s = 0; s < b; ++s) {
        double z = 0;
        for (std::size_t j = 0; j < classes; ++j) z += std::exp(logits[s * classes + j]);
        expect += (std::log(z) - logits[s * classes + labels[s]]) / static_cast<double>(b);
      }
      ce = std::max(ce, std::abs(softmax_cross_entropy(Var<double>(logits), labels).item() - expect));
    }
    {
      const std::size_t classes = 2 + rng() % 5, count = 5 + rng() % 40;
      std::vector<int> truth(count), pred(count);
      for (auto& t : truth) t = static_cast<int>(rng() % classes);
      for (auto& p : pred) p = static_cast<int>(rng() % classes);
      ConfusionMatrix cm(classes);
      cm.add(truth, pred);
      double sum = 0;
      int present = 0;
      for (std::size_t cls = 0; cls < classes; ++cls) {
        double tp = 0, fp = 0, fn = 0;
        bool seen = false;
        for (std::size_t i = 0; i < count; ++i) {
          const int c = static_cast<int>(cls);
          seen = seen || truth[i] == c;
          tp += pred[i] == c && truth[i] == c;
          fp += pred[i] == c && truth[i] != c;
          fn += pred[i] != c && truth[i] == c;
        }
        if (!seen) continue;
        const double pr = tp + fp > 0 ? tp / (tp + fp) : 0, rc = tp / (tp + fn);
        sum += pr + rc > 0 ? 2 * pr * rc / (pr + rc) : 0;
        ++present;
      }
      f1 = std::max(f1, std::abs(cm.macro_f1() - sum / present));
    }
  }
  const double worst = std::max({conv, bn, mean, slot, ce, f1});
  return {worst < 1e-10, fmt("%d instances each; max error conv %.1e, bn %.1e, masked mean %.1e, slots %.1e, "
                             "CE %.1e, macro-F1 %.1e",
                             n, conv, bn, mean, slot, ce, f1)};
}

// Shared-semantics synthetic data: every location carries the class signal, and
// a per-position cue lets a fixed channel stack shortcut through channel order.
ExperimentConfig robustness_config(ModelKind kind) {
  ExperimentConfig cfg;
  cfg.model.kind = kind;
  cfg.set("backbone.base_channels", "8");
  cfg.set("slots", "6");
  cfg.set("synth.channels_min", "6");
  cfg.set("synth.channels_max", "6");
  cfg.set("synth.windows_per_subject", "200");
  cfg.set("synth.position_cue", "1.0");
  cfg.set("train.epochs", "10");
  cfg.set("folds.max", "2");
  cfg.run_id = "acceptance-robustness-" + std::string(model_name(kind));
  return cfg;
}

// Location-dependent semantics: waveform statistics are shared, the class
// meaning of a channel depends on its location id.
ExperimentConfig ablation_config(ModelKind kind) {
  ExperimentConfig cfg;
  cfg.model.kind = kind;
  cfg.set("backbone.base_channels", "8");
  cfg.set("synth.semantics", "location");
  cfg.set("synth.channels_min", "6");
  cfg.set("synth.channels_max", "6");
  cfg.set("synth.axes_per_location", "1");
  cfg.set("synth.shared_cue", "0.35");
  cfg.set("synth.cue_channels", "3");
  cfg.set("synth.windows_per_subject", "200");
  cfg.set("train.epochs", "10");
  cfg.set("folds.max", "3");
  cfg.set("seeds", "0,1,2");
  cfg.run_id = "acceptance-ablation-" + std::string(model_name(kind));
  return cfg;
}

struct Robustness {
  std::map<ModelKind, TrainOutcome> runs;
  PreparedData data;
};

Verdict robustness_ordering(Robustness& r) {
  const ModelKind kinds[] = {ModelKind::kBaseline, ModelKind::kEarlyFusion, ModelKind::kMiddleFusion,
                             ModelKind::kLateFusion, ModelKind::kProposed};
  r.data = prepare_data(robustness_config(ModelKind::kLateFusion));
  std::map<ModelKind, double> sm, shfl, clean;
  for (auto k : kinds) {
    r.runs[k] = train_run(robustness_config(k), r.data);
    sm[k] = r.runs[k].report.row("Shfl+Miss").acc_mean * 100;
    shfl[k] = r.runs[k].report.row("Shfl").acc_mean * 100;
    clean[k] = r.runs[k].report.row("Clean").acc_mean * 100;
  }
  const double chance = 100.0 / static_cast<double>(r.data.num_classes);
  const double fused_min = std::min(sm[ModelKind::kEarlyFusion], sm[ModelKind::kMiddleFusion]);
  const double fused_max = std::max(sm[ModelKind::kEarlyFusion], sm[ModelKind::kMiddleFusion]);
  bool invariant = true;
  for (auto k : {ModelKind::kLateFusion, ModelKind::kProposed}) {
    for (const auto& f : r.runs[k].report.folds)
      invariant = invariant && f.condition("Shfl").accuracy == f.condition("Clean").accuracy;
  }
  const bool order = sm[ModelKind::kProposed] >= sm[ModelKind::kLateFusion] && sm[ModelKind::kLateFusion] >= fused_max &&
                     fused_min - sm[ModelKind::kBaseline] >= 5.0;
  const bool baseline_breaks = shfl[ModelKind::kBaseline] < 1.5 * chance;
  return {order && baseline_breaks && invariant,
          fmt("Shfl+Miss: ours %.1f, LF %.1f, MF %.1f, EF %.1f, baseline %.1f; baseline Shfl %.1f (bar %.1f); "
              "LF-family Shfl == Clean: %s",
              sm[ModelKind::kProposed], sm[ModelKind::kLateFusion], sm[ModelKind::kMiddleFusion],
              sm[ModelKind::kEarlyFusion], sm[ModelKind::kBaseline], shfl[ModelKind::kBaseline], 1.5 * chance,
              invariant ? "yes" : "no")};
}

Verdict ablation_monotonicity() {
  const auto data = prepare_data(ablation_config(ModelKind::kLateFusion));
  std::map<ModelKind, double> mean;
  for (auto k : {ModelKind::kLateFusion, ModelKind::kLateFusionComb, ModelKind::kProposed}) {
    const auto report = train_run(ablation_config(k), data).report;
    double sum = 0;
    for (const auto& row : report.summary) sum += row.acc_mean * 100;
    mean[k] = sum / static_cast<double>(report.summary.size());
  }
  const double lf = mean[ModelKind::kLateFusion], comb = mean[ModelKind::kLateFusionComb],
               meta = mean[ModelKind::kProposed];
  return {lf <= comb && comb <= meta && meta - comb >= 3.0,
          fmt("mean accuracy over Clean/Shfl/Miss/Shfl+Miss, 3 seeds: LF %.2f, LF+comb %.2f, LF+comb+Meta %.2f", lf,
              comb, meta)};
}

Verdict meta_inconsistent_degradation(Robustness& r) {
  const std::vector<PerturbKind> kinds{PerturbKind::kShuffleFixedMeta};
  const auto grid = default_intensity_grid();
  auto curve = [&](ModelKind k) {
    std::vector<double> acc;
    for (const auto& p : sweep_intensity(r.runs[k].folds, r.data.vocab, kinds, grid, robustness_config(k)))
      acc.push_back(p.acc_mean * 100);
    return acc;
  };
  const auto meta = curve(ModelKind::kProposed), lf = curve(ModelKind::kLateFusion),
             base = curve(ModelKind::kBaseline);
  bool monotone = true;
  for (std::size_t i = 1; i < meta.size(); ++i) monotone = monotone && meta[i] <= meta[i - 1] + 1.0;
  auto flat = [](const std::vector<double>& c) { return std::all_of(c.begin(), c.end(), [&](double v) { return v == c[0]; }); };
  return {monotone && flat(lf) && flat(base),
          fmt("ours %.1f -> %.1f (non-increasing within 1 point: %s); LF flat at %.1f: %s; baseline flat at %.1f: %s",
              meta.front(), meta.back(), monotone ? "yes" : "no", lf[0], flat(lf) ? "yes" : "no", base[0],
              flat(base) ? "yes" : "no")};
}

Verdict efficiency() {
  ExperimentConfig cfg;
  BenchOptions opts;
  opts.timed = false;
  bool invariant = true, linear = true;
  for (auto k : {ModelKind::kLateFusion, ModelKind::kLateFusionComb, ModelKind::kProposed, ModelKind::kEarlyFusion,
                 ModelKind::kMiddleFusion}) {
    cfg.model.kind = k;
    const auto report = efficiency_bench(cfg, opts);
    for (const auto& p : report.points) invariant = invariant && p.params == report.points[0].params;
    if (k == ModelKind::kEarlyFusion || k == ModelKind::kMiddleFusion) continue;
    ModelConfig mc = cfg.model;
    mc.num_classes = 12;
    auto model = make_model<float>(mc, test_vocab());
    for (std::size_t c : {1, 3, 6, 12, 20}) linear = linear && model->macs(2 * c, kWindowLength).backbone == 2 * model->macs(c, kWindowLength).backbone;
  }
  ModelConfig lf;
  lf.kind = ModelKind::kLateFusion;
  lf.num_classes = 12;
  ModelConfig base = lf;
  base.kind = ModelKind::kBaseline;
  base.fixed_channels = 40;
  const double ratio = static_cast<double>(make_model<float>(lf, test_vocab())->macs(40, kWindowLength).total()) /
                       static_cast<double>(make_model<float>(base, test_vocab())->macs(40, kWindowLength).total());
  const double reference = 204.7 / 6.2;  // published full-scale MAC ratio
  const bool ratio_ok = std::abs(ratio / reference - 1.0) <= 0.25;
  return {invariant && linear,
          fmt("params invariant in C: %s; backbone MACs exactly linear: %s; LF/baseline MACs at C=40 = %.1f vs %.1f "
              "(advisory, %s)",
              invariant ? "yes" : "no", linear ? "yes" : "no", ratio, reference, ratio_ok ? "within 25%" : "outside 25%")};
}

Verdict transfer_plumbing() {
  auto make = [](std::size_t channels, std::uint64_t seed) {
    ExperimentConfig cfg;
    cfg.model.kind = ModelKind::kProposed;
    cfg.set("backbone.base_channels", "8");
    cfg.set("synth.channels_min", std::to_string(channels));
    cfg.set("synth.channels_max", std::to_string(channels));
    cfg.set("synth.windows_per_subject", "40");
    cfg.set("synth.seed", std::to_string(seed));
    cfg.set("train.epochs", "3");
    cfg.set("folds.max", "2");
    cfg.run_id = "acceptance-transfer";
    return cfg;
  };
  const std::vector<ExperimentConfig> sources{make(4, 1)};
  const auto target = make(7, 2);
  const auto lp = transfer_run(sources, target, {TransferMode::kLinearProbe, true, std::nullopt});
  const auto ft = transfer_run(sources, target, {TransferMode::kFineTune, true, lp.source});
  bool same = true, lp_heads_only = true, ft_moves = true;
  for (bool s : lp.same_architecture) same = same && s;
  for (bool s : ft.same_architecture) same = same && s;
  for (const auto& d : lp.body_changes) lp_heads_only = lp_heads_only && d.empty();
  for (const auto& d : ft.body_changes) ft_moves = ft_moves && !d.empty();
  return {same && lp_heads_only && ft_moves,
          fmt("4 -> 7 channels: architecture unchanged %s; LP non-head diff empty %s; FT body trained %s; "
              "clean accuracy LP %.1f, FT %.1f",
              same ? "yes" : "no", lp_heads_only ? "yes" : "no", ft_moves ? "yes" : "no",
              lp.report.row("Clean").acc_mean * 100, ft.report.row("Clean").acc_mean * 100)};
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);
  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();
  int failures = 0;
  auto run = [&](int id, const char* name, const std::function<Verdict()>& check) {
    const auto t0 = Clock::now();
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    std::printf("%s  %2d  %-34s %s [%.1fs]\n", v.pass ? "PASS" : "FAIL", id, name, v.detail.c_str(), secs);
    std::fflush(stdout);
    failures += v.pass ? 0 : 1;
  };
  Robustness robustness;
  run(1, "permutation invariance", permutation_invariance);
  run(2, "CBN degeneration", cbn_degeneration);
  run(3, "gradient correctness", gradient_correctness);
  run(4, "loss-path isolation", loss_path_isolation);
  run(5, "perturbation identity", perturbation_identity);
  run(6, "oracle equivalence", oracle_equivalence);
  run(7, "robustness ordering", [&] { return robustness_ordering(robustness); });
  run(8, "ablation monotonicity", ablation_monotonicity);
  run(9, "meta-inconsistent degradation", [&] { return meta_inconsistent_degradation(robustness); });
  run(10, "efficiency scaling", efficiency);
  run(11, "transfer plumbing", transfer_plumbing);
  const double total = std::chrono::duration<double>(Clock::now() - start).count();
  std::printf("%d of 11 criteria failed; total %.0fs\n", failures, total);
  return failures == 0 ? 0 : 1;
}
