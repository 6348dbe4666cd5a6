#include <cmath>
#include <random>

#include "cfhar/gradcheck.hpp"
#include "cfhar/metadata.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace cfhar;
using cfhar::testing::random_tensor;
using cfhar::testing::random_var;

namespace {

MetaVocab small_vocab() {
  MetaVocab v;
  for (auto n : {"hand", "chest", "ankle"}) v.intern(MetaField::kLocation, n);
  for (auto n : {"left", "right"}) v.intern(MetaField::kSide, n);
  for (auto n : {"acc", "gyro", "mag"}) v.intern(MetaField::kSensor, n);
  for (auto n : {"x", "y", "z"}) v.intern(MetaField::kAxis, n);
  return v;
}

void zero_projections(CbnLayer<double>& cbn) {
  for (auto* p : {&cbn.gamma_proj.weight, &cbn.gamma_proj.bias, &cbn.beta_proj.weight, &cbn.beta_proj.bias}) {
    p->value().fill(0.0);
  }
}

}  // namespace

TEST_CASE("MetaVocab and register_metadata") {
  MetaVocab vocab;
  SUBCASE("same names map to the same ids") {
    const int a = vocab.intern(MetaField::kLocation, "hand");
    CHECK(a == 1);
    CHECK(vocab.intern(MetaField::kLocation, "hand") == a);
    CHECK(vocab.intern(MetaField::kLocation, "chest") == 2);
    CHECK(vocab.intern(MetaField::kSide, "-") == 0);
    CHECK(vocab.intern(MetaField::kSide, "") == 0);
    CHECK(vocab.lookup(MetaField::kLocation, "ankle") == 0);
    CHECK(vocab.size(MetaField::kLocation) == 3);
  }
  SUBCASE("descriptor registration is append-only and stable") {
    const auto desc = DatasetDescriptor::parse(
        "rate_hz = 50\n"
        "0, hand, right, accelerometer, x\n"
        "1, hand, right, accelerometer, x\n"
        "2, chest, -, heart_rate, -\n");
    CHECK(desc.rate_hz == 50.0);
    const auto metas = register_metadata(desc, vocab);
    REQUIRE(metas.size() == 3);
    CHECK(metas[0] == metas[1]);
    CHECK(metas[2].axis == 0);
    CHECK(metas[2].side == 0);
    const MetaVocab before = vocab;
    const auto again = register_metadata(desc, vocab);
    CHECK(again == metas);
    CHECK(vocab == before);

    // A sensor type never seen before gets a fresh id; old ids are untouched.
    const auto extra = register_metadata(DatasetDescriptor::parse("0, wrist, left, magnetometer, z\n"), vocab);
    CHECK(extra[0].sensor == static_cast<int>(before.size(MetaField::kSensor)));
    CHECK(before.is_prefix_of(vocab));
    CHECK_FALSE(vocab.is_prefix_of(before));
  }
  SUBCASE("descriptor text round-trips") {
    const auto desc = DatasetDescriptor::parse("label_column = act\n0, hand, -, acc, y\n3, -, -, -, -\n");
    const auto back = DatasetDescriptor::parse(desc.to_text());
    CHECK(back.label_column == "act");
    REQUIRE(back.channels.size() == 2);
    CHECK(back.channels[1].index == 3);
    CHECK(back.channels[1].location.empty());
    CHECK(back.channels[0].axis == "y");
  }
  SUBCASE("malformed descriptor rows") {
    CHECK_THROWS_AS(DatasetDescriptor::parse("0, hand, right\n"), ParseError);
    CHECK_THROWS_AS(DatasetDescriptor::parse("rate_hz = fast\n"), ParseError);
  }
  SUBCASE("field masks") {
    CHECK(mask_from_string("all") == kAllFields);
    const FieldMask la = mask_from_string("location+axis");
    CHECK(la == FieldMask{true, false, false, true});
    CHECK(mask_from_string(mask_to_string(la)) == la);
    CHECK(apply_mask({3, 2, 1, 2}, la) == ChannelMeta{3, 0, 0, 2});
    CHECK_THROWS_AS(mask_from_string("location+colour"), ConfigError);
  }
}

TEST_CASE("build_meta_vector") {
  const MetaVocab vocab = small_vocab();
  Rng rng(11);
  MetaEncoder<double> enc(vocab, {}, rng);
  SUBCASE("fully padded channel gives a finite fixed vector") {
    std::vector<ChannelMeta> metas{kPaddingMeta};
    auto m = enc(metas);
    CHECK(m.shape() == Shape{1, 64});
    CHECK(m.value().all_finite());
    CHECK(enc(metas).value() == m.value());
  }
  SUBCASE("identical descriptors give identical vectors") {
    std::vector<ChannelMeta> metas{{1, 2, 1, 3}, {2, 1, 2, 1}, {1, 2, 1, 3}};
    auto m = enc(metas);
    for (std::size_t j = 0; j < 64; ++j) CHECK(m.value()[j] == m.value()[2 * 64 + j]);
  }
  SUBCASE("disabling sensor type equals forcing sensor id to 0") {
    MetaEncoder<double> masked = enc;
    masked.set_enabled(mask_from_string("location+axis"));
    std::vector<ChannelMeta> metas{{1, 2, 1, 3}, {3, 1, 2, 2}};
    std::vector<ChannelMeta> forced{{1, 0, 0, 3}, {3, 0, 0, 2}};
    CHECK(masked(metas).value() == enc(forced).value());
  }
  SUBCASE("out-of-range id") {
    std::vector<ChannelMeta> metas{{9, 0, 0, 0}};
    CHECK_THROWS_AS(enc(metas), InputError);
  }
  SUBCASE("growing the vocabulary keeps existing rows") {
    MetaVocab bigger = vocab;
    bigger.intern(MetaField::kSensor, "baro");
    MetaEncoder<double> grown = enc;
    Rng grow_rng(3);
    grown.grow(bigger, grow_rng);
    std::vector<ChannelMeta> metas{{1, 2, 3, 3}};
    CHECK(grown(metas).value() == enc(metas).value());
    std::vector<ChannelMeta> fresh{{1, 2, 4, 3}};
    CHECK(grown(fresh).value().all_finite());
  }
}

TEST_CASE("cbn_apply") {
  const MetaVocab vocab = small_vocab();
  Rng rng(12);
  std::mt19937_64 data_rng(13);
  MetaEncoder<double> enc(vocab, {}, rng);
  std::vector<ChannelMeta> metas{{1, 2, 1, 3}, {2, 1, 2, 1}, {3, 0, 3, 2}, {0, 0, 0, 0}};
  auto m = enc(metas);

  SUBCASE("zero projections degenerate to batch norm") {
    CbnLayer<double> cbn(5, 64, 0.1, rng);
    zero_projections(cbn);
    BatchNorm1d<double> plain = cbn.bn;
    auto u = random_var({4, 5, 7}, data_rng, false);
    auto a = cbn(u, m, Mode::kTrain);
    auto b = plain(u, Mode::kTrain);
    CHECK(cfhar::testing::max_abs_diff(a.value(), b.value()) <= 1e-12);
    auto ea = cbn(u, m, Mode::kEval);
    auto eb = plain(u, Mode::kEval);
    CHECK(ea.value() == eb.value());
  }
  SUBCASE("lambda 0 gives BN(u) + beta(m)") {
    CbnLayer<double> cbn(5, 64, 0.0, rng);
    BatchNorm1d<double> plain = cbn.bn;
    auto u = random_var({4, 5, 7}, data_rng, false);
    auto out = cbn(u, m, Mode::kTrain);
    auto bn = plain(u, Mode::kTrain);
    auto beta = cbn.beta_proj(m);
    double worst = 0;
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t c = 0; c < 5; ++c)
        for (std::size_t t = 0; t < 7; ++t) {
          const std::size_t i = (n * 5 + c) * 7 + t;
          worst = std::max(worst, std::abs(out.value()[i] - (bn.value()[i] + beta.value()[n * 5 + c])));
        }
    CHECK(worst < 1e-12);
  }
  SUBCASE("scale stays within 1 +/- lambda") {
    CbnLayer<double> cbn(6, 64, 0.5, rng);
    cbn.beta_proj.weight.value().fill(0.0);
    cbn.beta_proj.bias.value().fill(0.0);
    // Large projections push tanh toward saturation.
    for (std::size_t i = 0; i < cbn.gamma_proj.weight.value().size(); ++i) cbn.gamma_proj.weight.value()[i] *= 50.0;
    Var<double> ones(Tensor<double>({1000, 6, 2}));
    for (std::size_t i = 0; i < ones.size(); ++i) ones.mutable_value()[i] = (i % 2 == 0) ? 1.0 : -1.0;
    auto rand_m = random_var({1000, 64}, data_rng, false);
    auto out = cbn(ones, rand_m, Mode::kTrain);
    const auto bn = BatchNorm1d<double>(6)(ones, Mode::kTrain);
    double lo = 10, hi = -10;
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double s = out.value()[i] / bn.value()[i];
      lo = std::min(lo, s);
      hi = std::max(hi, s);
    }
    CHECK(lo >= 0.5 - 1e-12);
    CHECK(hi <= 1.5 + 1e-12);
    CHECK(hi - lo > 0.5);
  }
  SUBCASE("mismatched meta rows") {
    CbnLayer<double> cbn(5, 64, 0.1, rng);
    CHECK_THROWS_AS(cbn(random_var({3, 5, 7}, data_rng), m, Mode::kTrain), InputError);
  }
  SUBCASE("unconditioned layer is plain batch norm") {
    CbnLayer<double> cbn(5, 0, 0.1, rng);
    BatchNorm1d<double> plain = cbn.bn;
    auto u = random_var({4, 5, 7}, data_rng, false);
    CHECK(cbn(u, Var<double>(), Mode::kTrain).value() == plain(u, Mode::kTrain).value());
  }
}

TEST_CASE("gradients reach embeddings, MLP and projections") {
  const MetaVocab vocab = small_vocab();
  Rng rng(14);
  std::mt19937_64 data_rng(15);
  MetaEncoder<double> enc(vocab, {4, 8, kAllFields}, rng);
  CbnLayer<double> cbn(3, 8, 0.3, rng);
  std::vector<ChannelMeta> metas{{1, 2, 1, 3}, {3, 0, 2, 1}, {2, 1, 1, 2}, {1, 2, 1, 3}};
  auto u = random_var({4, 3, 5}, data_rng);
  auto r = random_var({1, 60}, data_rng, false);
  auto loss = [&] {
    auto y = cbn(u, enc(metas), Mode::kTrain);
    return reshape(linear<double>(reshape(y, {1, 60}), r, Var<double>()), {1});
  };
  ParamRegistry<double> reg;
  enc.register_params(reg, "meta");
  cbn.register_params(reg, "cbn");
  std::vector<Var<double>> inputs;
  for (auto& [name, p] : reg.params) inputs.push_back(p->var);
  const auto report = grad_check(loss, inputs);
  INFO(report.worst);
  CHECK(report.max_rel_error < 1e-4);

  reg.zero_grad();
  backward(loss());
  for (auto& [name, p] : reg.params) {
    double norm = 0;
    for (std::size_t i = 0; i < p->var.grad().size(); ++i) norm += std::abs(p->var.grad()[i]);
    INFO(name);
    CHECK(norm > 0);
  }
}
