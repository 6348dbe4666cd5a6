#include <filesystem>
#include <fstream>
#include <random>

#include "cfhar/checkpoint.hpp"
#include "cfhar/config.hpp"
#include "cfhar/report.hpp"
#include "doctest.h"
#include "model_fixtures.hpp"

using namespace cfhar;
using namespace cfhar::testing;

TEST_CASE("checkpoint round-trip") {
  const MetaVocab vocab = fixture_vocab();
  std::mt19937_64 rng(1);
  const Dataset data = random_samples(4, 3, 64, rng);
  for (auto kind : {ModelKind::kProposed, ModelKind::kLateFusion, ModelKind::kMiddleFusion, ModelKind::kBaseline}) {
    auto model = make_model<double>(small_config(kind, kind == ModelKind::kBaseline ? 3 : 0), vocab);
    warm_up(*model, data);
    const Checkpoint ckpt = Checkpoint::capture(*model, LossConfig{0.25}, vocab);
    const Checkpoint back = Checkpoint::deserialize(ckpt.serialize());
    CHECK(back.model.kind == kind);
    CHECK(back.loss.lambda == 0.25);
    CHECK(back.vocab == vocab);
    CHECK(checkpoint_diff(ckpt, back).empty());
    auto rebuilt = rebuild<double>(back);
    NoGradGuard guard;
    const auto batch = make_batch<double>(std::span<const Sample>(data));
    CHECK(model->forward(batch, Mode::kEval).y_fused.value() == rebuilt->forward(batch, Mode::kEval).y_fused.value());
  }
}

TEST_CASE("checkpoint files and errors") {
  const MetaVocab vocab = fixture_vocab();
  auto model = make_model<float>(small_config(ModelKind::kProposed), vocab);
  const Checkpoint ckpt = Checkpoint::capture(*model, LossConfig{}, vocab);
  const auto path = std::filesystem::temp_directory_path() / "cfhar_test.ckpt";
  ckpt.save(path);
  const Checkpoint loaded = Checkpoint::load(path);
  CHECK(checkpoint_diff(ckpt, loaded).empty());
  std::filesystem::remove(path);

  SUBCASE("corrupt bytes") {
    CHECK_THROWS_AS(Checkpoint::deserialize("nonsense"), InputError);
    std::string bytes = ckpt.serialize();
    CHECK_THROWS_AS(Checkpoint::deserialize(bytes.substr(0, bytes.size() / 2)), InputError);
  }
  SUBCASE("architecture mismatch fails loudly") {
    auto other = make_model<float>(small_config(ModelKind::kLateFusion), vocab);
    CHECK_THROWS_AS(restore(*other, ckpt), InputError);
    ModelConfig wider = small_config(ModelKind::kProposed);
    wider.backbone.base_channels = 8;
    auto w = make_model<float>(wider, vocab);
    CHECK_THROWS_AS(restore(*w, ckpt), InputError);
  }
  SUBCASE("heads can be replaced") {
    ModelConfig more = small_config(ModelKind::kProposed);
    more.num_classes = 7;
    auto m = make_model<float>(more, vocab);
    CHECK_THROWS_AS(restore(*m, ckpt), InputError);
    CHECK_NOTHROW(restore(*m, ckpt, true));
  }
  SUBCASE("diff names changed tensors") {
    Checkpoint changed = ckpt;
    changed.params.begin()->second[0] += 1.0;
    const auto diff = checkpoint_diff(ckpt, changed);
    REQUIRE(diff.size() == 1);
    CHECK(diff[0] == ckpt.params.begin()->first);
  }
}

TEST_CASE("experiment config") {
  SUBCASE("defaults validate and round-trip through text") {
    ExperimentConfig cfg;
    cfg.validate();
    const auto back = ExperimentConfig::parse(cfg.to_text());
    CHECK(back.to_text() == cfg.to_text());
    CHECK(back.hash() == cfg.hash());
  }
  SUBCASE("keys, comments and hashing") {
    const auto cfg = ExperimentConfig::parse(
        "# comment\n"
        "model = lf_comb\n"
        "loss.lambda = 0.25   # trailing\n"
        "train.epochs = 7\n"
        "seeds = 1, 2,3\n"
        "synth.semantics = location\n"
        "meta.fields = location+axis\n"
        "output.id = x\n");
    CHECK(cfg.model.kind == ModelKind::kLateFusionComb);
    CHECK(cfg.loss.lambda == 0.25);
    CHECK(cfg.schedule.epochs == 7);
    CHECK(cfg.effective_schedule().cosine_t_max == 7);
    CHECK(cfg.seeds == std::vector<std::uint64_t>{1, 2, 3});
    CHECK(cfg.synth.semantics == SynthSemantics::kLocationDependent);
    CHECK(cfg.model.meta.enabled == FieldMask{true, false, false, true});
    ExperimentConfig moved = cfg;
    moved.set("output.dir", "/elsewhere");
    moved.set("output.id", "y");
    CHECK(moved.hash() == cfg.hash());
    moved.set("train.lr", "0.01");
    CHECK(moved.hash() != cfg.hash());
    CHECK(cfg.hash_hex().size() == 16);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(ExperimentConfig::parse("no_such_key = 1\n"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::parse("train.epochs = many\n"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::parse("loss.lambda = 1.5\n"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::parse("model = transformer\n"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::parse("just words\n"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::parse("data.source = csv\n"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::load("/nonexistent/cfhar.cfg"), ConfigError);
  }
  SUBCASE("conditions") {
    ExperimentConfig cfg;
    CHECK(cfg.conditions().size() == 3);
    cfg.set("eval.conditions", "none");
    CHECK(cfg.conditions().empty());
    cfg.set("perturb.kind", "meta_pad");
    cfg.set("perturb.intensity", "0.3");
    REQUIRE(cfg.conditions().size() == 1);
    CHECK(cfg.conditions()[0].kind == PerturbKind::kMetaPad);
    CHECK(cfg.conditions()[0].intensity == 0.3);
  }
}

namespace {

EvalReport sample_report() {
  EvalReport r;
  r.run_id = "t";
  r.command = "train";
  r.model = "ours";
  r.config_hash = "0123456789abcdef";
  r.config_text = "model = ours\n";
  r.build_id = build_id();
  r.seeds = {0, 1};
  for (std::uint64_t seed : {0u, 1u})
    for (int subj : {0, 1, 2}) {
      FoldResult f;
      f.test_subject = subj;
      f.seed = seed;
      f.train_size = 10;
      f.epoch_loss = {1.5, 0.1 * subj + 0.3};
      for (const char* c : {"Clean", "Shfl", "Miss", "Shfl+Miss"})
        f.conditions.push_back({c, 0.5 + 0.1 * subj + 0.01 * seed, 0.4 + 0.05 * subj, {0.1, 1.0 / 3.0}, 7});
      r.folds.push_back(f);
    }
  r.summary = summarize(r.folds);
  r.curves = {{"meta_pad", 0.1, 6, 0.75, 0.01, 0.7, 0.02}};
  r.runtime_seconds = 1.25;
  return r;
}

}  // namespace

TEST_CASE("reports") {
  SUBCASE("summary statistics") {
    const auto r = sample_report();
    REQUIRE(r.summary.size() == 4);
    const auto& clean = r.row("Clean");
    CHECK(clean.count == 6);
    std::vector<double> acc;
    for (const auto& f : r.folds) acc.push_back(f.condition("Clean").accuracy);
    double mean = 0;
    for (double a : acc) mean += a / acc.size();
    double ss = 0;
    for (double a : acc) ss += (a - mean) * (a - mean);
    CHECK(std::abs(clean.acc_mean - mean) < 1e-12);
    CHECK(std::abs(clean.acc_std - std::sqrt(ss / 5)) < 1e-12);
    // trial means are 0.6 and 0.61
    CHECK(std::abs(clean.acc_trial_std - std::sqrt(0.00005)) < 1e-12);
    CHECK(mean_std({}).first == 0.0);
    CHECK(mean_std({2.0}).second == 0.0);
  }
  SUBCASE("JSON round-trip is exact") {
    const auto r = sample_report();
    const auto back = report_from_json(report_to_json(r));
    CHECK(back == r);
    CHECK(back.same_metrics(r));
    EvalReport slower = r;
    slower.runtime_seconds = 99;
    CHECK(slower.same_metrics(r));
    CHECK_THROWS_AS(report_from_json("{}"), InputError);
    CHECK_THROWS_AS(report_from_json("not json"), InputError);
  }
  SUBCASE("summary table columns") {
    const auto table = summary_table(sample_report());
    const auto header = table.substr(table.find("metric"));
    const auto line = header.substr(0, header.find('\n'));
    const auto clean = line.find("Clean"), shfl = line.find("Shfl "), miss = line.find("Miss"),
               both = line.find("Shfl+Miss");
    CHECK(clean < shfl);
    CHECK(shfl < miss);
    CHECK(miss < both);
    CHECK(both != std::string::npos);
  }
  SUBCASE("emit writes both files") {
    const auto dir = std::filesystem::temp_directory_path() / "cfhar_report_test";
    const auto json_path = report_emit(sample_report(), dir);
    CHECK(json_path.filename() == "report.t.json");
    CHECK(std::filesystem::exists(dir / "report.t.txt"));
    std::ifstream in(json_path);
    std::stringstream ss;
    ss << in.rdbuf();
    CHECK(report_from_json(ss.str()) == sample_report());
    std::filesystem::remove_all(dir);
  }
  SUBCASE("efficiency report round-trip") {
    EfficiencyReport e;
    e.run_id = "b";
    e.model = "lf";
    e.length = 256;
    e.warmup = 5;
    e.iterations = 30;
    e.points.push_back({6, 32, 1000, {10, 2, 0, 3}, 1.5, 4.25});
    CHECK(efficiency_from_json(efficiency_to_json(e)) == e);
    CHECK(efficiency_table(e).find("MACs") != std::string::npos);
  }
}
