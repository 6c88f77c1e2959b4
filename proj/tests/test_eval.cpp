#include <doctest.h>

#include "hieraddr/eval.hpp"
#include "support.hpp"

using namespace hieraddr;

namespace {

ConfusionMatrix from_counts(const std::array<std::array<std::size_t, 3>, 3>& counts) {
  ConfusionMatrix cm;
  cm.counts = counts;
  return cm;
}

}  // namespace

TEST_SUITE("eval") {
  TEST_CASE("metric oracle") {
    // Frozen from an exact rational computation done independently of this code.
    const auto m = metrics(from_counts({{{2, 0, 0}, {0, 0, 1}, {0, 0, 1}}}));
    CHECK(m.accuracy == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(std::abs(m.f1 - 0.5555555555555556) < 1e-9);
    CHECK(m.recall == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(m.precision == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(m.class_precision == std::array<double, 3>{1.0, 0.0, 0.5});
    CHECK(m.class_recall == std::array<double, 3>{1.0, 0.0, 1.0});
    CHECK(m.class_f1[2] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(m.class_f1[1] == 0.0);
  }

  TEST_CASE("a perfect matrix scores 1 everywhere") {
    for (const auto avg : {Averaging::Macro, Averaging::Micro}) {
      const auto m = metrics(from_counts({{{3, 0, 0}, {0, 5, 0}, {0, 0, 7}}}), avg);
      CHECK(m.accuracy == 1.0);
      CHECK(m.f1 == 1.0);
      CHECK(m.recall == 1.0);
      CHECK(m.precision == 1.0);
    }
  }

  TEST_CASE("an empty matrix is refused") {
    CHECK_THROWS_AS(metrics(ConfusionMatrix{}), InvariantError);
  }

  TEST_CASE("confusion matrix counts gold rows and predicted columns") {
    ConfusionMatrix cm;
    cm.add(0, 2);
    cm.add(0, 2);
    cm.add(1, 1);
    CHECK(cm.counts[0][2] == 2);
    CHECK(cm.total() == 3);
    CHECK_THROWS_AS(cm.add(3, 0), InvariantError);
    CHECK(cm.to_json() == json::parse("[[0,0,2],[0,1,0],[0,0,0]]"));
  }

  TEST_CASE("random predictions score about one third") {
    Rng rng(12);
    ConfusionMatrix cm;
    for (int i = 0; i < 10000; ++i) cm.add(static_cast<int>(rng.index(3)), static_cast<int>(rng.index(3)));
    const auto macro = metrics(cm);
    CHECK(std::abs(macro.accuracy - 1.0 / 3.0) < 0.02);
    CHECK(std::abs(macro.f1 - 1.0 / 3.0) < 0.02);
  }

  TEST_CASE("averaging identities") {
    Rng rng(2);
    for (int trial = 0; trial < 200; ++trial) {
      ConfusionMatrix cm;
      const std::size_t n = 1 + rng.index(60);
      for (std::size_t i = 0; i < n; ++i) cm.add(static_cast<int>(rng.index(3)), static_cast<int>(rng.index(3)));
      const auto macro = metrics(cm, Averaging::Macro);
      const auto micro = metrics(cm, Averaging::Micro);
      // Micro averages of a single-label problem all equal accuracy.
      CHECK(std::abs(micro.f1 - micro.accuracy) < 1e-12);
      CHECK(std::abs(micro.recall - micro.accuracy) < 1e-12);
      double balanced = 0;
      for (std::size_t c = 0; c < 3; ++c) {
        std::size_t row = 0;
        for (const auto v : cm.counts[c]) row += v;
        balanced += row ? static_cast<double>(cm.counts[c][c]) / static_cast<double>(row) : 0.0;
      }
      CHECK(std::abs(macro.recall - balanced / 3.0) < 1e-12);
      for (const double v : {macro.f1, macro.recall, macro.precision, macro.accuracy}) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
      }
    }
    CHECK(averaging_from_name("micro") == Averaging::Micro);
    CHECK_THROWS_AS(averaging_from_name("weighted"), ConfigError);
  }

  TEST_CASE("ablation arms") {
    CHECK(std::string(arm_name(AblationArm::NoWwm)) == "no-wwm");
    CHECK(arm_mask_mode(AblationArm::Full) == MaskMode::WholeElement);
    CHECK(arm_mask_mode(AblationArm::NoWwm) == MaskMode::SingleToken);
    CHECK(arm_mask_mode(AblationArm::Baseline) == MaskMode::SingleToken);
    CHECK(arm_ablates_elements(AblationArm::Baseline));
    CHECK(arm_ablates_elements(AblationArm::NoElement));
    CHECK_FALSE(arm_ablates_elements(AblationArm::Full));
    CHECK_FALSE(arm_ablates_elements(AblationArm::NoWwm));
  }

  TEST_CASE("a miniature ablation reports every arm") {
    testing::TempDir dir("ablation");
    const auto reg = LabelRegistry::default_registry();
    const auto res = gen_resolution_corpus(3, 300, dir.path(), reg);
    gen_matching_corpus(3, 160, DifficultyMix{}, dir / "train.jsonl", "train", reg);
    gen_matching_corpus(3, 60, DifficultyMix{}, dir / "test.jsonl", "test", reg);
    AblationConfig cfg;
    cfg.tagger.epochs = 2;
    cfg.encoder.dim = 16;
    cfg.encoder.heads = 2;
    cfg.encoder.ff_dim = 16;
    cfg.encoder.layers = 1;
    cfg.pretrain.epochs = 1;
    cfg.matcher.epochs = 1;
    cfg.matcher.hidden = 4;
    const AblationCorpora corpora{res.train, res.dev, dir / "train.jsonl", dir / "test.jsonl"};
    std::size_t logged = 0;
    const auto report = run_ablation(corpora, {1}, cfg, [&](const json&) { ++logged; });
    CHECK(report.runs.size() == 4);
    CHECK(logged >= 4);
    for (const auto arm : kAblationArms) {
      const auto m = report.median(arm);
      CHECK(m.accuracy >= 0.0);
      CHECK(m.accuracy <= 1.0);
      CHECK(report.table().find(arm_name(arm)) != std::string::npos);
    }
    for (const auto& run : report.runs) CHECK(run.confusion.total() == 60);
    CHECK(report.corpus_fingerprint ==
          corpus_fingerprint({res.train, res.dev, dir / "train.jsonl", dir / "test.jsonl"}));
    const auto j = report.to_json();
    CHECK(j.at("runs").size() == 4);
    CHECK(run_ablation(corpora, {1}, cfg).to_json() == j);
  }
}
