#include <doctest.h>

#include "hieraddr/corpus.hpp"
#include "hieraddr/resolver.hpp"
#include "support.hpp"

using namespace hieraddr;

namespace {

const LabelRegistry& reg() {
  static const LabelRegistry r = LabelRegistry::default_registry();
  return r;
}

std::vector<TaggedAddress> addresses(std::uint64_t seed, int n) {
  const auto lex = gen_lexicon(seed, reg());
  Rng rng(derive_seed(seed, "resolver-test"));
  std::vector<TaggedAddress> out;
  for (int i = 0; i < n; ++i) out.push_back(gen_address(lex, rng).tagged);
  return out;
}

}  // namespace

TEST_SUITE("resolver") {
  TEST_CASE("viterbi agrees with exhaustive search") {
    Rng rng(17);
    for (int trial = 0; trial < 200; ++trial) {
      const auto v = testing::random_viterbi_case(rng, 1 + rng.index(5), testing::bio_tags(1 + static_cast<int>(rng.index(2))));
      const auto r = viterbi(v.emissions, v.transitions, v.start, v.constraints);
      REQUIRE(r.path.size() == static_cast<std::size_t>(v.emissions.rows()));
      const double best = testing::brute_force_best(v.emissions, v.transitions, v.start, v.constraints);
      CHECK(r.score == doctest::Approx(best).epsilon(1e-12));
      CHECK(path_score(v.emissions, v.transitions, v.start, v.constraints, r.path) == doctest::Approx(r.score));
    }
  }

  TEST_CASE("viterbi never emits an illegal path") {
    Rng rng(4);
    for (int trial = 0; trial < 200; ++trial) {
      auto v = testing::random_viterbi_case(rng, 1 + rng.index(12), testing::bio_tags(3));
      // Push every position towards I tags, which are illegal after O and at the start.
      for (Eigen::Index k = 2; k < v.emissions.cols(); k += 2) v.emissions.col(k).array() += 50.0;
      const auto r = viterbi(v.emissions, v.transitions, v.start, v.constraints);
      REQUIRE(std::isfinite(path_score(v.emissions, v.transitions, v.start, v.constraints, r.path)));
      std::vector<int> global;
      for (const int k : r.path) global.push_back(v.tags[static_cast<std::size_t>(k)]);
      CHECK(bio_ids_to_spans(global).repairs == 0);
    }
  }

  TEST_CASE("single-token viterbi is the constrained argmax") {
    Rng rng(8);
    const auto v = testing::random_viterbi_case(rng, 1, testing::bio_tags(2));
    const auto r = viterbi(v.emissions, v.transitions, v.start, v.constraints);
    int best = -1;
    for (std::size_t k = 0; k < v.constraints.size; ++k) {
      if (!v.constraints.start[k]) continue;
      const auto i = static_cast<Eigen::Index>(k);
      if (best < 0 || v.emissions(0, i) + v.start(i) > v.emissions(0, best) + v.start(best)) best = static_cast<int>(k);
    }
    CHECK(r.path == std::vector<int>{best});
    CHECK(viterbi(Eigen::MatrixXd(0, 5), v.transitions, v.start, v.constraints).path.empty());
  }

  TEST_CASE("features are window strings and unknown ones are dropped") {
    const auto toks = tokenize("A1路");
    const auto f = feature_strings(toks, 1);
    CHECK(std::find(f.begin(), f.end(), "U0=1") != f.end());
    CHECK(std::find(f.begin(), f.end(), "DIGIT") != f.end());
    CHECK(std::find(f.begin(), f.end(), "FIRST") == f.end());
    FeatureIndex index;
    index.intern("U0=1");
    index.intern("*");
    const auto fv = featurize(index, toks, 1);
    CHECK(fv.ids == std::vector<std::uint32_t>{0, 1});
    CHECK(index.find("nope") == index.size());
  }

  TEST_CASE("tagger memorises a small corpus") {
    const auto corpus = addresses(3, 40);
    const auto model = train_tagger(corpus, reg(), {20, 1});
    const auto m = evaluate_tagger(model, corpus);
    CHECK(m.f1() >= 0.99);
    CHECK(m.token_accuracy() >= 0.99);
  }

  TEST_CASE("tagger generalises to held-out addresses") {
    const auto train = addresses(5, 2000);
    const auto dev = addresses(6, 400);
    int epochs_seen = 0;
    const auto model = train_tagger(train, reg(), {5, 1}, &dev, [&](const TaggerEpochLog& log) {
      ++epochs_seen;
      CHECK(log.epoch == epochs_seen);
    });
    CHECK(epochs_seen == 5);
    CHECK(evaluate_tagger(model, dev).f1() >= 0.90);
  }

  TEST_CASE("training is deterministic and models round trip") {
    const auto corpus = addresses(9, 200);
    const auto a = train_tagger(corpus, reg(), {3, 7});
    const auto b = train_tagger(corpus, reg(), {3, 7});
    CHECK(a.to_json().dump() == b.to_json().dump());
    testing::TempDir dir("resolver");
    a.save(dir / "ner.json");
    const auto c = TaggerModel::load(dir / "ner.json");
    CHECK(c.to_json().dump() == a.to_json().dump());
    for (const auto& ta : corpus) REQUIRE(c.decode(ta.tokens) == a.decode(ta.tokens));
  }

  TEST_CASE("resolve handles empty and unseen text") {
    const auto model = train_tagger(addresses(2, 50), reg(), {2, 1});
    const auto empty = resolve(model, "");
    CHECK(empty.tokens.empty());
    CHECK(empty.spans.empty());
    const auto odd = resolve(model, "\xF0\x9F\x91\xA9\xE2\x80\x8D\xF0\x9F\x92\xBBZZ");
    validate_spans(odd.spans, odd.tokens.size(), reg());
    CHECK_THROWS_AS(train_tagger({}, reg(), {}), ConfigError);
  }
}
