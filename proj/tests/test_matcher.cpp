#include <doctest.h>

#include "hieraddr/codec.hpp"
#include "hieraddr/corpus.hpp"
#include "hieraddr/matcher.hpp"
#include "support.hpp"

using namespace hieraddr;

namespace {

const LabelRegistry& reg() {
  static const LabelRegistry r = LabelRegistry::default_registry();
  return r;
}

EncoderConfig tiny() {
  EncoderConfig c;
  c.dim = 16;
  c.heads = 2;
  c.ff_dim = 24;
  c.layers = 1;
  return c;
}

const std::vector<GeneratedPair>& pairs() {
  static const auto p = gen_pairs(gen_lexicon(1, reg()), DifficultyMix{}, 1, "matcher-test", 2000);
  return p;
}

const EncoderModel& encoder() {
  static const EncoderModel e = [] {
    std::vector<TaggedAddress> addrs;
    for (const auto& g : pairs()) {
      addrs.push_back(g.a);
      addrs.push_back(g.b);
    }
    return EncoderModel(tiny(), Vocabulary::build(addrs), 5);
  }();
  return e;
}

std::vector<std::pair<TaggedAddress, TaggedAddress>> sides(std::size_t n) {
  std::vector<std::pair<TaggedAddress, TaggedAddress>> out;
  for (std::size_t i = 0; i < n; ++i) out.emplace_back(pairs()[i].a, pairs()[i].b);
  return out;
}

std::vector<int> labels(std::size_t n) {
  std::vector<int> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(pairs()[i].pair.label);
  return out;
}

LabelRegistry small_registry() {
  return LabelRegistry::from_json(json::parse(R"({"groups": ["ADMIN", "ROAD", "POI", "DETAIL"],
    "levels": [{"id": 0, "name": "city", "group": "ADMIN"}, {"id": 1, "name": "road", "group": "ROAD"},
               {"id": 2, "name": "poi", "group": "POI"}, {"id": 3, "name": "room", "group": "DETAIL"}]})"));
}

}  // namespace

TEST_SUITE("matcher") {
  TEST_CASE("splice layout and branch token order") {
    const int prov = reg().level_id("prov"), city = reg().level_id("city"), road = reg().level_id("road");
    const auto a = TaggedAddress::make("唐山河北中山路", {{0, 2, city}, {2, 4, prov}, {4, 7, road}}, reg());
    const auto b = TaggedAddress::make("河北唐山", {{0, 2, prov}, {2, 4, city}}, reg());
    const int admin = reg().group_index("ADMIN"), road_group = reg().group_index("ROAD");
    CHECK(branch_tokens(a, admin, reg()) == std::vector<std::string>{"河", "北", "唐", "山"});
    CHECK(branch_tokens(a, kWholeBranch, reg()).size() == 7);
    const auto vocab = Vocabulary::build({a, b});
    const auto s = splice(a, b, admin, reg(), vocab, 12);
    CHECK(s.content == 11);
    CHECK(s.ids.size() == 12);
    CHECK(s.ids.front() == Vocabulary::kCls);
    CHECK(s.ids[5] == Vocabulary::kSep);
    CHECK(s.ids[10] == Vocabulary::kSep);
    CHECK(s.ids[11] == Vocabulary::kPad);
    CHECK(std::equal(s.ids.begin() + 1, s.ids.begin() + 5, s.ids.begin() + 6));
    const auto empty = splice(b, b, road_group, reg(), vocab, 40);
    CHECK(empty.content == 3);
    CHECK(std::vector<int>(empty.ids.begin(), empty.ids.begin() + 3) ==
          std::vector<int>{Vocabulary::kCls, Vocabulary::kSep, Vocabulary::kSep});
    CHECK_THROWS_AS(splice(a, b, admin, reg(), vocab, 2), ConfigError);
  }

  TEST_CASE("over-long splices cut the longer side first") {
    const int poi = reg().level_id("poi");
    auto make = [&](std::size_t n) {
      return TaggedAddress::make(std::string(n, 'x'), {{0, n, poi}}, reg());
    };
    const auto vocab = Vocabulary::build({make(1)});
    auto sides_of = [](const SpliceInput& s) {
      const auto sep = std::find(s.ids.begin() + 1, s.ids.end(), Vocabulary::kSep) - s.ids.begin();
      return std::pair<std::size_t, std::size_t>(static_cast<std::size_t>(sep - 1), s.content - static_cast<std::size_t>(sep) - 2);
    };
    CHECK(sides_of(splice(make(50), make(5), kWholeBranch, reg(), vocab, 40)) == std::pair<std::size_t, std::size_t>{32, 5});
    CHECK(sides_of(splice(make(5), make(50), kWholeBranch, reg(), vocab, 40)) == std::pair<std::size_t, std::size_t>{5, 32});
    CHECK(sides_of(splice(make(30), make(30), kWholeBranch, reg(), vocab, 40)) == std::pair<std::size_t, std::size_t>{18, 19});
    CHECK(sides_of(splice(make(20), make(17), kWholeBranch, reg(), vocab, 40)) == std::pair<std::size_t, std::size_t>{20, 17});
  }

  TEST_CASE("BiLSTM features of empty input are zero") {
    Rng rng(3);
    const auto unit = BiLstm::init(4, 5, false, rng);
    const Matrix x = Matrix::Random(6, 4);
    CHECK(extract_features(unit, x, std::vector<char>(6, 1)).isZero(0.0));
    CHECK(extract_features(unit, Matrix(0, 4)).isZero(0.0));
    const auto f = extract_features(unit, x);
    CHECK(f.size() == 10);
    CHECK(f.allFinite());
    // PAD rows are skipped entirely.
    std::vector<char> pad(6, 0);
    pad[2] = 1;
    Matrix without(5, 4);
    without << x.topRows(2), x.bottomRows(3);
    CHECK((extract_features(unit, x, pad) - extract_features(unit, without)).norm() < 1e-14);
  }

  TEST_CASE("tied directions see the reversed sequence as a mirrored feature") {
    Rng rng(8);
    const auto unit = BiLstm::init(3, 4, true, rng);
    const Matrix x = Matrix::Random(7, 3);
    const Matrix reversed = x.colwise().reverse();
    const auto f = extract_features(unit, x);
    const auto g = extract_features(unit, reversed);
    CHECK((f.head(4) - g.tail(4)).norm() < 1e-14);
    CHECK((f.tail(4) - g.head(4)).norm() < 1e-14);
  }

  TEST_CASE("matcher gradients match finite differences") {
    for (const bool ablate : {false, true}) {
      MatcherModel model(reg(), tiny(), 6, ablate, false, 3);
      EncoderModel enc = encoder();
      const auto ex = make_example(model, enc.vocab(), pairs()[0].a, pairs()[0].b, pairs()[0].pair.label);
      auto grads = model.zeros_like();
      auto enc_grads = enc.params().zeros_like();
      matcher_loss(model, enc, ex, &grads, &enc_grads, 1.0);
      const auto loss = [&] { return matcher_loss(model, enc, ex); };
      const double own = testing::gradient_check(model.tensors(), std::as_const(grads).tensors(), loss, 15);
      const double through = testing::gradient_check(enc.params().tensors(), std::as_const(enc_grads).tensors(), loss, 8);
      INFO("ablate " << ablate << " matcher " << own << " encoder " << through);
      CHECK(own < 1e-4);
      CHECK(through < 1e-4);
    }
  }

  TEST_CASE("argmax ties go to the smaller label") {
    CHECK(argmax_label({1.0, 1.0, 0.0}) == 0);
    CHECK(argmax_label({0.0, 2.0, 2.0}) == 1);
    CHECK(argmax_label({0.0, 0.0, 0.5}) == 2);
  }

  TEST_CASE("classification is deterministic and checks compatibility") {
    const MatcherModel model(reg(), tiny(), 6, false, false, 9);
    const auto& g = pairs()[3];
    const auto p = classify_pair(model, encoder(), g.a, g.b, false);
    CHECK(p.logits == classify_pair(model, encoder(), g.a, g.b, false).logits);
    CHECK(p.branch_norms.size() == model.branches().size());
    CHECK(model.branches().back() == kWholeBranch);
    CHECK_THROWS_AS(classify_pair(model, encoder(), g.a, g.b, true), ConfigError);
    EncoderConfig wide = tiny();
    wide.dim = 32;
    const EncoderModel other(wide, encoder().vocab(), 1);
    CHECK_THROWS_AS(classify_pair(model, other, g.a, g.b, false), ConfigError);
    const MatcherModel small(small_registry(), tiny(), 6, false, false, 9);
    CHECK_THROWS_AS(classify_pair(small, encoder(), g.a, g.b, false), ConfigError);
    const MatcherModel whole(reg(), tiny(), 6, true, false, 9);
    CHECK(whole.branches() == std::vector<int>{kWholeBranch});
  }

  TEST_CASE("a degenerate corpus is fitted") {
    MatcherConfig cfg;
    cfg.hidden = 8;
    cfg.epochs = 2;
    const std::size_t n = 200;
    const auto s = sides(n);
    const std::vector<int> all_exact(n, 2);
    const auto model = train_matcher_resolved(s, all_exact, reg(), encoder(), cfg);
    std::size_t hits = 0;
    for (const auto& [a, b] : s) hits += classify_pair(model, encoder(), a, b, false).label == 2;
    CHECK(static_cast<double>(hits) >= 0.99 * n);
  }

  TEST_CASE("training lowers the loss and is deterministic") {
    MatcherConfig cfg;
    cfg.hidden = 8;
    cfg.epochs = 3;
    cfg.seed = 2;
    std::vector<MatcherEpochLog> logs;
    const auto a = train_matcher_resolved(sides(2000), labels(2000), reg(), encoder(), cfg,
                                          [&](const MatcherEpochLog& log) { logs.push_back(log); });
    REQUIRE(logs.size() == 3);
    CHECK(logs.back().mean_loss < logs.front().mean_loss);
    // Swap augmentation adds a reversed copy of every label-0 and label-2 pair.
    std::size_t swapped = 0;
    for (const int l : labels(2000)) swapped += l != 1;
    CHECK(logs.front().examples == 2000 + swapped);
    cfg.epochs = 1;
    const auto b = train_matcher_resolved(sides(300), labels(300), reg(), encoder(), cfg);
    const auto c = train_matcher_resolved(sides(300), labels(300), reg(), encoder(), cfg);
    CHECK(b.to_json().dump() == c.to_json().dump());
  }

  TEST_CASE("identical sides swap to the same example") {
    const MatcherModel model(reg(), tiny(), 6, false, false, 1);
    const auto& g = pairs()[5];
    const auto x = make_example(model, encoder().vocab(), g.a, g.a, 2);
    for (const auto& s : x.splices) {
      const auto sep = std::find(s.ids.begin() + 1, s.ids.end(), Vocabulary::kSep);
      CHECK(std::equal(s.ids.begin() + 1, sep, sep + 1));
    }
  }

  TEST_CASE("pipeline files round trip and are hash-checked") {
    testing::TempDir dir("matcher");
    std::vector<TaggedAddress> tagged;
    for (std::size_t i = 0; i < 200; ++i) tagged.push_back(pairs()[i].a);
    const auto resolver = train_tagger(tagged, reg(), {3, 1});
    resolver.save(dir / "ner.json");
    encoder().save(dir / "enc.json");
    std::vector<MatchPair> corpus;
    for (std::size_t i = 0; i < 100; ++i) corpus.push_back(pairs()[i].pair);
    MatcherConfig cfg;
    cfg.hidden = 4;
    cfg.epochs = 1;
    const auto model = train_matcher(corpus, resolver, encoder(), cfg);
    save_matcher(model, dir / "match.json", dir / "ner.json", dir / "enc.json");
    const auto pipe = MatchPipeline::load(dir / "match.json");
    const auto& p = corpus[7];
    const auto expected = classify_pair(model, encoder(), resolve(resolver, p.a), resolve(resolver, p.b), false);
    CHECK(pipe.classify(p.a, p.b).logits == expected.logits);
    CHECK(MatcherModel::from_json(model.to_json()).to_json() == model.to_json());

    write_file(dir / "enc.json", read_file(dir / "enc.json") + " ");
    CHECK_THROWS_AS(MatchPipeline::load(dir / "match.json"), FormatError);
  }

  TEST_CASE("fine-tuning keeps its own encoder") {
    MatcherConfig cfg;
    cfg.hidden = 4;
    cfg.epochs = 1;
    cfg.finetune_encoder = true;
    const auto model = train_matcher_resolved(sides(64), labels(64), reg(), encoder(), cfg);
    REQUIRE(model.own_encoder().has_value());
    const auto ids = encoder().vocab().encode(pairs()[0].a.tokens);
    CHECK_FALSE(model.own_encoder()->encode(ids).isApprox(encoder().encode(ids)));
    const auto back = MatcherModel::from_json(model.to_json());
    REQUIRE(back.own_encoder().has_value());
    CHECK(back.own_encoder()->encode(ids) == model.own_encoder()->encode(ids));
  }
}
