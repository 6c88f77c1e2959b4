#include <doctest.h>

#include <set>

#include "hieraddr/codec.hpp"
#include "hieraddr/core.hpp"
#include "support.hpp"

using namespace hieraddr;

namespace {

std::vector<std::string> texts(const std::vector<Token>& tokens) {
  std::vector<std::string> out;
  for (const auto& t : tokens) out.push_back(t.text);
  return out;
}

const LabelRegistry& reg() {
  static const LabelRegistry r = LabelRegistry::default_registry();
  return r;
}

}  // namespace

TEST_SUITE("core") {
  TEST_CASE("tokenize splits CJK and mixed script per character") {
    CHECK(texts(tokenize("天津市")) == std::vector<std::string>{"天", "津", "市"});
    CHECK(tokenize("").empty());
    CHECK(texts(tokenize("A1路")) == std::vector<std::string>{"A", "1", "路"});
  }

  TEST_CASE("tokenize keeps grapheme clusters together") {
    CHECK(tokenize("e\xCC\x81x").size() == 2);
    CHECK(tokenize("\r\n").size() == 1);
    CHECK(tokenize("\xF0\x9F\x87\xA8\xF0\x9F\x87\xB3\xF0\x9F\x87\xA8").size() == 2);  // RI pair + lone RI
    CHECK(tokenize("\xF0\x9F\x91\xA9\xE2\x80\x8D\xF0\x9F\x92\xBB").size() == 1);
    CHECK(tokenize("\xE1\x84\x80\xE1\x85\xA1\xE1\x86\xA8").size() == 1);
  }

  TEST_CASE("token indices are positions") {
    const auto toks = tokenize("芜湖市云鼎");
    for (std::size_t i = 0; i < toks.size(); ++i) CHECK(toks[i].index == i);
  }

  TEST_CASE("tokenize round-trips arbitrary bytes") {
    Rng rng(11);
    for (int trial = 0; trial < 2000; ++trial) {
      std::string s;
      const std::size_t n = rng.index(40);
      for (std::size_t i = 0; i < n; ++i) s.push_back(static_cast<char>(rng.index(256)));
      const auto toks = tokenize(s);
      REQUIRE(join_tokens(toks) == s);
      for (const auto& t : toks) REQUIRE_FALSE(t.text.empty());
    }
  }

  TEST_CASE("default registry has 21 levels partitioned into 4 groups") {
    const auto& r = reg();
    REQUIRE(r.size() == 21);
    REQUIRE(r.groups() == std::vector<std::string>{"ADMIN", "ROAD", "POI", "DETAIL"});
    std::set<int> seen;
    for (std::size_t g = 0; g < r.groups().size(); ++g) {
      const auto members = r.levels_in_group(static_cast<int>(g));
      CHECK_FALSE(members.empty());
      for (const int l : members) CHECK(seen.insert(l).second);
    }
    CHECK(seen.size() == 21);
    for (int i = 0; i < 21; ++i) CHECK(r.level(i).id == i);
    CHECK(r.level_id("prov") == 0);
    CHECK(r.level(r.level_id("poi")).group == "POI");
  }

  TEST_CASE("shipped registry file matches the built-in default") {
    const auto path = std::filesystem::path(HIERADDR_SOURCE_DIR) / "config" / "registry.json";
    CHECK(LabelRegistry::load(path) == reg());
    CHECK(LabelRegistry::from_json(reg().to_json()) == reg());
  }

  TEST_CASE("registry rejects broken partitions") {
    const json ok = reg().to_json();
    json dup = ok;
    dup["levels"][1]["name"] = dup["levels"][0]["name"];
    CHECK_THROWS_AS(LabelRegistry::from_json(dup), RegistryError);
    json bad_group = ok;
    bad_group["levels"][3]["group"] = "NOWHERE";
    CHECK_THROWS_AS(LabelRegistry::from_json(bad_group), RegistryError);
    json empty_group = ok;
    empty_group["groups"].push_back("EXTRA");
    CHECK_THROWS_AS(LabelRegistry::from_json(empty_group), RegistryError);
    json gap = ok;
    gap["levels"][5]["id"] = 40;
    CHECK_THROWS_AS(LabelRegistry::from_json(gap), RegistryError);
  }

  TEST_CASE("spans_to_bio examples") {
    const int city = reg().level_id("city"), prov = reg().level_id("prov");
    auto ta = TaggedAddress::make("天津市", {{0, 3, city}}, reg());
    CHECK(spans_to_bio(ta, reg()) == std::vector<std::string>{"B-city", "I-city", "I-city"});
    ta = TaggedAddress::make("天津", {}, reg());
    CHECK(spans_to_bio(ta, reg()) == std::vector<std::string>{"O", "O"});
    ta = TaggedAddress::make("河北唐山", {{0, 2, prov}, {2, 4, city}}, reg());
    CHECK(spans_to_bio(ta, reg()) == std::vector<std::string>{"B-prov", "I-prov", "B-city", "I-city"});
  }

  TEST_CASE("overlapping or out-of-range spans are invariant violations") {
    const int city = reg().level_id("city");
    CHECK_THROWS_AS(TaggedAddress::make("天津市", {{0, 2, city}, {1, 3, city}}, reg()), InvariantError);
    CHECK_THROWS_AS(TaggedAddress::make("天津市", {{0, 4, city}}, reg()), InvariantError);
    CHECK_THROWS_AS(TaggedAddress::make("天津市", {{1, 1, city}}, reg()), InvariantError);
    CHECK_THROWS_AS(TaggedAddress::make("天津市", {{0, 1, 99}}, reg()), InvariantError);
  }

  TEST_CASE("bio_to_spans inverts and repairs") {
    const int city = reg().level_id("city");
    auto r = bio_to_spans({"B-city", "I-city", "I-city"}, reg());
    CHECK(r.spans == std::vector<ElementSpan>{{0, 3, city}});
    CHECK(r.repairs == 0);
    r = bio_to_spans({"I-city", "O"}, reg());
    CHECK(r.spans == std::vector<ElementSpan>{{0, 1, city}});
    CHECK(r.repairs == 1);
    r = bio_to_spans({"B-prov", "I-city"}, reg());  // level change inside a span
    CHECK(r.spans.size() == 2);
    CHECK(r.repairs == 1);
    CHECK_THROWS_AS(bio_to_spans({"B-planet"}, reg()), RegistryError);
    CHECK_THROWS_AS(bio_to_spans({"X-city"}, reg()), RegistryError);
  }

  TEST_CASE("BIO round trip on random tagged addresses") {
    Rng rng(5);
    for (int i = 0; i < 1000; ++i) {
      const auto ta = testing::random_tagged(rng, reg());
      const auto tags = spans_to_bio(ta, reg());
      REQUIRE(tags.size() == ta.tokens.size());
      const auto back = bio_to_spans(tags, reg());
      REQUIRE(back.spans == ta.spans);
      REQUIRE(back.repairs == 0);
      REQUIRE(spans_to_bio(TaggedAddress::make(ta.text, back.spans, reg()), reg()) == tags);
    }
  }

  TEST_CASE("BIO tag ids are consistent with tag strings") {
    const BioTagSet ts(reg());
    CHECK(ts.size() == 43);
    CHECK(ts.id("O") == 0);
    CHECK(ts.id("B-prov") == 1);
    CHECK(ts.id("I-prov") == 2);
    CHECK(ts.name(ts.id("I-roomno")) == "I-roomno");
    CHECK_FALSE(BioTagSet::legal_transition(0, BioTagSet::inside_tag(3)));
    CHECK(BioTagSet::legal_transition(BioTagSet::begin_tag(3), BioTagSet::inside_tag(3)));
    CHECK_FALSE(BioTagSet::legal_start(BioTagSet::inside_tag(0)));
  }

  TEST_CASE("tagged JSONL round trip") {
    testing::TempDir dir("core");
    Rng rng(3);
    std::vector<TaggedAddress> corpus;
    for (int i = 0; i < 50; ++i) corpus.push_back(testing::random_tagged(rng, reg()));
    write_tagged_jsonl(dir / "c.jsonl", corpus, reg());
    CHECK(read_tagged_jsonl(dir / "c.jsonl", reg()) == corpus);
  }

  TEST_CASE("match pairs validate labels and sides") {
    CHECK_THROWS_AS(validate_pair({"a", "b", 3, {}}), InvariantError);
    CHECK_THROWS_AS(validate_pair({"", "b", 1, {}}), InvariantError);
    validate_pair({"a", "b", 2, {}});
    const MatchPair p{"天津市", "天津", 1, {{"primary", "truncate"}}};
    const MatchPair q = pair_from_json(pair_to_json(p));
    CHECK(q.a == p.a);
    CHECK(q.label == 1);
    CHECK(q.provenance == p.provenance);
  }

  TEST_CASE("codec round trips") {
    const std::vector<double> v{0.0, -1.5, 3.141592653589793, 1e-300, -2e300};
    CHECK(decode_doubles(encode_doubles(v)) == v);
    CHECK(base64_decode(base64_encode("hello")) == "hello");
    CHECK(base64_encode("") == "");
    CHECK_THROWS_AS(base64_decode("@@@"), FormatError);
    Eigen::MatrixXd m(2, 3);
    m << 1, 2, 3, 4, 5, 6;
    CHECK(matrix_from_json(matrix_to_json(m)) == m);
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  }

  TEST_CASE("artifacts with the wrong version are refused") {
    testing::TempDir dir("artifact");
    write_file(dir / "a.json", json{{"format", "x"}, {"version", 7}}.dump());
    CHECK_THROWS_AS(load_artifact(dir / "a.json", "x", 1), FormatError);
    CHECK_THROWS_AS(load_artifact(dir / "a.json", "y", 7), FormatError);
    CHECK(load_artifact(dir / "a.json", "x", 7).at("version") == 7);
    CHECK_THROWS_AS(load_artifact(dir / "missing.json", "x", 7), FormatError);
  }
}
