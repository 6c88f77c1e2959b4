#include <doctest.h>

#include <cstdlib>

#include "hieraddr/core.hpp"
#include "support.hpp"

using namespace hieraddr;
using testing::cli;

TEST_SUITE("cli") {
  TEST_CASE("usage errors exit with 1") {
    CHECK(cli({"frobnicate"}).code == 1);
    CHECK(cli({}).code == 1);
    CHECK(cli({"match", "--a", "x"}).code == 1);
    CHECK(cli({"--help"}).code == 0);
    const auto r = cli({"gen-corpus", "--out", "/tmp/never", "--mix", "typo=2"});
    CHECK(r.code == 1);
    CHECK(r.err.find("error") != std::string::npos);
  }

  TEST_CASE("missing model files exit with 2 and name the path") {
    const auto r = cli({"match", "--model", "/nonexistent/m.json", "--a", "x", "--b", "y"});
    CHECK(r.code == 2);
    CHECK(r.err.find("/nonexistent/m.json") != std::string::npos);
    CHECK(cli({"resolve", "--model", "/nonexistent/ner.json", "--text", "x"}).code == 2);
  }

  TEST_CASE("a missing config file is a usage error") {
    CHECK(cli({"--config", "/nonexistent/c.json", "gen-corpus", "--out", "/tmp/never"}).code == 1);
  }

  TEST_CASE("smoke pipeline and match output contract") {
    testing::TempDir dir("cli");
    const auto files = testing::run_smoke_pipeline(dir.path());
    for (const auto* name : {"corpus/pairs_train.jsonl", "models/ner.json", "models/encoder.json",
                             "models/matcher.json", "reports/eval.json", "reports/ablation.json",
                             "reports/ablation.txt"})
      CHECK(files.count(name) == 1);
    CHECK(read_pairs_jsonl(dir / "corpus/pairs_train.jsonl").size() == 300);

    const auto m = cli({"match", "--model", (dir / "models/matcher.json").string(), "--a", "天津市和平区南京路100号",
                        "--b", "天津市南京路100号"});
    REQUIRE(m.code == 0);
    const auto j = json::parse(m.out);
    CHECK(j.at("label").get<int>() >= 0);
    CHECK(j.at("label").get<int>() <= 2);
    CHECK(j.at("logits").size() == 3);
    const auto again = cli({"match", "--model", (dir / "models/matcher.json").string(), "--a",
                            "天津市和平区南京路100号", "--b", "天津市南京路100号"});
    CHECK(again.out == m.out);

    const auto r = cli({"resolve", "--model", (dir / "models/ner.json").string(), "--text", "天津市", "--text", ""});
    REQUIRE(r.code == 0);
    std::istringstream lines(r.out);
    std::string line;
    int count = 0;
    while (std::getline(lines, line)) count += json::parse(line).contains("spans");
    CHECK(count == 2);

    const auto report = json::parse(read_file(dir / "reports/eval.json"));
    CHECK(report.at("metrics").at("averaging") == "macro");
    std::size_t total = 0;
    for (const auto& row : report.at("confusion"))
      for (const auto& v : row) total += v.get<std::size_t>();
    CHECK(total == 100);
  }

  TEST_CASE("command-line values override the config, which falls back to the environment") {
    testing::TempDir dir("cli-config");
    json cfg = testing::smoke_config();
    cfg["corpus"]["train_pairs"] = 40;
    cfg["corpus"]["test_pairs"] = 10;
    cfg["corpus"]["resolution_addresses"] = 50;
    write_file(dir / "c.json", cfg.dump());
    ::setenv("HIERADDR_CONFIG", (dir / "c.json").c_str(), 1);
    const auto r = cli({"gen-corpus", "--out", (dir / "a").string(), "--test-pairs", "20"});
    ::unsetenv("HIERADDR_CONFIG");
    REQUIRE(r.code == 0);
    CHECK(read_pairs_jsonl(dir / "a/pairs_train.jsonl").size() == 40);
    CHECK(read_pairs_jsonl(dir / "a/pairs_test.jsonl").size() == 20);
  }
}
