#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hieraddr/cli.hpp"
#include "hieraddr/codec.hpp"
#include "hieraddr/core.hpp"
#include "hieraddr/resolver.hpp"
#include "hieraddr/rng.hpp"

namespace testing {

using namespace hieraddr;

// Grapheme clusters of several shapes: CJK, ASCII, full-width digits,
// combining sequences, flags, ZWJ emoji, Hangul syllables from jamo.
inline const std::vector<std::string>& cluster_pool() {
  static const std::vector<std::string> pool = {
      "天", "津", "市", "路", "号", "楼", "室", "A", "b", "1", "9", "-", " ", "(", ")",
      "\xEF\xBC\x91",                    // full-width 1
      "e\xCC\x81",                       // e + combining acute
      "\xF0\x9F\x87\xA8\xF0\x9F\x87\xB3",  // regional indicator pair
      "\xF0\x9F\x91\xA9\xE2\x80\x8D\xF0\x9F\x92\xBB",  // woman + ZWJ + laptop
      "\xE1\x84\x80\xE1\x85\xA1\xE1\x86\xA8",          // Hangul L V T
      "\r\n",
  };
  return pool;
}

/// A random valid TaggedAddress: 1..30 clusters with random non-overlapping
/// spans over random levels.
inline TaggedAddress random_tagged(Rng& rng, const LabelRegistry& registry) {
  const auto& pool = cluster_pool();
  const std::size_t n = 1 + rng.index(30);
  std::vector<std::string> clusters;
  std::string text;
  for (std::size_t i = 0; i < n; ++i) {
    // Avoid two adjacent regional-indicator pairs or jamo runs merging.
    std::string c = pool[rng.index(pool.size())];
    if (!clusters.empty() && (c == pool[17] || c == pool[19]) && clusters.back() == c) c = "x";
    clusters.push_back(c);
    text += c;
  }
  std::vector<ElementSpan> spans;
  std::size_t pos = 0;
  while (pos < n) {
    if (rng.bernoulli(0.3)) {
      ++pos;
      continue;
    }
    const std::size_t len = 1 + rng.index(std::min<std::size_t>(6, n - pos));
    spans.push_back({pos, pos + len, static_cast<int>(rng.index(registry.size()))});
    pos += len;
  }
  return TaggedAddress::make(text, spans, registry);
}

/// Best legal path score by enumerating all K^T paths.
inline double brute_force_best(const Eigen::MatrixXd& em, const Eigen::MatrixXd& tr, const Eigen::VectorXd& st,
                               const TagConstraints& c) {
  const auto T = static_cast<std::size_t>(em.rows());
  std::vector<int> path(T, 0);
  double best = -std::numeric_limits<double>::infinity();
  for (;;) {
    best = std::max(best, path_score(em, tr, st, c, path));
    std::size_t t = 0;
    while (t < T && ++path[t] == static_cast<int>(c.size)) path[t++] = 0;
    if (t == T) break;
  }
  return best;
}

/// A random Viterbi instance over the given global BIO tag ids.
struct ViterbiCase {
  std::vector<int> tags;
  TagConstraints constraints;
  Eigen::MatrixXd emissions, transitions;
  Eigen::VectorXd start;
};

/// O plus the B/I tags of the first `levels` levels.
inline std::vector<int> bio_tags(int levels) {
  std::vector<int> tags{0};
  for (int l = 0; l < levels; ++l) {
    tags.push_back(BioTagSet::begin_tag(l));
    tags.push_back(BioTagSet::inside_tag(l));
  }
  return tags;
}

inline ViterbiCase random_viterbi_case(Rng& rng, std::size_t length, std::vector<int> tags) {
  ViterbiCase v;
  v.tags = std::move(tags);
  v.constraints = TagConstraints::bio(v.tags);
  const auto K = static_cast<Eigen::Index>(v.tags.size());
  auto draw = [&](Eigen::Index r, Eigen::Index c) {
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.normal() * 2.0;
    return m;
  };
  v.emissions = draw(static_cast<Eigen::Index>(length), K);
  v.transitions = draw(K, K);
  v.start = draw(K, 1).col(0);
  return v;
}

/// Worst relative error between analytic gradients and central differences,
/// probing about `probes` entries of every tensor. Entries where both are
/// tiny are compared against a floor of 1e-6.
inline double gradient_check(const std::vector<std::pair<std::string, Eigen::MatrixXd*>>& params,
                             const std::vector<std::pair<std::string, const Eigen::MatrixXd*>>& grads,
                             const std::function<double()>& loss, int probes = 20, double h = 1e-5,
                             std::string* worst_tensor = nullptr) {
  double worst = 0.0;
  for (std::size_t t = 0; t < params.size(); ++t) {
    Eigen::MatrixXd& p = *params[t].second;
    const Eigen::Index stride = std::max<Eigen::Index>(1, p.size() / probes);
    for (Eigen::Index i = 0; i < p.size(); i += stride) {
      double& w = p.data()[i];
      const double orig = w;
      w = orig + h;
      const double up = loss();
      w = orig - h;
      const double down = loss();
      w = orig;
      const double numeric = (up - down) / (2 * h);
      const double analytic = grads[t].second->data()[i];
      const double rel = std::abs(numeric - analytic) / std::max(1e-6, std::abs(numeric) + std::abs(analytic));
      if (rel > worst) {
        worst = rel;
        if (worst_tensor) *worst_tensor = params[t].first;
      }
    }
  }
  return worst;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("hieraddr-" + tag + "-" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

struct CliResult {
  int code = 0;
  std::string out, err;
};

inline CliResult cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

/// Settings small enough for a pipeline that finishes in seconds.
inline json smoke_config() {
  return json::parse(R"({
    "seed": 7,
    "corpus": {"resolution_addresses": 600, "train_pairs": 300, "test_pairs": 100},
    "ner": {"epochs": 3},
    "encoder": {"dim": 16, "heads": 2, "ff_dim": 16, "layers": 1},
    "pretrain": {"epochs": 1},
    "matcher": {"hidden": 4, "epochs": 1},
    "ablation": {"seeds": "1", "ner_epochs": 2}
  })");
}

/// Runs every subcommand once inside `dir` and returns the SHA-256 of every
/// file produced, keyed by relative path. Throws when a step fails.
inline std::map<std::string, std::string> run_smoke_pipeline(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const std::string cfg = (dir / "config.json").string(), d = dir.string();
  write_file(cfg, smoke_config().dump(2));
  const std::vector<std::vector<std::string>> steps = {
      {"gen-corpus", "--out", d + "/corpus"},
      {"train-ner", "--train", d + "/corpus/resolution_train.jsonl", "--dev", d + "/corpus/resolution_dev.jsonl",
       "--out", d + "/models/ner.json"},
      {"pretrain", "--pairs", d + "/corpus/pairs_train.jsonl", "--ner-model", d + "/models/ner.json", "--out",
       d + "/models/encoder.json", "--mode", "wwm"},
      {"train-match", "--pairs", d + "/corpus/pairs_train.jsonl", "--ner-model", d + "/models/ner.json", "--encoder",
       d + "/models/encoder.json", "--out", d + "/models/matcher.json"},
      {"eval", "--model", d + "/models/matcher.json", "--pairs", d + "/corpus/pairs_test.jsonl", "--out",
       d + "/reports/eval.json"},
      {"ablate", "--out", d + "/reports/ablation.json", "--corpus-dir", d + "/corpus"},
  };
  for (auto args : steps) {
    args.insert(args.begin(), {"--config", cfg});
    const auto r = cli(args);
    if (r.code != 0) throw std::runtime_error(args[2] + " failed: " + r.err);
  }
  std::map<std::string, std::string> hashes;
  for (const auto& entry : fs::recursive_directory_iterator(dir))
    if (entry.is_regular_file()) hashes[fs::relative(entry.path(), dir).string()] = sha256_file(entry.path());
  return hashes;
}

}  // namespace testing
