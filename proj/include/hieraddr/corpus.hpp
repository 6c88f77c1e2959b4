#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "hieraddr/core.hpp"
#include "hieraddr/rng.hpp"

namespace hieraddr {

/// Structural description of one hierarchy level inside the synthetic world.
struct LevelProfile {
  int parent = -1;         // level whose name determines this level's candidates
  int fanout = 1;          // children per parent name
  double presence = 0.0;   // probability the level is written in an address
  bool locating = true;    // false for auxiliary levels (assist, distance, ...)
};

/// Per-level name pools plus an alias table; together with the level
/// profiles this defines a deterministic gazetteer tree.
struct Lexicon {
  std::uint64_t seed = 0;
  LabelRegistry registry = LabelRegistry::default_registry();
  std::vector<LevelProfile> profiles;
  std::vector<std::vector<std::string>> pools;                // by level id
  std::map<std::string, std::vector<std::string>> aliases;    // canonical -> alternates
  std::map<std::string, std::string> canonical_of;            // alternate -> canonical
  std::vector<std::string> typo_chars;                        // replacement alphabet

  json to_json() const;
};

Lexicon gen_lexicon(std::uint64_t seed, const LabelRegistry& registry);

/// One written element; level -1 marks an unlabeled clause (tagged "O").
struct Element {
  int level = -1;
  std::string text;

  bool operator==(const Element&) const = default;
};

struct CanonicalAddress {
  std::vector<std::string> path;  // the full gazetteer path, one name per level
  std::vector<bool> present;      // which levels are written

  std::vector<Element> elements() const;
  std::string text() const;
  /// Finest present locating level, or -1.
  int leaf(const Lexicon& lex) const;
};

TaggedAddress render(const std::vector<Element>& elements, const LabelRegistry& registry);

struct GeneratedAddress {
  CanonicalAddress canonical;
  TaggedAddress tagged;
};

GeneratedAddress gen_address(const Lexicon& lex, Rng& rng);

enum class PerturbKind { Typo, DropLevel, Redundancy, Alias, Truncate, Distractor };
inline constexpr std::size_t kPerturbKinds = 6;

const char* perturb_name(PerturbKind kind);
PerturbKind perturb_from_name(std::string_view name);  // accepts short forms ("drop")

struct Perturbation {
  PerturbKind kind;
  json params = json::object();
};

/// Weights over {typo, drop, redundancy, alias, truncate, distractor}.
struct DifficultyMix {
  std::array<double, kPerturbKinds> weights{0.10, 0.10, 0.08, 0.10, 0.30, 0.32};

  static DifficultyMix parse(std::string_view spec);  // "typo=0.2,drop=0.2,..."; throws ConfigError
  void validate() const;
  /// Expected share of labels {0,1,2} implied by the weights.
  std::array<double, 3> label_distribution() const;
  std::string to_string() const;
};

/// Label rule from a provenance record: any distractor -> 0, else any
/// truncation -> 1, else 2 (label-preserving perturbations only).
int derive_label(const json& provenance);

struct GeneratedPair {
  MatchPair pair;
  TaggedAddress a;  // gold-tagged sides
  TaggedAddress b;
  std::vector<Element> clean;  // unperturbed elements the pair was built from
};

GeneratedPair gen_pair(const Lexicon& lex, const DifficultyMix& mix, Rng& rng);

/// Applies one label-preserving perturbation (typo, drop, redundancy, alias).
/// Returns false when the address offers no site for it.
bool apply_perturbation(const Lexicon& lex, PerturbKind kind, std::vector<Element>& elements, Rng& rng,
                        json& record);

inline constexpr std::size_t kShardSize = 1000;
inline constexpr std::size_t kResolutionTrain = 12000;
inline constexpr std::size_t kResolutionDev = 2500;

std::vector<TaggedAddress> gen_addresses(const Lexicon& lex, std::uint64_t seed, std::string_view stream,
                                         std::size_t n);
std::vector<GeneratedPair> gen_pairs(const Lexicon& lex, const DifficultyMix& mix, std::uint64_t seed,
                                     std::string_view stream, std::size_t n);

/// Train/dev sizes for n addresses at the 12000:2500 ratio.
std::pair<std::size_t, std::size_t> resolution_split(std::size_t n);

struct ResolutionFiles {
  std::filesystem::path train;
  std::filesystem::path dev;
};

/// Writes `<dir>/resolution_train.jsonl` and `<dir>/resolution_dev.jsonl`.
ResolutionFiles gen_resolution_corpus(std::uint64_t seed, std::size_t n, const std::filesystem::path& dir,
                                      const LabelRegistry& registry = LabelRegistry::default_registry());

/// Writes n pairs of the named stream ("train", "test") to `path`.
void gen_matching_corpus(std::uint64_t seed, std::size_t n_pairs, const DifficultyMix& mix,
                         const std::filesystem::path& path, std::string_view stream = "train",
                         const LabelRegistry& registry = LabelRegistry::default_registry());

}  // namespace hieraddr
