#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace hieraddr {

using json = nlohmann::json;

// Error taxonomy. The CLI maps ConfigError to exit 1 and everything else
// derived from Error to exit 2.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct RegistryError : Error {
  using Error::Error;
};
struct InvariantError : Error {
  using Error::Error;
};
struct FormatError : Error {
  using Error::Error;
};

struct Token {
  std::string text;  // one extended grapheme cluster
  std::size_t index = 0;

  bool operator==(const Token&) const = default;
};

/// Splits `text` into extended grapheme clusters. Lossless: concatenating the
/// token texts reproduces the input byte for byte, including malformed UTF-8
/// (each invalid byte becomes its own token).
std::vector<Token> tokenize(std::string_view text);

std::string join_tokens(const std::vector<Token>& tokens);

/// Decodes UTF-8 into code points; invalid bytes decode to U+FFFD.
std::vector<char32_t> decode_utf8(std::string_view text);
std::string encode_utf8(char32_t cp);

struct HierLevel {
  int id = 0;
  std::string name;
  std::string group;
};

/// Ordered hierarchy levels (coarse to fine) and their partition into match
/// branches. Group order is part of every serialized model.
class LabelRegistry {
 public:
  LabelRegistry(std::vector<HierLevel> levels, std::vector<std::string> groups);

  static LabelRegistry default_registry();
  static LabelRegistry from_json(const json& j);
  static LabelRegistry load(const std::filesystem::path& path);
  json to_json() const;

  const std::vector<HierLevel>& levels() const { return levels_; }
  const std::vector<std::string>& groups() const { return groups_; }
  std::size_t size() const { return levels_.size(); }

  const HierLevel& level(int id) const;
  int level_id(std::string_view name) const;  // throws RegistryError
  bool has_level(std::string_view name) const;
  int group_index(std::string_view group) const;  // throws RegistryError
  int group_of(int level_id) const { return level_group_[static_cast<std::size_t>(level_id)]; }
  std::vector<int> levels_in_group(int group_index) const;

  bool operator==(const LabelRegistry& other) const;

 private:
  std::vector<HierLevel> levels_;
  std::vector<std::string> groups_;
  std::vector<int> level_group_;
  std::map<std::string, int, std::less<>> by_name_;
};

const char* default_registry_json();

struct ElementSpan {
  std::size_t start = 0;  // token index, inclusive
  std::size_t end = 0;    // token index, exclusive
  int level = 0;

  bool operator==(const ElementSpan&) const = default;
};

/// Throws InvariantError unless spans are in range, non-empty, sorted and
/// non-overlapping over `token_count` tokens.
void validate_spans(const std::vector<ElementSpan>& spans, std::size_t token_count,
                    const LabelRegistry& registry);

struct TaggedAddress {
  std::string text;
  std::vector<Token> tokens;
  std::vector<ElementSpan> spans;

  /// Tokenizes `text` and validates `spans` against the tokens.
  static TaggedAddress make(std::string text, std::vector<ElementSpan> spans,
                            const LabelRegistry& registry);

  std::string span_text(const ElementSpan& span) const;

  bool operator==(const TaggedAddress& other) const {
    return text == other.text && spans == other.spans;
  }
};

json tagged_to_json(const TaggedAddress& ta, const LabelRegistry& registry);
TaggedAddress tagged_from_json(const json& j, const LabelRegistry& registry);

std::vector<TaggedAddress> read_tagged_jsonl(const std::filesystem::path& path,
                                             const LabelRegistry& registry);
void write_tagged_jsonl(const std::filesystem::path& path, const std::vector<TaggedAddress>& corpus,
                        const LabelRegistry& registry);

struct MatchPair {
  std::string a;
  std::string b;
  int label = 0;  // 0 no match, 1 partial (subordinate), 2 exact
  json provenance = json::object();
};

void validate_pair(const MatchPair& pair);
json pair_to_json(const MatchPair& pair);
MatchPair pair_from_json(const json& j);
std::vector<MatchPair> read_pairs_jsonl(const std::filesystem::path& path);
void write_pairs_jsonl(const std::filesystem::path& path, const std::vector<MatchPair>& pairs);

// BIO tag set derived from a registry: id 0 is "O", level l maps to
// B = 1 + 2l and I = 2 + 2l.
class BioTagSet {
 public:
  explicit BioTagSet(const LabelRegistry& registry);

  std::size_t size() const { return names_.size(); }
  const std::string& name(int tag) const { return names_[static_cast<std::size_t>(tag)]; }
  int id(std::string_view tag) const;  // throws RegistryError on unknown level

  static int begin_tag(int level) { return 1 + 2 * level; }
  static int inside_tag(int level) { return 2 + 2 * level; }
  static bool is_inside(int tag) { return tag > 0 && tag % 2 == 0; }
  static bool is_begin(int tag) { return tag > 0 && tag % 2 == 1; }
  static int level_of(int tag) { return (tag - 1) / 2; }

  /// BIO legality: I-x may only follow B-x or I-x.
  static bool legal_transition(int from, int to) {
    return !is_inside(to) || (from > 0 && level_of(from) == level_of(to));
  }
  static bool legal_start(int tag) { return !is_inside(tag); }

 private:
  std::vector<std::string> names_;
};

std::vector<std::string> spans_to_bio(const TaggedAddress& ta, const LabelRegistry& registry);

struct BioDecodeResult {
  std::vector<ElementSpan> spans;
  std::size_t repairs = 0;
};

/// Inverse of spans_to_bio. An I-x that does not continue an x element is
/// read as B-x and counted as a repair.
BioDecodeResult bio_to_spans(const std::vector<std::string>& tags, const LabelRegistry& registry);
BioDecodeResult bio_ids_to_spans(const std::vector<int>& tags);

}  // namespace hieraddr
