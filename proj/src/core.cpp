#include "hieraddr/core.hpp"

#include <algorithm>
#include <fstream>
#include <set>

namespace hieraddr {

namespace {

struct Decoded {
  char32_t cp;
  std::size_t len;
  bool valid;
};

Decoded decode_one(std::string_view s, std::size_t i) {
  const auto b0 = static_cast<unsigned char>(s[i]);
  if (b0 < 0x80) return {b0, 1, true};
  std::size_t len = 0;
  char32_t cp = 0;
  if ((b0 & 0xE0) == 0xC0) {
    len = 2;
    cp = b0 & 0x1F;
  } else if ((b0 & 0xF0) == 0xE0) {
    len = 3;
    cp = b0 & 0x0F;
  } else if ((b0 & 0xF8) == 0xF0) {
    len = 4;
    cp = b0 & 0x07;
  } else {
    return {0xFFFD, 1, false};
  }
  if (i + len > s.size()) return {0xFFFD, 1, false};
  for (std::size_t k = 1; k < len; ++k) {
    const auto b = static_cast<unsigned char>(s[i + k]);
    if ((b & 0xC0) != 0x80) return {0xFFFD, 1, false};
    cp = (cp << 6) | (b & 0x3F);
  }
  const bool overlong = (len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && cp < 0x10000);
  if (overlong || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return {0xFFFD, 1, false};
  return {cp, len, true};
}

bool in(char32_t cp, char32_t lo, char32_t hi) { return cp >= lo && cp <= hi; }

// Compact subset of the Grapheme_Cluster_Break=Extend/SpacingMark property.
bool is_extend(char32_t c) {
  return in(c, 0x0300, 0x036F) || in(c, 0x0483, 0x0489) || in(c, 0x0591, 0x05BD) ||
         in(c, 0x0610, 0x061A) || in(c, 0x064B, 0x065F) || c == 0x0670 || in(c, 0x06D6, 0x06DC) ||
         in(c, 0x0900, 0x0903) || in(c, 0x093A, 0x094F) || in(c, 0x0951, 0x0957) ||
         in(c, 0x0962, 0x0963) || c == 0x0E31 || in(c, 0x0E34, 0x0E3A) || in(c, 0x0E47, 0x0E4E) ||
         in(c, 0x1AB0, 0x1AFF) || in(c, 0x1DC0, 0x1DFF) || c == 0x200C || in(c, 0x20D0, 0x20FF) ||
         in(c, 0x302A, 0x302F) || in(c, 0x3099, 0x309A) || in(c, 0xFE00, 0xFE0F) ||
         in(c, 0xFE20, 0xFE2F) || in(c, 0xFF9E, 0xFF9F) || in(c, 0x1F3FB, 0x1F3FF) ||
         in(c, 0xE0020, 0xE007F) || in(c, 0xE0100, 0xE01EF);
}

bool is_pictographic(char32_t c) {
  return c == 0x00A9 || c == 0x00AE || c == 0x203C || c == 0x2049 || c == 0x2122 || c == 0x2139 ||
         in(c, 0x2194, 0x21AA) || in(c, 0x231A, 0x23FF) || c == 0x24C2 || in(c, 0x25AA, 0x27BF) ||
         in(c, 0x2934, 0x2935) || in(c, 0x2B05, 0x2B55) || c == 0x3030 || c == 0x303D ||
         c == 0x3297 || c == 0x3299 || in(c, 0x1F000, 0x1F1E5) || in(c, 0x1F200, 0x1FAFF);
}

bool is_regional(char32_t c) { return in(c, 0x1F1E6, 0x1F1FF); }

enum class Hangul { None, L, V, T, LV, LVT };

Hangul hangul_type(char32_t c) {
  if (in(c, 0x1100, 0x115F) || in(c, 0xA960, 0xA97C)) return Hangul::L;
  if (in(c, 0x1160, 0x11A7) || in(c, 0xD7B0, 0xD7C6)) return Hangul::V;
  if (in(c, 0x11A8, 0x11FF) || in(c, 0xD7CB, 0xD7FB)) return Hangul::T;
  if (in(c, 0xAC00, 0xD7A3)) return (c - 0xAC00) % 28 == 0 ? Hangul::LV : Hangul::LVT;
  return Hangul::None;
}

constexpr char32_t kZwj = 0x200D;

// Returns true when a boundary is allowed between `prev` and `cur`.
bool is_boundary(char32_t prev, bool prev_valid, char32_t cur, bool cur_valid, bool zwj_after_pictographic,
                 std::size_t regional_run) {
  if (!prev_valid || !cur_valid) return true;
  if (prev == '\r' && cur == '\n') return false;
  if (prev == '\r' || prev == '\n' || cur == '\r' || cur == '\n') return true;
  const Hangul hp = hangul_type(prev);
  const Hangul hc = hangul_type(cur);
  if (hp == Hangul::L && (hc == Hangul::L || hc == Hangul::V || hc == Hangul::LV || hc == Hangul::LVT))
    return false;
  if ((hp == Hangul::LV || hp == Hangul::V) && (hc == Hangul::V || hc == Hangul::T)) return false;
  if ((hp == Hangul::LVT || hp == Hangul::T) && hc == Hangul::T) return false;
  if (is_extend(cur) || cur == kZwj) return false;
  if (prev == kZwj && zwj_after_pictographic && is_pictographic(cur)) return false;
  if (is_regional(prev) && is_regional(cur) && regional_run % 2 == 1) return false;
  return true;
}

const char* kDefaultRegistry = R"({
  "groups": ["ADMIN", "ROAD", "POI", "DETAIL"],
  "levels": [
    {"id": 0,  "name": "prov",          "group": "ADMIN"},
    {"id": 1,  "name": "city",          "group": "ADMIN"},
    {"id": 2,  "name": "district",      "group": "ADMIN"},
    {"id": 3,  "name": "devzone",       "group": "ADMIN"},
    {"id": 4,  "name": "town",          "group": "ADMIN"},
    {"id": 5,  "name": "community",     "group": "ADMIN"},
    {"id": 6,  "name": "village_group", "group": "ADMIN"},
    {"id": 7,  "name": "road",          "group": "ROAD"},
    {"id": 8,  "name": "roadno",        "group": "ROAD"},
    {"id": 9,  "name": "intersection",  "group": "ROAD"},
    {"id": 10, "name": "distance",      "group": "ROAD"},
    {"id": 11, "name": "poi",           "group": "POI"},
    {"id": 12, "name": "subpoi",        "group": "POI"},
    {"id": 13, "name": "assist",        "group": "POI"},
    {"id": 14, "name": "houseno",       "group": "DETAIL"},
    {"id": 15, "name": "cellno",        "group": "DETAIL"},
    {"id": 16, "name": "floorno",       "group": "DETAIL"},
    {"id": 17, "name": "roomno",        "group": "DETAIL"},
    {"id": 18, "name": "detail",        "group": "DETAIL"},
    {"id": 19, "name": "redundant",     "group": "DETAIL"},
    {"id": 20, "name": "others",        "group": "DETAIL"}
  ]
})";

}  // namespace

std::vector<char32_t> decode_utf8(std::string_view text) {
  std::vector<char32_t> out;
  for (std::size_t i = 0; i < text.size();) {
    const Decoded d = decode_one(text, i);
    out.push_back(d.cp);
    i += d.len;
  }
  return out;
}

std::string encode_utf8(char32_t cp) {
  std::string out;
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else if (cp < 0x10000) {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xF0 | (cp >> 18));
    out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
  return out;
}

std::vector<Token> tokenize(std::string_view text) {
  std::vector<Token> tokens;
  std::size_t cluster_start = 0;
  char32_t prev = 0;
  bool prev_valid = false;
  bool pictographic_seq = false;  // inside Extended_Pictographic Extend* ZWJ?
  std::size_t regional_run = 0;
  for (std::size_t i = 0; i < text.size();) {
    const Decoded d = decode_one(text, i);
    if (i > 0 && is_boundary(prev, prev_valid, d.cp, d.valid, pictographic_seq, regional_run)) {
      tokens.push_back({std::string(text.substr(cluster_start, i - cluster_start)), tokens.size()});
      cluster_start = i;
    }
    if (d.valid && is_pictographic(d.cp)) {
      pictographic_seq = true;
    } else if (!(d.valid && (is_extend(d.cp) || d.cp == kZwj))) {
      pictographic_seq = false;
    }
    regional_run = (d.valid && is_regional(d.cp)) ? regional_run + 1 : 0;
    prev = d.cp;
    prev_valid = d.valid;
    i += d.len;
  }
  if (cluster_start < text.size())
    tokens.push_back({std::string(text.substr(cluster_start)), tokens.size()});
  return tokens;
}

std::string join_tokens(const std::vector<Token>& tokens) {
  std::string out;
  for (const auto& t : tokens) out += t.text;
  return out;
}

// --- LabelRegistry ----------------------------------------------------------

LabelRegistry::LabelRegistry(std::vector<HierLevel> levels, std::vector<std::string> groups)
    : levels_(std::move(levels)), groups_(std::move(groups)) {
  if (levels_.empty()) throw RegistryError("registry has no levels");
  if (groups_.empty()) throw RegistryError("registry has no groups");
  std::sort(levels_.begin(), levels_.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  std::set<std::string> group_names;
  for (const auto& g : groups_)
    if (!group_names.insert(g).second) throw RegistryError("duplicate group '" + g + "'");
  std::vector<int> group_sizes(groups_.size(), 0);
  for (std::size_t i = 0; i < levels_.size(); ++i) {
    const auto& lv = levels_[i];
    if (lv.id != static_cast<int>(i)) throw RegistryError("level ids must be dense from 0");
    if (lv.name.empty()) throw RegistryError("level " + std::to_string(lv.id) + " has no name");
    if (!by_name_.emplace(lv.name, lv.id).second) throw RegistryError("duplicate level '" + lv.name + "'");
    const auto it = std::find(groups_.begin(), groups_.end(), lv.group);
    if (it == groups_.end()) throw RegistryError("level '" + lv.name + "' has unknown group '" + lv.group + "'");
    const int g = static_cast<int>(it - groups_.begin());
    level_group_.push_back(g);
    ++group_sizes[static_cast<std::size_t>(g)];
  }
  for (std::size_t g = 0; g < groups_.size(); ++g)
    if (group_sizes[g] == 0) throw RegistryError("group '" + groups_[g] + "' has no levels");
}

const char* default_registry_json() { return kDefaultRegistry; }

LabelRegistry LabelRegistry::default_registry() { return from_json(json::parse(kDefaultRegistry)); }

LabelRegistry LabelRegistry::from_json(const json& j) {
  try {
    std::vector<HierLevel> levels;
    for (const auto& l : j.at("levels"))
      levels.push_back({l.at("id").get<int>(), l.at("name").get<std::string>(), l.at("group").get<std::string>()});
    return LabelRegistry(std::move(levels), j.at("groups").get<std::vector<std::string>>());
  } catch (const json::exception& e) {
    throw RegistryError(std::string("malformed registry: ") + e.what());
  }
}

LabelRegistry LabelRegistry::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw RegistryError("cannot open registry file " + path.string());
  try {
    return from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw RegistryError("registry file " + path.string() + ": " + e.what());
  }
}

json LabelRegistry::to_json() const {
  json levels = json::array();
  for (const auto& l : levels_) levels.push_back({{"id", l.id}, {"name", l.name}, {"group", l.group}});
  return {{"groups", groups_}, {"levels", levels}};
}

const HierLevel& LabelRegistry::level(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= levels_.size())
    throw RegistryError("level id " + std::to_string(id) + " out of range");
  return levels_[static_cast<std::size_t>(id)];
}

int LabelRegistry::level_id(std::string_view name) const {
  const auto it = by_name_.find(name);
  if (it == by_name_.end()) throw RegistryError("unknown level '" + std::string(name) + "'");
  return it->second;
}

bool LabelRegistry::has_level(std::string_view name) const { return by_name_.find(name) != by_name_.end(); }

int LabelRegistry::group_index(std::string_view group) const {
  const auto it = std::find(groups_.begin(), groups_.end(), group);
  if (it == groups_.end()) throw RegistryError("unknown group '" + std::string(group) + "'");
  return static_cast<int>(it - groups_.begin());
}

std::vector<int> LabelRegistry::levels_in_group(int group_index) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < levels_.size(); ++i)
    if (level_group_[i] == group_index) out.push_back(static_cast<int>(i));
  return out;
}

bool LabelRegistry::operator==(const LabelRegistry& other) const { return to_json() == other.to_json(); }

// --- spans and tagged addresses ------------------------------------------

void validate_spans(const std::vector<ElementSpan>& spans, std::size_t token_count, const LabelRegistry& registry) {
  std::size_t cursor = 0;
  for (const auto& s : spans) {
    if (s.start >= s.end || s.end > token_count)
      throw InvariantError("span [" + std::to_string(s.start) + "," + std::to_string(s.end) +
                           ") out of range for " + std::to_string(token_count) + " tokens");
    if (s.start < cursor) throw InvariantError("spans overlap or are not sorted by start");
    if (s.level < 0 || static_cast<std::size_t>(s.level) >= registry.size())
      throw InvariantError("span level " + std::to_string(s.level) + " not in registry");
    cursor = s.end;
  }
}

TaggedAddress TaggedAddress::make(std::string text, std::vector<ElementSpan> spans, const LabelRegistry& registry) {
  TaggedAddress ta;
  ta.tokens = tokenize(text);
  ta.text = std::move(text);
  validate_spans(spans, ta.tokens.size(), registry);
  ta.spans = std::move(spans);
  return ta;
}

std::string TaggedAddress::span_text(const ElementSpan& span) const {
  std::string out;
  for (std::size_t i = span.start; i < span.end; ++i) out += tokens[i].text;
  return out;
}

json tagged_to_json(const TaggedAddress& ta, const LabelRegistry& registry) {
  json spans = json::array();
  for (const auto& s : ta.spans)
    spans.push_back({{"start", s.start}, {"end", s.end}, {"level", registry.level(s.level).name}});
  return {{"text", ta.text}, {"spans", spans}};
}

TaggedAddress tagged_from_json(const json& j, const LabelRegistry& registry) {
  std::vector<ElementSpan> spans;
  try {
    for (const auto& s : j.at("spans"))
      spans.push_back({s.at("start").get<std::size_t>(), s.at("end").get<std::size_t>(),
                       registry.level_id(s.at("level").get<std::string>())});
    return TaggedAddress::make(j.at("text").get<std::string>(), std::move(spans), registry);
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed tagged address: ") + e.what());
  }
}

namespace {

template <typename F>
void for_each_line(const std::filesystem::path& path, F&& f) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      f(json::parse(line));
    } catch (const json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const Error& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  return out;
}

}  // namespace

std::vector<TaggedAddress> read_tagged_jsonl(const std::filesystem::path& path, const LabelRegistry& registry) {
  std::vector<TaggedAddress> out;
  for_each_line(path, [&](const json& j) { out.push_back(tagged_from_json(j, registry)); });
  return out;
}

void write_tagged_jsonl(const std::filesystem::path& path, const std::vector<TaggedAddress>& corpus,
                        const LabelRegistry& registry) {
  auto out = open_out(path);
  for (const auto& ta : corpus) out << tagged_to_json(ta, registry).dump() << '\n';
  if (!out) throw FormatError("write failed: " + path.string());
}

void validate_pair(const MatchPair& pair) {
  if (pair.label < 0 || pair.label > 2) throw InvariantError("pair label must be 0, 1 or 2");
  if (pair.a.empty() || pair.b.empty()) throw InvariantError("pair addresses must be non-empty");
}

json pair_to_json(const MatchPair& pair) {
  return {{"a", pair.a}, {"b", pair.b}, {"label", pair.label}, {"provenance", pair.provenance}};
}

MatchPair pair_from_json(const json& j) {
  MatchPair p;
  try {
    p.a = j.at("a").get<std::string>();
    p.b = j.at("b").get<std::string>();
    p.label = j.at("label").get<int>();
    if (j.contains("provenance")) p.provenance = j.at("provenance");
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed pair: ") + e.what());
  }
  validate_pair(p);
  return p;
}

std::vector<MatchPair> read_pairs_jsonl(const std::filesystem::path& path) {
  std::vector<MatchPair> out;
  for_each_line(path, [&](const json& j) { out.push_back(pair_from_json(j)); });
  return out;
}

void write_pairs_jsonl(const std::filesystem::path& path, const std::vector<MatchPair>& pairs) {
  auto out = open_out(path);
  for (const auto& p : pairs) out << pair_to_json(p).dump() << '\n';
  if (!out) throw FormatError("write failed: " + path.string());
}

// --- BIO ------------------------------------------------------------------

BioTagSet::BioTagSet(const LabelRegistry& registry) {
  names_.push_back("O");
  for (const auto& l : registry.levels()) {
    names_.push_back("B-" + l.name);
    names_.push_back("I-" + l.name);
  }
}

int BioTagSet::id(std::string_view tag) const {
  if (tag == "O") return 0;
  if (tag.size() > 2 && tag[1] == '-' && (tag[0] == 'B' || tag[0] == 'I')) {
    for (std::size_t i = 1; i < names_.size(); ++i)
      if (names_[i] == tag) return static_cast<int>(i);
    throw RegistryError("unknown level in tag '" + std::string(tag) + "'");
  }
  throw RegistryError("malformed tag '" + std::string(tag) + "'");
}

std::vector<std::string> spans_to_bio(const TaggedAddress& ta, const LabelRegistry& registry) {
  validate_spans(ta.spans, ta.tokens.size(), registry);
  std::vector<std::string> tags(ta.tokens.size(), "O");
  for (const auto& s : ta.spans) {
    const auto& name = registry.level(s.level).name;
    tags[s.start] = "B-" + name;
    for (std::size_t i = s.start + 1; i < s.end; ++i) tags[i] = "I-" + name;
  }
  return tags;
}

BioDecodeResult bio_ids_to_spans(const std::vector<int>& tags) {
  BioDecodeResult r;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    const int t = tags[i];
    if (t == 0) continue;
    const int level = BioTagSet::level_of(t);
    const bool continues = BioTagSet::is_inside(t) && !r.spans.empty() && r.spans.back().end == i &&
                           r.spans.back().level == level;
    if (continues) {
      r.spans.back().end = i + 1;
    } else {
      if (BioTagSet::is_inside(t)) ++r.repairs;
      r.spans.push_back({i, i + 1, level});
    }
  }
  return r;
}

BioDecodeResult bio_to_spans(const std::vector<std::string>& tags, const LabelRegistry& registry) {
  const BioTagSet tagset(registry);
  std::vector<int> ids;
  ids.reserve(tags.size());
  for (const auto& t : tags) ids.push_back(tagset.id(t));
  return bio_ids_to_spans(ids);
}

}  // namespace hieraddr
