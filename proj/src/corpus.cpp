#include "hieraddr/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace hieraddr {

namespace {

// Stem alphabet for pseudo-word names. Characters used as level suffixes are
// kept out so suffixes stay the main cue for the level.
constexpr std::string_view kStemChars =
    "东西南北华安平和阳明光金银山水江河湖海林森石岭泉溪桥湾港城庄坊堂寺塔亭台阁宫关坪坝塘沟洲岛沙滨浦津"
    "泰康宁福寿永长兴隆盛昌荣丰富祥瑞吉庆嘉佳美丽清秀文武德仁义礼智信忠孝恒远高上前后云天星月日辰龙凤鹤"
    "鹿松柏竹梅兰菊桃李杏柳杨槐桂荷莲翠碧青红黄白紫绿蓝朝晖春夏秋冬怡静雅逸锦绣鸿鹏腾飞翔宏伟卓越振通达"
    "利顺益众联合新古今世纪万千百九八七六五四三二元亨旺财源丹霞彩虹霖雨露雪霜";

constexpr std::string_view kSurnames = "王李张刘陈杨黄赵吴周徐孙马朱胡郭何林罗高";

std::vector<std::string> split_chars(std::string_view s) {
  std::vector<std::string> out;
  for (auto& t : tokenize(s)) out.push_back(std::move(t.text));
  return out;
}

const std::vector<std::string>& stem_chars() {
  static const std::vector<std::string> chars = split_chars(kStemChars);
  return chars;
}

enum class NameKind { Stem, Number, Fixed, Distance, Person, Latin };

struct AliasRule {
  double probability = 0.0;
  bool strip_suffix = false;                       // alias = stem
  std::map<std::string, std::string> swap_suffix;  // alias = stem + swapped suffix
  bool both_for_multi = false;                     // draw both forms together
};

struct Scheme {
  const char* name;
  const char* parent;
  int pool;
  int fanout;
  double presence;
  bool locating;
  NameKind kind;
  std::vector<std::string> suffixes;
  int stem_min = 2;
  int stem_max = 2;
  int num_lo = 1;
  int num_hi = 1;
  AliasRule alias;
};

const std::vector<Scheme>& default_schemes() {
  static const std::vector<Scheme> schemes = {
      {"prov", "", 34, 1, 0.55, true, NameKind::Stem, {"省"}, 2, 2, 0, 0, {1.0, true, {}, false}},
      {"city", "prov", 120, 4, 0.75, true, NameKind::Stem, {"市"}, 2, 2, 0, 0, {1.0, true, {}, false}},
      {"district", "city", 300, 5, 0.80, true, NameKind::Stem, {"区", "县"}, 2, 2, 0, 0, {1.0, true, {}, false}},
      {"devzone", "district", 60, 2, 0.10, true, NameKind::Stem, {"开发区", "工业园", "高新区"}, 2, 2, 0, 0,
       {0.5, false, {{"开发区", "经开区"}, {"工业园", "工业区"}, {"高新区", "高新园"}}, false}},
      {"town", "district", 300, 4, 0.30, true, NameKind::Stem, {"镇", "街道", "乡"}, 2, 2, 0, 0, {}},
      {"community", "town", 400, 4, 0.30, true, NameKind::Stem, {"社区", "村"}, 2, 2, 0, 0, {}},
      {"village_group", "community", 30, 6, 0.30, true, NameKind::Number, {"组", "社"}, 0, 0, 1, 30, {}},
      {"road", "district", 600, 8, 0.75, true, NameKind::Stem, {"路", "街", "大道", "巷"}, 2, 3, 0, 0,
       {0.3, false, {{"路", "公路"}, {"街", "大街"}}, false}},
      {"roadno", "road", 300, 10, 0.60, true, NameKind::Number, {"号"}, 0, 0, 1, 400, {}},
      {"intersection", "road", 80, 2, 0.12, false, NameKind::Stem, {"路口"}, 2, 2, 0, 0, {}},
      {"distance", "", 60, 1, 0.10, false, NameKind::Distance, {"米"}, 0, 0, 1, 50, {}},
      {"poi", "road", 1200, 6, 0.75, true, NameKind::Stem,
       {"大厦", "广场", "小区", "花园", "公司", "医院", "学校", "中心", "公寓", "商场", "超市", "酒店"}, 2, 3, 0, 0,
       {0.55,
        true,
        {{"大厦", "大楼"},
         {"广场", "商业广场"},
         {"小区", "家园"},
         {"花园", "花苑"},
         {"公司", "有限公司"},
         {"医院", "人民医院"},
         {"学校", "中学"},
         {"中心", "服务中心"},
         {"公寓", "宿舍"},
         {"商场", "百货"},
         {"超市", "便利店"},
         {"酒店", "宾馆"}},
        true}},
      {"subpoi", "poi", 150, 3, 0.22, true, NameKind::Stem, {"分部", "分店", "住院部", "门诊部", "苑", "馆", "期"},
       1, 2, 0, 0, {}},
      {"assist", "", 22, 1, 0.12, false, NameKind::Fixed,
       {"附近", "旁边", "对面", "楼下", "隔壁", "后面", "斜对面", "往里走", "往东走", "往西走", "往南走",
        "往北走", "一楼", "门口", "里面", "内侧", "外侧", "西侧", "东侧", "南侧", "北侧", "交界处"},
       0, 0, 0, 0, {}},
      {"houseno", "poi", 60, 12, 0.40, true, NameKind::Number, {"栋"}, 0, 0, 1, 60,
       {1.0, false, {{"栋", "幢"}}, false}},
      {"cellno", "houseno", 24, 4, 0.25, true, NameKind::Number, {"单元"}, 0, 0, 1, 24, {}},
      {"floorno", "houseno", 40, 10, 0.30, true, NameKind::Number, {"楼"}, 0, 0, 1, 40,
       {1.0, false, {{"楼", "层"}}, false}},
      {"roomno", "houseno", 400, 20, 0.30, true, NameKind::Number, {"室"}, 0, 0, 101, 3020,
       {0.5, false, {{"室", "房"}}, false}},
      {"detail", "poi", 120, 3, 0.10, true, NameKind::Stem,
       {"前台", "收发室", "门卫", "办公室", "仓库", "信息科", "财务部"}, 1, 2, 0, 0, {}},
      {"redundant", "", 60, 1, 0.08, false, NameKind::Person, {"先生收", "女士收", "小姐收"}, 0, 0, 0, 0, {}},
      {"others", "", 100, 1, 0.08, false, NameKind::Latin, {}, 0, 0, 1, 99, {}},
  };
  return schemes;
}

const Scheme* find_scheme(std::string_view name) {
  for (const auto& s : default_schemes())
    if (name == s.name) return &s;
  return nullptr;
}

Scheme generic_scheme(const HierLevel& level) {
  return {level.name.c_str(), "", 50, 4, 0.5, true, NameKind::Stem, {}, 2, 3, 0, 0, {}};
}

std::string draw_stem(Rng& rng, int len) {
  const auto& chars = stem_chars();
  std::string out;
  for (int i = 0; i < len; ++i) out += chars[rng.index(chars.size())];
  return out;
}

struct Drawn {
  std::string name;
  std::string stem;
  std::string suffix;
};

// Number-like levels draw roomno-style values as floor*100 + room.
int draw_number(const Scheme& s, Rng& rng) {
  if (std::string_view(s.name) == "roomno") return rng.range(1, 30) * 100 + rng.range(1, 20);
  return rng.range(s.num_lo, s.num_hi);
}

Drawn draw_name(const Scheme& s, Rng& rng) {
  const auto pick_suffix = [&]() -> std::string {
    return s.suffixes.empty() ? std::string() : s.suffixes[rng.index(s.suffixes.size())];
  };
  switch (s.kind) {
    case NameKind::Stem: {
      const std::string stem = draw_stem(rng, rng.range(s.stem_min, s.stem_max));
      const std::string suffix = pick_suffix();
      if (std::string_view(s.name) == "intersection") return {"与" + stem + suffix, stem, suffix};
      return {stem + suffix, stem, suffix};
    }
    case NameKind::Number: {
      const std::string stem = std::to_string(draw_number(s, rng));
      const std::string suffix = pick_suffix();
      return {stem + suffix, stem, suffix};
    }
    case NameKind::Fixed: {
      const std::string phrase = s.suffixes[rng.index(s.suffixes.size())];
      return {phrase, phrase, ""};
    }
    case NameKind::Distance: {
      static const char* dirs[] = {"东", "西", "南", "北"};
      const std::string stem = std::string(dirs[rng.index(4)]) + std::to_string(10 * rng.range(s.num_lo, s.num_hi));
      return {stem + "米", stem, "米"};
    }
    case NameKind::Person: {
      static const std::vector<std::string> surnames = split_chars(kSurnames);
      const std::string stem = surnames[rng.index(surnames.size())];
      const std::string suffix = pick_suffix();
      return {stem + suffix, stem, suffix};
    }
    case NameKind::Latin: {
      const std::string stem(1, static_cast<char>('A' + rng.index(26)));
      const std::string num = std::to_string(rng.range(s.num_lo, s.num_hi));
      return {stem + num, stem, num};
    }
  }
  return {};
}

// Fixed-phrase pools cannot exceed their phrase count.
int pool_size(const Scheme& s) {
  if (s.kind == NameKind::Fixed) return static_cast<int>(s.suffixes.size());
  return s.pool;
}

std::size_t child_index(const std::string& parent_name, int level, int branch, std::size_t pool) {
  const std::uint64_t h = splitmix64(fnv1a64(parent_name) ^ (static_cast<std::uint64_t>(level) << 40)) +
                          static_cast<std::uint64_t>(branch);
  return static_cast<std::size_t>(splitmix64(h) % pool);
}

std::string name_for(const Lexicon& lex, int level, const std::vector<std::string>& path, Rng& rng) {
  const auto& pool = lex.pools[static_cast<std::size_t>(level)];
  const auto& prof = lex.profiles[static_cast<std::size_t>(level)];
  if (prof.parent < 0) return pool[rng.index(pool.size())];
  const int branch = rng.range(0, prof.fanout - 1);
  return pool[child_index(path[static_cast<std::size_t>(prof.parent)], level, branch, pool.size())];
}

// Level requirements beyond the group chain: dependent -> any of these.
std::vector<std::vector<int>> requirements(const LabelRegistry& reg) {
  std::vector<std::vector<int>> req(reg.size());
  const auto add = [&](const char* level, std::initializer_list<const char*> any_of) {
    if (!reg.has_level(level)) return;
    for (const char* r : any_of)
      if (reg.has_level(r)) req[static_cast<std::size_t>(reg.level_id(level))].push_back(reg.level_id(r));
  };
  add("village_group", {"community"});
  add("roadno", {"road"});
  add("intersection", {"road"});
  add("distance", {"road", "poi"});
  add("subpoi", {"poi"});
  add("assist", {"poi"});
  add("houseno", {"poi", "road"});
  add("cellno", {"houseno"});
  add("floorno", {"houseno", "poi"});
  add("roomno", {"houseno", "floorno", "poi"});
  add("detail", {"poi"});
  return req;
}

bool has_ancestor_group(const LabelRegistry& reg, const std::vector<bool>& present) {
  // A DETAIL element requires a POI or ROAD element.
  if (!reg.has_level("houseno")) return true;
  const auto groups = reg.groups();
  const auto has_group = [&](std::string_view g) {
    if (std::find(groups.begin(), groups.end(), g) == groups.end()) return false;
    for (int l : reg.levels_in_group(reg.group_index(g)))
      if (present[static_cast<std::size_t>(l)]) return true;
    return false;
  };
  if (!has_group("DETAIL")) return true;
  return has_group("POI") || has_group("ROAD");
}

std::vector<bool> sample_presence(const Lexicon& lex, Rng& rng) {
  const auto req = requirements(lex.registry);
  const std::size_t n = lex.registry.size();
  for (;;) {
    std::vector<bool> present(n, false);
    for (std::size_t l = 0; l < n; ++l) present[l] = rng.bernoulli(lex.profiles[l].presence);
    for (std::size_t l = 0; l < n; ++l) {
      if (!present[l] || req[l].empty()) continue;
      bool ok = false;
      for (int r : req[l]) ok = ok || present[static_cast<std::size_t>(r)];
      if (!ok) present[l] = false;
    }
    const auto count = static_cast<std::size_t>(std::count(present.begin(), present.end(), true));
    bool any_locating = false;
    for (std::size_t l = 0; l < n; ++l) any_locating = any_locating || (present[l] && lex.profiles[l].locating);
    if (count >= 3 && count <= 10 && any_locating && has_ancestor_group(lex.registry, present)) return present;
  }
}

std::vector<std::string> sample_path(const Lexicon& lex, Rng& rng) {
  std::vector<std::string> path(lex.registry.size());
  for (std::size_t l = 0; l < path.size(); ++l) path[l] = name_for(lex, static_cast<int>(l), path, rng);
  return path;
}

std::vector<int> present_levels(const std::vector<Element>& elements) {
  std::vector<int> out;
  for (const auto& e : elements)
    if (e.level >= 0) out.push_back(e.level);
  return out;
}

int leaf_of(const Lexicon& lex, const std::vector<Element>& elements) {
  int leaf = -1;
  for (const auto& e : elements)
    if (e.level >= 0 && lex.profiles[static_cast<std::size_t>(e.level)].locating) leaf = std::max(leaf, e.level);
  return leaf;
}

const std::vector<std::string> kRedundancyTemplates = {
    "(不要放{poi})", "(放门口)", "(请电话联系)", "或者{poi}", "(放快递柜)", "(工作日送)", "(到了打电话)", "(放{poi}前台)",
};

std::string total_text(const std::vector<Element>& elements) {
  std::string s;
  for (const auto& e : elements) s += e.text;
  return s;
}

}  // namespace

// --- Lexicon ----------------------------------------------------------------

json Lexicon::to_json() const {
  json levels = json::array();
  for (std::size_t l = 0; l < pools.size(); ++l) {
    const auto& p = profiles[l];
    levels.push_back({{"level", registry.level(static_cast<int>(l)).name},
                      {"parent", p.parent},
                      {"fanout", p.fanout},
                      {"presence", p.presence},
                      {"locating", p.locating},
                      {"names", pools[l]}});
  }
  return {{"seed", seed}, {"registry", registry.to_json()}, {"levels", levels}, {"aliases", aliases}};
}

Lexicon gen_lexicon(std::uint64_t seed, const LabelRegistry& registry) {
  Lexicon lex;
  lex.seed = seed;
  lex.registry = registry;
  lex.typo_chars = stem_chars();
  Rng rng(derive_seed(seed, "lexicon"));

  std::vector<Scheme> schemes;
  for (const auto& lv : registry.levels()) {
    const Scheme* s = find_scheme(lv.name);
    schemes.push_back(s ? *s : generic_scheme(lv));
  }

  std::vector<std::vector<Drawn>> drawn(registry.size());
  std::set<std::string> all_names;
  for (std::size_t l = 0; l < schemes.size(); ++l) {
    const auto& s = schemes[l];
    LevelProfile prof;
    if (find_scheme(s.name)) {
      prof.parent = (s.parent[0] != '\0' && registry.has_level(s.parent)) ? registry.level_id(s.parent) : -1;
    } else {
      prof.parent = static_cast<int>(l) - 1;
    }
    if (prof.parent >= static_cast<int>(l)) prof.parent = -1;  // parents must precede children
    prof.fanout = s.fanout;
    prof.presence = s.presence;
    prof.locating = s.locating;
    lex.profiles.push_back(prof);

    std::set<std::string> seen;
    const int target = pool_size(s);
    for (int attempts = 0; static_cast<int>(drawn[l].size()) < target && attempts < 200 * target; ++attempts) {
      Drawn d = draw_name(s, rng);
      if (seen.insert(d.name).second) drawn[l].push_back(std::move(d));
    }
    // Small closed pools (fixed phrases, unit numbers) are emitted in a
    // canonical order so the pool does not depend on draw order.
    if (s.kind == NameKind::Fixed)
      std::sort(drawn[l].begin(), drawn[l].end(), [](const Drawn& a, const Drawn& b) { return a.name < b.name; });
    std::vector<std::string> names;
    for (const auto& d : drawn[l]) names.push_back(d.name);
    all_names.insert(names.begin(), names.end());
    lex.pools.push_back(std::move(names));
  }

  // Aliases must be unambiguous: never a canonical name, never shared.
  std::set<std::string> taken = all_names;
  for (std::size_t l = 0; l < schemes.size(); ++l) {
    const auto& rule = schemes[l].alias;
    if (rule.probability <= 0) continue;
    for (const auto& d : drawn[l]) {
      if (!rng.bernoulli(rule.probability)) continue;
      std::vector<std::string> candidates;
      const auto swap = rule.swap_suffix.find(d.suffix);
      const bool multi = rule.both_for_multi;
      if (rule.strip_suffix) candidates.push_back(d.stem);
      if (swap != rule.swap_suffix.end()) candidates.push_back(d.stem + swap->second);
      if (multi && candidates.size() < 2) continue;
      std::vector<std::string> accepted;
      for (auto& c : candidates) {
        if (tokenize(c).size() < 2 || taken.count(c)) continue;
        accepted.push_back(c);
      }
      if (accepted.empty() || (multi && accepted.size() < candidates.size())) continue;
      for (const auto& a : accepted) {
        taken.insert(a);
        lex.canonical_of[a] = d.name;
      }
      lex.aliases[d.name] = std::move(accepted);
    }
  }
  return lex;
}

// --- addresses --------------------------------------------------------------

std::vector<Element> CanonicalAddress::elements() const {
  std::vector<Element> out;
  for (std::size_t l = 0; l < path.size(); ++l)
    if (present[l]) out.push_back({static_cast<int>(l), path[l]});
  return out;
}

std::string CanonicalAddress::text() const { return total_text(elements()); }

int CanonicalAddress::leaf(const Lexicon& lex) const { return leaf_of(lex, elements()); }

TaggedAddress render(const std::vector<Element>& elements, const LabelRegistry& registry) {
  std::string text;
  std::vector<ElementSpan> spans;
  std::size_t cursor = 0;
  for (const auto& e : elements) {
    const std::size_t n = tokenize(e.text).size();
    if (n == 0) continue;
    if (e.level >= 0) spans.push_back({cursor, cursor + n, e.level});
    cursor += n;
    text += e.text;
  }
  auto ta = TaggedAddress::make(std::move(text), std::move(spans), registry);
  // Element texts may merge clusters at boundaries; the span check above
  // assumes they do not, which holds for the generator's alphabets.
  if (ta.tokens.size() != cursor) throw InvariantError("element boundary split a grapheme cluster");
  return ta;
}

GeneratedAddress gen_address(const Lexicon& lex, Rng& rng) {
  CanonicalAddress ca;
  ca.path = sample_path(lex, rng);
  ca.present = sample_presence(lex, rng);
  auto tagged = render(ca.elements(), lex.registry);
  return {std::move(ca), std::move(tagged)};
}

// --- perturbations ------------------------------------------------------------

const char* perturb_name(PerturbKind kind) {
  switch (kind) {
    case PerturbKind::Typo: return "typo";
    case PerturbKind::DropLevel: return "drop";
    case PerturbKind::Redundancy: return "redundancy";
    case PerturbKind::Alias: return "alias";
    case PerturbKind::Truncate: return "truncate";
    case PerturbKind::Distractor: return "distractor";
  }
  return "?";
}

PerturbKind perturb_from_name(std::string_view name) {
  if (name == "typo") return PerturbKind::Typo;
  if (name == "drop" || name == "drop_level") return PerturbKind::DropLevel;
  if (name == "redundancy" || name == "redundant") return PerturbKind::Redundancy;
  if (name == "alias") return PerturbKind::Alias;
  if (name == "truncate") return PerturbKind::Truncate;
  if (name == "distractor") return PerturbKind::Distractor;
  throw ConfigError("unknown perturbation '" + std::string(name) + "'");
}

DifficultyMix DifficultyMix::parse(std::string_view spec) {
  DifficultyMix mix;
  mix.weights.fill(0.0);
  std::string item;
  std::istringstream in{std::string(spec)};
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("mix entry '" + item + "' is not key=value");
    double w = 0;
    try {
      w = std::stod(item.substr(eq + 1));
    } catch (const std::exception&) {
      throw ConfigError("mix weight in '" + item + "' is not a number");
    }
    mix.weights[static_cast<std::size_t>(perturb_from_name(item.substr(0, eq)))] = w;
  }
  mix.validate();
  return mix;
}

void DifficultyMix::validate() const {
  double total = 0;
  for (double w : weights) {
    if (!(w >= 0)) throw ConfigError("mix weights must be non-negative");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-6) throw ConfigError("mix weights must sum to 1");
}

std::array<double, 3> DifficultyMix::label_distribution() const {
  const auto w = [&](PerturbKind k) { return weights[static_cast<std::size_t>(k)]; };
  return {w(PerturbKind::Distractor), w(PerturbKind::Truncate),
          w(PerturbKind::Typo) + w(PerturbKind::DropLevel) + w(PerturbKind::Redundancy) + w(PerturbKind::Alias)};
}

std::string DifficultyMix::to_string() const {
  std::ostringstream out;
  for (std::size_t i = 0; i < kPerturbKinds; ++i) {
    if (i) out << ',';
    out << perturb_name(static_cast<PerturbKind>(i)) << '=' << weights[i];
  }
  return out.str();
}

int derive_label(const json& provenance) {
  bool truncated = false;
  if (provenance.contains("perturbations")) {
    for (const auto& p : provenance.at("perturbations")) {
      const auto kind = perturb_from_name(p.at("kind").get<std::string>());
      if (kind == PerturbKind::Distractor) return 0;
      if (kind == PerturbKind::Truncate) truncated = true;
    }
  }
  return truncated ? 1 : 2;
}

bool apply_perturbation(const Lexicon& lex, PerturbKind kind, std::vector<Element>& elements, Rng& rng,
                        json& record) {
  record = {{"kind", perturb_name(kind)}};
  switch (kind) {
    case PerturbKind::Typo: {
      std::vector<std::pair<std::size_t, std::size_t>> sites;  // (element, char)
      for (std::size_t e = 0; e < elements.size(); ++e) {
        if (elements[e].level < 0) continue;
        const auto chars = tokenize(elements[e].text);
        for (std::size_t c = 0; c < chars.size(); ++c) sites.emplace_back(e, c);
      }
      if (sites.empty()) return false;
      const auto [e, c] = sites[rng.index(sites.size())];
      auto chars = tokenize(elements[e].text);
      std::string replacement;
      do {
        replacement = lex.typo_chars[rng.index(lex.typo_chars.size())];
      } while (replacement == chars[c].text);
      std::size_t global = 0;
      for (std::size_t k = 0; k < e; ++k) global += tokenize(elements[k].text).size();
      record["level"] = lex.registry.level(elements[e].level).name;
      record["token"] = global + c;
      record["from"] = chars[c].text;
      record["to"] = replacement;
      chars[c].text = replacement;
      elements[e].text = join_tokens(chars);
      return true;
    }
    case PerturbKind::DropLevel: {
      const int leaf = leaf_of(lex, elements);
      std::vector<std::size_t> sites;
      for (std::size_t e = 0; e < elements.size(); ++e)
        if (elements[e].level >= 0 && elements[e].level != leaf) sites.push_back(e);
      if (sites.empty() || present_levels(elements).size() < 2) return false;
      const std::size_t e = sites[rng.index(sites.size())];
      record["level"] = lex.registry.level(elements[e].level).name;
      record["text"] = elements[e].text;
      elements.erase(elements.begin() + static_cast<std::ptrdiff_t>(e));
      return true;
    }
    case PerturbKind::Redundancy: {
      std::string clause = kRedundancyTemplates[rng.index(kRedundancyTemplates.size())];
      if (const auto pos = clause.find("{poi}"); pos != std::string::npos && lex.registry.has_level("poi")) {
        const auto& pool = lex.pools[static_cast<std::size_t>(lex.registry.level_id("poi"))];
        clause.replace(pos, 5, pool[rng.index(pool.size())]);
      } else if (pos != std::string::npos) {
        clause.replace(pos, 5, draw_stem(rng, 3));
      }
      std::size_t at = elements.size();
      if (elements.size() > 1 && rng.bernoulli(0.3)) at = 1 + rng.index(elements.size() - 1);
      record["text"] = clause;
      record["position"] = at;
      elements.insert(elements.begin() + static_cast<std::ptrdiff_t>(at), Element{-1, clause});
      return true;
    }
    case PerturbKind::Alias: {
      std::vector<std::size_t> sites;
      for (std::size_t e = 0; e < elements.size(); ++e)
        if (elements[e].level >= 0 && lex.aliases.count(elements[e].text)) sites.push_back(e);
      if (sites.empty()) return false;
      const std::size_t e = sites[rng.index(sites.size())];
      const auto& alts = lex.aliases.at(elements[e].text);
      const std::string alias = alts[rng.index(alts.size())];
      record["level"] = lex.registry.level(elements[e].level).name;
      record["from"] = elements[e].text;
      record["to"] = alias;
      elements[e].text = alias;
      return true;
    }
    case PerturbKind::Truncate:
    case PerturbKind::Distractor:
      break;
  }
  throw InvariantError(std::string("perturbation '") + perturb_name(kind) + "' does not preserve the label");
}

namespace {

constexpr double kSecondaryNoise = 0.35;
constexpr double kCompoundExact = 0.25;

bool truncate_elements(const Lexicon& lex, std::vector<Element>& elements, Rng& rng, json& record) {
  std::vector<int> locating;
  for (const auto& e : elements)
    if (e.level >= 0 && lex.profiles[static_cast<std::size_t>(e.level)].locating) locating.push_back(e.level);
  if (locating.size() < 2) return false;
  // Keep locating levels up to index j, drop every level from the next one on.
  const std::size_t j = rng.index(locating.size() - 1);
  const int cut = locating[j + 1];
  json removed = json::array();
  std::vector<Element> kept;
  for (const auto& e : elements) {
    if (e.level >= cut) {
      removed.push_back(lex.registry.level(e.level).name);
    } else {
      kept.push_back(e);
    }
  }
  record = {{"kind", "truncate"}, {"removed", removed}};
  elements = std::move(kept);
  return true;
}

CanonicalAddress distract(const Lexicon& lex, const CanonicalAddress& a, Rng& rng, json& record) {
  std::vector<int> locating;
  for (std::size_t l = 0; l < a.path.size(); ++l)
    if (a.present[l] && lex.profiles[l].locating) locating.push_back(static_cast<int>(l));
  const std::size_t shared = std::min<std::size_t>(static_cast<std::size_t>(rng.range(0, 3)), locating.size() - 1);
  const int diverge = locating[shared];
  CanonicalAddress b = a;
  for (int attempt = 0;; ++attempt) {
    for (std::size_t l = static_cast<std::size_t>(diverge); l < b.path.size(); ++l) {
      if (lex.profiles[l].parent < 0 && static_cast<int>(l) != diverge) continue;  // free-standing levels kept
      b.path[l] = name_for(lex, static_cast<int>(l), b.path, rng);
    }
    if (b.path[static_cast<std::size_t>(diverge)] != a.path[static_cast<std::size_t>(diverge)]) break;
    if (attempt > 20) {
      const auto& pool = lex.pools[static_cast<std::size_t>(diverge)];
      auto& name = b.path[static_cast<std::size_t>(diverge)];
      for (const auto& candidate : pool)
        if (candidate != a.path[static_cast<std::size_t>(diverge)]) {
          name = candidate;
          break;
        }
      break;
    }
  }
  record = {{"kind", "distractor"},
            {"shared_levels", shared},
            {"diverge_level", lex.registry.level(diverge).name}};
  return b;
}

PerturbKind random_preserving(Rng& rng) {
  static constexpr PerturbKind kinds[] = {PerturbKind::Typo, PerturbKind::DropLevel, PerturbKind::Redundancy,
                                          PerturbKind::Alias};
  return kinds[rng.index(4)];
}

}  // namespace

GeneratedPair gen_pair(const Lexicon& lex, const DifficultyMix& mix, Rng& rng) {
  const std::vector<double> weights(mix.weights.begin(), mix.weights.end());
  const auto primary = static_cast<PerturbKind>(rng.weighted(weights));
  for (;;) {
    const GeneratedAddress base = gen_address(lex, rng);
    std::vector<Element> clean = base.canonical.elements();
    std::vector<Element> original = clean;
    std::vector<Element> changed = clean;
    json records = json::array();
    json rec;
    bool ok = true;
    switch (primary) {
      case PerturbKind::Typo:
      case PerturbKind::DropLevel:
      case PerturbKind::Redundancy:
      case PerturbKind::Alias:
        ok = apply_perturbation(lex, primary, changed, rng, rec);
        if (ok) records.push_back(rec);
        if (ok && primary != PerturbKind::Typo && rng.bernoulli(kCompoundExact)) {
          if (apply_perturbation(lex, random_preserving(rng), changed, rng, rec)) records.push_back(rec);
        }
        break;
      case PerturbKind::Truncate:
        ok = truncate_elements(lex, changed, rng, rec);
        if (ok) records.push_back(rec);
        break;
      case PerturbKind::Distractor: {
        const CanonicalAddress other = distract(lex, base.canonical, rng, rec);
        changed = other.elements();
        records.push_back(rec);
        break;
      }
    }
    if (!ok) continue;
    if ((primary == PerturbKind::Truncate || primary == PerturbKind::Distractor) && rng.bernoulli(kSecondaryNoise)) {
      auto& target = rng.bernoulli(0.5) ? changed : original;
      if (apply_perturbation(lex, random_preserving(rng), target, rng, rec)) {
        rec["side_of_noise"] = (&target == &changed) ? "changed" : "original";
        records.push_back(rec);
      }
    }

    const bool changed_is_a = rng.bernoulli(0.5);
    GeneratedPair out;
    out.clean = std::move(clean);
    out.a = render(changed_is_a ? changed : original, lex.registry);
    out.b = render(changed_is_a ? original : changed, lex.registry);
    out.pair.a = out.a.text;
    out.pair.b = out.b.text;
    out.pair.provenance = {{"primary", perturb_name(primary)},
                           {"changed_side", changed_is_a ? "a" : "b"},
                           {"perturbations", records}};
    out.pair.label = derive_label(out.pair.provenance);
    if (out.pair.a.empty() || out.pair.b.empty()) continue;
    return out;
  }
}

// --- corpora ----------------------------------------------------------------

std::vector<TaggedAddress> gen_addresses(const Lexicon& lex, std::uint64_t seed, std::string_view stream,
                                         std::size_t n) {
  std::vector<TaggedAddress> out;
  out.reserve(n);
  for (std::size_t shard = 0; shard * kShardSize < n; ++shard) {
    Rng rng(derive_seed(seed, stream, shard));
    const std::size_t end = std::min(n, (shard + 1) * kShardSize);
    for (std::size_t i = shard * kShardSize; i < end; ++i) {
      auto ga = gen_address(lex, rng);
      // A share of annotated addresses carry an unlabeled delivery note.
      if (rng.bernoulli(0.1)) {
        auto elements = ga.canonical.elements();
        json rec;
        apply_perturbation(lex, PerturbKind::Redundancy, elements, rng, rec);
        ga.tagged = render(elements, lex.registry);
      }
      out.push_back(std::move(ga.tagged));
    }
  }
  return out;
}

std::vector<GeneratedPair> gen_pairs(const Lexicon& lex, const DifficultyMix& mix, std::uint64_t seed,
                                     std::string_view stream, std::size_t n) {
  mix.validate();
  std::vector<GeneratedPair> out;
  out.reserve(n);
  for (std::size_t shard = 0; shard * kShardSize < n; ++shard) {
    Rng rng(derive_seed(seed, stream, shard));
    const std::size_t end = std::min(n, (shard + 1) * kShardSize);
    for (std::size_t i = shard * kShardSize; i < end; ++i) out.push_back(gen_pair(lex, mix, rng));
  }
  return out;
}

std::pair<std::size_t, std::size_t> resolution_split(std::size_t n) {
  const std::size_t total = kResolutionTrain + kResolutionDev;
  std::size_t train = (n * kResolutionTrain + total / 2) / total;
  if (n >= 2 && train == n) --train;
  if (n >= 2 && train == 0) train = 1;
  return {train, n - train};
}

ResolutionFiles gen_resolution_corpus(std::uint64_t seed, std::size_t n, const std::filesystem::path& dir,
                                      const LabelRegistry& registry) {
  if (n == 0) throw ConfigError("resolution corpus size must be positive");
  const Lexicon lex = gen_lexicon(seed, registry);
  const auto [n_train, n_dev] = resolution_split(n);
  const auto all = gen_addresses(lex, seed, "resolution", n);
  ResolutionFiles files{dir / "resolution_train.jsonl", dir / "resolution_dev.jsonl"};
  write_tagged_jsonl(files.train, {all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_train)}, registry);
  write_tagged_jsonl(files.dev, {all.begin() + static_cast<std::ptrdiff_t>(n_train), all.end()}, registry);
  return files;
}

void gen_matching_corpus(std::uint64_t seed, std::size_t n_pairs, const DifficultyMix& mix,
                         const std::filesystem::path& path, std::string_view stream, const LabelRegistry& registry) {
  if (n_pairs == 0) throw ConfigError("pair corpus size must be positive");
  const Lexicon lex = gen_lexicon(seed, registry);
  const auto generated = gen_pairs(lex, mix, seed, std::string("pairs-") + std::string(stream), n_pairs);
  std::vector<MatchPair> pairs;
  pairs.reserve(generated.size());
  for (const auto& g : generated) pairs.push_back(g.pair);
  write_pairs_jsonl(path, pairs);
}

}  // namespace hieraddr
