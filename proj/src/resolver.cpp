#include "hieraddr/resolver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "hieraddr/codec.hpp"
#include "hieraddr/rng.hpp"

namespace hieraddr {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

const std::string& char_at(const std::vector<Token>& tokens, std::ptrdiff_t i) {
  static const std::string bos = "<s>", eos = "</s>";
  if (i < 0) return bos;
  if (i >= static_cast<std::ptrdiff_t>(tokens.size())) return eos;
  return tokens[static_cast<std::size_t>(i)].text;
}

std::vector<int> gold_tags(const TaggedAddress& ta) {
  std::vector<int> tags(ta.tokens.size(), 0);
  for (const auto& s : ta.spans) {
    tags[s.start] = BioTagSet::begin_tag(s.level);
    for (std::size_t i = s.start + 1; i < s.end; ++i) tags[i] = BioTagSet::inside_tag(s.level);
  }
  return tags;
}

}  // namespace

bool is_digit_token(std::string_view t) {
  if (t.size() == 1) return t[0] >= '0' && t[0] <= '9';
  const auto cps = decode_utf8(t);
  return cps.size() == 1 && cps[0] >= 0xFF10 && cps[0] <= 0xFF19;
}

bool is_latin_token(std::string_view t) {
  if (t.size() == 1) return (t[0] >= 'A' && t[0] <= 'Z') || (t[0] >= 'a' && t[0] <= 'z');
  const auto cps = decode_utf8(t);
  return cps.size() == 1 && ((cps[0] >= 0xFF21 && cps[0] <= 0xFF3A) || (cps[0] >= 0xFF41 && cps[0] <= 0xFF5A));
}

std::vector<std::string> feature_strings(const std::vector<Token>& tokens, std::size_t position) {
  const auto p = static_cast<std::ptrdiff_t>(position);
  const std::string& c0 = char_at(tokens, p);
  std::vector<std::string> f = {
      "*",
      "U0=" + c0,
      "U-1=" + char_at(tokens, p - 1),
      "U+1=" + char_at(tokens, p + 1),
      "U-2=" + char_at(tokens, p - 2),
      "U+2=" + char_at(tokens, p + 2),
      "B-1=" + char_at(tokens, p - 1) + "|" + c0,
      "B+1=" + c0 + "|" + char_at(tokens, p + 1),
  };
  if (is_digit_token(c0)) f.emplace_back("DIGIT");
  if (is_latin_token(c0)) f.emplace_back("LATIN");
  if (position == 0) f.emplace_back("FIRST");
  if (position + 1 == tokens.size()) f.emplace_back("LAST");
  return f;
}

std::uint32_t FeatureIndex::intern(const std::string& name) {
  const auto [it, inserted] = ids_.emplace(name, static_cast<std::uint32_t>(names_.size()));
  if (inserted) names_.push_back(name);
  return it->second;
}

std::uint32_t FeatureIndex::find(const std::string& name) const {
  const auto it = ids_.find(name);
  return it == ids_.end() ? static_cast<std::uint32_t>(names_.size()) : it->second;
}

FeatureVector featurize(const FeatureIndex& index, const std::vector<Token>& tokens, std::size_t position) {
  FeatureVector fv;
  for (const auto& s : feature_strings(tokens, position)) {
    const auto id = index.find(s);
    if (id < index.size()) fv.ids.push_back(id);
  }
  std::sort(fv.ids.begin(), fv.ids.end());
  fv.ids.erase(std::unique(fv.ids.begin(), fv.ids.end()), fv.ids.end());
  return fv;
}

// --- Viterbi --------------------------------------------------------------

TagConstraints TagConstraints::bio(std::span<const int> tags) {
  TagConstraints c;
  c.size = tags.size();
  c.start.resize(c.size);
  c.transition.resize(c.size * c.size);
  for (std::size_t i = 0; i < c.size; ++i) {
    c.start[i] = BioTagSet::legal_start(tags[i]);
    for (std::size_t j = 0; j < c.size; ++j) c.transition[i * c.size + j] = BioTagSet::legal_transition(tags[i], tags[j]);
  }
  return c;
}

ViterbiResult viterbi(const Eigen::MatrixXd& emissions, const Eigen::MatrixXd& transitions,
                      const Eigen::VectorXd& start, const TagConstraints& constraints) {
  const auto T = static_cast<std::size_t>(emissions.rows());
  const std::size_t K = constraints.size;
  if (T == 0) return {};
  std::vector<double> score(K), next(K);
  std::vector<int> back(T * K, -1);
  for (std::size_t k = 0; k < K; ++k)
    score[k] = constraints.start[k] ? start(static_cast<Eigen::Index>(k)) + emissions(0, static_cast<Eigen::Index>(k))
                                    : kNegInf;
  for (std::size_t t = 1; t < T; ++t) {
    for (std::size_t j = 0; j < K; ++j) {
      double best = kNegInf;
      int arg = -1;
      for (std::size_t i = 0; i < K; ++i) {
        if (!constraints.allowed(i, j) || score[i] == kNegInf) continue;
        const double s = score[i] + transitions(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        if (arg < 0 || s > best) {
          best = s;
          arg = static_cast<int>(i);
        }
      }
      next[j] = arg < 0 ? kNegInf : best + emissions(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(j));
      back[t * K + j] = arg;
    }
    std::swap(score, next);
  }
  ViterbiResult r;
  int last = -1;
  for (std::size_t k = 0; k < K; ++k)
    if (score[k] != kNegInf && (last < 0 || score[k] > score[static_cast<std::size_t>(last)])) last = static_cast<int>(k);
  if (last < 0) throw InvariantError("no legal tag sequence");
  r.score = score[static_cast<std::size_t>(last)];
  r.path.assign(T, 0);
  r.path[T - 1] = last;
  for (std::size_t t = T - 1; t > 0; --t) r.path[t - 1] = back[t * K + static_cast<std::size_t>(r.path[t])];
  return r;
}

double path_score(const Eigen::MatrixXd& emissions, const Eigen::MatrixXd& transitions, const Eigen::VectorXd& start,
                  const TagConstraints& constraints, std::span<const int> path) {
  if (path.empty()) return 0.0;
  const auto p0 = static_cast<std::size_t>(path[0]);
  if (!constraints.start[p0]) return kNegInf;
  double s = start(path[0]) + emissions(0, path[0]);
  for (std::size_t t = 1; t < path.size(); ++t) {
    if (!constraints.allowed(static_cast<std::size_t>(path[t - 1]), static_cast<std::size_t>(path[t]))) return kNegInf;
    s += transitions(path[t - 1], path[t]) + emissions(static_cast<Eigen::Index>(t), path[t]);
  }
  return s;
}

// --- metrics ----------------------------------------------------------------

void SpanMetrics::add(const std::vector<ElementSpan>& gold, const std::vector<ElementSpan>& predicted,
                      const std::vector<int>& gt, const std::vector<int>& pt) {
  gold_spans += gold.size();
  predicted_spans += predicted.size();
  std::size_t g = 0;
  for (const auto& p : predicted) {
    while (g < gold.size() && gold[g].start < p.start) ++g;
    if (g < gold.size() && gold[g] == p) ++correct_spans;
  }
  tokens += gt.size();
  for (std::size_t i = 0; i < gt.size() && i < pt.size(); ++i) correct_tokens += gt[i] == pt[i];
}

json SpanMetrics::to_json() const {
  return {{"precision", precision()}, {"recall", recall()}, {"f1", f1()}, {"token_accuracy", token_accuracy()}};
}

// --- model ------------------------------------------------------------------

namespace {

std::vector<int> all_tags(std::size_t n) {
  std::vector<int> t(n);
  std::iota(t.begin(), t.end(), 0);
  return t;
}

}  // namespace

TaggerModel::TaggerModel(LabelRegistry registry)
    : registry_(std::move(registry)),
      tagset_(registry_),
      constraints_(TagConstraints::bio(all_tags(tagset_.size()))),
      transitions_(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(tagset_.size()),
                                         static_cast<Eigen::Index>(tagset_.size()))),
      start_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(tagset_.size()))) {}

Eigen::MatrixXd TaggerModel::emissions(const std::vector<Token>& tokens) const {
  const std::size_t K = num_tags();
  Eigen::MatrixXd e = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(tokens.size()), static_cast<Eigen::Index>(K));
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    for (const auto f : featurize(features_, tokens, t).ids) {
      const double* w = &feature_weights_[f * K];
      for (std::size_t k = 0; k < K; ++k) e(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(k)) += w[k];
    }
  }
  return e;
}

std::vector<int> TaggerModel::decode(const std::vector<Token>& tokens) const {
  if (tokens.empty()) return {};
  return viterbi(emissions(tokens), transitions_, start_, constraints_).path;
}

json TaggerModel::to_json() const {
  return {{"format", "hieraddr-tagger"},
          {"version", kFormatVersion},
          {"registry", registry_.to_json()},
          {"num_tags", num_tags()},
          {"features", features_.names()},
          {"feature_weights", encode_doubles(feature_weights_)},
          {"transitions", matrix_to_json(transitions_)},
          {"start", matrix_to_json(start_)}};
}

TaggerModel TaggerModel::from_json(const json& j) {
  try {
    TaggerModel m(LabelRegistry::from_json(j.at("registry")));
    if (j.at("num_tags").get<std::size_t>() != m.num_tags()) throw FormatError("tag count does not match registry");
    for (const auto& f : j.at("features")) m.features_.intern(f.get<std::string>());
    m.feature_weights_ = decode_doubles(j.at("feature_weights").get<std::string>());
    if (m.feature_weights_.size() != m.features_.size() * m.num_tags())
      throw FormatError("feature weight table has the wrong size");
    m.transitions_ = matrix_from_json(j.at("transitions"));
    m.start_ = matrix_from_json(j.at("start"));
    const auto K = static_cast<Eigen::Index>(m.num_tags());
    if (m.transitions_.rows() != K || m.transitions_.cols() != K || m.start_.size() != K)
      throw FormatError("transition table has the wrong shape");
    return m;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed tagger model: ") + e.what());
  }
}

void TaggerModel::save(const std::filesystem::path& path) const { write_file(path, to_json().dump()); }

TaggerModel TaggerModel::load(const std::filesystem::path& path) {
  return from_json(load_artifact(path, "hieraddr-tagger", kFormatVersion));
}

// --- training -----------------------------------------------------------------

TaggerModel train_tagger(const std::vector<TaggedAddress>& corpus, const LabelRegistry& registry,
                         const TaggerConfig& config, const std::vector<TaggedAddress>* dev,
                         const std::function<void(const TaggerEpochLog&)>& on_epoch) {
  if (corpus.empty()) throw ConfigError("tagger corpus is empty");
  if (config.epochs <= 0) throw ConfigError("tagger epochs must be positive");
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    try {
      validate_spans(corpus[i].spans, corpus[i].tokens.size(), registry);
    } catch (const InvariantError& e) {
      throw InvariantError("training example " + std::to_string(i) + ": " + e.what());
    }
  }

  TaggerModel model(registry);
  const std::size_t K = model.num_tags();

  // Features are interned in corpus order so ids are deterministic.
  std::vector<std::vector<std::vector<std::uint32_t>>> feats(corpus.size());
  std::vector<std::vector<int>> gold(corpus.size());
  for (std::size_t n = 0; n < corpus.size(); ++n) {
    const auto& tokens = corpus[n].tokens;
    feats[n].resize(tokens.size());
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      for (const auto& s : feature_strings(tokens, t)) feats[n][t].push_back(model.features_.intern(s));
      std::sort(feats[n][t].begin(), feats[n][t].end());
    }
    gold[n] = gold_tags(corpus[n]);
  }
  const std::size_t F = model.features_.size();

  // Averaging via the usual trick: avg = w - u / c, where u accumulates
  // c * delta for every update made at step c.
  std::vector<double> w(F * K, 0.0), u(F * K, 0.0);
  Eigen::MatrixXd trans = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(K));
  Eigen::MatrixXd trans_u = trans;
  Eigen::VectorXd start = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(K));
  Eigen::VectorXd start_u = start;
  double c = 1.0;

  const auto averaged = [&] {
    for (std::size_t i = 0; i < w.size(); ++i) model.feature_weights_[i] = w[i] - u[i] / c;
    model.transitions_ = trans - trans_u / c;
    model.start_ = start - start_u / c;
  };
  model.feature_weights_.assign(F * K, 0.0);

  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(config.seed, "train-ner"));
  Eigen::MatrixXd em;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    rng.shuffle(order);
    std::size_t token_errors = 0, tokens = 0, seq_errors = 0;
    for (const std::size_t n : order) {
      const auto& x = feats[n];
      const auto& y = gold[n];
      const auto T = x.size();
      tokens += T;
      if (T == 0) {
        c += 1;
        continue;
      }
      em.setZero(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(K));
      for (std::size_t t = 0; t < T; ++t)
        for (const auto f : x[t]) {
          const double* row = &w[f * K];
          for (std::size_t k = 0; k < K; ++k) em(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(k)) += row[k];
        }
      const auto pred = viterbi(em, trans, start, model.constraints_).path;
      if (pred != y) {
        ++seq_errors;
        for (std::size_t t = 0; t < T; ++t) {
          if (pred[t] != y[t]) {
            ++token_errors;
            for (const auto f : x[t]) {
              w[f * K + static_cast<std::size_t>(y[t])] += 1;
              u[f * K + static_cast<std::size_t>(y[t])] += c;
              w[f * K + static_cast<std::size_t>(pred[t])] -= 1;
              u[f * K + static_cast<std::size_t>(pred[t])] -= c;
            }
          }
          if (t == 0) {
            if (pred[0] != y[0]) {
              start(y[0]) += 1;
              start_u(y[0]) += c;
              start(pred[0]) -= 1;
              start_u(pred[0]) -= c;
            }
          } else if (pred[t - 1] != y[t - 1] || pred[t] != y[t]) {
            trans(y[t - 1], y[t]) += 1;
            trans_u(y[t - 1], y[t]) += c;
            trans(pred[t - 1], pred[t]) -= 1;
            trans_u(pred[t - 1], pred[t]) -= c;
          }
        }
      }
      c += 1;
    }
    if (on_epoch) {
      averaged();
      TaggerEpochLog log;
      log.epoch = epoch;
      log.train_token_error = tokens ? double(token_errors) / double(tokens) : 0.0;
      log.train_sequence_errors = seq_errors;
      if (dev) log.dev = evaluate_tagger(model, *dev);
      on_epoch(log);
    }
  }
  averaged();
  return model;
}

TaggedAddress resolve(const TaggerModel& model, const std::string& text) {
  TaggedAddress ta;
  ta.text = text;
  ta.tokens = tokenize(text);
  ta.spans = bio_ids_to_spans(model.decode(ta.tokens)).spans;
  return ta;
}

SpanMetrics evaluate_tagger(const TaggerModel& model, const std::vector<TaggedAddress>& corpus) {
  SpanMetrics m;
  for (const auto& ta : corpus) {
    const auto pred = model.decode(ta.tokens);
    m.add(ta.spans, bio_ids_to_spans(pred).spans, gold_tags(ta), pred);
  }
  return m;
}

}  // namespace hieraddr
