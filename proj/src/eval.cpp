#include "hieraddr/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <map>
#include <sstream>

#include "hieraddr/codec.hpp"

namespace hieraddr {

namespace {

double ratio(std::size_t num, std::size_t den) {
  return den ? static_cast<double>(num) / static_cast<double>(den) : 0.0;
}

double harmonic(double p, double r) { return p + r > 0 ? 2 * p * r / (p + r) : 0.0; }

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  if (n == 0) return 0.0;
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct Reference {
  double f1, acc, recall;
};

Reference published(AblationArm arm) {
  switch (arm) {
    case AblationArm::Baseline: return {82.10, 86.49, 81.01};
    case AblationArm::Full: return {85.33, 88.26, 84.65};
    case AblationArm::NoWwm: return {82.55, 85.63, 81.78};
    case AblationArm::NoElement: return {84.45, 87.95, 84.36};
  }
  return {0, 0, 0};
}

}  // namespace

void ConfusionMatrix::add(int gold, int predicted) {
  if (gold < 0 || gold > 2 || predicted < 0 || predicted > 2) throw InvariantError("label outside {0,1,2}");
  ++counts[static_cast<std::size_t>(gold)][static_cast<std::size_t>(predicted)];
}

std::size_t ConfusionMatrix::total() const {
  std::size_t t = 0;
  for (const auto& row : counts)
    for (const std::size_t c : row) t += c;
  return t;
}

json ConfusionMatrix::to_json() const { return counts; }

const char* averaging_name(Averaging a) { return a == Averaging::Macro ? "macro" : "micro"; }

Averaging averaging_from_name(std::string_view name) {
  if (name == "macro") return Averaging::Macro;
  if (name == "micro") return Averaging::Micro;
  throw ConfigError("unknown averaging '" + std::string(name) + "' (expected macro or micro)");
}

Metrics metrics(const ConfusionMatrix& cm, Averaging averaging) {
  const std::size_t total = cm.total();
  if (total == 0) throw InvariantError("metrics of an empty confusion matrix");
  Metrics m;
  m.averaging = averaging;
  std::size_t trace = 0, tp_sum = 0, pred_sum = 0, gold_sum = 0;
  for (std::size_t c = 0; c < 3; ++c) {
    std::size_t predicted = 0, gold = 0;
    for (std::size_t k = 0; k < 3; ++k) {
      predicted += cm.counts[k][c];
      gold += cm.counts[c][k];
    }
    const std::size_t tp = cm.counts[c][c];
    trace += tp;
    tp_sum += tp;
    pred_sum += predicted;
    gold_sum += gold;
    m.class_precision[c] = ratio(tp, predicted);
    m.class_recall[c] = ratio(tp, gold);
    m.class_f1[c] = harmonic(m.class_precision[c], m.class_recall[c]);
  }
  m.accuracy = ratio(trace, total);
  if (averaging == Averaging::Macro) {
    for (std::size_t c = 0; c < 3; ++c) {
      m.precision += m.class_precision[c] / 3.0;
      m.recall += m.class_recall[c] / 3.0;
      m.f1 += m.class_f1[c] / 3.0;
    }
  } else {
    m.precision = ratio(tp_sum, pred_sum);
    m.recall = ratio(tp_sum, gold_sum);
    m.f1 = harmonic(m.precision, m.recall);
  }
  return m;
}

json Metrics::to_json() const {
  return {{"averaging", averaging_name(averaging)}, {"f1", f1},
          {"accuracy", accuracy},                   {"recall", recall},
          {"precision", precision},                 {"class_precision", class_precision},
          {"class_recall", class_recall},           {"class_f1", class_f1}};
}

ConfusionMatrix evaluate_matcher(const MatcherModel& model, const EncoderModel& encoder,
                                 const std::vector<std::pair<TaggedAddress, TaggedAddress>>& sides,
                                 const std::vector<int>& labels) {
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < sides.size(); ++i)
    cm.add(labels[i], classify_pair(model, encoder, sides[i].first, sides[i].second, model.ablate_elements()).label);
  return cm;
}

// ---- ablation ----

const char* arm_name(AblationArm arm) {
  switch (arm) {
    case AblationArm::Baseline: return "baseline";
    case AblationArm::Full: return "full";
    case AblationArm::NoWwm: return "no-wwm";
    case AblationArm::NoElement: return "no-element";
  }
  return "?";
}

MaskMode arm_mask_mode(AblationArm arm) {
  return arm == AblationArm::Full || arm == AblationArm::NoElement ? MaskMode::WholeElement : MaskMode::SingleToken;
}

bool arm_ablates_elements(AblationArm arm) { return arm == AblationArm::Baseline || arm == AblationArm::NoElement; }

json AblationConfig::to_json() const {
  return {{"registry_groups", registry.groups()},
          {"tagger", {{"epochs", tagger.epochs}}},
          {"encoder", encoder.to_json()},
          {"pretrain",
           {{"optimizer", optimizer_name(pretrain.optimizer)},
            {"epochs", pretrain.epochs},
            {"batch_size", pretrain.batch_size},
            {"learning_rate", pretrain.learning_rate},
            {"momentum", pretrain.momentum},
            {"mask_ratio", pretrain.mask_ratio},
            {"max_examples", pretrain.max_examples}}},
          {"matcher", matcher.to_json()},
          {"averaging", averaging_name(averaging)}};
}

Metrics AblationReport::median(AblationArm arm) const {
  std::vector<double> f1, acc, rec, prec;
  for (const auto& r : runs)
    if (r.arm == arm) {
      f1.push_back(r.metrics.f1);
      acc.push_back(r.metrics.accuracy);
      rec.push_back(r.metrics.recall);
      prec.push_back(r.metrics.precision);
    }
  Metrics m;
  m.averaging = averaging;
  m.f1 = median_of(f1);
  m.accuracy = median_of(acc);
  m.recall = median_of(rec);
  m.precision = median_of(prec);
  return m;
}

json AblationReport::to_json() const {
  json j = {{"format", "hieraddr-ablation"},
            {"version", 1},
            {"averaging", averaging_name(averaging)},
            {"seeds", seeds},
            {"corpus_fingerprint", corpus_fingerprint},
            {"config", config}};
  json runs_json = json::array();
  for (const auto& r : runs)
    runs_json.push_back({{"arm", arm_name(r.arm)},
                         {"seed", r.seed},
                         {"confusion", r.confusion.to_json()},
                         {"metrics", r.metrics.to_json()}});
  j["runs"] = runs_json;
  json medians = json::object();
  for (const auto arm : kAblationArms) {
    const Metrics m = median(arm);
    medians[arm_name(arm)] = {{"f1", m.f1}, {"accuracy", m.accuracy}, {"recall", m.recall}, {"precision", m.precision}};
  }
  j["median"] = medians;
  return j;
}

std::string AblationReport::table() const {
  std::ostringstream out;
  out << "averaging: " << averaging_name(averaging) << ", median over " << seeds.size() << " seed(s)\n";
  char line[160];
  std::snprintf(line, sizeof line, "%-12s %8s %8s %8s   %8s %8s %8s\n", "method", "F1", "Acc", "Recall", "ref F1",
                "ref Acc", "ref Rec");
  out << line;
  for (const auto arm : kAblationArms) {
    const Metrics m = median(arm);
    const Reference ref = published(arm);
    std::snprintf(line, sizeof line, "%-12s %7.2f%% %7.2f%% %7.2f%%   %7.2f%% %7.2f%% %7.2f%%\n", arm_name(arm),
                  100 * m.f1, 100 * m.accuracy, 100 * m.recall, ref.f1, ref.acc, ref.recall);
    out << line;
  }
  return out.str();
}

std::string corpus_fingerprint(const std::vector<std::filesystem::path>& files) {
  std::string concat;
  for (const auto& f : files) concat += f.filename().string() + ":" + sha256_file(f) + "\n";
  return sha256_hex(concat);
}

AblationReport run_ablation(const AblationCorpora& corpora, const std::vector<std::uint64_t>& seeds,
                            const AblationConfig& config, const std::function<void(const json&)>& log) {
  if (seeds.empty()) throw ConfigError("ablation needs at least one seed");
  for (const auto& p : {corpora.resolution_train, corpora.resolution_dev, corpora.train_pairs, corpora.test_pairs})
    if (!std::filesystem::exists(p)) throw FormatError("missing corpus file: " + p.string());
  const auto emit = [&](json j) {
    if (log) log(j);
  };
  using clock = std::chrono::steady_clock;
  const auto since = [](clock::time_point t) { return std::chrono::duration<double>(clock::now() - t).count(); };

  AblationReport report;
  report.seeds = seeds;
  report.averaging = config.averaging;
  report.config = config.to_json();
  report.corpus_fingerprint = corpus_fingerprint(
      {corpora.resolution_train, corpora.resolution_dev, corpora.train_pairs, corpora.test_pairs});

  const auto res_train = read_tagged_jsonl(corpora.resolution_train, config.registry);
  const auto res_dev = read_tagged_jsonl(corpora.resolution_dev, config.registry);
  const auto train_pairs = read_pairs_jsonl(corpora.train_pairs);
  const auto test_pairs = read_pairs_jsonl(corpora.test_pairs);
  if (train_pairs.empty() || test_pairs.empty()) throw FormatError("ablation needs non-empty train and test pairs");

  for (const std::uint64_t seed : seeds) {
    auto t0 = clock::now();
    TaggerConfig tc = config.tagger;
    tc.seed = derive_seed(seed, "ablation-ner");
    const TaggerModel tagger = train_tagger(res_train, config.registry, tc);
    const SpanMetrics dev = evaluate_tagger(tagger, res_dev);
    emit({{"stage", "resolver"}, {"seed", seed}, {"dev_span_f1", dev.f1()}, {"seconds", since(t0)}});

    std::map<std::string, TaggedAddress> resolved;
    std::vector<TaggedAddress> pretrain_corpus;
    const auto get = [&](const std::string& text, bool collect) -> const TaggedAddress& {
      auto it = resolved.find(text);
      if (it == resolved.end()) {
        it = resolved.emplace(text, resolve(tagger, text)).first;
        if (collect) pretrain_corpus.push_back(it->second);
      }
      return it->second;
    };
    std::vector<std::pair<TaggedAddress, TaggedAddress>> train_sides, test_sides;
    std::vector<int> train_labels, test_labels;
    for (const auto& p : train_pairs) {
      train_sides.emplace_back(get(p.a, true), get(p.b, true));
      train_labels.push_back(p.label);
    }
    for (const auto& p : test_pairs) {
      test_sides.emplace_back(get(p.a, false), get(p.b, false));
      test_labels.push_back(p.label);
    }

    std::map<MaskMode, EncoderModel> encoders;
    for (const MaskMode mode : {MaskMode::WholeElement, MaskMode::SingleToken}) {
      t0 = clock::now();
      PretrainConfig pc = config.pretrain;
      pc.seed = derive_seed(seed, "ablation-pretrain");
      double first = 0, last = 0;
      auto enc = pretrain(pretrain_corpus, config.encoder, mode, pc, [&](const PretrainEpochLog& l) {
        if (l.epoch == 1) first = l.mean_loss;
        last = l.mean_loss;
      });
      emit({{"stage", "pretrain"},
            {"seed", seed},
            {"mode", mask_mode_name(mode)},
            {"first_loss", first},
            {"last_loss", last},
            {"seconds", since(t0)}});
      encoders.emplace(mode, std::move(enc));
    }

    for (const auto arm : kAblationArms) {
      t0 = clock::now();
      MatcherConfig mc = config.matcher;
      mc.ablate_elements = arm_ablates_elements(arm);
      mc.seed = derive_seed(seed, "ablation-match");
      const EncoderModel& enc = encoders.at(arm_mask_mode(arm));
      const MatcherModel model = train_matcher_resolved(train_sides, train_labels, config.registry, enc, mc);
      const EncoderModel& active = model.own_encoder() ? *model.own_encoder() : enc;
      AblationRun run{arm, seed, evaluate_matcher(model, active, test_sides, test_labels), {}, 0.0};
      run.metrics = metrics(run.confusion, config.averaging);
      run.seconds = since(t0);
      emit({{"stage", "match"},
            {"seed", seed},
            {"arm", arm_name(arm)},
            {"f1", run.metrics.f1},
            {"accuracy", run.metrics.accuracy},
            {"recall", run.metrics.recall},
            {"seconds", run.seconds}});
      report.runs.push_back(std::move(run));
    }
  }
  return report;
}

}  // namespace hieraddr
