#include "hieraddr/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "hieraddr/codec.hpp"
#include "hieraddr/corpus.hpp"
#include "hieraddr/encoder.hpp"
#include "hieraddr/eval.hpp"
#include "hieraddr/matcher.hpp"
#include "hieraddr/resolver.hpp"

namespace hieraddr {

namespace {

namespace fs = std::filesystem;

// Pipeline configuration: a JSON document whose keys mirror the command-line
// options. Values given on the command line win.
class Settings {
 public:
  void load(const std::string& path) {
    const std::string text = read_file(path);
    try {
      root_ = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ConfigError("config " + path + " is not valid JSON: " + e.what());
    }
    if (!root_.is_object()) throw ConfigError("config " + path + " must be a JSON object");
  }

  template <typename T>
  void fill(const CLI::Option* opt, T& value, const char* pointer) const {
    if (opt && opt->count() > 0) return;
    const json::json_pointer ptr(pointer);
    if (!root_.contains(ptr)) return;
    try {
      value = root_.at(ptr).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("config value ") + pointer + " has the wrong type");
    }
  }

  LabelRegistry registry(const CLI::Option* opt, std::string path) const {
    fill(opt, path, "/registry");
    return path.empty() ? LabelRegistry::default_registry() : LabelRegistry::load(path);
  }

 private:
  json root_ = json::object();
};

struct Io {
  std::ostream& out;
  std::ostream& err;

  void log(const json& j) const { out << j.dump() << std::endl; }
};

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      seeds.push_back(std::stoull(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("bad seed '" + item + "' in --seed-list");
    }
  }
  if (seeds.empty()) throw ConfigError("--seed-list is empty");
  return seeds;
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

struct EncoderFlags {
  CLI::Option* lr = nullptr;
  CLI::Option* epochs = nullptr;
  CLI::Option* optimizer = nullptr;
  CLI::Option* max_examples = nullptr;
  double learning_rate = PretrainConfig{}.learning_rate;
  int n_epochs = PretrainConfig{}.epochs;
  std::string optimizer_name = "momentum";
  std::size_t examples = 0;
};

EncoderConfig encoder_config(const Settings& s) {
  EncoderConfig c;
  s.fill(nullptr, c.dim, "/encoder/dim");
  s.fill(nullptr, c.layers, "/encoder/layers");
  s.fill(nullptr, c.heads, "/encoder/heads");
  s.fill(nullptr, c.ff_dim, "/encoder/ff_dim");
  s.fill(nullptr, c.max_len, "/encoder/max_len");
  s.fill(nullptr, c.whole_len, "/encoder/whole_len");
  s.fill(nullptr, c.element_len, "/encoder/element_len");
  c.validate();
  return c;
}

PretrainConfig pretrain_config(const Settings& s, EncoderFlags& f, std::uint64_t seed) {
  PretrainConfig p;
  s.fill(f.epochs, f.n_epochs, "/pretrain/epochs");
  s.fill(f.lr, f.learning_rate, "/pretrain/learning_rate");
  s.fill(f.optimizer, f.optimizer_name, "/pretrain/optimizer");
  s.fill(f.max_examples, f.examples, "/pretrain/max_examples");
  p.epochs = f.n_epochs;
  p.learning_rate = f.learning_rate;
  p.optimizer = optimizer_from_name(f.optimizer_name);
  p.max_examples = f.examples;
  s.fill(nullptr, p.batch_size, "/pretrain/batch_size");
  s.fill(nullptr, p.momentum, "/pretrain/momentum");
  s.fill(nullptr, p.clip_norm, "/pretrain/clip_norm");
  s.fill(nullptr, p.mask_ratio, "/pretrain/mask_ratio");
  p.seed = seed;
  return p;
}

struct MatcherFlags {
  CLI::Option* lr = nullptr;
  CLI::Option* epochs = nullptr;
  CLI::Option* hidden = nullptr;
  double learning_rate = MatcherConfig{}.learning_rate;
  int n_epochs = MatcherConfig{}.epochs;
  int hidden_size = MatcherConfig{}.hidden;
};

MatcherConfig matcher_config(const Settings& s, MatcherFlags& f, std::uint64_t seed) {
  MatcherConfig m;
  s.fill(f.lr, f.learning_rate, "/matcher/learning_rate");
  s.fill(f.epochs, f.n_epochs, "/matcher/epochs");
  s.fill(f.hidden, f.hidden_size, "/matcher/hidden");
  m.learning_rate = f.learning_rate;
  m.epochs = f.n_epochs;
  m.hidden = f.hidden_size;
  std::string optimizer = optimizer_name(m.optimizer);
  s.fill(nullptr, optimizer, "/matcher/optimizer");
  m.optimizer = optimizer_from_name(optimizer);
  s.fill(nullptr, m.batch_size, "/matcher/batch_size");
  s.fill(nullptr, m.momentum, "/matcher/momentum");
  s.fill(nullptr, m.clip_norm, "/matcher/clip_norm");
  s.fill(nullptr, m.swap_augment, "/matcher/swap_augment");
  s.fill(nullptr, m.tie_directions, "/matcher/tie_directions");
  m.seed = seed;
  return m;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  const Io io{out, err};
  CLI::App app{"Hierarchy-aware address matching: corpus generation, element resolution, pretraining, matching",
               "hieraddr"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "JSON config file (fallback: $HIERADDR_CONFIG)");

  std::uint64_t seed = 1;
  std::string registry_path;

  // gen-corpus
  auto* gen = app.add_subcommand("gen-corpus", "Generate resolution and matching corpora");
  std::string gen_out;
  std::size_t n_resolution = kResolutionTrain + kResolutionDev, n_train = 10000, n_test = 2000;
  std::string mix_spec;
  gen->add_option("--out", gen_out, "Output directory")->required();
  auto* gen_seed = gen->add_option("--seed", seed, "Corpus seed");
  auto* gen_res = gen->add_option("--resolution", n_resolution, "Tagged addresses (split 12000:2500)");
  auto* gen_train = gen->add_option("--train-pairs,--n", n_train, "Training pairs");
  auto* gen_test = gen->add_option("--test-pairs", n_test, "Test pairs");
  auto* gen_mix = gen->add_option("--mix", mix_spec, "Difficulty mix, e.g. typo=0.1,drop=0.1,...");
  auto* gen_reg = gen->add_option("--registry", registry_path, "Label registry JSON");

  // train-ner
  auto* ner = app.add_subcommand("train-ner", "Train the element resolver");
  std::string ner_train, ner_dev, ner_out;
  int ner_epochs = 100;
  ner->add_option("--train,--corpus", ner_train, "Tagged training corpus (JSONL)")->required();
  ner->add_option("--dev", ner_dev, "Tagged dev corpus (JSONL)");
  ner->add_option("--out", ner_out, "Model output path")->required();
  auto* ner_epochs_opt = ner->add_option("--epochs", ner_epochs, "Training epochs");
  auto* ner_seed = ner->add_option("--seed", seed, "Seed");
  auto* ner_reg = ner->add_option("--registry", registry_path, "Label registry JSON");

  // resolve
  auto* res = app.add_subcommand("resolve", "Resolve addresses into hierarchy elements");
  std::string res_model, res_input;
  std::vector<std::string> res_texts;
  res->add_option("--model", res_model, "Resolver model")->required();
  res->add_option("--text", res_texts, "Address text (repeatable)");
  res->add_option("--input,--in", res_input, "File with one address per line");
  std::string res_out;
  res->add_option("--out", res_out, "Write tagged JSONL here instead of standard output");

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "Pretrain the address encoder by masked prediction");
  std::string pre_corpus, pre_pairs, pre_ner, pre_out, pre_mode = "wwm";
  EncoderFlags enc_flags;
  pre->add_option("--corpus", pre_corpus, "Tagged address corpus (JSONL)");
  pre->add_option("--pairs", pre_pairs, "Pair corpus whose addresses are resolved with --ner-model");
  pre->add_option("--ner-model", pre_ner, "Resolver used with --pairs");
  pre->add_option("--out", pre_out, "Encoder output path")->required();
  auto* pre_mode_opt = pre->add_option("--mode", pre_mode, "wwm or single");
  enc_flags.epochs = pre->add_option("--epochs", enc_flags.n_epochs, "Epochs");
  enc_flags.lr = pre->add_option("--lr", enc_flags.learning_rate, "Learning rate");
  enc_flags.optimizer = pre->add_option("--optimizer", enc_flags.optimizer_name, "momentum or adam");
  enc_flags.max_examples = pre->add_option("--max-examples", enc_flags.examples, "Cap on training addresses");
  auto* pre_seed = pre->add_option("--seed", seed, "Seed");
  auto* pre_reg = pre->add_option("--registry", registry_path, "Label registry JSON (with --corpus)");

  // train-match
  auto* tm = app.add_subcommand("train-match", "Train the pair matcher");
  std::string tm_pairs, tm_ner, tm_encoder, tm_out;
  bool tm_ablate = false, tm_finetune = false;
  MatcherFlags match_flags;
  tm->add_option("--pairs", tm_pairs, "Training pairs (JSONL)")->required();
  tm->add_option("--ner-model", tm_ner, "Resolver model")->required();
  tm->add_option("--encoder", tm_encoder, "Encoder model")->required();
  tm->add_option("--out", tm_out, "Matcher output path")->required();
  tm->add_flag("--ablate-elements", tm_ablate, "Whole-address branch only");
  tm->add_flag("--finetune-encoder", tm_finetune, "Update encoder weights during training");
  match_flags.epochs = tm->add_option("--epochs", match_flags.n_epochs, "Epochs");
  match_flags.lr = tm->add_option("--lr", match_flags.learning_rate, "Learning rate");
  match_flags.hidden = tm->add_option("--hidden", match_flags.hidden_size, "LSTM hidden size");
  auto* tm_seed = tm->add_option("--seed", seed, "Seed");

  // match
  auto* mt = app.add_subcommand("match", "Classify one address pair");
  std::string mt_model, mt_a, mt_b;
  mt->add_option("--model", mt_model, "Matcher model")->required();
  mt->add_option("--a", mt_a, "First address")->required();
  mt->add_option("--b", mt_b, "Second address")->required();

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a matcher on labelled pairs");
  std::string ev_model, ev_pairs, ev_out, averaging = "macro";
  ev->add_option("--model", ev_model, "Matcher model")->required();
  ev->add_option("--pairs", ev_pairs, "Test pairs (JSONL)")->required();
  ev->add_option("--out", ev_out, "Write the evaluation report here");
  auto* ev_avg = ev->add_option("--averaging", averaging, "macro or micro");

  // ablate
  auto* ab = app.add_subcommand("ablate", "Run the four-way ablation");
  std::string ab_out, ab_seeds = "1,2,3", ab_corpus;
  std::uint64_t corpus_seed = 1;
  ab->add_option("--out", ab_out, "Report path (JSON); the table is written next to it")->required();
  auto* ab_seed_opt = ab->add_option("--seed-list", ab_seeds, "Comma-separated training seeds");
  ab->add_option("--corpus-dir", ab_corpus, "Directory from gen-corpus (generated when absent)");
  auto* ab_cseed = ab->add_option("--corpus-seed", corpus_seed, "Seed for a generated corpus");
  auto* ab_train = ab->add_option("--train-pairs", n_train, "Training pairs for a generated corpus");
  auto* ab_test = ab->add_option("--test-pairs", n_test, "Test pairs for a generated corpus");
  auto* ab_avg = ab->add_option("--averaging", averaging, "macro or micro");
  auto* ab_reg = ab->add_option("--registry", registry_path, "Label registry JSON");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    if (app.get_subcommands().size() == 1) out << app.get_subcommands().front()->help();
    return 0;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return 0;
    }
    err << "error: " << e.what() << "\n\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return 1;
  }

  try {
    Settings settings;
    if (config_path.empty())
      if (const char* env = std::getenv("HIERADDR_CONFIG"); env && *env) config_path = env;
    if (!config_path.empty()) {
      if (!fs::exists(config_path)) throw ConfigError("config file not found: " + config_path);
      settings.load(config_path);
    }

    if (*gen) {
      settings.fill(gen_seed, seed, "/seed");
      settings.fill(gen_res, n_resolution, "/corpus/resolution_addresses");
      settings.fill(gen_train, n_train, "/corpus/train_pairs");
      settings.fill(gen_test, n_test, "/corpus/test_pairs");
      settings.fill(gen_mix, mix_spec, "/corpus/mix");
      const auto registry = settings.registry(gen_reg, registry_path);
      const DifficultyMix mix = mix_spec.empty() ? DifficultyMix{} : DifficultyMix::parse(mix_spec);
      fs::create_directories(gen_out);
      const auto files = gen_resolution_corpus(seed, n_resolution, gen_out, registry);
      const fs::path train = fs::path(gen_out) / "pairs_train.jsonl", test = fs::path(gen_out) / "pairs_test.jsonl";
      gen_matching_corpus(seed, n_train, mix, train, "train", registry);
      gen_matching_corpus(seed, n_test, mix, test, "test", registry);
      json files_json = json::object();
      for (const auto& f : {files.train, files.dev, train, test})
        files_json[f.filename().string()] = sha256_file(f);
      io.log({{"stage", "gen-corpus"}, {"seed", seed}, {"mix", mix.to_string()}, {"files", files_json}});
      return 0;
    }

    if (*ner) {
      settings.fill(ner_seed, seed, "/seed");
      settings.fill(ner_epochs_opt, ner_epochs, "/ner/epochs");
      const auto registry = settings.registry(ner_reg, registry_path);
      const auto train = read_tagged_jsonl(ner_train, registry);
      std::vector<TaggedAddress> dev;
      if (!ner_dev.empty()) dev = read_tagged_jsonl(ner_dev, registry);
      const TaggerConfig tc{ner_epochs, derive_seed(seed, "train-ner")};
      const auto model = train_tagger(train, registry, tc, ner_dev.empty() ? nullptr : &dev,
                                      [&](const TaggerEpochLog& l) {
                                        json j = {{"stage", "train-ner"},
                                                  {"epoch", l.epoch},
                                                  {"train_token_error", l.train_token_error},
                                                  {"train_sequence_errors", l.train_sequence_errors}};
                                        if (!ner_dev.empty()) j["dev"] = l.dev.to_json();
                                        io.log(j);
                                      });
      ensure_parent(ner_out);
      model.save(ner_out);
      json done = {{"stage", "train-ner"}, {"done", true}, {"model", ner_out}};
      if (!ner_dev.empty()) done["dev"] = evaluate_tagger(model, dev).to_json();
      io.log(done);
      return 0;
    }

    if (*res) {
      const auto model = TaggerModel::load(res_model);
      std::vector<std::string> texts = res_texts;
      if (!res_input.empty()) {
        std::istringstream lines(read_file(res_input));
        for (std::string line; std::getline(lines, line);)
          if (!line.empty()) texts.push_back(line);
      }
      if (texts.empty()) throw ConfigError("resolve needs --text or --input");
      if (!res_out.empty()) {
        std::vector<TaggedAddress> tagged;
        for (const auto& t : texts) tagged.push_back(resolve(model, t));
        ensure_parent(res_out);
        write_tagged_jsonl(res_out, tagged, model.registry());
        io.log({{"stage", "resolve"}, {"addresses", tagged.size()}, {"out", res_out}});
        return 0;
      }
      for (const auto& t : texts) io.log(tagged_to_json(resolve(model, t), model.registry()));
      return 0;
    }

    if (*pre) {
      settings.fill(pre_seed, seed, "/seed");
      settings.fill(pre_mode_opt, pre_mode, "/pretrain/mode");
      const MaskMode mode = mask_mode_from_name(pre_mode);
      std::vector<TaggedAddress> corpus;
      if (!pre_corpus.empty()) {
        corpus = read_tagged_jsonl(pre_corpus, settings.registry(pre_reg, registry_path));
      } else if (!pre_pairs.empty() && !pre_ner.empty()) {
        const auto tagger = TaggerModel::load(pre_ner);
        std::map<std::string, bool> seen;
        for (const auto& p : read_pairs_jsonl(pre_pairs))
          for (const auto* text : {&p.a, &p.b})
            if (seen.emplace(*text, true).second) corpus.push_back(resolve(tagger, *text));
      } else {
        throw ConfigError("pretrain needs --corpus, or --pairs with --ner-model");
      }
      const auto ec = encoder_config(settings);
      const auto pc = pretrain_config(settings, enc_flags, derive_seed(seed, "pretrain-" + pre_mode));
      const auto model = pretrain(corpus, ec, mode, pc, [&](const PretrainEpochLog& l) {
        io.log({{"stage", "pretrain"},
                {"mode", pre_mode},
                {"epoch", l.epoch},
                {"mean_loss", l.mean_loss},
                {"sequences", l.sequences}});
      });
      ensure_parent(pre_out);
      model.save(pre_out);
      io.log({{"stage", "pretrain"}, {"done", true}, {"model", pre_out}, {"vocab", model.vocab().size()}});
      return 0;
    }

    if (*tm) {
      settings.fill(tm_seed, seed, "/seed");
      auto mc = matcher_config(settings, match_flags, derive_seed(seed, "train-match"));
      mc.ablate_elements = tm_ablate;
      mc.finetune_encoder = tm_finetune;
      const auto tagger = TaggerModel::load(tm_ner);
      const auto encoder = EncoderModel::load(tm_encoder);
      const auto pairs = read_pairs_jsonl(tm_pairs);
      const auto model = train_matcher(pairs, tagger, encoder, mc, [&](const MatcherEpochLog& l) {
        io.log({{"stage", "train-match"},
                {"epoch", l.epoch},
                {"mean_loss", l.mean_loss},
                {"train_accuracy", l.train_accuracy},
                {"examples", l.examples}});
      });
      ensure_parent(tm_out);
      save_matcher(model, tm_out, tm_ner, tm_encoder);
      io.log({{"stage", "train-match"}, {"done", true}, {"model", tm_out}});
      return 0;
    }

    if (*mt) {
      const auto pipeline = MatchPipeline::load(mt_model);
      const auto pred = pipeline.classify(mt_a, mt_b);
      io.log({{"label", pred.label}, {"logits", pred.logits}});
      return 0;
    }

    if (*ev) {
      settings.fill(ev_avg, averaging, "/eval/averaging");
      const Averaging avg = averaging_from_name(averaging);
      const auto pipeline = MatchPipeline::load(ev_model);
      ConfusionMatrix cm;
      for (const auto& p : read_pairs_jsonl(ev_pairs)) cm.add(p.label, pipeline.classify(p.a, p.b).label);
      const json report = {{"format", "hieraddr-eval"},
                           {"version", 1},
                           {"pairs", ev_pairs},
                           {"confusion", cm.to_json()},
                           {"metrics", metrics(cm, avg).to_json()}};
      if (!ev_out.empty()) {
        ensure_parent(ev_out);
        write_file(ev_out, report.dump(2) + "\n");
      }
      io.log(report);
      return 0;
    }

    if (*ab) {
      settings.fill(ab_seed_opt, ab_seeds, "/ablation/seeds");
      settings.fill(ab_cseed, corpus_seed, "/seed");
      settings.fill(ab_train, n_train, "/corpus/train_pairs");
      settings.fill(ab_test, n_test, "/corpus/test_pairs");
      settings.fill(ab_avg, averaging, "/eval/averaging");
      settings.fill(nullptr, mix_spec, "/corpus/mix");
      AblationConfig cfg;
      cfg.registry = settings.registry(ab_reg, registry_path);
      cfg.averaging = averaging_from_name(averaging);
      settings.fill(nullptr, cfg.tagger.epochs, "/ablation/ner_epochs");
      cfg.encoder = encoder_config(settings);
      EncoderFlags ef;
      ef.n_epochs = cfg.pretrain.epochs;
      ef.examples = cfg.pretrain.max_examples;
      cfg.pretrain = pretrain_config(settings, ef, 0);
      MatcherFlags mf;
      cfg.matcher = matcher_config(settings, mf, 0);

      AblationCorpora corpora;
      fs::path dir = ab_corpus;
      if (dir.empty()) {
        dir = fs::path(ab_out).parent_path() / "ablation-corpus";
        fs::create_directories(dir);
        const DifficultyMix mix = mix_spec.empty() ? DifficultyMix{} : DifficultyMix::parse(mix_spec);
        gen_resolution_corpus(corpus_seed, kResolutionTrain + kResolutionDev, dir, cfg.registry);
        gen_matching_corpus(corpus_seed, n_train, mix, dir / "pairs_train.jsonl", "train", cfg.registry);
        gen_matching_corpus(corpus_seed, n_test, mix, dir / "pairs_test.jsonl", "test", cfg.registry);
        io.log({{"stage", "gen-corpus"}, {"dir", dir.string()}, {"seed", corpus_seed}});
      }
      corpora = {dir / "resolution_train.jsonl", dir / "resolution_dev.jsonl", dir / "pairs_train.jsonl",
                 dir / "pairs_test.jsonl"};
      const auto report = run_ablation(corpora, parse_seed_list(ab_seeds), cfg, [&](const json& j) { io.log(j); });
      ensure_parent(ab_out);
      write_file(ab_out, report.to_json().dump(2) + "\n");
      fs::path table_path = ab_out;
      table_path.replace_extension(".txt");
      write_file(table_path, report.table());
      err << report.table();
      io.log({{"stage", "ablate"}, {"done", true}, {"report", ab_out}, {"table", table_path.string()}});
      return 0;
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const json::exception& e) {
    err << "error: malformed data: " << e.what() << "\n";
    return 2;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace hieraddr
