#include "hieraddr/matcher.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "hieraddr/codec.hpp"

namespace hieraddr {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

LstmParams init_lstm(int input, int hidden, Rng& rng) {
  LstmParams p;
  const double s = 1.0 / std::sqrt(static_cast<double>(hidden));
  p.w_ih.resize(input, 4 * hidden);
  p.w_hh.resize(hidden, 4 * hidden);
  for (Eigen::Index i = 0; i < p.w_ih.size(); ++i) p.w_ih.data()[i] = rng.uniform(-s, s);
  for (Eigen::Index i = 0; i < p.w_hh.size(); ++i) p.w_hh.data()[i] = rng.uniform(-s, s);
  p.b = Matrix::Zero(1, 4 * hidden);
  p.b.middleCols(hidden, hidden).setOnes();  // forget gate
  return p;
}

// Runs one direction over the rows of x (already in processing order).
Eigen::VectorXd lstm_forward(const LstmParams& p, const Matrix& x, LstmCache& cache) {
  const Eigen::Index n = x.rows(), h = p.w_hh.rows();
  cache.x = x;
  cache.gates.resize(n, 4 * h);
  cache.cells.resize(n, h);
  cache.hidden.resize(n, h);
  Matrix z = (x * p.w_ih).rowwise() + p.b.row(0);
  Eigen::RowVectorXd hp = Eigen::RowVectorXd::Zero(h), cp = Eigen::RowVectorXd::Zero(h);
  for (Eigen::Index t = 0; t < n; ++t) {
    Eigen::RowVectorXd zt = z.row(t);
    zt.noalias() += hp * p.w_hh;
    for (Eigen::Index j = 0; j < h; ++j) {
      zt(j) = sigmoid(zt(j));
      zt(h + j) = sigmoid(zt(h + j));
      zt(2 * h + j) = std::tanh(zt(2 * h + j));
      zt(3 * h + j) = sigmoid(zt(3 * h + j));
    }
    cp = zt.segment(h, h).cwiseProduct(cp) + zt.segment(0, h).cwiseProduct(zt.segment(2 * h, h));
    hp = zt.segment(3 * h, h).cwiseProduct(cp.array().tanh().matrix());
    cache.gates.row(t) = zt;
    cache.cells.row(t) = cp;
    cache.hidden.row(t) = hp;
  }
  return hp.transpose();
}

// Backprop from d(final hidden). Returns d(x) in processing order.
Matrix lstm_backward(const LstmParams& p, const LstmCache& cache, const Eigen::VectorXd& d_final, LstmParams& g) {
  const Eigen::Index n = cache.x.rows(), h = p.w_hh.rows();
  Matrix dz(n, 4 * h);
  Eigen::RowVectorXd dh = d_final.transpose(), dc = Eigen::RowVectorXd::Zero(h);
  for (Eigen::Index t = n - 1; t >= 0; --t) {
    const auto gt = cache.gates.row(t);
    const Eigen::RowVectorXd tc = cache.cells.row(t).array().tanh();
    const Eigen::RowVectorXd c_prev = t > 0 ? Eigen::RowVectorXd(cache.cells.row(t - 1)) : Eigen::RowVectorXd::Zero(h);
    for (Eigen::Index j = 0; j < h; ++j) {
      const double i = gt(j), f = gt(h + j), gg = gt(2 * h + j), o = gt(3 * h + j);
      const double d_o = dh(j) * tc(j);
      const double c_grad = dc(j) + dh(j) * o * (1.0 - tc(j) * tc(j));
      dz(t, j) = c_grad * gg * i * (1.0 - i);
      dz(t, h + j) = c_grad * c_prev(j) * f * (1.0 - f);
      dz(t, 2 * h + j) = c_grad * i * (1.0 - gg * gg);
      dz(t, 3 * h + j) = d_o * o * (1.0 - o);
      dc(j) = c_grad * f;
    }
    dh.noalias() = dz.row(t) * p.w_hh.transpose();
  }
  if (n > 1) g.w_hh.noalias() += cache.hidden.topRows(n - 1).transpose() * dz.bottomRows(n - 1);
  g.w_ih.noalias() += cache.x.transpose() * dz;
  g.b += dz.colwise().sum();
  return dz * p.w_ih.transpose();
}

}  // namespace

// ---- splicing ----

std::vector<std::string> branch_tokens(const TaggedAddress& ta, int branch, const LabelRegistry& registry) {
  std::vector<std::string> out;
  if (branch == kWholeBranch) {
    for (const auto& t : ta.tokens) out.push_back(t.text);
    return out;
  }
  for (const int level : registry.levels_in_group(branch))
    for (const auto& s : ta.spans)
      if (s.level == level)
        for (std::size_t i = s.start; i < s.end; ++i) out.push_back(ta.tokens[i].text);
  return out;
}

SpliceInput splice(const TaggedAddress& a, const TaggedAddress& b, int branch, const LabelRegistry& registry,
                   const Vocabulary& vocab, std::size_t length) {
  if (length < 3) throw ConfigError("splice length must be at least 3");
  const auto ta = branch_tokens(a, branch, registry);
  const auto tb = branch_tokens(b, branch, registry);
  const std::size_t budget = length - 3;
  std::size_t na = ta.size(), nb = tb.size();
  if (na + nb > budget) {
    na = std::min(na, std::max(budget - std::min(nb, budget), budget / 2));
    nb = std::min(nb, budget - na);
  }
  SpliceInput s;
  s.branch = branch;
  s.ids.reserve(length);
  s.ids.push_back(Vocabulary::kCls);
  for (std::size_t i = 0; i < na; ++i) s.ids.push_back(vocab.id(ta[i]));
  s.ids.push_back(Vocabulary::kSep);
  for (std::size_t i = 0; i < nb; ++i) s.ids.push_back(vocab.id(tb[i]));
  s.ids.push_back(Vocabulary::kSep);
  s.content = s.ids.size();
  s.ids.resize(length, Vocabulary::kPad);
  return s;
}

// ---- BiLSTM ----

BiLstm BiLstm::init(int input, int hidden, bool tied, Rng& rng) {
  BiLstm u;
  u.hidden = hidden;
  u.tied = tied;
  u.fwd = init_lstm(input, hidden, rng);
  if (!tied) u.bwd = init_lstm(input, hidden, rng);
  return u;
}

Eigen::VectorXd extract_features(const BiLstm& unit, const Matrix& encoded, const std::vector<char>& pad,
                                 BiLstmCache& cache) {
  cache.rows.clear();
  for (Eigen::Index r = 0; r < encoded.rows(); ++r)
    if (pad.empty() || !pad[static_cast<std::size_t>(r)]) cache.rows.push_back(r);
  Eigen::VectorXd feature = Eigen::VectorXd::Zero(2 * unit.hidden);
  if (cache.rows.empty()) return feature;
  const auto n = static_cast<Eigen::Index>(cache.rows.size());
  Matrix xf(n, encoded.cols()), xb(n, encoded.cols());
  for (Eigen::Index t = 0; t < n; ++t) {
    xf.row(t) = encoded.row(cache.rows[static_cast<std::size_t>(t)]);
    xb.row(n - 1 - t) = xf.row(t);
  }
  feature.head(unit.hidden) = lstm_forward(unit.fwd, xf, cache.fwd);
  feature.tail(unit.hidden) = lstm_forward(unit.backward_params(), xb, cache.bwd);
  return feature;
}

Eigen::VectorXd extract_features(const BiLstm& unit, const Matrix& encoded, const std::vector<char>& pad) {
  BiLstmCache cache;
  return extract_features(unit, encoded, pad, cache);
}

Matrix extract_features_backward(const BiLstm& unit, const BiLstmCache& cache, const Eigen::VectorXd& d_feature,
                                 Eigen::Index encoded_rows, BiLstm& grads) {
  Matrix d_encoded = Matrix::Zero(encoded_rows, unit.fwd.w_ih.rows());
  if (cache.rows.empty()) return d_encoded;
  const Matrix dxf = lstm_backward(unit.fwd, cache.fwd, d_feature.head(unit.hidden), grads.fwd);
  const Matrix dxb =
      lstm_backward(unit.backward_params(), cache.bwd, d_feature.tail(unit.hidden), grads.backward_params());
  const auto n = static_cast<Eigen::Index>(cache.rows.size());
  for (Eigen::Index t = 0; t < n; ++t)
    d_encoded.row(cache.rows[static_cast<std::size_t>(t)]) += dxf.row(t) + dxb.row(n - 1 - t);
  return d_encoded;
}

// ---- model ----

json MatcherConfig::to_json() const {
  return {{"hidden", hidden},
          {"ablate_elements", ablate_elements},
          {"finetune_encoder", finetune_encoder},
          {"tie_directions", tie_directions},
          {"swap_augment", swap_augment},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"optimizer", optimizer_name(optimizer)},
          {"learning_rate", learning_rate},
          {"momentum", momentum},
          {"clip_norm", clip_norm},
          {"seed", seed}};
}

MatcherModel::MatcherModel(LabelRegistry registry, const EncoderConfig& encoder, int hidden, bool ablate_elements,
                           bool tie_directions, std::uint64_t seed)
    : registry_(std::move(registry)),
      ablate_elements_(ablate_elements),
      hidden_(hidden),
      input_dim_(encoder.dim),
      whole_len_(static_cast<std::size_t>(encoder.whole_len)),
      element_len_(static_cast<std::size_t>(encoder.element_len)) {
  if (hidden <= 0) throw ConfigError("matcher hidden size must be positive");
  if (!ablate_elements)
    for (std::size_t g = 0; g < registry_.groups().size(); ++g) branches_.push_back(static_cast<int>(g));
  branches_.push_back(kWholeBranch);
  Rng rng(derive_seed(seed, "matcher-init"));
  for (std::size_t k = 0; k < branches_.size(); ++k) units_.push_back(BiLstm::init(input_dim_, hidden, tie_directions, rng));
  const auto f = static_cast<Eigen::Index>(branches_.size() * 2 * static_cast<std::size_t>(hidden));
  const double s = 1.0 / std::sqrt(static_cast<double>(f));
  cls_w_.resize(f, 3);
  for (Eigen::Index i = 0; i < cls_w_.size(); ++i) cls_w_.data()[i] = rng.uniform(-s, s);
  cls_b_ = Matrix::Zero(1, 3);
}

std::size_t MatcherModel::branch_length(int branch) const {
  return branch == kWholeBranch ? whole_len_ : element_len_;
}

std::string MatcherModel::branch_name(int branch) const {
  return branch == kWholeBranch ? "WHOLE" : registry_.groups()[static_cast<std::size_t>(branch)];
}

std::vector<std::pair<std::string, Matrix*>> MatcherModel::tensors() {
  std::vector<std::pair<std::string, Matrix*>> out;
  for (std::size_t k = 0; k < units_.size(); ++k) {
    const std::string p = branch_name(branches_[k]) + ".";
    auto& u = units_[k];
    out.emplace_back(p + "fwd.w_ih", &u.fwd.w_ih);
    out.emplace_back(p + "fwd.w_hh", &u.fwd.w_hh);
    out.emplace_back(p + "fwd.b", &u.fwd.b);
    if (!u.tied) {
      out.emplace_back(p + "bwd.w_ih", &u.bwd.w_ih);
      out.emplace_back(p + "bwd.w_hh", &u.bwd.w_hh);
      out.emplace_back(p + "bwd.b", &u.bwd.b);
    }
  }
  out.emplace_back("classifier.w", &cls_w_);
  out.emplace_back("classifier.b", &cls_b_);
  return out;
}

std::vector<std::pair<std::string, const Matrix*>> MatcherModel::tensors() const {
  std::vector<std::pair<std::string, const Matrix*>> out;
  for (auto& [name, m] : const_cast<MatcherModel*>(this)->tensors()) out.emplace_back(name, m);
  return out;
}

MatcherModel MatcherModel::zeros_like() const {
  MatcherModel z = *this;
  z.own_encoder_.reset();
  for (auto& [name, m] : z.tensors()) m->setZero();
  return z;
}

json MatcherModel::to_json() const {
  json tensors = json::object();
  for (const auto& [name, m] : this->tensors()) tensors[name] = matrix_to_json(*m);
  json branch_names = json::array();
  for (const int b : branches_) branch_names.push_back(branch_name(b));
  json j = {{"format", "hieraddr-matcher"},
            {"version", kFormatVersion},
            {"registry", registry_.to_json()},
            {"branches", branch_names},
            {"ablate_elements", ablate_elements_},
            {"hidden", hidden_},
            {"input_dim", input_dim_},
            {"whole_len", whole_len_},
            {"element_len", element_len_},
            {"tied", !units_.empty() && units_.front().tied},
            {"tensors", tensors}};
  if (own_encoder_) j["finetuned_encoder"] = own_encoder_->to_json();
  return j;
}

MatcherModel MatcherModel::from_json(const json& j) {
  EncoderConfig enc;
  enc.dim = j.at("input_dim").get<int>();
  enc.heads = 1;
  enc.whole_len = j.at("whole_len").get<int>();
  enc.element_len = j.at("element_len").get<int>();
  MatcherModel m(LabelRegistry::from_json(j.at("registry")), enc, j.at("hidden").get<int>(),
                 j.at("ablate_elements").get<bool>(), j.at("tied").get<bool>(), 0);
  json names = json::array();
  for (const int b : m.branches_) names.push_back(m.branch_name(b));
  if (names != j.at("branches")) throw ConfigError("matcher branch list does not match its registry");
  const auto& tensors = j.at("tensors");
  for (auto& [name, t] : m.tensors()) {
    if (!tensors.contains(name)) throw FormatError("matcher file lacks tensor " + name);
    Matrix loaded = matrix_from_json(tensors.at(name));
    if (loaded.rows() != t->rows() || loaded.cols() != t->cols())
      throw FormatError("matcher tensor " + name + " has the wrong shape");
    *t = std::move(loaded);
  }
  if (j.contains("finetuned_encoder")) m.own_encoder_ = EncoderModel::from_json(j.at("finetuned_encoder"));
  return m;
}

// ---- classification ----

int argmax_label(const std::array<double, 3>& logits) {
  int best = 0;
  for (int c = 1; c < 3; ++c)
    if (logits[static_cast<std::size_t>(c)] > logits[static_cast<std::size_t>(best)]) best = c;
  return best;
}

namespace {

void check_compatible(const MatcherModel& model, const EncoderModel& encoder) {
  if (encoder.config().dim != model.input_dim())
    throw ConfigError("encoder dimension " + std::to_string(encoder.config().dim) + " does not match matcher input " +
                      std::to_string(model.input_dim()));
}

void check_spans(const MatcherModel& model, const TaggedAddress& ta) {
  for (const auto& s : ta.spans)
    if (s.level < 0 || static_cast<std::size_t>(s.level) >= model.registry().size())
      throw ConfigError("element level " + std::to_string(s.level) + " is outside the matcher's registry");
}

struct Forward {
  std::vector<EncoderCache> encoder_caches;
  std::vector<BiLstmCache> unit_caches;
  std::vector<Eigen::Index> rows;
  Eigen::VectorXd feature;
  std::array<double, 3> logits{};
};

// Only the non-PAD prefix is encoded: PAD keys are masked, so the prefix rows
// are the same as for the padded input, and the LSTM skips PAD rows.
Matrix encode_splice(const EncoderModel& encoder, const SpliceInput& s, EncoderCache& cache) {
  return encoder.forward(std::span<const int>(s.ids).first(s.content), cache);
}

// `encoded`, when given, holds precomputed encoder outputs per branch (frozen
// encoder); no encoder caches are kept then.
void forward(const MatcherModel& model, const EncoderModel& encoder, const MatchExample& ex, Forward& fw,
             const std::vector<Matrix>* encoded = nullptr) {
  const std::size_t k = model.branches().size();
  const auto h2 = static_cast<Eigen::Index>(2 * model.hidden());
  fw.encoder_caches.resize(k);
  fw.unit_caches.resize(k);
  fw.rows.resize(k);
  fw.feature.resize(static_cast<Eigen::Index>(k) * h2);
  for (std::size_t b = 0; b < k; ++b) {
    Matrix fresh;
    if (!encoded) fresh = encode_splice(encoder, ex.splices[b], fw.encoder_caches[b]);
    const Matrix& enc = encoded ? (*encoded)[b] : fresh;
    fw.rows[b] = enc.rows();
    fw.feature.segment(static_cast<Eigen::Index>(b) * h2, h2) =
        extract_features(model.units()[b], enc, {}, fw.unit_caches[b]);
  }
  const Eigen::RowVectorXd z = fw.feature.transpose() * model.classifier_w() + model.classifier_b().row(0);
  for (int c = 0; c < 3; ++c) fw.logits[static_cast<std::size_t>(c)] = z(c);
}

double cross_entropy(const std::array<double, 3>& logits, int label, std::array<double, 3>* probs) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (const double l : logits) z += std::exp(l - mx);
  if (probs)
    for (std::size_t c = 0; c < 3; ++c) (*probs)[c] = std::exp(logits[c] - mx) / z;
  return std::log(z) + mx - logits[static_cast<std::size_t>(label)];
}

double forward_backward(const MatcherModel& model, const EncoderModel& encoder, const MatchExample& ex,
                        MatcherModel* grads, EncoderParams* encoder_grads, double scale, std::array<double, 3>* logits,
                        const std::vector<Matrix>* encoded = nullptr) {
  Forward fw;
  forward(model, encoder, ex, fw, encoded);
  if (logits) *logits = fw.logits;
  std::array<double, 3> p{};
  const double loss = cross_entropy(fw.logits, ex.label, &p);
  if (!grads) return loss;
  Eigen::RowVectorXd dz(3);
  for (int c = 0; c < 3; ++c) dz(c) = (p[static_cast<std::size_t>(c)] - (c == ex.label ? 1.0 : 0.0)) * scale;
  grads->classifier_w().noalias() += fw.feature * dz;
  grads->classifier_b() += dz;
  const Eigen::VectorXd dfeature = model.classifier_w() * dz.transpose();
  const auto h2 = static_cast<Eigen::Index>(2 * model.hidden());
  for (std::size_t b = 0; b < model.branches().size(); ++b) {
    const Matrix d_enc = extract_features_backward(model.units()[b], fw.unit_caches[b],
                                                   dfeature.segment(static_cast<Eigen::Index>(b) * h2, h2),
                                                   fw.rows[b], grads->units()[b]);
    if (encoder_grads) encoder.backward(fw.encoder_caches[b], d_enc, *encoder_grads);
  }
  return loss;
}

}  // namespace

MatchExample make_example(const MatcherModel& model, const Vocabulary& vocab, const TaggedAddress& a,
                          const TaggedAddress& b, int label) {
  check_spans(model, a);
  check_spans(model, b);
  MatchExample ex;
  ex.label = label;
  for (const int branch : model.branches())
    ex.splices.push_back(splice(a, b, branch, model.registry(), vocab, model.branch_length(branch)));
  return ex;
}

MatchPrediction classify_pair(const MatcherModel& model, const EncoderModel& encoder, const TaggedAddress& a,
                              const TaggedAddress& b, bool ablate_elements) {
  if (ablate_elements != model.ablate_elements())
    throw ConfigError(model.ablate_elements() ? "matcher was trained without element branches"
                                              : "matcher was trained with element branches");
  check_compatible(model, encoder);
  const auto ex = make_example(model, encoder.vocab(), a, b, 0);
  Forward fw;
  forward(model, encoder, ex, fw);
  MatchPrediction pred;
  pred.logits = fw.logits;
  pred.label = argmax_label(fw.logits);
  const auto h2 = static_cast<Eigen::Index>(2 * model.hidden());
  for (std::size_t k = 0; k < model.branches().size(); ++k)
    pred.branch_norms.push_back(fw.feature.segment(static_cast<Eigen::Index>(k) * h2, h2).norm());
  return pred;
}

double matcher_loss(const MatcherModel& model, const EncoderModel& encoder, const MatchExample& example,
                    MatcherModel* grads, EncoderParams* encoder_grads, double scale) {
  check_compatible(model, encoder);
  return forward_backward(model, encoder, example, grads, encoder_grads, scale, nullptr);
}

// ---- training ----

MatcherModel train_matcher_resolved(const std::vector<std::pair<TaggedAddress, TaggedAddress>>& sides,
                                    const std::vector<int>& labels, const LabelRegistry& registry,
                                    const EncoderModel& encoder, const MatcherConfig& config,
                                    const std::function<void(const MatcherEpochLog&)>& on_epoch) {
  if (sides.empty()) throw InvariantError("matching corpus is empty");
  if (sides.size() != labels.size()) throw InvariantError("pair and label counts differ");
  if (config.epochs <= 0 || config.batch_size <= 0) throw ConfigError("epochs and batch size must be positive");
  MatcherModel model(registry, encoder.config(), config.hidden, config.ablate_elements, config.tie_directions,
                     derive_seed(config.seed, "train-match"));
  std::optional<EncoderModel> tuned;
  if (config.finetune_encoder) tuned = encoder;
  const EncoderModel& enc = tuned ? *tuned : encoder;

  std::vector<MatchExample> examples;
  for (std::size_t i = 0; i < sides.size(); ++i) {
    const int label = labels[i];
    if (label < 0 || label > 2) throw InvariantError("match label outside {0,1,2}");
    examples.push_back(make_example(model, enc.vocab(), sides[i].first, sides[i].second, label));
    if (config.swap_augment && label != 1)
      examples.push_back(make_example(model, enc.vocab(), sides[i].second, sides[i].first, label));
  }

  std::vector<Matrix*> params;
  for (auto& [name, m] : model.tensors()) params.push_back(m);
  MatcherModel grads = model.zeros_like();
  std::vector<const Matrix*> grad_ptrs;
  for (auto& [name, m] : grads.tensors()) grad_ptrs.push_back(m);
  std::optional<EncoderParams> enc_grads;
  if (tuned) {
    enc_grads = tuned->params().zeros_like();
    for (auto& [name, m] : tuned->params().tensors()) params.push_back(m);
    for (auto& [name, m] : enc_grads->tensors()) grad_ptrs.push_back(m);
  }
  // A frozen encoder gives the same outputs every epoch, so encode once.
  std::vector<std::vector<Matrix>> encoded;
  if (!tuned) {
    encoded.resize(examples.size());
    EncoderCache scratch;
    for (std::size_t i = 0; i < examples.size(); ++i)
      for (const auto& s : examples[i].splices) encoded[i].push_back(encode_splice(enc, s, scratch));
  }
  Optimizer opt(config.optimizer, config.learning_rate, config.momentum, config.clip_norm);
  Rng rng(derive_seed(config.seed, "train-match-order"));
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto batch = static_cast<std::size_t>(config.batch_size);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    rng.shuffle(order);
    double total = 0.0;
    std::size_t correct = 0;
    for (std::size_t s = 0; s < order.size(); s += batch) {
      const std::size_t e = std::min(order.size(), s + batch);
      for (auto& [name, m] : grads.tensors()) m->setZero();
      if (enc_grads)
        for (auto& [name, m] : enc_grads->tensors()) m->setZero();
      const double scale = 1.0 / static_cast<double>(e - s);
      for (std::size_t k = s; k < e; ++k) {
        std::array<double, 3> logits{};
        const auto& ex = examples[order[k]];
        total += forward_backward(model, enc, ex, &grads, enc_grads ? &*enc_grads : nullptr, scale, &logits,
                                  encoded.empty() ? nullptr : &encoded[order[k]]);
        correct += argmax_label(logits) == ex.label;
      }
      opt.step(params, grad_ptrs);
    }
    if (on_epoch)
      on_epoch({epoch, total / static_cast<double>(examples.size()),
                static_cast<double>(correct) / static_cast<double>(examples.size()), examples.size()});
  }
  if (tuned) model.own_encoder() = std::move(tuned);
  return model;
}

MatcherModel train_matcher(const std::vector<MatchPair>& corpus, const TaggerModel& resolver,
                           const EncoderModel& encoder, const MatcherConfig& config,
                           const std::function<void(const MatcherEpochLog&)>& on_epoch) {
  if (corpus.empty()) throw InvariantError("matching corpus is empty");
  std::map<std::string, TaggedAddress> resolved;
  const auto get = [&](const std::string& text) -> const TaggedAddress& {
    auto it = resolved.find(text);
    if (it == resolved.end()) it = resolved.emplace(text, resolve(resolver, text)).first;
    return it->second;
  };
  std::vector<std::pair<TaggedAddress, TaggedAddress>> sides;
  std::vector<int> labels;
  for (const auto& p : corpus) {
    validate_pair(p);
    sides.emplace_back(get(p.a), get(p.b));
    labels.push_back(p.label);
  }
  return train_matcher_resolved(sides, labels, resolver.registry(), encoder, config, on_epoch);
}

// ---- pipeline persistence ----

namespace {

json reference(const std::filesystem::path& target, const std::filesystem::path& from_dir) {
  const auto abs_target = std::filesystem::absolute(target);
  const auto abs_dir = std::filesystem::absolute(from_dir.empty() ? "." : from_dir);
  return {{"path", std::filesystem::relative(abs_target, abs_dir).generic_string()},
          {"sha256", sha256_file(target)}};
}

std::filesystem::path dereference(const json& ref, const std::filesystem::path& dir, std::string_view what) {
  const std::filesystem::path p = dir / ref.at("path").get<std::string>();
  const std::string actual = sha256_file(p);
  if (actual != ref.at("sha256").get<std::string>())
    throw FormatError(std::string(what) + " file " + p.string() + " does not match the hash recorded by the matcher");
  return p;
}

}  // namespace

void save_matcher(const MatcherModel& model, const std::filesystem::path& path,
                  const std::filesystem::path& resolver_path, const std::filesystem::path& encoder_path) {
  json j = model.to_json();
  j["resolver"] = reference(resolver_path, path.parent_path());
  j["encoder"] = reference(encoder_path, path.parent_path());
  write_file(path, j.dump());
}

MatchPipeline MatchPipeline::load(const std::filesystem::path& matcher_path) {
  const json j = load_artifact(matcher_path, "hieraddr-matcher", MatcherModel::kFormatVersion);
  const auto dir = matcher_path.parent_path();
  MatchPipeline p{TaggerModel::load(dereference(j.at("resolver"), dir, "resolver")),
                  EncoderModel::load(dereference(j.at("encoder"), dir, "encoder")), MatcherModel::from_json(j)};
  if (!(p.resolver.registry() == p.matcher.registry()))
    throw ConfigError("resolver and matcher were built with different registries");
  check_compatible(p.matcher, p.active_encoder());
  return p;
}

MatchPrediction MatchPipeline::classify(const std::string& a, const std::string& b) const {
  return classify_pair(matcher, active_encoder(), resolve(resolver, a), resolve(resolver, b),
                       matcher.ablate_elements());
}

}  // namespace hieraddr
