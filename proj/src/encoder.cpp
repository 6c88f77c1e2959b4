#include "hieraddr/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <numeric>

#include "hieraddr/codec.hpp"

namespace hieraddr {

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
const char* const kReservedNames[] = {"[PAD]", "[MASK]", "[UNK]", "[CLS]", "[SEP]"};

double gelu(double x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

double gelu_grad(double x) {
  constexpr double c = 0.7978845608028654;
  const double u = c * (x + 0.044715 * x * x * x);
  const double t = std::tanh(u);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3 * 0.044715 * x * x);
}

void layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias, Matrix& x_hat, Eigen::VectorXd& inv_std,
                Matrix& y) {
  const auto d = static_cast<double>(x.cols());
  const Eigen::VectorXd mean = x.rowwise().sum() / d;
  x_hat = x.colwise() - mean;
  inv_std = ((x_hat.array().square().rowwise().sum() / d) + kLayerNormEps).rsqrt();
  x_hat = inv_std.asDiagonal() * x_hat;
  y = (x_hat.array().rowwise() * gain.row(0).array()).rowwise() + bias.row(0).array();
}

Matrix layer_norm_backward(const Matrix& dy, const Matrix& x_hat, const Eigen::VectorXd& inv_std, const Matrix& gain,
                           Matrix& d_gain, Matrix& d_bias) {
  d_gain += (dy.array() * x_hat.array()).colwise().sum().matrix();
  d_bias += dy.colwise().sum();
  const Matrix dx_hat = dy.array().rowwise() * gain.row(0).array();
  const auto d = static_cast<double>(dy.cols());
  const Eigen::VectorXd sum_dx = dx_hat.rowwise().sum();
  const Eigen::VectorXd sum_dx_x = (dx_hat.array() * x_hat.array()).rowwise().sum();
  Matrix dx = (d * dx_hat).colwise() - sum_dx;
  dx -= sum_dx_x.asDiagonal() * x_hat;
  return (inv_std / d).asDiagonal() * dx;
}

void init_uniform(Matrix& m, Eigen::Index rows, Eigen::Index cols, double scale, Rng& rng) {
  m.resize(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng.uniform(-scale, scale);
}

void init_const(Matrix& m, Eigen::Index rows, Eigen::Index cols, double value) {
  m = Matrix::Constant(rows, cols, value);
}

}  // namespace

// ---- vocabulary ----

Vocabulary::Vocabulary() {
  for (const char* name : kReservedNames) add(name);
}

void Vocabulary::add(const std::string& token) {
  if (ids_.emplace(token, static_cast<int>(tokens_.size())).second) tokens_.push_back(token);
}

Vocabulary Vocabulary::build(const std::vector<TaggedAddress>& corpus) {
  Vocabulary v;
  for (const auto& ta : corpus)
    for (const auto& t : ta.tokens) v.add(t.text);
  return v;
}

int Vocabulary::id(const std::string& token) const {
  const auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

std::vector<int> Vocabulary::encode(const std::vector<Token>& tokens) const {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t.text));
  return out;
}

json Vocabulary::to_json() const { return tokens_; }

Vocabulary Vocabulary::from_json(const json& j) {
  Vocabulary v;
  const auto tokens = j.get<std::vector<std::string>>();
  if (tokens.size() < kReserved) throw FormatError("vocabulary lacks reserved tokens");
  for (int i = 0; i < kReserved; ++i)
    if (tokens[static_cast<std::size_t>(i)] != kReservedNames[i]) throw FormatError("vocabulary reserved ids differ");
  for (const auto& t : tokens) {
    if (v.ids_.count(t) && v.ids_.at(t) >= kReserved) throw FormatError("duplicate vocabulary entry: " + t);
    v.add(t);
  }
  if (v.size() != tokens.size()) throw FormatError("duplicate vocabulary entries");
  return v;
}

// ---- config ----

void EncoderConfig::validate() const {
  if (dim <= 0 || layers < 0 || heads <= 0 || ff_dim <= 0) throw ConfigError("encoder dimensions must be positive");
  if (dim % heads != 0) throw ConfigError("encoder dim must be divisible by heads");
  if (max_len < 2 || whole_len < 2 || element_len < 2) throw ConfigError("sequence lengths must be >= 2");
}

json EncoderConfig::to_json() const {
  return {{"dim", dim},         {"layers", layers},       {"heads", heads},
          {"ff_dim", ff_dim},   {"max_len", max_len},     {"whole_len", whole_len},
          {"element_len", element_len}};
}

EncoderConfig EncoderConfig::from_json(const json& j) {
  EncoderConfig c;
  c.dim = j.value("dim", c.dim);
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.ff_dim = j.value("ff_dim", c.ff_dim);
  c.max_len = j.value("max_len", c.max_len);
  c.whole_len = j.value("whole_len", c.whole_len);
  c.element_len = j.value("element_len", c.element_len);
  c.validate();
  return c;
}

// ---- parameters ----

std::vector<std::pair<std::string, Matrix*>> EncoderParams::tensors() {
  std::vector<std::pair<std::string, Matrix*>> out;
  out.emplace_back("token_embedding", &token_embedding);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto& L = layers[l];
    const std::string p = "layer" + std::to_string(l) + ".";
    for (auto [name, m] : {std::pair{"wq", &L.wq}, {"bq", &L.bq}, {"wk", &L.wk}, {"bk", &L.bk}, {"wv", &L.wv},
                           {"bv", &L.bv}, {"wo", &L.wo}, {"bo", &L.bo}, {"ln1_gain", &L.ln1_gain},
                           {"ln1_bias", &L.ln1_bias}, {"w1", &L.w1}, {"b1", &L.b1}, {"w2", &L.w2}, {"b2", &L.b2},
                           {"ln2_gain", &L.ln2_gain}, {"ln2_bias", &L.ln2_bias}})
      out.emplace_back(p + name, m);
  }
  out.emplace_back("head_w", &head_w);
  out.emplace_back("head_b", &head_b);
  return out;
}

std::vector<std::pair<std::string, const Matrix*>> EncoderParams::tensors() const {
  std::vector<std::pair<std::string, const Matrix*>> out;
  for (auto& [name, m] : const_cast<EncoderParams*>(this)->tensors()) out.emplace_back(name, m);
  return out;
}

EncoderParams EncoderParams::zeros_like() const {
  EncoderParams z = *this;
  for (auto& [name, m] : z.tensors()) m->setZero();
  return z;
}

std::size_t EncoderParams::count() const {
  std::size_t n = 0;
  for (const auto& [name, m] : tensors()) n += static_cast<std::size_t>(m->size());
  return n;
}

Matrix positional_encoding(std::size_t n, int dim) {
  Matrix pe(static_cast<Eigen::Index>(n), dim);
  for (std::size_t pos = 0; pos < n; ++pos)
    for (int i = 0; i < dim; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(i - i % 2) / dim);
      const double angle = static_cast<double>(pos) * rate;
      pe(static_cast<Eigen::Index>(pos), i) = i % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  return pe;
}

EncoderModel::EncoderModel(EncoderConfig config, Vocabulary vocab, std::uint64_t seed)
    : config_(config), vocab_(std::move(vocab)) {
  config_.validate();
  Rng rng(derive_seed(seed, "encoder-init"));
  const int d = config_.dim, f = config_.ff_dim;
  const auto v = static_cast<Eigen::Index>(vocab_.size());
  init_uniform(params_.token_embedding, v, d, std::sqrt(3.0), rng);  // unit variance
  const double sd = std::sqrt(3.0 / d), sf = std::sqrt(3.0 / f);
  params_.layers.resize(static_cast<std::size_t>(config_.layers));
  for (auto& L : params_.layers) {
    init_uniform(L.wq, d, d, sd, rng);
    init_uniform(L.wk, d, d, sd, rng);
    init_uniform(L.wv, d, d, sd, rng);
    init_uniform(L.wo, d, d, sd, rng);
    init_const(L.bq, 1, d, 0.0);
    init_const(L.bk, 1, d, 0.0);
    init_const(L.bv, 1, d, 0.0);
    init_const(L.bo, 1, d, 0.0);
    init_const(L.ln1_gain, 1, d, 1.0);
    init_const(L.ln1_bias, 1, d, 0.0);
    init_uniform(L.w1, d, f, sd, rng);
    init_const(L.b1, 1, f, 0.0);
    init_uniform(L.w2, f, d, sf, rng);
    init_const(L.b2, 1, d, 0.0);
    init_const(L.ln2_gain, 1, d, 1.0);
    init_const(L.ln2_bias, 1, d, 0.0);
  }
  // Small head: initial predictions are close to uniform over the vocabulary.
  init_uniform(params_.head_w, d, v, 0.01, rng);
  init_const(params_.head_b, 1, v, 0.0);
}

Matrix EncoderModel::forward(std::span<const int> ids, EncoderCache& cache) const {
  const auto n = static_cast<Eigen::Index>(ids.size());
  const int d = config_.dim, heads = config_.heads, dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  cache.ids.assign(ids.begin(), ids.end());
  cache.pad.assign(ids.size(), 0);
  bool any_pad = false;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= static_cast<int>(vocab_.size())) throw InvariantError("token id out of range");
    if (ids[i] == Vocabulary::kPad) cache.pad[i] = 1, any_pad = true;
  }
  cache.layers.resize(params_.layers.size());

  Matrix x = positional_encoding(ids.size(), d);
  for (Eigen::Index i = 0; i < n; ++i) x.row(i) += params_.token_embedding.row(ids[static_cast<std::size_t>(i)]);

  for (std::size_t l = 0; l < params_.layers.size(); ++l) {
    const auto& P = params_.layers[l];
    auto& C = cache.layers[l];
    C.input = x;
    C.q = (x * P.wq).rowwise() + P.bq.row(0);
    C.k = (x * P.wk).rowwise() + P.bk.row(0);
    C.v = (x * P.wv).rowwise() + P.bv.row(0);
    C.concat.resize(n, d);
    C.probs.resize(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      Matrix s = (C.q.middleCols(h * dh, dh) * C.k.middleCols(h * dh, dh).transpose()) * scale;
      if (any_pad)
        for (Eigen::Index j = 0; j < n; ++j)
          if (cache.pad[static_cast<std::size_t>(j)]) s.col(j).setConstant(kNegInf);
      for (Eigen::Index i = 0; i < n; ++i) {
        const double m = s.row(i).maxCoeff();
        if (m == kNegInf) {
          s.row(i).setZero();
          continue;
        }
        s.row(i) = (s.row(i).array() - m).exp();
        s.row(i) /= s.row(i).sum();
      }
      C.concat.middleCols(h * dh, dh).noalias() = s * C.v.middleCols(h * dh, dh);
      C.probs[static_cast<std::size_t>(h)] = std::move(s);
    }
    Matrix r1 = x + ((C.concat * P.wo).rowwise() + P.bo.row(0));
    layer_norm(r1, P.ln1_gain, P.ln1_bias, C.r1_hat, C.r1_inv_std, C.y1);
    C.h_pre = (C.y1 * P.w1).rowwise() + P.b1.row(0);
    C.h_act = C.h_pre.unaryExpr(&gelu);
    Matrix r2 = C.y1 + ((C.h_act * P.w2).rowwise() + P.b2.row(0));
    layer_norm(r2, P.ln2_gain, P.ln2_bias, C.r2_hat, C.r2_inv_std, x);
  }
  cache.output = x;
  return x;
}

void EncoderModel::backward(const EncoderCache& cache, const Matrix& d_output, EncoderParams& grads) const {
  const int d = config_.dim, heads = config_.heads, dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix dx = d_output;
  for (std::size_t l = params_.layers.size(); l-- > 0;) {
    const auto& P = params_.layers[l];
    const auto& C = cache.layers[l];
    auto& G = grads.layers[l];

    const Matrix dr2 = layer_norm_backward(dx, C.r2_hat, C.r2_inv_std, P.ln2_gain, G.ln2_gain, G.ln2_bias);
    G.w2.noalias() += C.h_act.transpose() * dr2;
    G.b2 += dr2.colwise().sum();
    const Matrix dh_pre = (dr2 * P.w2.transpose()).cwiseProduct(C.h_pre.unaryExpr(&gelu_grad));
    G.w1.noalias() += C.y1.transpose() * dh_pre;
    G.b1 += dh_pre.colwise().sum();
    Matrix dy1 = dr2;
    dy1.noalias() += dh_pre * P.w1.transpose();

    const Matrix dr1 = layer_norm_backward(dy1, C.r1_hat, C.r1_inv_std, P.ln1_gain, G.ln1_gain, G.ln1_bias);
    G.wo.noalias() += C.concat.transpose() * dr1;
    G.bo += dr1.colwise().sum();
    const Matrix dconcat = dr1 * P.wo.transpose();
    Matrix dq(dconcat.rows(), d), dk(dconcat.rows(), d), dv(dconcat.rows(), d);
    for (int h = 0; h < heads; ++h) {
      const Matrix& p = C.probs[static_cast<std::size_t>(h)];
      const auto dO = dconcat.middleCols(h * dh, dh);
      const Matrix dp = dO * C.v.middleCols(h * dh, dh).transpose();
      dv.middleCols(h * dh, dh).noalias() = p.transpose() * dO;
      const Eigen::VectorXd row_dot = (dp.array() * p.array()).rowwise().sum();
      const Matrix ds = (p.array() * (dp.colwise() - row_dot).array()).matrix() * scale;
      dq.middleCols(h * dh, dh).noalias() = ds * C.k.middleCols(h * dh, dh);
      dk.middleCols(h * dh, dh).noalias() = ds.transpose() * C.q.middleCols(h * dh, dh);
    }
    G.wq.noalias() += C.input.transpose() * dq;
    G.wk.noalias() += C.input.transpose() * dk;
    G.wv.noalias() += C.input.transpose() * dv;
    G.bq += dq.colwise().sum();
    G.bk += dk.colwise().sum();
    G.bv += dv.colwise().sum();
    dx = dr1;
    dx.noalias() += dq * P.wq.transpose();
    dx.noalias() += dk * P.wk.transpose();
    dx.noalias() += dv * P.wv.transpose();
  }
  for (std::size_t i = 0; i < cache.ids.size(); ++i)
    grads.token_embedding.row(cache.ids[i]) += dx.row(static_cast<Eigen::Index>(i));
}

Matrix EncoderModel::encode(std::span<const int> ids, int max_len) const {
  const auto limit = static_cast<std::size_t>(max_len > 0 ? max_len : config_.max_len);
  if (ids.size() > limit) {
    std::cerr << "warning: input of " << ids.size() << " tokens truncated to " << limit << "\n";
    ids = ids.first(limit);
  }
  EncoderCache cache;
  return forward(ids, cache);
}

json EncoderModel::to_json() const {
  json tensors = json::object();
  for (const auto& [name, m] : params_.tensors()) tensors[name] = matrix_to_json(*m);
  return {{"format", "hieraddr-encoder"}, {"version", kFormatVersion}, {"config", config_.to_json()},
          {"vocab", vocab_.to_json()},    {"tensors", tensors}};
}

EncoderModel EncoderModel::from_json(const json& j) {
  EncoderModel model(EncoderConfig::from_json(j.at("config")), Vocabulary::from_json(j.at("vocab")), 0);
  const auto& tensors = j.at("tensors");
  for (auto& [name, m] : model.params_.tensors()) {
    if (!tensors.contains(name)) throw FormatError("encoder file lacks tensor " + name);
    Matrix loaded = matrix_from_json(tensors.at(name));
    if (loaded.rows() != m->rows() || loaded.cols() != m->cols())
      throw FormatError("encoder tensor " + name + " has the wrong shape");
    *m = std::move(loaded);
  }
  return model;
}

void EncoderModel::save(const std::filesystem::path& path) const { write_file(path, to_json().dump()); }

EncoderModel EncoderModel::load(const std::filesystem::path& path) {
  return from_json(load_artifact(path, "hieraddr-encoder", kFormatVersion));
}

// ---- masking ----

const char* mask_mode_name(MaskMode mode) { return mode == MaskMode::WholeElement ? "wwm" : "single"; }

MaskMode mask_mode_from_name(std::string_view name) {
  if (name == "wwm") return MaskMode::WholeElement;
  if (name == "single") return MaskMode::SingleToken;
  throw ConfigError("unknown mask mode '" + std::string(name) + "' (expected wwm or single)");
}

MaskPlan select_mask_spans(const TaggedAddress& ta, double target_ratio, MaskMode mode, Rng& rng) {
  if (!(target_ratio >= 0.0 && target_ratio <= 1.0)) throw ConfigError("mask ratio must be in [0, 1]");
  MaskPlan plan;
  const std::size_t n = ta.tokens.size();
  if (n == 0) return plan;
  const auto reached = [&](std::size_t masked) {
    return static_cast<double>(masked) >= target_ratio * static_cast<double>(n);
  };
  std::size_t masked = 0;
  if (mode == MaskMode::WholeElement) {
    if (ta.spans.empty()) throw InvariantError("whole-element masking needs at least one element span");
    std::vector<std::size_t> order(ta.spans.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    for (const std::size_t k : order) {
      if (reached(masked)) break;
      plan.spans.emplace_back(ta.spans[k].start, ta.spans[k].end);
      masked += ta.spans[k].end - ta.spans[k].start;
    }
  } else {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    for (const std::size_t i : order) {
      if (reached(masked)) break;
      plan.spans.emplace_back(i, i + 1);
      ++masked;
    }
  }
  std::sort(plan.spans.begin(), plan.spans.end());
  for (const auto& [s, e] : plan.spans)
    for (std::size_t i = s; i < e; ++i) {
      const double u = rng.uniform();
      plan.positions.push_back(i);
      plan.actions.push_back(u < 0.8 ? MaskAction::Mask : u < 0.9 ? MaskAction::RandomReplace : MaskAction::Keep);
      plan.draws.push_back(rng.next());
    }
  return plan;
}

std::vector<int> apply_mask(std::span<const int> ids, const MaskPlan& plan, std::size_t vocab_size) {
  std::vector<int> out(ids.begin(), ids.end());
  const std::size_t ordinary = vocab_size > Vocabulary::kReserved ? vocab_size - Vocabulary::kReserved : 0;
  for (std::size_t k = 0; k < plan.positions.size(); ++k) {
    const std::size_t i = plan.positions[k];
    if (i >= out.size()) continue;
    switch (plan.actions[k]) {
      case MaskAction::Mask:
        out[i] = Vocabulary::kMask;
        break;
      case MaskAction::RandomReplace:
        out[i] = ordinary ? Vocabulary::kReserved + static_cast<int>(plan.draws[k] % ordinary) : Vocabulary::kMask;
        break;
      case MaskAction::Keep:
        break;
    }
  }
  return out;
}

namespace {

// Masked positions that survive truncation to [CLS] + (max_len - 2) + [SEP].
std::size_t predicted_count(const MaskPlan& plan, std::size_t length, int max_len) {
  const std::size_t limit = std::min(length, static_cast<std::size_t>(max_len - 2));
  return static_cast<std::size_t>(
      std::count_if(plan.positions.begin(), plan.positions.end(), [&](std::size_t p) { return p < limit; }));
}

// Loss summed (not averaged) over predicted positions; gradients scaled by
// `grad_scale` are accumulated into `grads` when given.
std::pair<double, std::size_t> mlm_accumulate(const EncoderModel& model, std::span<const int> ids,
                                              const MaskPlan& plan, EncoderParams* grads, double grad_scale) {
  const auto limit = static_cast<std::size_t>(model.config().max_len - 2);
  if (ids.size() > limit) ids = ids.first(limit);
  std::vector<std::size_t> targets;
  for (const std::size_t p : plan.positions)
    if (p < ids.size()) targets.push_back(p);
  if (targets.empty()) return {0.0, 0};

  const auto corrupted = apply_mask(ids, plan, model.vocab().size());
  std::vector<int> seq;
  seq.reserve(ids.size() + 2);
  seq.push_back(Vocabulary::kCls);
  seq.insert(seq.end(), corrupted.begin(), corrupted.end());
  seq.push_back(Vocabulary::kSep);

  EncoderCache cache;
  const Matrix out = model.forward(seq, cache);
  const auto m = static_cast<Eigen::Index>(targets.size());
  Matrix hm(m, out.cols());
  for (Eigen::Index r = 0; r < m; ++r) hm.row(r) = out.row(static_cast<Eigen::Index>(targets[r] + 1));
  const auto& P = model.params();
  Matrix logits = (hm * P.head_w).rowwise() + P.head_b.row(0);
  double loss = 0.0;
  for (Eigen::Index r = 0; r < m; ++r) {
    const double mx = logits.row(r).maxCoeff();
    logits.row(r) = (logits.row(r).array() - mx).exp();
    const double z = logits.row(r).sum();
    const int gold = ids[targets[static_cast<std::size_t>(r)]];
    loss += std::log(z) - std::log(logits(r, gold));
    logits.row(r) /= z;  // now softmax probabilities
    logits(r, gold) -= 1.0;
  }
  if (grads) {
    const Matrix dlogits = logits * grad_scale;
    grads->head_w.noalias() += hm.transpose() * dlogits;
    grads->head_b += dlogits.colwise().sum();
    const Matrix dhm = dlogits * P.head_w.transpose();
    Matrix dout = Matrix::Zero(out.rows(), out.cols());
    for (Eigen::Index r = 0; r < m; ++r) dout.row(static_cast<Eigen::Index>(targets[r] + 1)) += dhm.row(r);
    model.backward(cache, dout, *grads);
  }
  return {loss, targets.size()};
}

}  // namespace

MlmResult mlm_loss(const EncoderModel& model, std::span<const int> ids, const MaskPlan& plan) {
  MlmResult r;
  r.grads = model.params().zeros_like();
  const std::size_t count = predicted_count(plan, ids.size(), model.config().max_len);
  if (count == 0) return r;
  const auto [loss, n] = mlm_accumulate(model, ids, plan, &r.grads, 1.0 / static_cast<double>(count));
  r.loss = loss / static_cast<double>(n);
  r.predictions = n;
  return r;
}

double mlm_loss_value(const EncoderModel& model, std::span<const int> ids, const MaskPlan& plan) {
  const auto [loss, n] = mlm_accumulate(model, ids, plan, nullptr, 0.0);
  return n ? loss / static_cast<double>(n) : 0.0;
}

// ---- optimisation ----

OptimizerKind optimizer_from_name(std::string_view name) {
  if (name == "momentum") return OptimizerKind::Momentum;
  if (name == "adam") return OptimizerKind::Adam;
  throw ConfigError("unknown optimizer '" + std::string(name) + "' (expected momentum or adam)");
}

const char* optimizer_name(OptimizerKind kind) { return kind == OptimizerKind::Adam ? "adam" : "momentum"; }

double Optimizer::step(const std::vector<Matrix*>& params, const std::vector<const Matrix*>& grads) {
  if (first_.empty())
    for (const Matrix* p : params) {
      first_.push_back(Matrix::Zero(p->rows(), p->cols()));
      if (kind_ == OptimizerKind::Adam) second_.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
  double sq = 0.0;
  for (const Matrix* g : grads) sq += g->squaredNorm();
  const double norm = std::sqrt(sq);
  const double factor = clip_ > 0 && norm > clip_ ? clip_ / norm : 1.0;
  ++steps_;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (kind_ == OptimizerKind::Momentum) {
      first_[i] = momentum_ * first_[i] + factor * *grads[i];
      *params[i] -= lr_ * first_[i];
      continue;
    }
    constexpr double beta2 = 0.999, eps = 1e-8;
    first_[i] = momentum_ * first_[i] + (1 - momentum_) * factor * *grads[i];
    second_[i] = beta2 * second_[i] + (1 - beta2) * (factor * *grads[i]).cwiseAbs2();
    const double c1 = 1 - std::pow(momentum_, static_cast<double>(steps_));
    const double c2 = 1 - std::pow(beta2, static_cast<double>(steps_));
    params[i]->array() -= lr_ * (first_[i].array() / c1) / ((second_[i].array() / c2).sqrt() + eps);
  }
  return norm;
}

EncoderModel pretrain(const std::vector<TaggedAddress>& corpus, const EncoderConfig& config, MaskMode mode,
                      const PretrainConfig& train, const std::function<void(const PretrainEpochLog&)>& on_epoch) {
  if (corpus.empty()) throw InvariantError("pretraining corpus is empty");
  if (train.batch_size <= 0 || train.epochs <= 0) throw ConfigError("batch size and epochs must be positive");
  std::vector<const TaggedAddress*> usable;
  for (const auto& ta : corpus)
    if (!ta.tokens.empty() && (mode == MaskMode::SingleToken || !ta.spans.empty())) usable.push_back(&ta);
  if (usable.empty()) throw InvariantError("pretraining corpus has no maskable addresses");
  Rng rng(derive_seed(train.seed, "pretrain"));
  if (train.max_examples && usable.size() > train.max_examples) {
    rng.shuffle(usable);
    usable.resize(train.max_examples);
  }

  EncoderModel model(config, Vocabulary::build(corpus), derive_seed(train.seed, "pretrain-init"));
  std::vector<std::vector<int>> ids;
  ids.reserve(usable.size());
  for (const auto* ta : usable) ids.push_back(model.vocab().encode(ta->tokens));

  std::vector<Matrix*> params;
  for (auto& [name, m] : model.params().tensors()) params.push_back(m);
  EncoderParams grads = model.params().zeros_like();
  std::vector<const Matrix*> grad_ptrs;
  for (const auto& [name, m] : std::as_const(grads).tensors()) grad_ptrs.push_back(m);
  Optimizer opt(train.optimizer, train.learning_rate, train.momentum, train.clip_norm);

  std::vector<std::size_t> order(usable.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int epoch = 1; epoch <= train.epochs; ++epoch) {
    rng.shuffle(order);
    double total = 0.0;
    std::size_t seqs = 0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(train.batch_size)) {
      const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(train.batch_size));
      std::vector<MaskPlan> plans;
      for (std::size_t k = b; k < e; ++k)
        plans.push_back(select_mask_spans(*usable[order[k]], train.mask_ratio, mode, rng));
      for (auto& [name, m] : grads.tensors()) m->setZero();
      std::vector<std::size_t> counts;
      std::size_t batch_seqs = 0;
      for (std::size_t k = b; k < e; ++k) {
        counts.push_back(predicted_count(plans[k - b], ids[order[k]].size(), config.max_len));
        batch_seqs += counts.back() > 0;
      }
      if (batch_seqs == 0) continue;
      for (std::size_t k = b; k < e; ++k) {
        const std::size_t count = counts[k - b];
        if (count == 0) continue;
        const double scale = 1.0 / (static_cast<double>(count) * static_cast<double>(batch_seqs));
        const auto [loss, n] = mlm_accumulate(model, ids[order[k]], plans[k - b], &grads, scale);
        total += loss / static_cast<double>(n);
        ++seqs;
      }
      opt.step(params, grad_ptrs);
    }
    if (on_epoch) on_epoch({epoch, seqs ? total / static_cast<double>(seqs) : 0.0, seqs});
  }
  return model;
}

double masked_element_recovery(const EncoderModel& model, const std::vector<TaggedAddress>& corpus,
                               std::uint64_t seed) {
  Rng rng(derive_seed(seed, "recovery"));
  const auto& P = model.params();
  const auto limit = static_cast<std::size_t>(model.config().max_len - 2);
  std::size_t correct = 0, total = 0;
  for (const auto& ta : corpus) {
    if (ta.spans.empty() || ta.tokens.size() > limit) continue;
    const auto& span = ta.spans[rng.index(ta.spans.size())];
    const auto ids = model.vocab().encode(ta.tokens);
    std::vector<int> seq{Vocabulary::kCls};
    seq.insert(seq.end(), ids.begin(), ids.end());
    seq.push_back(Vocabulary::kSep);
    for (std::size_t i = span.start; i < span.end; ++i) seq[i + 1] = Vocabulary::kMask;
    const Matrix out = model.encode(seq);
    for (std::size_t i = span.start; i < span.end; ++i) {
      const Eigen::RowVectorXd logits = out.row(static_cast<Eigen::Index>(i + 1)) * P.head_w + P.head_b.row(0);
      Eigen::Index best = 0;
      for (Eigen::Index c = 1; c < logits.size(); ++c)
        if (logits(c) > logits(best)) best = c;
      correct += best == ids[i];
      ++total;
    }
  }
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

}  // namespace hieraddr
