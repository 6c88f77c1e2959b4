#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "hieraddr/core.hpp"
#include "hieraddr/rng.hpp"

namespace hieraddr {

using Matrix = Eigen::MatrixXd;

/// Character vocabulary with reserved ids for PAD, MASK, UNK, CLS and SEP.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kMask = 1;
  static constexpr int kUnk = 2;
  static constexpr int kCls = 3;
  static constexpr int kSep = 4;
  static constexpr int kReserved = 5;

  Vocabulary();
  /// Characters of the corpus in first-seen order.
  static Vocabulary build(const std::vector<TaggedAddress>& corpus);
  static Vocabulary from_json(const json& j);
  json to_json() const;

  int id(const std::string& token) const;
  std::vector<int> encode(const std::vector<Token>& tokens) const;
  const std::string& token(int id) const { return tokens_[static_cast<std::size_t>(id)]; }
  std::size_t size() const { return tokens_.size(); }

 private:
  void add(const std::string& token);
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

struct EncoderConfig {
  int dim = 64;
  int layers = 2;
  int heads = 2;
  int ff_dim = 128;
  int max_len = 100;      // pretraining sequences
  int whole_len = 200;    // whole-address splices
  int element_len = 40;   // element splices

  void validate() const;
  json to_json() const;
  static EncoderConfig from_json(const json& j);
};

/// All trainable tensors. Biases and layer-norm gains are 1 x k matrices so
/// every tensor can be visited uniformly.
struct EncoderParams {
  struct Layer {
    Matrix wq, wk, wv, wo, bq, bk, bv, bo;
    Matrix ln1_gain, ln1_bias;
    Matrix w1, b1, w2, b2;
    Matrix ln2_gain, ln2_bias;
  };
  Matrix token_embedding;  // V x d
  std::vector<Layer> layers;
  Matrix head_w;  // d x V
  Matrix head_b;  // 1 x V

  std::vector<std::pair<std::string, Matrix*>> tensors();
  std::vector<std::pair<std::string, const Matrix*>> tensors() const;
  /// Same shapes, all zeros.
  EncoderParams zeros_like() const;
  std::size_t count() const;
};

/// Per-layer activations kept for the backward pass.
struct EncoderCache {
  struct Layer {
    Matrix input, q, k, v, concat, r1_hat, y1, h_pre, h_act, r2_hat;
    Eigen::VectorXd r1_inv_std, r2_inv_std;
    std::vector<Matrix> probs;  // one n x n matrix per head
  };
  std::vector<int> ids;
  std::vector<char> pad;
  std::vector<Layer> layers;
  Matrix output;
};

class EncoderModel {
 public:
  EncoderModel(EncoderConfig config, Vocabulary vocab, std::uint64_t seed);

  const EncoderConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  EncoderParams& params() { return params_; }
  const EncoderParams& params() const { return params_; }

  /// n x d contextual vectors. Inputs longer than `max_len` (default: the
  /// configured pretraining length) are truncated with a warning on stderr.
  Matrix encode(std::span<const int> ids, int max_len = 0) const;

  /// Forward pass keeping activations; PAD positions are masked as keys.
  Matrix forward(std::span<const int> ids, EncoderCache& cache) const;
  /// Accumulates parameter gradients for d(loss)/d(output) into `grads`.
  void backward(const EncoderCache& cache, const Matrix& d_output, EncoderParams& grads) const;

  json to_json() const;
  static EncoderModel from_json(const json& j);
  void save(const std::filesystem::path& path) const;
  static EncoderModel load(const std::filesystem::path& path);

  static constexpr int kFormatVersion = 1;

 private:
  EncoderConfig config_;
  Vocabulary vocab_;
  EncoderParams params_;
};

/// Sinusoidal position table, n x d.
Matrix positional_encoding(std::size_t n, int dim);

enum class MaskMode { WholeElement, SingleToken };
const char* mask_mode_name(MaskMode mode);
MaskMode mask_mode_from_name(std::string_view name);  // "wwm" | "single"

enum class MaskAction { Mask, RandomReplace, Keep };

struct MaskPlan {
  std::vector<std::pair<std::size_t, std::size_t>> spans;  // token ranges, sorted
  std::vector<std::size_t> positions;                      // masked token indices, ascending
  std::vector<MaskAction> actions;                         // per position (80/10/10)
  std::vector<std::uint64_t> draws;                        // per position, picks the random replacement

  std::size_t masked_count() const { return positions.size(); }
};

/// WWM: shuffle element spans and add whole spans until the masked fraction
/// reaches `target_ratio`. SINGLE: sample token positions without
/// replacement until the fraction is reached.
MaskPlan select_mask_spans(const TaggedAddress& ta, double target_ratio, MaskMode mode, Rng& rng);

/// Corrupted input ids for an address (no CLS/SEP) according to a plan.
std::vector<int> apply_mask(std::span<const int> ids, const MaskPlan& plan, std::size_t vocab_size);

struct MlmResult {
  double loss = 0.0;
  std::size_t predictions = 0;
  EncoderParams grads;
};

/// Cross-entropy at masked positions of [CLS] address [SEP], averaged over
/// masked positions, with gradients for every parameter. `ids` are the
/// uncorrupted address ids.
MlmResult mlm_loss(const EncoderModel& model, std::span<const int> ids, const MaskPlan& plan);
double mlm_loss_value(const EncoderModel& model, std::span<const int> ids, const MaskPlan& plan);

enum class OptimizerKind { Momentum, Adam };
OptimizerKind optimizer_from_name(std::string_view name);  // "momentum" | "adam"
const char* optimizer_name(OptimizerKind kind);

/// First-order optimiser with global-norm clipping over a fixed tensor list.
/// Momentum: v = mu v + g, p -= lr v. Adam: bias-corrected moments with
/// beta1 = `momentum`, beta2 = 0.999.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double learning_rate, double momentum, double clip_norm)
      : kind_(kind), lr_(learning_rate), momentum_(momentum), clip_(clip_norm) {}

  /// Applies `grads[i]` (already averaged) to `params[i]`. Returns the
  /// pre-clipping gradient norm.
  double step(const std::vector<Matrix*>& params, const std::vector<const Matrix*>& grads);

 private:
  OptimizerKind kind_;
  double lr_, momentum_, clip_;
  long steps_ = 0;
  std::vector<Matrix> first_, second_;
};

struct PretrainConfig {
  OptimizerKind optimizer = OptimizerKind::Momentum;
  int epochs = 8;
  int batch_size = 32;
  double learning_rate = 0.2;
  double momentum = 0.9;
  double clip_norm = 1.0;
  double mask_ratio = 0.15;
  std::uint64_t seed = 1;
  std::size_t max_examples = 0;  // 0 = whole corpus
};

struct PretrainEpochLog {
  int epoch = 0;
  double mean_loss = 0.0;
  std::size_t sequences = 0;
};

EncoderModel pretrain(const std::vector<TaggedAddress>& corpus, const EncoderConfig& config, MaskMode mode,
                      const PretrainConfig& train, const std::function<void(const PretrainEpochLog&)>& on_epoch = {});

/// Character accuracy when one whole element per address is replaced by
/// MASK tokens and predicted from the rest.
double masked_element_recovery(const EncoderModel& model, const std::vector<TaggedAddress>& corpus,
                               std::uint64_t seed);
}  // namespace hieraddr
