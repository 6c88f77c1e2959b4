#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "hieraddr/core.hpp"
#include "hieraddr/encoder.hpp"
#include "hieraddr/resolver.hpp"

namespace hieraddr {

inline constexpr int kWholeBranch = -1;

/// One encoder input: [CLS] side-a [SEP] side-b [SEP] then PAD up to `length`.
struct SpliceInput {
  int branch = kWholeBranch;  // registry group index or kWholeBranch
  std::vector<int> ids;       // exactly `length` ids
  std::size_t content = 0;    // ids before the PAD tail
};

/// Token texts of one side of a splice: the element tokens of the group's
/// levels in registry level order (text order within a level), or every
/// token for the WHOLE branch.
std::vector<std::string> branch_tokens(const TaggedAddress& ta, int branch, const LabelRegistry& registry);

/// When both sides do not fit, the longer side is cut first so each keeps at
/// least half of the budget.
SpliceInput splice(const TaggedAddress& a, const TaggedAddress& b, int branch, const LabelRegistry& registry,
                   const Vocabulary& vocab, std::size_t length);

struct LstmParams {
  Matrix w_ih;  // in x 4h, gate order i f g o
  Matrix w_hh;  // h x 4h
  Matrix b;     // 1 x 4h
};

struct LstmCache {
  Matrix x, gates, cells, hidden;  // gates after nonlinearity (T x 4h)
};

/// Bidirectional LSTM feature unit. With `tied`, the backward direction reuses
/// the forward parameters.
struct BiLstm {
  LstmParams fwd, bwd;
  bool tied = false;
  int hidden = 0;

  static BiLstm init(int input, int hidden, bool tied, Rng& rng);
  const LstmParams& backward_params() const { return tied ? fwd : bwd; }
  LstmParams& backward_params() { return tied ? fwd : bwd; }
};

/// Final forward state followed by final backward state over the non-PAD
/// rows of `encoded`; zeros when every row is PAD (or there are no rows).
Eigen::VectorXd extract_features(const BiLstm& unit, const Matrix& encoded, const std::vector<char>& pad = {});

struct BiLstmCache {
  LstmCache fwd, bwd;
  std::vector<Eigen::Index> rows;  // the non-PAD rows that were consumed
};
Eigen::VectorXd extract_features(const BiLstm& unit, const Matrix& encoded, const std::vector<char>& pad,
                                 BiLstmCache& cache);
/// Accumulates parameter gradients; returns d(loss)/d(encoded).
Matrix extract_features_backward(const BiLstm& unit, const BiLstmCache& cache, const Eigen::VectorXd& d_feature,
                                 Eigen::Index encoded_rows, BiLstm& grads);

struct MatcherConfig {
  int hidden = 32;
  bool ablate_elements = false;
  bool finetune_encoder = false;
  bool tie_directions = false;
  bool swap_augment = true;
  int epochs = 3;
  int batch_size = 32;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double learning_rate = 2e-3;
  double momentum = 0.9;
  double clip_norm = 5.0;
  std::uint64_t seed = 1;

  json to_json() const;
};

struct MatchPrediction {
  std::array<double, 3> logits{};
  int label = 0;
  std::vector<double> branch_norms;
};

class MatcherModel {
 public:
  MatcherModel(LabelRegistry registry, const EncoderConfig& encoder, int hidden, bool ablate_elements,
               bool tie_directions, std::uint64_t seed);

  const LabelRegistry& registry() const { return registry_; }
  /// Fixed branch order: registry groups, then WHOLE (WHOLE only when ablated).
  const std::vector<int>& branches() const { return branches_; }
  bool ablate_elements() const { return ablate_elements_; }
  int hidden() const { return hidden_; }
  int input_dim() const { return input_dim_; }
  std::size_t branch_length(int branch) const;
  std::string branch_name(int branch) const;

  std::vector<BiLstm>& units() { return units_; }
  const std::vector<BiLstm>& units() const { return units_; }
  Matrix& classifier_w() { return cls_w_; }
  Matrix& classifier_b() { return cls_b_; }
  const Matrix& classifier_w() const { return cls_w_; }
  const Matrix& classifier_b() const { return cls_b_; }

  /// Every trainable tensor of the matcher (encoder excluded) in fixed order.
  std::vector<std::pair<std::string, Matrix*>> tensors();
  std::vector<std::pair<std::string, const Matrix*>> tensors() const;
  MatcherModel zeros_like() const;

  /// Fine-tuned encoder weights, when training updated the encoder.
  std::optional<EncoderModel>& own_encoder() { return own_encoder_; }
  const std::optional<EncoderModel>& own_encoder() const { return own_encoder_; }

  json to_json() const;
  static MatcherModel from_json(const json& j);

  static constexpr int kFormatVersion = 1;

 private:
  LabelRegistry registry_;
  std::vector<int> branches_;
  bool ablate_elements_ = false;
  int hidden_ = 0;
  int input_dim_ = 0;
  std::size_t whole_len_ = 0, element_len_ = 0;
  std::vector<BiLstm> units_;
  Matrix cls_w_;  // F x 3
  Matrix cls_b_;  // 1 x 3
  std::optional<EncoderModel> own_encoder_;
};

/// Index of the largest logit; ties go to the smaller label.
int argmax_label(const std::array<double, 3>& logits);

/// Throws ConfigError when the model was trained for the other branch set or
/// its registry/encoder does not fit the inputs.
MatchPrediction classify_pair(const MatcherModel& model, const EncoderModel& encoder, const TaggedAddress& a,
                              const TaggedAddress& b, bool ablate_elements);

struct MatchExample {
  std::vector<SpliceInput> splices;  // one per model branch, in branch order
  int label = 0;
};

MatchExample make_example(const MatcherModel& model, const Vocabulary& vocab, const TaggedAddress& a,
                          const TaggedAddress& b, int label);

/// Cross-entropy of one example. When `grads` is given, matcher gradients
/// are accumulated there (scaled by `scale`) and, if `encoder_grads` is also
/// given, encoder gradients too.
double matcher_loss(const MatcherModel& model, const EncoderModel& encoder, const MatchExample& example,
                    MatcherModel* grads = nullptr, EncoderParams* encoder_grads = nullptr, double scale = 1.0);

struct MatcherEpochLog {
  int epoch = 0;
  double mean_loss = 0.0;
  double train_accuracy = 0.0;
  std::size_t examples = 0;
};

/// Resolves both sides of every pair, builds splices and trains the branch
/// units and classifier. The encoder stays frozen unless
/// `config.finetune_encoder`, in which case the model keeps its own copy.
MatcherModel train_matcher(const std::vector<MatchPair>& corpus, const TaggerModel& resolver,
                           const EncoderModel& encoder, const MatcherConfig& config,
                           const std::function<void(const MatcherEpochLog&)>& on_epoch = {});

/// Same, over pairs whose sides are already resolved.
MatcherModel train_matcher_resolved(const std::vector<std::pair<TaggedAddress, TaggedAddress>>& sides,
                                    const std::vector<int>& labels, const LabelRegistry& registry,
                                    const EncoderModel& encoder, const MatcherConfig& config,
                                    const std::function<void(const MatcherEpochLog&)>& on_epoch = {});

/// A trained matcher together with the resolver and encoder it was built on.
/// On disk the matcher references both by relative path and SHA-256.
struct MatchPipeline {
  TaggerModel resolver;
  EncoderModel encoder;
  MatcherModel matcher;

  const EncoderModel& active_encoder() const { return matcher.own_encoder() ? *matcher.own_encoder() : encoder; }
  MatchPrediction classify(const std::string& a, const std::string& b) const;

  static MatchPipeline load(const std::filesystem::path& matcher_path);
};

void save_matcher(const MatcherModel& model, const std::filesystem::path& path,
                  const std::filesystem::path& resolver_path, const std::filesystem::path& encoder_path);

}  // namespace hieraddr
