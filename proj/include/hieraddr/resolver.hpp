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

namespace hieraddr {

struct FeatureVector {
  std::vector<std::uint32_t> ids;  // sorted, unique

  bool operator==(const FeatureVector&) const = default;
};

/// Character window features for one position: current character, +-1 and
/// +-2 neighbours, the (-1,0) and (0,+1) bigrams, digit/latin flags,
/// first/last flags and a bias feature.
std::vector<std::string> feature_strings(const std::vector<Token>& tokens, std::size_t position);

bool is_digit_token(std::string_view text);
bool is_latin_token(std::string_view text);

class FeatureIndex {
 public:
  std::uint32_t intern(const std::string& name);
  /// Returns size() when `name` is unknown.
  std::uint32_t find(const std::string& name) const;
  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::uint32_t> ids_;
};

/// Unknown feature strings are dropped.
FeatureVector featurize(const FeatureIndex& index, const std::vector<Token>& tokens, std::size_t position);

/// Allowed starts and transitions over a local tag alphabet.
struct TagConstraints {
  std::size_t size = 0;
  std::vector<char> start;       // size
  std::vector<char> transition;  // size x size, row = from

  /// BIO constraints for the given global tag ids (0 = O, see BioTagSet).
  static TagConstraints bio(std::span<const int> tags);
  bool allowed(std::size_t from, std::size_t to) const { return transition[from * size + to] != 0; }
};

struct ViterbiResult {
  std::vector<int> path;  // local tag indices
  double score = 0.0;
};

/// Max-scoring legal path under emission (T x K) + transition (K x K) +
/// start (K) scores. Disallowed moves score -inf. Ties go to the lower tag.
ViterbiResult viterbi(const Eigen::MatrixXd& emissions, const Eigen::MatrixXd& transitions,
                      const Eigen::VectorXd& start, const TagConstraints& constraints);

/// Score of a fixed path; -inf when it violates the constraints.
double path_score(const Eigen::MatrixXd& emissions, const Eigen::MatrixXd& transitions, const Eigen::VectorXd& start,
                  const TagConstraints& constraints, std::span<const int> path);

struct TaggerConfig {
  int epochs = 100;
  std::uint64_t seed = 1;
};

struct SpanMetrics {
  std::size_t gold_spans = 0;
  std::size_t predicted_spans = 0;
  std::size_t correct_spans = 0;
  std::size_t tokens = 0;
  std::size_t correct_tokens = 0;

  double precision() const { return predicted_spans ? double(correct_spans) / double(predicted_spans) : 0.0; }
  double recall() const { return gold_spans ? double(correct_spans) / double(gold_spans) : 0.0; }
  double f1() const {
    const double p = precision(), r = recall();
    return p + r > 0 ? 2 * p * r / (p + r) : 0.0;
  }
  double token_accuracy() const { return tokens ? double(correct_tokens) / double(tokens) : 0.0; }

  void add(const std::vector<ElementSpan>& gold, const std::vector<ElementSpan>& predicted,
           const std::vector<int>& gold_tags, const std::vector<int>& predicted_tags);
  json to_json() const;
};

struct TaggerEpochLog {
  int epoch = 0;
  double train_token_error = 0.0;
  std::size_t train_sequence_errors = 0;
  SpanMetrics dev;
};

class TaggerModel {
 public:
  explicit TaggerModel(LabelRegistry registry);

  const LabelRegistry& registry() const { return registry_; }
  const BioTagSet& tagset() const { return tagset_; }
  const FeatureIndex& features() const { return features_; }
  std::size_t num_tags() const { return tagset_.size(); }

  /// Emission scores (T x K) for a token sequence.
  Eigen::MatrixXd emissions(const std::vector<Token>& tokens) const;
  std::vector<int> decode(const std::vector<Token>& tokens) const;

  json to_json() const;
  static TaggerModel from_json(const json& j);
  void save(const std::filesystem::path& path) const;
  static TaggerModel load(const std::filesystem::path& path);

  static constexpr int kFormatVersion = 1;

 private:
  friend TaggerModel train_tagger(const std::vector<TaggedAddress>&, const LabelRegistry&, const TaggerConfig&,
                                  const std::vector<TaggedAddress>*,
                                  const std::function<void(const TaggerEpochLog&)>&);

  LabelRegistry registry_;
  BioTagSet tagset_;
  TagConstraints constraints_;
  FeatureIndex features_;
  std::vector<double> feature_weights_;  // row-major: feature x tag
  Eigen::MatrixXd transitions_;
  Eigen::VectorXd start_;
};

/// Averaged structured perceptron. `dev`, when given, is scored after every
/// epoch and reported through `on_epoch`.
TaggerModel train_tagger(const std::vector<TaggedAddress>& corpus, const LabelRegistry& registry,
                         const TaggerConfig& config, const std::vector<TaggedAddress>* dev = nullptr,
                         const std::function<void(const TaggerEpochLog&)>& on_epoch = {});

TaggedAddress resolve(const TaggerModel& model, const std::string& text);

SpanMetrics evaluate_tagger(const TaggerModel& model, const std::vector<TaggedAddress>& corpus);

}  // namespace hieraddr
