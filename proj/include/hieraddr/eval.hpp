#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "hieraddr/corpus.hpp"
#include "hieraddr/encoder.hpp"
#include "hieraddr/matcher.hpp"
#include "hieraddr/resolver.hpp"

namespace hieraddr {

/// Rows are gold labels, columns predicted labels.
struct ConfusionMatrix {
  std::array<std::array<std::size_t, 3>, 3> counts{};

  void add(int gold, int predicted);
  std::size_t total() const;
  json to_json() const;
};

enum class Averaging { Macro, Micro };
const char* averaging_name(Averaging a);
Averaging averaging_from_name(std::string_view name);

struct Metrics {
  Averaging averaging = Averaging::Macro;
  double f1 = 0.0;
  double accuracy = 0.0;
  double recall = 0.0;
  double precision = 0.0;
  std::array<double, 3> class_precision{}, class_recall{}, class_f1{};

  json to_json() const;
};

/// Per-class precision/recall with 0/0 = 0; macro = unweighted class mean,
/// micro = pooled counts. Throws InvariantError on an empty matrix.
Metrics metrics(const ConfusionMatrix& cm, Averaging averaging = Averaging::Macro);

ConfusionMatrix evaluate_matcher(const MatcherModel& model, const EncoderModel& encoder,
                                 const std::vector<std::pair<TaggedAddress, TaggedAddress>>& sides,
                                 const std::vector<int>& labels);

/// The four rows of the comparison, in report order.
enum class AblationArm { Baseline, Full, NoWwm, NoElement };
inline constexpr std::array<AblationArm, 4> kAblationArms{AblationArm::Baseline, AblationArm::Full,
                                                          AblationArm::NoWwm, AblationArm::NoElement};
const char* arm_name(AblationArm arm);
MaskMode arm_mask_mode(AblationArm arm);
bool arm_ablates_elements(AblationArm arm);

struct AblationCorpora {
  std::filesystem::path resolution_train, resolution_dev, train_pairs, test_pairs;
};

struct AblationConfig {
  LabelRegistry registry = LabelRegistry::default_registry();
  TaggerConfig tagger{10, 1};
  EncoderConfig encoder;
  // Scaled down so three seeds fit in an hour on one core.
  PretrainConfig pretrain{.epochs = 4, .max_examples = 20000};
  MatcherConfig matcher;
  Averaging averaging = Averaging::Macro;

  json to_json() const;
};

struct AblationRun {
  AblationArm arm;
  std::uint64_t seed = 0;
  ConfusionMatrix confusion;
  Metrics metrics;
  double seconds = 0.0;
};

struct AblationReport {
  std::vector<std::uint64_t> seeds;
  std::string corpus_fingerprint;
  Averaging averaging = Averaging::Macro;
  std::vector<AblationRun> runs;
  json config;

  /// Median over seeds of each metric for one arm.
  Metrics median(AblationArm arm) const;
  json to_json() const;
  /// Rows = arms, columns = F1 / Acc / Recall (percent), next to the
  /// published reference values.
  std::string table() const;
};

/// SHA-256 over the listed files, in order.
std::string corpus_fingerprint(const std::vector<std::filesystem::path>& files);

/// Trains and evaluates the four arms for every seed on one fixed split.
/// `log` receives one JSON object per completed stage.
AblationReport run_ablation(const AblationCorpora& corpora, const std::vector<std::uint64_t>& seeds,
                            const AblationConfig& config, const std::function<void(const json&)>& log = {});

}  // namespace hieraddr
