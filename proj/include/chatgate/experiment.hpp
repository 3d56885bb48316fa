#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "chatgate/cnn.hpp"
#include "chatgate/container.hpp"
#include "chatgate/corpus.hpp"
#include "chatgate/embeddings.hpp"
#include "chatgate/eval.hpp"
#include "chatgate/features.hpp"
#include "chatgate/lm.hpp"
#include "chatgate/svm.hpp"

namespace chatgate {

// Method names: "majority", "tweet-gru", or a classifier ("svm" | "cnn")
// followed by '+'-joined options: "embed" (svm) / "pretrain" (cnn) and the
// external features "tweet-query" (all three), "tweet", "query", "query-binary".
struct MethodSpec {
  enum class Kind { Majority, TweetThreshold, Svm, Cnn };

  Kind kind = Kind::Majority;
  bool embeddings = false;
  bool tweet = false;
  bool query = false;
  bool query_binary = false;
  std::string name;

  static MethodSpec parse(std::string_view name);
  bool uses_external() const { return tweet || query || query_binary; }
  bool is_classifier() const { return kind == Kind::Svm || kind == Kind::Cnn; }
};

// A language-model score source, optionally log-linearly combined with a
// second model: weight * primary + (1 - weight) * secondary.
struct LmScorer {
  std::shared_ptr<const CharLanguageModel> primary;
  std::shared_ptr<const CharLanguageModel> secondary;
  double weight = 1.0;

  double score(std::string_view text) const;
};

struct ExperimentResources {
  std::optional<EmbeddingTable> embeddings;
  std::optional<LmScorer> tweet_lm;
  std::optional<LmScorer> query_lm;
  std::optional<QuerySet> queries;
};

struct ExperimentConfig {
  nlohmann::json raw;  // echoed into the report and hashed
  std::uint64_t seed = 1;
  int k = 10;
  int jobs = 1;
  bool fail_fast = false;
  FeatureConfig features;
  bool standardize_external = true;
  std::vector<MethodSpec> methods;
  std::vector<double> c_grid;
  SvmConfig svm;
  std::vector<int> cnn_maps;
  std::vector<std::vector<int>> cnn_regions;
  CnnConfig cnn;
  std::vector<std::string> learning_curve_methods;
  std::vector<double> learning_curve_fractions;
  std::vector<LengthBin> length_bins;

  static ExperimentConfig from_json(const nlohmann::json& j);
};

// Loads or trains the corpus and every external resource the config names.
// Relative paths resolve against base_dir.
struct ExperimentInputs {
  Corpus corpus;
  ExperimentResources resources;
};

ExperimentInputs resolve_inputs(const ExperimentConfig& config, const std::filesystem::path& base_dir);
// Checks that every referenced file exists and every method has its
// resources, without loading or training anything.
void validate_inputs(const ExperimentConfig& config, const std::filesystem::path& base_dir);

struct FoldOutcome {
  int fold = 0;
  bool ok = false;
  std::string error;
  Metrics metrics;
  nlohmann::json selection;  // chosen hyperparameters / threshold
};

struct MethodReport {
  std::string name;
  std::vector<FoldOutcome> folds;
  MeanMetrics macro;
  Metrics micro;
  std::vector<PredictionRecord> records;  // pooled test predictions, by corpus position
  std::optional<VoteBreakdown> votes;
  std::vector<LengthRow> lengths;

  bool any_failed() const;
};

struct LearningCurvePoint {
  std::string method;
  double fraction = 1.0;
  std::vector<std::optional<double>> fold_accuracy;  // nullopt for failed folds
  std::optional<double> mean_accuracy;
  std::size_t failed = 0;
};

struct Report {
  nlohmann::json meta;
  nlohmann::json config;
  std::size_t corpus_size = 0;
  std::size_t n_chat = 0;
  std::size_t n_nonchat = 0;
  std::map<int, std::size_t> vote_histogram;
  int k = 0;
  std::vector<MethodReport> methods;
  std::vector<LearningCurvePoint> learning_curve;

  bool any_failed() const;
  const MethodReport& method(std::string_view name) const;
};

Report run_experiment(const Corpus& corpus, const ExperimentConfig& config, const ExperimentResources& resources);

// Learning curve for one method: per fold, stratified subsample of the
// training portion; dev and test stay whole.
std::vector<LearningCurvePoint> learning_curve(const Corpus& corpus, const MethodSpec& method,
                                               std::span<const double> fractions, const ExperimentConfig& config,
                                               const ExperimentResources& resources);

// Trains one classifier method on a whole corpus: a seeded dev_fraction of it
// drives grid search, the rest is training data. The container embeds the
// feature space and external-feature standardization needed to reapply it.
struct TrainedClassifier {
  Container container;
  double dev_f1 = 0.0;
  nlohmann::json selection;
};

TrainedClassifier train_classifier(const Corpus& corpus, const MethodSpec& method, const ExperimentConfig& config,
                                   const ExperimentResources& resources, double dev_fraction = 0.1);

nlohmann::json report_to_json(const Report& report);
// Renders aligned-column tables from a report's JSON form.
std::string report_to_text(const nlohmann::json& report);
std::string learning_curve_tsv(const nlohmann::json& report);

}  // namespace chatgate
