#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "chatgate/corpus.hpp"
#include "chatgate/metrics.hpp"

namespace chatgate {

// Positions into the corpus.
struct FoldSplit {
  int fold = 0;
  std::vector<std::size_t> train, dev, test;
};

// One shuffle by seed, then k near-equal chunks: fold i tests on chunk i,
// tunes on chunk (i + 1) mod k and trains on the rest.
std::vector<FoldSplit> kfold_splits(std::size_t corpus_size, int k, std::uint64_t seed);

Metrics majority_baseline(std::span<const Label> test_golds);

struct ThresholdResult {
  double threshold = 0.0;
  double dev_f1 = 0.0;
  Metrics test;
};

// Label Chat when score > threshold. Candidates are the midpoints between
// consecutive distinct dev scores plus one point below and one above the
// range; the F1-best candidate wins, ties to the lower threshold.
ThresholdResult lm_threshold_baseline(std::span<const double> dev_scores, std::span<const Label> dev_golds,
                                      std::span<const double> test_scores, std::span<const Label> test_golds);
std::vector<Label> apply_threshold(std::span<const double> scores, double threshold);

// Per-class sample of round(fraction * class size) positions, order preserved.
std::vector<std::size_t> stratified_subsample(std::span<const std::size_t> positions, std::span<const Label> labels,
                                              double fraction, std::uint64_t seed);

struct PredictionRecord {
  std::size_t position = 0;  // into the corpus
  int fold = 0;
  Label predicted = Label::NonChat;
  Label gold = Label::NonChat;
  std::optional<int> majority_count;
  std::size_t length = 0;  // code points
};

Metrics metrics_of(std::span<const PredictionRecord> records);

struct VoteBreakdown {
  std::map<int, Metrics> rows;
  std::size_t skipped = 0;  // records without vote data
};

// Throws MissingVotes when no record carries vote data.
VoteBreakdown breakdown_by_votes(std::span<const PredictionRecord> records);

struct LengthBin {
  std::size_t lo = 1;
  std::optional<std::size_t> hi;  // inclusive; open-ended when absent

  std::string label() const;
};

std::vector<LengthBin> default_length_bins();

struct LengthRow {
  LengthBin bin;
  std::size_t support = 0;
  std::optional<double> accuracy;
};

std::vector<LengthRow> breakdown_by_length(std::span<const PredictionRecord> records, std::span<const LengthBin> bins);

// Arithmetic mean of each metric over folds; a fold with an undefined value
// leaves the mean undefined.
struct MeanMetrics {
  double accuracy = 0.0;
  std::optional<double> precision, recall, f1;
};

MeanMetrics macro_average(std::span<const Metrics> folds);

}  // namespace chatgate
