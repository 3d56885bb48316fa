#include "chatgate/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

#include "chatgate/error.hpp"
#include "chatgate/rng.hpp"

namespace chatgate {

Metrics metrics_from_counts(std::size_t tp, std::size_t fp, std::size_t fn, std::size_t tn) {
  Metrics m{tp, fp, fn, tn, 0.0, std::nullopt, std::nullopt, std::nullopt};
  const std::size_t total = tp + fp + fn + tn;
  if (total > 0) m.accuracy = 100.0 * static_cast<double>(tp + tn) / static_cast<double>(total);
  if (tp + fp > 0) m.precision = 100.0 * static_cast<double>(tp) / static_cast<double>(tp + fp);
  if (tp + fn > 0) m.recall = 100.0 * static_cast<double>(tp) / static_cast<double>(tp + fn);
  if (m.precision && m.recall && *m.precision + *m.recall > 0.0) {
    m.f1 = 2.0 * *m.precision * *m.recall / (*m.precision + *m.recall);
  }
  return m;
}

Metrics compute_metrics(std::span<const Label> predictions, std::span<const Label> golds) {
  if (predictions.size() != golds.size()) throw Error(ErrorKind::ShapeError, "prediction and gold counts differ");
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < golds.size(); ++i) {
    const bool p = predictions[i] == Label::Chat;
    const bool g = golds[i] == Label::Chat;
    if (p && g) ++tp;
    else if (p) ++fp;
    else if (g) ++fn;
    else ++tn;
  }
  return metrics_from_counts(tp, fp, fn, tn);
}

nlohmann::json to_json(const Metrics& m) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json("N/A"); };
  return {{"accuracy", m.accuracy}, {"precision", opt(m.precision)}, {"recall", opt(m.recall)}, {"f1", opt(m.f1)},
          {"tp", m.tp},             {"fp", m.fp},                    {"fn", m.fn},            {"tn", m.tn}};
}

std::vector<FoldSplit> kfold_splits(std::size_t corpus_size, int k, std::uint64_t seed) {
  if (k < 2) throw Error(ErrorKind::InvalidConfig, "k must be at least 2");
  const auto kk = static_cast<std::size_t>(k);
  if (corpus_size < kk * 10) {
    throw Error(ErrorKind::TooSmall, "corpus of " + std::to_string(corpus_size) + " is too small for " +
                                         std::to_string(k) + "-fold splits (need " + std::to_string(kk * 10) + ")");
  }
  std::vector<std::size_t> order(corpus_size);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));

  std::vector<std::vector<std::size_t>> chunks(kk);
  const std::size_t base = corpus_size / kk;
  const std::size_t extra = corpus_size % kk;
  std::size_t pos = 0;
  for (std::size_t c = 0; c < kk; ++c) {
    const std::size_t len = base + (c < extra ? 1 : 0);
    chunks[c].assign(order.begin() + static_cast<std::ptrdiff_t>(pos), order.begin() + static_cast<std::ptrdiff_t>(pos + len));
    pos += len;
  }
  std::vector<FoldSplit> folds;
  for (std::size_t i = 0; i < kk; ++i) {
    FoldSplit f;
    f.fold = static_cast<int>(i);
    f.test = chunks[i];
    f.dev = chunks[(i + 1) % kk];
    for (std::size_t c = 0; c < kk; ++c) {
      if (c != i && c != (i + 1) % kk) f.train.insert(f.train.end(), chunks[c].begin(), chunks[c].end());
    }
    folds.push_back(std::move(f));
  }
  return folds;
}

Metrics majority_baseline(std::span<const Label> test_golds) {
  if (test_golds.empty()) throw Error(ErrorKind::EmptyCorpus, "majority baseline needs a nonempty test set");
  const std::vector<Label> pred(test_golds.size(), Label::NonChat);
  return compute_metrics(pred, test_golds);
}

std::vector<Label> apply_threshold(std::span<const double> scores, double threshold) {
  std::vector<Label> out;
  out.reserve(scores.size());
  for (double s : scores) out.push_back(s > threshold ? Label::Chat : Label::NonChat);
  return out;
}

ThresholdResult lm_threshold_baseline(std::span<const double> dev_scores, std::span<const Label> dev_golds,
                                      std::span<const double> test_scores, std::span<const Label> test_golds) {
  if (dev_scores.empty()) throw Error(ErrorKind::EmptyCorpus, "threshold calibration needs dev data");
  if (dev_scores.size() != dev_golds.size() || test_scores.size() != test_golds.size()) {
    throw Error(ErrorKind::ShapeError, "score and gold counts differ");
  }
  std::vector<double> sorted(dev_scores.begin(), dev_scores.end());
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  std::vector<double> candidates{sorted.front() - 1.0};
  for (std::size_t i = 0; i + 1 < sorted.size(); ++i) candidates.push_back(0.5 * (sorted[i] + sorted[i + 1]));
  candidates.push_back(sorted.back() + 1.0);

  ThresholdResult best;
  bool have = false;
  for (double t : candidates) {
    const double f1 = compute_metrics(apply_threshold(dev_scores, t), dev_golds).f1_or_zero();
    if (!have || f1 > best.dev_f1) {
      best.threshold = t;
      best.dev_f1 = f1;
      have = true;
    }
  }
  best.test = compute_metrics(apply_threshold(test_scores, best.threshold), test_golds);
  return best;
}

std::vector<std::size_t> stratified_subsample(std::span<const std::size_t> positions, std::span<const Label> labels,
                                              double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw Error(ErrorKind::InvalidConfig, "fraction must lie in (0, 1]");
  if (positions.size() != labels.size()) throw Error(ErrorKind::ShapeError, "position and label counts differ");
  Rng rng(seed);
  std::vector<std::size_t> keep;
  for (Label cls : {Label::Chat, Label::NonChat}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < positions.size(); ++i) {
      if (labels[i] == cls) idx.push_back(i);
    }
    const auto take = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(idx.size())));
    rng.shuffle(std::span<std::size_t>(idx));
    keep.insert(keep.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(std::min(take, idx.size())));
  }
  std::sort(keep.begin(), keep.end());
  std::vector<std::size_t> out;
  out.reserve(keep.size());
  for (std::size_t i : keep) out.push_back(positions[i]);
  return out;
}

Metrics metrics_of(std::span<const PredictionRecord> records) {
  std::vector<Label> pred, gold;
  pred.reserve(records.size());
  gold.reserve(records.size());
  for (const auto& r : records) {
    pred.push_back(r.predicted);
    gold.push_back(r.gold);
  }
  return compute_metrics(pred, gold);
}

VoteBreakdown breakdown_by_votes(std::span<const PredictionRecord> records) {
  std::map<int, std::vector<PredictionRecord>> groups;
  VoteBreakdown out;
  for (const auto& r : records) {
    if (!r.majority_count) {
      ++out.skipped;
      continue;
    }
    groups[*r.majority_count].push_back(r);
  }
  if (!records.empty() && groups.empty()) throw Error(ErrorKind::MissingVotes, "no prediction carries vote data");
  for (const auto& [count, recs] : groups) out.rows.emplace(count, metrics_of(recs));
  return out;
}

std::string LengthBin::label() const {
  if (!hi) return ">=" + std::to_string(lo);
  if (*hi == lo) return std::to_string(lo);
  return std::to_string(lo) + "-" + std::to_string(*hi);
}

std::vector<LengthBin> default_length_bins() { return {{1, 5}, {6, 10}, {11, 15}, {16, std::nullopt}}; }

std::vector<LengthRow> breakdown_by_length(std::span<const PredictionRecord> records, std::span<const LengthBin> bins) {
  std::vector<LengthRow> rows;
  for (const auto& bin : bins) {
    std::size_t support = 0;
    std::size_t correct = 0;
    for (const auto& r : records) {
      if (r.length < bin.lo || (bin.hi && r.length > *bin.hi)) continue;
      ++support;
      if (r.predicted == r.gold) ++correct;
    }
    LengthRow row{bin, support, std::nullopt};
    if (support > 0) row.accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(support);
    rows.push_back(row);
  }
  return rows;
}

MeanMetrics macro_average(std::span<const Metrics> folds) {
  MeanMetrics m;
  if (folds.empty()) return m;
  const auto n = static_cast<double>(folds.size());
  auto mean_opt = [&](auto getter) -> std::optional<double> {
    double s = 0.0;
    for (const auto& f : folds) {
      const std::optional<double> v = getter(f);
      if (!v) return std::nullopt;
      s += *v;
    }
    return s / n;
  };
  for (const auto& f : folds) m.accuracy += f.accuracy / n;
  m.precision = mean_opt([](const Metrics& f) { return f.precision; });
  m.recall = mean_opt([](const Metrics& f) { return f.recall; });
  m.f1 = mean_opt([](const Metrics& f) { return f.f1; });
  return m;
}

}  // namespace chatgate
