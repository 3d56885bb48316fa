#pragma once

#include <optional>
#include <span>

#include <nlohmann/json_fwd.hpp>

#include "chatgate/corpus.hpp"

namespace chatgate {

// Chat is the positive class. Percentages. Precision is undefined with no
// positive predictions, recall with no positive golds, F1 when P + R = 0 or
// either is undefined.
struct Metrics {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  double accuracy = 0.0;
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> f1;

  std::size_t support() const { return tp + fp + fn + tn; }
  // Undefined F1 counts as 0 when ranking configurations.
  double f1_or_zero() const { return f1.value_or(0.0); }
};

Metrics compute_metrics(std::span<const Label> predictions, std::span<const Label> golds);
Metrics metrics_from_counts(std::size_t tp, std::size_t fp, std::size_t fn, std::size_t tn);

nlohmann::json to_json(const Metrics& m);

}  // namespace chatgate
