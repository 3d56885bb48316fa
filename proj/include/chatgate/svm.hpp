#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "chatgate/corpus.hpp"
#include "chatgate/features.hpp"

namespace chatgate {

struct LinearModel {
  Eigen::VectorXd weights;
  double bias = 0.0;
  double c = 1.0;

  std::size_t dim() const { return static_cast<std::size_t>(weights.size()); }
};

struct SvmConfig {
  double c = 1.0;
  double eps = 1e-3;       // stop when every |projected gradient| falls below this
  int max_epochs = 1000;
  bool use_bias = true;    // bias learned as the weight of a constant feature
  double bias_value = 1.0;
  std::uint64_t seed = 1;  // coordinate visiting order
};

struct SvmTrace {
  std::vector<double> dual_objective;  // after each epoch
  int epochs = 0;
  bool converged = false;
};

// L2-regularized L2-loss SVM solved in the dual by coordinate descent.
LinearModel train_svm(std::span<const SparseVector> x, std::span<const Label> y, std::size_t dim,
                      const SvmConfig& config, SvmTrace* trace = nullptr);

struct LinearPrediction {
  Label label;
  double margin;
};

// Chat iff margin > 0; an exact zero goes to NonChat.
LinearPrediction predict_linear(const LinearModel& model, const SparseVector& x);

// 1/2 (|w|^2 + b^2) + c * sum max(0, 1 - y (w.x + b))^2, with b treated as the
// weight of the constant feature (b is zero when no bias was learned).
double svm_primal_objective(const LinearModel& model, std::span<const SparseVector> x, std::span<const Label> y);

}  // namespace chatgate
