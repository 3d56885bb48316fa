#include "chatgate/svm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "chatgate/error.hpp"
#include "chatgate/rng.hpp"

namespace chatgate {

namespace {

double sign_of(Label l) { return l == Label::Chat ? 1.0 : -1.0; }

}  // namespace

LinearModel train_svm(std::span<const SparseVector> x, std::span<const Label> y, std::size_t dim,
                      const SvmConfig& config, SvmTrace* trace) {
  if (x.size() != y.size()) throw Error(ErrorKind::ShapeError, "feature and label counts differ");
  if (!(config.c > 0.0)) throw Error(ErrorKind::InvalidConfig, "c must be positive");
  const std::size_t n = x.size();
  const bool has_chat = std::find(y.begin(), y.end(), Label::Chat) != y.end();
  const bool has_nonchat = std::find(y.begin(), y.end(), Label::NonChat) != y.end();
  if (n < 2 || !has_chat || !has_nonchat) {
    throw Error(ErrorKind::SingleClassError, "SVM training needs both classes");
  }
  for (const auto& v : x) {
    if (!v.indices.empty() && v.indices.back() >= dim) throw Error(ErrorKind::ShapeError, "feature index out of range");
  }

  const double bias_x = config.use_bias ? config.bias_value : 0.0;
  const double diag = 0.5 / config.c;
  std::vector<double> w(dim, 0.0);
  double b = 0.0;
  std::vector<double> alpha(n, 0.0);
  std::vector<double> qd(n);
  std::vector<double> ys(n);
  for (std::size_t i = 0; i < n; ++i) {
    double sq = bias_x * bias_x;
    for (double v : x[i].values) sq += v * v;
    qd[i] = sq + diag;
    ys[i] = sign_of(y[i]);
  }

  auto dual = [&] {
    double wsq = b * b;
    for (double v : w) wsq += v * v;
    double sa = 0.0;
    double sa2 = 0.0;
    for (double a : alpha) {
      sa += a;
      sa2 += a * a;
    }
    return sa - 0.5 * wsq - 0.5 * diag * sa2;
  };

  Rng rng(config.seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  SvmTrace local;
  SvmTrace& tr = trace != nullptr ? *trace : local;
  tr = {};
  double previous = 0.0;  // dual at alpha = 0

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double max_violation = 0.0;
    for (std::size_t i : order) {
      const SparseVector& xi = x[i];
      const double grad = ys[i] * (xi.dot(w) + b * bias_x) - 1.0 + diag * alpha[i];
      const double pg = alpha[i] == 0.0 ? std::min(grad, 0.0) : grad;
      max_violation = std::max(max_violation, std::abs(pg));
      if (std::abs(pg) <= 1e-12) continue;
      const double old = alpha[i];
      alpha[i] = std::max(old - grad / qd[i], 0.0);
      const double step = (alpha[i] - old) * ys[i];
      for (std::size_t k = 0; k < xi.indices.size(); ++k) w[xi.indices[k]] += step * xi.values[k];
      b += step * bias_x;
    }
    const double current = dual();
    tr.dual_objective.push_back(current);
    tr.epochs = epoch + 1;
    if (current < previous - 1e-10 * std::max(1.0, std::abs(previous))) {
      throw std::logic_error("SVM dual objective decreased between epochs");
    }
    previous = current;
    if (max_violation < config.eps) {
      tr.converged = true;
      break;
    }
  }

  LinearModel model;
  model.weights = Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(dim));
  model.bias = b * bias_x;
  model.c = config.c;
  return model;
}

LinearPrediction predict_linear(const LinearModel& model, const SparseVector& x) {
  if (!x.indices.empty() && x.indices.back() >= model.dim()) {
    throw Error(ErrorKind::ShapeError, "feature index " + std::to_string(x.indices.back()) +
                                           " exceeds model dimension " + std::to_string(model.dim()));
  }
  const double margin = x.dot(std::span<const double>(model.weights.data(), model.dim())) + model.bias;
  return {margin > 0.0 ? Label::Chat : Label::NonChat, margin};
}

double svm_primal_objective(const LinearModel& model, std::span<const SparseVector> x, std::span<const Label> y) {
  double obj = 0.5 * (model.weights.squaredNorm() + model.bias * model.bias);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double m = predict_linear(model, x[i]).margin;
    const double slack = std::max(0.0, 1.0 - sign_of(y[i]) * m);
    obj += model.c * slack * slack;
  }
  return obj;
}

}  // namespace chatgate
