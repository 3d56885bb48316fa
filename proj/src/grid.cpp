#include "chatgate/grid.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "chatgate/error.hpp"
#include "chatgate/metrics.hpp"

namespace chatgate {

std::vector<double> default_c_grid() {
  std::vector<double> grid;
  for (int e = -10; e <= 10; ++e) grid.push_back(std::ldexp(1.0, e));
  return grid;
}

std::vector<int> default_map_grid() { return {100, 150}; }

std::vector<std::vector<int>> default_region_grid() {
  return {{2}, {3}, {1, 2}, {2, 3}, {3, 4}, {1, 2, 3}, {2, 3, 4}};
}

SvmGridResult grid_search_svm(std::span<const SparseVector> train_x, std::span<const Label> train_y,
                              std::span<const SparseVector> dev_x, std::span<const Label> dev_y, std::size_t dim,
                              std::vector<double> c_grid, const SvmConfig& base) {
  if (c_grid.empty()) throw Error(ErrorKind::InvalidConfig, "empty c grid");
  std::sort(c_grid.begin(), c_grid.end());
  c_grid.erase(std::unique(c_grid.begin(), c_grid.end()), c_grid.end());
  SvmGridResult best;
  bool have = false;
  for (double c : c_grid) {
    SvmConfig cfg = base;
    cfg.c = c;
    LinearModel model = train_svm(train_x, train_y, dim, cfg);
    std::vector<Label> pred;
    pred.reserve(dev_x.size());
    for (const auto& x : dev_x) pred.push_back(predict_linear(model, x).label);
    const double f1 = compute_metrics(pred, dev_y).f1_or_zero();
    best.points.push_back({c, f1});
    if (!have || f1 > best.dev_f1) {
      best.model = std::move(model);
      best.c = c;
      best.dev_f1 = f1;
      have = true;
    }
  }
  return best;
}

namespace {

std::size_t cnn_size(int maps, const std::vector<int>& regions, int dim) {
  const std::size_t width = static_cast<std::size_t>(std::accumulate(regions.begin(), regions.end(), 0));
  const std::size_t banks = regions.size();
  const auto m = static_cast<std::size_t>(maps);
  return m * (width * static_cast<std::size_t>(dim) + banks) + 2 * (m * banks + 3) + 2;
}

}  // namespace

CnnGridResult grid_search_cnn(std::span<const CnnExample> train, std::span<const CnnExample> dev,
                              const EmbeddingTable* pretrained, const std::vector<int>& map_grid,
                              const std::vector<std::vector<int>>& region_grid, const CnnConfig& base) {
  if (map_grid.empty() || region_grid.empty()) throw Error(ErrorKind::InvalidConfig, "empty CNN grid");
  const int dim = pretrained != nullptr ? pretrained->dim() : base.embed_dim;
  std::vector<CnnGridPoint> candidates;
  for (int maps : map_grid) {
    for (auto regions : region_grid) {
      if (regions.empty()) throw Error(ErrorKind::InvalidConfig, "empty region set in CNN grid");
      std::sort(regions.begin(), regions.end());
      candidates.push_back({maps, regions, cnn_size(maps, regions, dim), 0.0});
    }
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const auto& a, const auto& b) { return a.parameters < b.parameters; });

  CnnGridResult best;
  bool have = false;
  for (auto& cand : candidates) {
    CnnConfig cfg = base;
    cfg.n_maps = cand.n_maps;
    cfg.regions = cand.regions;
    CnnTrainResult trained = train_cnn(train, dev, pretrained, cfg);
    cand.dev_f1 = trained.dev_f1;
    if (!have || trained.dev_f1 > best.dev_f1) {
      best.model = std::move(trained.model);
      best.config = cfg;
      best.dev_f1 = trained.dev_f1;
      have = true;
    }
  }
  best.points = std::move(candidates);
  return best;
}

}  // namespace chatgate
