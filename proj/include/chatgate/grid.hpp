#pragma once

#include <span>
#include <vector>

#include "chatgate/cnn.hpp"
#include "chatgate/svm.hpp"

namespace chatgate {

// 2^-10 .. 2^10.
std::vector<double> default_c_grid();
std::vector<int> default_map_grid();
std::vector<std::vector<int>> default_region_grid();

struct SvmGridPoint {
  double c;
  double dev_f1;
};

struct SvmGridResult {
  LinearModel model;
  double c = 0.0;
  double dev_f1 = 0.0;
  std::vector<SvmGridPoint> points;  // ascending c
};

// Picks the c with the highest dev F1 (Chat); ties go to the smaller c.
SvmGridResult grid_search_svm(std::span<const SparseVector> train_x, std::span<const Label> train_y,
                              std::span<const SparseVector> dev_x, std::span<const Label> dev_y, std::size_t dim,
                              std::vector<double> c_grid, const SvmConfig& base = {});

struct CnnGridPoint {
  int n_maps;
  std::vector<int> regions;
  std::size_t parameters;
  double dev_f1;
};

struct CnnGridResult {
  CnnModel model;
  CnnConfig config;
  double dev_f1 = 0.0;
  std::vector<CnnGridPoint> points;  // ascending parameter count
};

// Ties go to the configuration with fewer parameters.
CnnGridResult grid_search_cnn(std::span<const CnnExample> train, std::span<const CnnExample> dev,
                              const EmbeddingTable* pretrained, const std::vector<int>& map_grid,
                              const std::vector<std::vector<int>>& region_grid, const CnnConfig& base = {});

}  // namespace chatgate
