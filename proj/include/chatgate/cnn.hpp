#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "chatgate/container.hpp"
#include "chatgate/corpus.hpp"
#include "chatgate/embeddings.hpp"
#include "chatgate/features.hpp"
#include "chatgate/rng.hpp"

namespace chatgate {

struct FilterBank {
  int region = 1;
  Eigen::MatrixXd weights;  // n_maps x (region * dim)
  Eigen::VectorXd bias;     // n_maps
};

// Token ids: 0 = PAD (embedding pinned at zero), 1 = UNK.
struct CnnModel {
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;

  std::vector<std::string> words;  // words[id] for id >= 2; first two are placeholders
  std::unordered_map<std::string, int> index;
  Eigen::MatrixXd embedding;       // vocab x dim
  std::vector<FilterBank> banks;
  Eigen::MatrixXd out_w;           // 2 x (pooled + 3); row 0 scores Chat
  Eigen::VectorXd out_b;           // 2
  double dropout = 0.5;
  bool fine_tune = true;

  // Random filters and softmax weights; embeddings copied from `pretrained`
  // where available, random otherwise.
  static CnnModel create(std::vector<std::string> vocab, int dim, int n_maps, std::vector<int> regions,
                         double dropout, const EmbeddingTable* pretrained, std::uint64_t seed);
  static CnnModel zeros_like(const CnnModel& m);

  int dim() const { return static_cast<int>(embedding.cols()); }
  int pooled_size() const;
  int max_region() const;
  std::size_t parameter_count() const;
  std::vector<int> encode(const TokenSequence& tokens) const;

  std::vector<Eigen::Map<Eigen::VectorXd>> views();

  Container to_container(const nlohmann::json& header) const;
  static CnnModel from_container(const Container& c);
};

struct CnnExample {
  TokenSequence tokens;
  std::array<double, 3> external{};
  Label label = Label::NonChat;
};

// Trailing PAD ids are stripped, then the sequence is right-padded with PAD up
// to the largest region size. Returns {P(Chat), P(NonChat)}. Dropout on the
// pooled features applies only when train_mode, and needs `rng`.
std::array<double, 2> cnn_forward(std::span<const int> ids, const std::array<double, 3>& external,
                                  const CnnModel& model, bool train_mode, Rng* rng = nullptr);
std::array<double, 2> cnn_forward(const TokenSequence& tokens, const std::array<double, 3>& external,
                                  const CnnModel& model, bool train_mode, Rng* rng = nullptr);

Label cnn_predict(const TokenSequence& tokens, const std::array<double, 3>& external, const CnnModel& model);

// Summed cross entropy with dropout disabled; gradients accumulate into `grad`.
double cnn_loss(const CnnModel& model, std::span<const CnnExample> examples, CnnModel* grad = nullptr);

struct CnnConfig {
  int n_maps = 100;
  std::vector<int> regions = {2, 3};
  double dropout = 0.5;
  int batch = 32;
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int max_epochs = 50;
  int patience = 5;
  int embed_dim = 300;  // used only without pre-trained embeddings
  bool fine_tune = true;
  std::uint64_t seed = 1;

  nlohmann::json to_json() const;
};

struct CnnTrainResult {
  CnnModel model;  // parameters from the best dev epoch
  double dev_f1 = 0.0;
  std::vector<double> dev_f1_history;
};

CnnTrainResult train_cnn(std::span<const CnnExample> train, std::span<const CnnExample> dev,
                         const EmbeddingTable* pretrained, const CnnConfig& config);

}  // namespace chatgate
