#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace chatgate {

struct EmbeddingTable {
  std::vector<std::string> words;
  std::unordered_map<std::string, int> index;
  Eigen::MatrixXd matrix;  // one row per word

  int dim() const { return static_cast<int>(matrix.cols()); }
  std::size_t size() const { return words.size(); }
  // -1 when out of vocabulary.
  int find(std::string_view word) const;
  Eigen::VectorXd vector(std::string_view word) const;

  static EmbeddingTable from_rows(std::vector<std::string> words, Eigen::MatrixXd matrix);

  bool operator==(const EmbeddingTable& other) const;
};

struct SkipGramConfig {
  int dim = 300;
  int window = 5;
  int negatives = 5;
  int epochs = 5;
  double lr = 0.025;
  int min_count = 1;
  std::uint64_t seed = 1;
};

struct SkipGramResult {
  EmbeddingTable table;
  // Mean negative-sampling loss over the updates of the final epoch.
  double final_epoch_loss = 0.0;
};

// Lines are tokenized with the default tokenizer.
SkipGramResult train_skipgram(const std::vector<std::string>& lines, const SkipGramConfig& config);

// Loss of one (center, context) pair with its negative samples:
//   -log s(u_pos . v) - sum_k log s(-u_neg_k . v)
// Gradients are written into the supplied outputs (overwritten, not accumulated).
struct SgnsGradient {
  Eigen::VectorXd center;
  Eigen::VectorXd positive;
  std::vector<Eigen::VectorXd> negatives;
};

double sgns_pair_loss(const Eigen::VectorXd& center, const Eigen::VectorXd& positive,
                      const std::vector<Eigen::VectorXd>& negatives, SgnsGradient* grad = nullptr);

// Text format: "count dim[ # comment]" header, then "word v1 ... vdim" per line.
void save_table(const EmbeddingTable& table, const std::filesystem::path& path, const std::string& comment = {});
EmbeddingTable load_table(const std::filesystem::path& path);
std::string serialize_table(const EmbeddingTable& table, const std::string& comment = {});
EmbeddingTable parse_table(std::string_view content);

}  // namespace chatgate
