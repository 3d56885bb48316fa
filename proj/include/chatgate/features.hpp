#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

#include "chatgate/corpus.hpp"
#include "chatgate/embeddings.hpp"

namespace chatgate {

struct TokenSequence {
  std::vector<std::string> tokens;

  std::size_t size() const { return tokens.size(); }
  bool empty() const { return tokens.empty(); }
  bool operator==(const TokenSequence&) const = default;
};

using Tokenizer = std::function<TokenSequence(std::string_view)>;

// Splits on whitespace; punctuation becomes standalone tokens, and an
// apostrophe clitic inside a word ("what's") starts its own token ("'s").
TokenSequence tokenize(std::string_view text);

// Contiguous code-point n-grams of the raw text, whitespace included.
std::map<std::string, int> char_ngrams(std::string_view text, int n);

// Joins adjacent tokens with U+001F for n = 2.
inline constexpr std::string_view kBigramSeparator = "\x1f";
std::map<std::string, int> word_ngrams(const TokenSequence& tokens, int n);

struct SparseVector {
  std::vector<std::uint32_t> indices;
  std::vector<double> values;

  std::size_t nnz() const { return indices.size(); }
  double dot(std::span<const double> dense) const;
  // Builds from unsorted (index, value) pairs; duplicates are summed, zeros dropped.
  static SparseVector from_pairs(std::vector<std::pair<std::uint32_t, double>> pairs);
  // Checks the strictly-increasing / finite / nonzero invariants.
  bool valid(std::size_t dim) const;

  bool operator==(const SparseVector&) const = default;
};

struct ExternalFeatures {
  double tweet_score = 0.0;
  double query_score = 0.0;
  double query_binary = 0.0;

  std::array<double, 3> as_array() const { return {tweet_score, query_score, query_binary}; }
};

struct FeatureConfig {
  int min_count = 1;
  int embedding_dim = 300;
  bool binary_ngrams = false;
  bool normalize_embeddings = false;
};

enum class ExternalSlot : std::uint32_t { TweetScore = 0, QueryScore = 1, QueryBinary = 2 };

class FeatureSpace {
 public:
  FeatureSpace() = default;

  std::size_t char_offset() const { return 0; }
  std::size_t word_offset() const { return char_vocab_.size(); }
  std::size_t embedding_offset() const { return word_offset() + word_vocab_.size(); }
  std::size_t external_offset() const { return embedding_offset() + static_cast<std::size_t>(config_.embedding_dim); }
  std::size_t external_index(ExternalSlot slot) const { return external_offset() + static_cast<std::uint32_t>(slot); }
  std::size_t total_dim() const { return external_offset() + 3; }

  const std::vector<std::string>& char_vocab() const { return char_vocab_; }
  const std::vector<std::string>& word_vocab() const { return word_vocab_; }
  const FeatureConfig& config() const { return config_; }
  int embedding_dim() const { return config_.embedding_dim; }

  // -1 when absent.
  long char_id(const std::string& gram) const;
  long word_id(const std::string& gram) const;

  nlohmann::json to_json() const;
  static FeatureSpace from_json(const nlohmann::json& j);

  friend FeatureSpace build_feature_space(std::span<const std::string> texts, const FeatureConfig& config);

  bool operator==(const FeatureSpace& other) const {
    return char_vocab_ == other.char_vocab_ && word_vocab_ == other.word_vocab_ &&
           config_.embedding_dim == other.config_.embedding_dim && config_.min_count == other.config_.min_count &&
           config_.binary_ngrams == other.config_.binary_ngrams &&
           config_.normalize_embeddings == other.config_.normalize_embeddings;
  }

 private:
  void reindex();

  FeatureConfig config_;
  std::vector<std::string> char_vocab_;
  std::vector<std::string> word_vocab_;
  std::unordered_map<std::string, std::uint32_t> char_index_;
  std::unordered_map<std::string, std::uint32_t> word_index_;
};

FeatureSpace build_feature_space(std::span<const std::string> texts, const FeatureConfig& config = {});
FeatureSpace build_feature_space(const Corpus& training, const FeatureConfig& config = {});

// Mean of in-vocabulary token embeddings; zeros when none are known.
Eigen::VectorXd average_embeddings(const TokenSequence& tokens, const EmbeddingTable& table, bool normalize = false);

// Pass nullptr for `table` to leave the embedding block empty.
SparseVector featurize(std::string_view text, const FeatureSpace& space, const EmbeddingTable* table,
                       const ExternalFeatures& external);

}  // namespace chatgate
