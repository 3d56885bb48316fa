#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "chatgate/container.hpp"

namespace chatgate {

// Output ids: 0 = UNK, 1..n = known characters. BOS = n + 1 is an input-only
// id, so it has an embedding row but no output slot.
class CharVocab {
 public:
  static constexpr int kUnk = 0;

  CharVocab() = default;
  explicit CharVocab(std::vector<char32_t> chars);

  // Characters seen at least min_count times; the rest train as UNK.
  static CharVocab build(std::span<const std::string> lines, int min_count = 1);

  int bos() const { return static_cast<int>(chars_.size()) + 1; }
  int output_size() const { return static_cast<int>(chars_.size()) + 1; }
  int input_size() const { return output_size() + 1; }
  int id(char32_t c) const;
  std::vector<int> encode(std::string_view text) const;
  const std::vector<char32_t>& chars() const { return chars_; }

  bool operator==(const CharVocab& other) const { return chars_ == other.chars_; }

 private:
  std::vector<char32_t> chars_;
  std::unordered_map<char32_t, int> ids_;
};

// Incremental next-character state, starting right after BOS.
class LmCursor {
 public:
  virtual ~LmCursor() = default;
  virtual Eigen::VectorXd dist() const = 0;
  virtual void advance(int id) = 0;
};

class CharLanguageModel {
 public:
  virtual ~CharLanguageModel() = default;
  virtual const CharVocab& vocab() const = 0;
  virtual std::unique_ptr<LmCursor> cursor() const = 0;

  Eigen::VectorXd next_char_dist(std::span<const int> prefix) const;
  // log p(ids[t] | BOS, ids[0..t-1]) for every t.
  std::vector<double> log_probs(std::span<const int> ids) const;
};

// (1/m) sum_t ln p(c_t | BOS, c_1..c_{t-1}); no end-of-utterance term.
double lm_score(std::string_view utterance, const CharLanguageModel& lm);

// exp(-mean per-character log-probability), pooled over all lines.
double perplexity(std::span<const std::string> lines, const CharLanguageModel& lm);

double combine_scores(double gru_score, double ngram_score, double weight = 0.5);

// Scores text fed in arbitrary code-point-aligned chunks.
class ScoreStream {
 public:
  explicit ScoreStream(const CharLanguageModel& lm);
  void feed(std::string_view chunk);
  std::size_t length() const { return count_; }
  double score() const;

 private:
  const CharLanguageModel& lm_;
  std::unique_ptr<LmCursor> cursor_;
  double sum_ = 0.0;
  std::size_t count_ = 0;
};

// ---------------------------------------------------------------------------
// GRU language model

struct GruCell {
  Eigen::MatrixXd w_z, u_z, w_r, u_r, w_h, u_h;  // W: H x E, U: H x H
};

// z = s(W_z x + U_z h), r = s(W_r x + U_r h),
// h~ = tanh(W_h x + U_h (r * h)), h' = (1 - z) * h + z * h~.
Eigen::VectorXd gru_step(const Eigen::VectorXd& x, const Eigen::VectorXd& h_prev, const GruCell& cell);

struct GruParams {
  Eigen::MatrixXd embedding;  // input_size x E
  GruCell cell;
  Eigen::MatrixXd out_w;      // V x H
  Eigen::VectorXd out_b;      // V

  static GruParams zeros_like(const GruParams& p);
  // Flat views over every tensor, in a fixed order.
  std::vector<Eigen::Map<Eigen::VectorXd>> views();
  std::vector<std::string> names() const;
  bool all_finite() const;
};

class GruLm : public CharLanguageModel {
 public:
  GruLm(CharVocab vocab, int embed_dim, int hidden_dim);

  static GruLm random(CharVocab vocab, int embed_dim, int hidden_dim, std::uint64_t seed);

  const CharVocab& vocab() const override { return vocab_; }
  std::unique_ptr<LmCursor> cursor() const override;

  int embed_dim() const { return embed_dim_; }
  int hidden_dim() const { return hidden_dim_; }
  GruParams& params() { return params_; }
  const GruParams& params() const { return params_; }

  Container to_container(const nlohmann::json& meta) const;
  static GruLm from_container(const Container& c);

 private:
  CharVocab vocab_;
  int embed_dim_;
  int hidden_dim_;
  GruParams params_;
};

// Summed next-character cross entropy (nats) over every character of every
// sequence, with analytic gradients accumulated into `grad` when given.
double gru_loss(const GruLm& lm, std::span<const std::vector<int>> sequences, GruParams* grad = nullptr);

struct GruTrainConfig {
  int embed_dim = 256;
  int hidden_dim = 256;
  int epochs = 10;
  double lr = 0.005;  // Adam step size
  int batch = 16;
  double clip = 5.0;
  std::uint64_t seed = 1;
  double holdout_fraction = 0.1;
  int vocab_min_count = 2;

  nlohmann::json to_json() const;
};

struct GruTrainResult {
  GruLm model;
  std::vector<double> train_perplexity;    // after each epoch
  std::vector<double> heldout_perplexity;  // after each epoch
};

GruTrainResult train_gru_lm(std::span<const std::string> lines, const GruTrainConfig& config);

// ---------------------------------------------------------------------------
// Interpolated count n-gram model

class NgramLm : public CharLanguageModel {
 public:
  // weights[0] is the uniform floor; weights[k] the order-k relative frequency.
  NgramLm(CharVocab vocab, int order, std::vector<double> weights);

  static std::vector<double> default_weights(int order);

  const CharVocab& vocab() const override { return vocab_; }
  std::unique_ptr<LmCursor> cursor() const override;

  int order() const { return order_; }
  const std::vector<double>& weights() const { return weights_; }

  void add_sequence(std::span<const int> ids);
  // History is the padded id context (BOS-padded to order - 1 symbols).
  Eigen::VectorXd dist_for_history(std::span<const int> history) const;

  Container to_container(const nlohmann::json& meta) const;
  static NgramLm from_container(const Container& c);

 private:
  struct Node {
    long total = 0;
    std::unordered_map<int, long> next;
  };

  CharVocab vocab_;
  int order_;
  std::vector<double> weights_;
  // tables_[k - 1] maps a (k - 1)-symbol history to its continuation counts.
  std::vector<std::unordered_map<std::u32string, Node>> tables_;
};

NgramLm train_ngram_lm(std::span<const std::string> lines, int order = 4, std::vector<double> weights = {},
                       int vocab_min_count = 1);

// ---------------------------------------------------------------------------

class QuerySet {
 public:
  QuerySet() = default;
  explicit QuerySet(std::span<const std::string> queries);
  static QuerySet load(const std::filesystem::path& path);

  bool contains(std::string_view utterance) const;
  std::size_t size() const { return entries_.size(); }

 private:
  std::unordered_set<std::string> entries_;
};

int query_presence(std::string_view utterance, const QuerySet& queries);

void save_lm(const CharLanguageModel& lm, const std::filesystem::path& path, const nlohmann::json& meta);
std::unique_ptr<CharLanguageModel> load_lm(const std::filesystem::path& path);

}  // namespace chatgate
