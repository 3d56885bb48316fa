#include "chatgate/features.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>
#include <unicode/uchar.h>

#include "chatgate/error.hpp"
#include "chatgate/utf8.hpp"

namespace chatgate {

namespace {

bool is_space(char32_t cp) { return u_isUWhiteSpace(static_cast<UChar32>(cp)); }
bool is_punct(char32_t cp) { return u_ispunct(static_cast<UChar32>(cp)); }
bool is_letter(char32_t cp) { return u_isalpha(static_cast<UChar32>(cp)); }
bool is_apostrophe(char32_t cp) { return cp == U'\'' || cp == U'’'; }

}  // namespace

TokenSequence tokenize(std::string_view text) {
  const std::u32string cps = utf8::decode(text);
  TokenSequence seq;
  std::u32string current;
  auto flush = [&] {
    if (!current.empty()) seq.tokens.push_back(utf8::encode(current));
    current.clear();
  };
  for (std::size_t i = 0; i < cps.size(); ++i) {
    const char32_t c = cps[i];
    if (is_space(c)) {
      flush();
    } else if (is_apostrophe(c) && !current.empty() && i + 1 < cps.size() && is_letter(cps[i + 1])) {
      flush();
      current.push_back(c);
    } else if (is_punct(c)) {
      flush();
      seq.tokens.push_back(utf8::encode(c));
    } else {
      current.push_back(c);
    }
  }
  flush();
  return seq;
}

std::map<std::string, int> char_ngrams(std::string_view text, int n) {
  if (n < 1) throw Error(ErrorKind::InvalidConfig, "n-gram order must be positive");
  const std::u32string cps = utf8::decode(text);
  std::map<std::string, int> grams;
  const auto len = static_cast<std::size_t>(n);
  if (cps.size() < len) return grams;
  for (std::size_t i = 0; i + len <= cps.size(); ++i) {
    grams[utf8::encode(std::u32string_view(cps).substr(i, len))]++;
  }
  return grams;
}

std::map<std::string, int> word_ngrams(const TokenSequence& tokens, int n) {
  if (n < 1) throw Error(ErrorKind::InvalidConfig, "n-gram order must be positive");
  std::map<std::string, int> grams;
  const auto len = static_cast<std::size_t>(n);
  if (tokens.size() < len) return grams;
  for (std::size_t i = 0; i + len <= tokens.size(); ++i) {
    std::string gram = tokens.tokens[i];
    for (std::size_t k = 1; k < len; ++k) {
      gram += kBigramSeparator;
      gram += tokens.tokens[i + k];
    }
    grams[gram]++;
  }
  return grams;
}

double SparseVector::dot(std::span<const double> dense) const {
  double s = 0.0;
  for (std::size_t k = 0; k < indices.size(); ++k) s += values[k] * dense[indices[k]];
  return s;
}

SparseVector SparseVector::from_pairs(std::vector<std::pair<std::uint32_t, double>> pairs) {
  std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  SparseVector v;
  for (const auto& [idx, val] : pairs) {
    if (!v.indices.empty() && v.indices.back() == idx) {
      v.values.back() += val;
    } else {
      v.indices.push_back(idx);
      v.values.push_back(val);
    }
  }
  std::size_t w = 0;
  for (std::size_t r = 0; r < v.indices.size(); ++r) {
    if (v.values[r] == 0.0) continue;
    v.indices[w] = v.indices[r];
    v.values[w] = v.values[r];
    ++w;
  }
  v.indices.resize(w);
  v.values.resize(w);
  return v;
}

bool SparseVector::valid(std::size_t dim) const {
  if (indices.size() != values.size()) return false;
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= dim) return false;
    if (k > 0 && indices[k] <= indices[k - 1]) return false;
    if (values[k] == 0.0 || !std::isfinite(values[k])) return false;
  }
  return true;
}

long FeatureSpace::char_id(const std::string& gram) const {
  const auto it = char_index_.find(gram);
  return it == char_index_.end() ? -1 : static_cast<long>(it->second);
}

long FeatureSpace::word_id(const std::string& gram) const {
  const auto it = word_index_.find(gram);
  return it == word_index_.end() ? -1 : static_cast<long>(it->second + word_offset());
}

void FeatureSpace::reindex() {
  char_index_.clear();
  word_index_.clear();
  for (std::size_t i = 0; i < char_vocab_.size(); ++i) char_index_.emplace(char_vocab_[i], static_cast<std::uint32_t>(i));
  for (std::size_t i = 0; i < word_vocab_.size(); ++i) word_index_.emplace(word_vocab_[i], static_cast<std::uint32_t>(i));
}

nlohmann::json FeatureSpace::to_json() const {
  nlohmann::json j;
  j["version"] = 1;
  j["min_count"] = config_.min_count;
  j["binary_ngrams"] = config_.binary_ngrams;
  j["normalize_embeddings"] = config_.normalize_embeddings;
  j["offsets"] = {{"char", char_offset()},
                  {"word", word_offset()},
                  {"embedding", embedding_offset()},
                  {"external", external_offset()},
                  {"total", total_dim()}};
  j["embedding_dim"] = config_.embedding_dim;
  j["char_vocab"] = char_vocab_;
  j["word_vocab"] = word_vocab_;
  return j;
}

FeatureSpace FeatureSpace::from_json(const nlohmann::json& j) {
  try {
    if (j.at("version").get<int>() != 1) throw Error(ErrorKind::FormatError, "unsupported feature space version");
    FeatureSpace space;
    space.config_.min_count = j.at("min_count").get<int>();
    space.config_.binary_ngrams = j.value("binary_ngrams", false);
    space.config_.normalize_embeddings = j.value("normalize_embeddings", false);
    space.config_.embedding_dim = j.at("embedding_dim").get<int>();
    space.char_vocab_ = j.at("char_vocab").get<std::vector<std::string>>();
    space.word_vocab_ = j.at("word_vocab").get<std::vector<std::string>>();
    space.reindex();
    if (j.contains("offsets") && j["offsets"].at("total").get<std::size_t>() != space.total_dim()) {
      throw Error(ErrorKind::FormatError, "feature space offsets disagree with vocabulary sizes");
    }
    return space;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::FormatError, std::string("bad feature space: ") + e.what());
  }
}

FeatureSpace build_feature_space(std::span<const std::string> texts, const FeatureConfig& config) {
  if (texts.empty()) throw Error(ErrorKind::EmptyCorpus, "cannot build a feature space from no utterances");
  if (config.embedding_dim < 0) throw Error(ErrorKind::InvalidConfig, "negative embedding dimension");
  std::map<std::string, long> char_counts;
  std::map<std::string, long> word_counts;
  for (const auto& text : texts) {
    for (int n = 1; n <= 2; ++n) {
      for (const auto& [g, c] : char_ngrams(text, n)) char_counts[g] += c;
    }
    const TokenSequence tokens = tokenize(text);
    for (int n = 1; n <= 2; ++n) {
      for (const auto& [g, c] : word_ngrams(tokens, n)) word_counts[g] += c;
    }
  }
  FeatureSpace space;
  space.config_ = config;
  // std::map iteration is already lexicographic.
  for (const auto& [g, c] : char_counts) {
    if (c >= config.min_count) space.char_vocab_.push_back(g);
  }
  for (const auto& [g, c] : word_counts) {
    if (c >= config.min_count) space.word_vocab_.push_back(g);
  }
  space.reindex();
  return space;
}

FeatureSpace build_feature_space(const Corpus& training, const FeatureConfig& config) {
  std::vector<std::string> texts;
  texts.reserve(training.size());
  for (const auto& u : training.utterances) texts.push_back(u.text);
  return build_feature_space(texts, config);
}

Eigen::VectorXd average_embeddings(const TokenSequence& tokens, const EmbeddingTable& table, bool normalize) {
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(table.dim());
  int known = 0;
  for (const auto& tok : tokens.tokens) {
    const int row = table.find(tok);
    if (row < 0) continue;
    Eigen::VectorXd v = table.matrix.row(row).transpose();
    if (normalize) {
      const double n = v.norm();
      if (n > 0.0) v /= n;
    }
    sum += v;
    ++known;
  }
  if (known > 0) sum /= static_cast<double>(known);
  return sum;
}

SparseVector featurize(std::string_view text, const FeatureSpace& space, const EmbeddingTable* table,
                       const ExternalFeatures& external) {
  for (double v : external.as_array()) {
    if (!std::isfinite(v)) throw Error(ErrorKind::InvalidFeature, "external feature is not finite");
  }
  if (table != nullptr && table->dim() != space.embedding_dim()) {
    throw Error(ErrorKind::ShapeError, "embedding table has dim " + std::to_string(table->dim()) +
                                           ", feature space expects " + std::to_string(space.embedding_dim()));
  }
  const bool binary = space.config().binary_ngrams;
  std::vector<std::pair<std::uint32_t, double>> pairs;
  for (int n = 1; n <= 2; ++n) {
    for (const auto& [g, c] : char_ngrams(text, n)) {
      const long id = space.char_id(g);
      if (id >= 0) pairs.emplace_back(static_cast<std::uint32_t>(id), binary ? 1.0 : c);
    }
  }
  const TokenSequence tokens = tokenize(text);
  for (int n = 1; n <= 2; ++n) {
    for (const auto& [g, c] : word_ngrams(tokens, n)) {
      const long id = space.word_id(g);
      if (id >= 0) pairs.emplace_back(static_cast<std::uint32_t>(id), binary ? 1.0 : c);
    }
  }
  if (table != nullptr) {
    const Eigen::VectorXd avg = average_embeddings(tokens, *table, space.config().normalize_embeddings);
    const auto base = static_cast<std::uint32_t>(space.embedding_offset());
    for (int d = 0; d < avg.size(); ++d) pairs.emplace_back(base + static_cast<std::uint32_t>(d), avg[d]);
  }
  const auto ext = external.as_array();
  for (std::uint32_t s = 0; s < 3; ++s) {
    pairs.emplace_back(static_cast<std::uint32_t>(space.external_offset()) + s, ext[s]);
  }
  return SparseVector::from_pairs(std::move(pairs));
}

}  // namespace chatgate
