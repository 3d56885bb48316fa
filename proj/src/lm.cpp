#include "chatgate/lm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "chatgate/error.hpp"
#include "chatgate/utf8.hpp"

namespace chatgate {

CharVocab::CharVocab(std::vector<char32_t> chars) : chars_(std::move(chars)) {
  std::sort(chars_.begin(), chars_.end());
  chars_.erase(std::unique(chars_.begin(), chars_.end()), chars_.end());
  for (std::size_t i = 0; i < chars_.size(); ++i) ids_.emplace(chars_[i], static_cast<int>(i) + 1);
}

CharVocab CharVocab::build(std::span<const std::string> lines, int min_count) {
  std::map<char32_t, long> counts;
  for (const auto& line : lines) {
    for (char32_t c : utf8::decode(line)) counts[c]++;
  }
  std::vector<char32_t> chars;
  for (const auto& [c, n] : counts) {
    if (n >= min_count) chars.push_back(c);
  }
  return CharVocab(std::move(chars));
}

int CharVocab::id(char32_t c) const {
  const auto it = ids_.find(c);
  return it == ids_.end() ? kUnk : it->second;
}

std::vector<int> CharVocab::encode(std::string_view text) const {
  std::vector<int> ids;
  for (char32_t c : utf8::decode(text)) ids.push_back(id(c));
  return ids;
}

Eigen::VectorXd CharLanguageModel::next_char_dist(std::span<const int> prefix) const {
  auto cur = cursor();
  for (int id : prefix) cur->advance(id);
  return cur->dist();
}

std::vector<double> CharLanguageModel::log_probs(std::span<const int> ids) const {
  std::vector<double> out;
  out.reserve(ids.size());
  auto cur = cursor();
  for (int id : ids) {
    out.push_back(std::log(cur->dist()[id]));
    cur->advance(id);
  }
  return out;
}

double lm_score(std::string_view utterance, const CharLanguageModel& lm) {
  const std::vector<int> ids = lm.vocab().encode(utterance);
  if (ids.empty()) throw Error(ErrorKind::EmptyUtterance, "cannot score an empty utterance");
  double sum = 0.0;
  for (double lp : lm.log_probs(ids)) sum += lp;
  return sum / static_cast<double>(ids.size());
}

double perplexity(std::span<const std::string> lines, const CharLanguageModel& lm) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& line : lines) {
    const std::vector<int> ids = lm.vocab().encode(line);
    for (double lp : lm.log_probs(ids)) sum += lp;
    count += ids.size();
  }
  if (count == 0) throw Error(ErrorKind::EmptyCorpus, "perplexity needs at least one character");
  return std::exp(-sum / static_cast<double>(count));
}

double combine_scores(double gru_score, double ngram_score, double weight) {
  if (!(weight >= 0.0 && weight <= 1.0)) throw Error(ErrorKind::InvalidConfig, "combination weight must lie in [0, 1]");
  return weight * gru_score + (1.0 - weight) * ngram_score;
}

ScoreStream::ScoreStream(const CharLanguageModel& lm) : lm_(lm), cursor_(lm.cursor()) {}

void ScoreStream::feed(std::string_view chunk) {
  for (char32_t c : utf8::decode(chunk)) {
    const int id = lm_.vocab().id(c);
    sum_ += std::log(cursor_->dist()[id]);
    cursor_->advance(id);
    ++count_;
  }
}

double ScoreStream::score() const {
  if (count_ == 0) throw Error(ErrorKind::EmptyUtterance, "cannot score an empty utterance");
  return sum_ / static_cast<double>(count_);
}

QuerySet::QuerySet(std::span<const std::string> queries) {
  for (const auto& q : queries) {
    std::string n = utf8::normalize_query(q);
    if (!n.empty()) entries_.insert(std::move(n));
  }
}

QuerySet QuerySet::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open query set '" + path.string() + "'");
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  return QuerySet(lines);
}

bool QuerySet::contains(std::string_view utterance) const {
  return entries_.contains(utf8::normalize_query(utterance));
}

int query_presence(std::string_view utterance, const QuerySet& queries) { return queries.contains(utterance) ? 1 : 0; }

void save_lm(const CharLanguageModel& lm, const std::filesystem::path& path, const nlohmann::json& meta) {
  if (const auto* gru = dynamic_cast<const GruLm*>(&lm)) {
    write_container(gru->to_container(meta), path);
  } else if (const auto* ngram = dynamic_cast<const NgramLm*>(&lm)) {
    write_container(ngram->to_container(meta), path);
  } else {
    throw Error(ErrorKind::InvalidConfig, "unsupported language model type");
  }
}

std::unique_ptr<CharLanguageModel> load_lm(const std::filesystem::path& path) {
  const Container c = read_container(path);
  if (c.kind == "gru_lm") return std::make_unique<GruLm>(GruLm::from_container(c));
  if (c.kind == "ngram_lm") return std::make_unique<NgramLm>(NgramLm::from_container(c));
  throw Error(ErrorKind::FormatError, "'" + path.string() + "' holds a " + c.kind + ", not a language model");
}

}  // namespace chatgate
