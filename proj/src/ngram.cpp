#include <algorithm>
#include <cmath>
#include <numeric>

#include "chatgate/error.hpp"
#include "chatgate/lm.hpp"

namespace chatgate {

NgramLm::NgramLm(CharVocab vocab, int order, std::vector<double> weights)
    : vocab_(std::move(vocab)), order_(order), weights_(std::move(weights)) {
  if (order_ < 1) throw Error(ErrorKind::InvalidConfig, "n-gram order must be at least 1");
  if (weights_.size() != static_cast<std::size_t>(order_) + 1) {
    throw Error(ErrorKind::InvalidConfig, "expected " + std::to_string(order_ + 1) +
                                              " interpolation weights (uniform floor first)");
  }
  for (double w : weights_) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw Error(ErrorKind::InvalidConfig, "interpolation weights must be >= 0");
  }
  if (weights_[0] <= 0.0) throw Error(ErrorKind::InvalidConfig, "the uniform floor weight must be positive");
  const double sum = std::accumulate(weights_.begin(), weights_.end(), 0.0);
  if (std::abs(sum - 1.0) > 1e-9) throw Error(ErrorKind::InvalidConfig, "interpolation weights must sum to 1");
  tables_.resize(static_cast<std::size_t>(order_));
}

std::vector<double> NgramLm::default_weights(int order) {
  if (order < 1) throw Error(ErrorKind::InvalidConfig, "n-gram order must be at least 1");
  std::vector<double> w{0.01};
  const double denom = order * (order + 1) / 2.0;
  for (int k = 1; k <= order; ++k) w.push_back(0.99 * k / denom);
  return w;
}

void NgramLm::add_sequence(std::span<const int> ids) {
  std::u32string padded(static_cast<std::size_t>(order_ - 1), static_cast<char32_t>(vocab_.bos()));
  for (int id : ids) padded.push_back(static_cast<char32_t>(id));
  for (std::size_t t = static_cast<std::size_t>(order_ - 1); t < padded.size(); ++t) {
    const int target = static_cast<int>(padded[t]);
    for (int k = 1; k <= order_; ++k) {
      const auto hist_len = static_cast<std::size_t>(k - 1);
      Node& node = tables_[static_cast<std::size_t>(k - 1)][padded.substr(t - hist_len, hist_len)];
      node.total++;
      node.next[target]++;
    }
  }
}

Eigen::VectorXd NgramLm::dist_for_history(std::span<const int> history) const {
  const int v = vocab_.output_size();
  Eigen::VectorXd dist = Eigen::VectorXd::Zero(v);
  std::u32string key;
  for (int id : history) key.push_back(static_cast<char32_t>(id));
  double carry = 0.0;
  for (int k = order_; k >= 1; --k) {
    const double w = weights_[static_cast<std::size_t>(k)] + carry;
    const auto hist_len = static_cast<std::size_t>(k - 1);
    const std::u32string sub = key.size() >= hist_len ? key.substr(key.size() - hist_len) : key;
    const auto& table = tables_[static_cast<std::size_t>(k - 1)];
    const auto it = sub.size() == hist_len ? table.find(sub) : table.end();
    if (it == table.end() || it->second.total == 0) {
      carry = w;
      continue;
    }
    carry = 0.0;
    const double scale = w / static_cast<double>(it->second.total);
    for (const auto& [id, n] : it->second.next) dist[id] += scale * static_cast<double>(n);
  }
  dist.array() += (weights_[0] + carry) / static_cast<double>(v);
  return dist;
}

namespace {

class NgramCursor : public LmCursor {
 public:
  explicit NgramCursor(const NgramLm& lm)
      : lm_(lm), history_(static_cast<std::size_t>(lm.order() - 1), lm.vocab().bos()) {}

  Eigen::VectorXd dist() const override { return lm_.dist_for_history(history_); }

  void advance(int id) override {
    if (history_.empty()) return;
    history_.erase(history_.begin());
    history_.push_back(id);
  }

 private:
  const NgramLm& lm_;
  std::vector<int> history_;
};

}  // namespace

std::unique_ptr<LmCursor> NgramLm::cursor() const { return std::make_unique<NgramCursor>(*this); }

Container NgramLm::to_container(const nlohmann::json& meta) const {
  Container c;
  c.kind = "ngram_lm";
  std::vector<std::uint32_t> chars(vocab_.chars().begin(), vocab_.chars().end());
  nlohmann::json counts = nlohmann::json::array();
  for (const auto& table : tables_) {
    std::vector<std::pair<std::u32string, const Node*>> sorted;
    for (const auto& [hist, node] : table) sorted.emplace_back(hist, &node);
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& [hist, node] : sorted) {
      std::vector<std::pair<int, long>> next(node->next.begin(), node->next.end());
      std::sort(next.begin(), next.end());
      entries.push_back({std::vector<std::uint32_t>(hist.begin(), hist.end()), next});
    }
    counts.push_back(std::move(entries));
  }
  c.header = {{"meta", meta}, {"vocab", chars}, {"order", order_}, {"weights", weights_}, {"counts", counts}};
  return c;
}

NgramLm NgramLm::from_container(const Container& c) {
  if (c.kind != "ngram_lm") throw Error(ErrorKind::FormatError, "expected an ngram_lm container, got " + c.kind);
  try {
    const auto chars32 = c.header.at("vocab").get<std::vector<std::uint32_t>>();
    NgramLm lm(CharVocab(std::vector<char32_t>(chars32.begin(), chars32.end())), c.header.at("order").get<int>(),
               c.header.at("weights").get<std::vector<double>>());
    const auto& counts = c.header.at("counts");
    if (counts.size() != static_cast<std::size_t>(lm.order_)) throw Error(ErrorKind::FormatError, "count tables do not match order");
    for (std::size_t k = 0; k < counts.size(); ++k) {
      for (const auto& entry : counts[k]) {
        const auto hist = entry.at(0).get<std::vector<std::uint32_t>>();
        Node& node = lm.tables_[k][std::u32string(hist.begin(), hist.end())];
        for (const auto& pair : entry.at(1)) {
          const int id = pair.at(0).get<int>();
          const long n = pair.at(1).get<long>();
          if (id < 0 || id >= lm.vocab_.output_size() || n < 0) throw Error(ErrorKind::FormatError, "bad n-gram count entry");
          node.next[id] += n;
          node.total += n;
        }
      }
    }
    return lm;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::FormatError, std::string("bad ngram_lm header: ") + e.what());
  }
}

NgramLm train_ngram_lm(std::span<const std::string> lines, int order, std::vector<double> weights,
                       int vocab_min_count) {
  if (weights.empty()) weights = NgramLm::default_weights(order);
  NgramLm lm(CharVocab::build(lines, vocab_min_count), order, std::move(weights));
  bool any = false;
  for (const auto& line : lines) {
    const auto ids = lm.vocab().encode(line);
    if (ids.empty()) continue;
    lm.add_sequence(ids);
    any = true;
  }
  if (!any) throw Error(ErrorKind::EmptyCorpus, "language model corpus is empty");
  return lm;
}

}  // namespace chatgate
