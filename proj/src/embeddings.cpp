#include "chatgate/embeddings.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "chatgate/error.hpp"
#include "chatgate/features.hpp"
#include "chatgate/rng.hpp"

namespace chatgate {

int EmbeddingTable::find(std::string_view word) const {
  const auto it = index.find(std::string(word));
  return it == index.end() ? -1 : it->second;
}

Eigen::VectorXd EmbeddingTable::vector(std::string_view word) const {
  const int row = find(word);
  if (row < 0) return Eigen::VectorXd::Zero(dim());
  return matrix.row(row).transpose();
}

EmbeddingTable EmbeddingTable::from_rows(std::vector<std::string> words, Eigen::MatrixXd matrix) {
  if (static_cast<Eigen::Index>(words.size()) != matrix.rows()) {
    throw Error(ErrorKind::ShapeError, "word list and matrix row count differ");
  }
  EmbeddingTable t;
  t.words = std::move(words);
  t.matrix = std::move(matrix);
  for (std::size_t i = 0; i < t.words.size(); ++i) {
    if (!t.index.emplace(t.words[i], static_cast<int>(i)).second) {
      throw Error(ErrorKind::FormatError, "duplicate embedding word '" + t.words[i] + "'");
    }
  }
  return t;
}

bool EmbeddingTable::operator==(const EmbeddingTable& other) const {
  return words == other.words && matrix.rows() == other.matrix.rows() && matrix.cols() == other.matrix.cols() &&
         matrix == other.matrix;
}

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// log(sigmoid(x)) without overflow for large |x|.
double log_sigmoid(double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }

}  // namespace

double sgns_pair_loss(const Eigen::VectorXd& center, const Eigen::VectorXd& positive,
                      const std::vector<Eigen::VectorXd>& negatives, SgnsGradient* grad) {
  const double sp = positive.dot(center);
  double loss = -log_sigmoid(sp);
  if (grad != nullptr) {
    const double gp = sigmoid(sp) - 1.0;
    grad->center = gp * positive;
    grad->positive = gp * center;
    grad->negatives.clear();
  }
  for (const auto& neg : negatives) {
    const double sn = neg.dot(center);
    loss -= log_sigmoid(-sn);
    if (grad != nullptr) {
      const double gn = sigmoid(sn);
      grad->center += gn * neg;
      grad->negatives.push_back(gn * center);
    }
  }
  return loss;
}

SkipGramResult train_skipgram(const std::vector<std::string>& lines, const SkipGramConfig& config) {
  if (config.dim <= 0 || config.window <= 0 || config.negatives < 0 || config.epochs <= 0 || config.lr <= 0.0) {
    throw Error(ErrorKind::InvalidConfig, "skip-gram dim, window, epochs and lr must be positive");
  }
  std::map<std::string, long> counts;
  std::vector<std::vector<std::string>> sentences;
  sentences.reserve(lines.size());
  for (const auto& line : lines) {
    auto toks = tokenize(line).tokens;
    for (const auto& t : toks) counts[t]++;
    sentences.push_back(std::move(toks));
  }
  std::vector<std::pair<std::string, long>> kept;
  for (const auto& [w, c] : counts) {
    if (c >= config.min_count) kept.emplace_back(w, c);
  }
  if (kept.size() < 2) {
    throw Error(ErrorKind::DegenerateCorpus, "skip-gram needs at least two distinct words above min_count");
  }
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });

  std::vector<std::string> words;
  std::unordered_map<std::string, int> ids;
  for (const auto& [w, c] : kept) {
    ids.emplace(w, static_cast<int>(words.size()));
    words.push_back(w);
  }
  std::vector<std::vector<int>> corpus;
  long total_tokens = 0;
  for (const auto& s : sentences) {
    std::vector<int> row;
    for (const auto& t : s) {
      const auto it = ids.find(t);
      if (it != ids.end()) row.push_back(it->second);
    }
    total_tokens += static_cast<long>(row.size());
    if (row.size() >= 2) corpus.push_back(std::move(row));
  }

  std::vector<double> noise_cdf;
  double acc = 0.0;
  for (const auto& [w, c] : kept) {
    acc += std::pow(static_cast<double>(c), 0.75);
    noise_cdf.push_back(acc);
  }
  for (double& v : noise_cdf) v /= acc;

  const int vocab = static_cast<int>(words.size());
  const int dim = config.dim;
  Rng rng(config.seed);
  Eigen::MatrixXd in(vocab, dim);
  for (int r = 0; r < vocab; ++r) {
    for (int c = 0; c < dim; ++c) in(r, c) = (rng.uniform() - 0.5) / dim;
  }
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(vocab, dim);

  const double total_work = static_cast<double>(total_tokens) * config.epochs;
  double done = 0.0;
  double epoch_loss = 0.0;
  long epoch_pairs = 0;
  Eigen::VectorXd center_grad(dim);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    epoch_loss = 0.0;
    epoch_pairs = 0;
    for (const auto& sent : corpus) {
      const int n = static_cast<int>(sent.size());
      for (int i = 0; i < n; ++i) {
        const double lr = config.lr * std::max(1e-4, 1.0 - done / total_work);
        done += 1.0;
        const int center = sent[i];
        const int lo = std::max(0, i - config.window);
        const int hi = std::min(n - 1, i + config.window);
        for (int j = lo; j <= hi; ++j) {
          if (j == i) continue;
          const int context = sent[j];
          center_grad.setZero();
          const auto v = in.row(center);
          // Positive pair followed by negatives; same gradients as sgns_pair_loss.
          for (int k = 0; k <= config.negatives; ++k) {
            int target = context;
            double label = 1.0;
            if (k > 0) {
              const double u = rng.uniform();
              target = static_cast<int>(std::upper_bound(noise_cdf.begin(), noise_cdf.end(), u) - noise_cdf.begin());
              target = std::min(target, vocab - 1);
              if (target == context) continue;
              label = 0.0;
            }
            auto u_row = out.row(target);
            const double score = u_row.dot(v);
            epoch_loss -= label > 0.5 ? log_sigmoid(score) : log_sigmoid(-score);
            const double g = sigmoid(score) - label;
            center_grad.noalias() += g * u_row.transpose();
            u_row -= lr * g * v;
          }
          in.row(center) -= lr * center_grad.transpose();
          ++epoch_pairs;
        }
      }
    }
    if (!in.allFinite() || !out.allFinite()) {
      throw Error(ErrorKind::DivergenceError, "skip-gram parameters became non-finite; lower the learning rate");
    }
  }
  SkipGramResult result;
  result.table = EmbeddingTable::from_rows(std::move(words), std::move(in));
  result.final_epoch_loss = epoch_pairs > 0 ? epoch_loss / static_cast<double>(epoch_pairs) : 0.0;
  return result;
}

std::string serialize_table(const EmbeddingTable& table, const std::string& comment) {
  std::ostringstream out;
  out << table.size() << ' ' << table.dim();
  if (!comment.empty()) out << " # " << comment;
  out << '\n';
  char buf[32];
  for (std::size_t r = 0; r < table.size(); ++r) {
    out << table.words[r];
    for (int c = 0; c < table.dim(); ++c) {
      const auto res = std::to_chars(buf, buf + sizeof(buf), table.matrix(static_cast<Eigen::Index>(r), c));
      out << ' ' << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
    }
    out << '\n';
  }
  return out.str();
}

void save_table(const EmbeddingTable& table, const std::filesystem::path& path, const std::string& comment) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::IoError, "cannot write embeddings '" + path.string() + "'");
  out << serialize_table(table, comment);
}

EmbeddingTable parse_table(std::string_view content) {
  std::istringstream in{std::string(content)};
  std::string header;
  if (!std::getline(in, header) || header.find_first_not_of(" \t\r") == std::string::npos) {
    throw Error(ErrorKind::FormatError, "embedding file is empty");
  }
  if (const auto hash = header.find('#'); hash != std::string::npos) header.resize(hash);
  std::istringstream hs(header);
  long count = -1;
  long dim = -1;
  if (!(hs >> count >> dim) || count < 0 || dim <= 0) {
    throw Error(ErrorKind::FormatError, "embedding header must read 'count dim'");
  }
  std::vector<std::string> words;
  Eigen::MatrixXd matrix(count, dim);
  std::string line;
  long row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (row >= count) throw Error(ErrorKind::FormatError, "more rows than the header's count");
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    std::vector<double> vals;
    std::string tok;
    while (ls >> tok) {
      double v = 0.0;
      const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (res.ec != std::errc() || res.ptr != tok.data() + tok.size() || !std::isfinite(v)) {
        throw Error(ErrorKind::FormatError, "bad value '" + tok + "' on row " + std::to_string(row + 1));
      }
      vals.push_back(v);
    }
    if (static_cast<long>(vals.size()) != dim) {
      throw Error(ErrorKind::FormatError, "row " + std::to_string(row + 1) + " has " + std::to_string(vals.size()) +
                                              " values, header says " + std::to_string(dim));
    }
    for (long c = 0; c < dim; ++c) matrix(row, c) = vals[static_cast<std::size_t>(c)];
    words.push_back(word);
    ++row;
  }
  if (row != count) throw Error(ErrorKind::FormatError, "header promises " + std::to_string(count) + " rows, found " + std::to_string(row));
  return EmbeddingTable::from_rows(std::move(words), std::move(matrix));
}

EmbeddingTable load_table(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open embeddings '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_table(buf.str());
}

}  // namespace chatgate
