#include "chatgate/cnn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "chatgate/error.hpp"
#include "chatgate/metrics.hpp"

namespace chatgate {

CnnModel CnnModel::create(std::vector<std::string> vocab, int dim, int n_maps, std::vector<int> regions,
                          double dropout, const EmbeddingTable* pretrained, std::uint64_t seed) {
  if (regions.empty()) throw Error(ErrorKind::InvalidConfig, "CNN needs at least one region size");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw Error(ErrorKind::InvalidConfig, "dropout must lie in [0, 1)");
  if (n_maps < 0) throw Error(ErrorKind::InvalidConfig, "negative feature-map count");
  if (pretrained != nullptr) dim = pretrained->dim();
  if (dim <= 0) throw Error(ErrorKind::InvalidConfig, "embedding dimension must be positive");
  std::sort(regions.begin(), regions.end());
  regions.erase(std::unique(regions.begin(), regions.end()), regions.end());
  if (regions.front() < 1) throw Error(ErrorKind::InvalidConfig, "region sizes must be positive");

  Rng rng(seed);
  CnnModel m;
  m.dropout = dropout;
  m.words = {"<pad>", "<unk>"};
  std::sort(vocab.begin(), vocab.end());
  vocab.erase(std::unique(vocab.begin(), vocab.end()), vocab.end());
  for (auto& w : vocab) {
    if (w == "<pad>" || w == "<unk>") continue;
    m.index.emplace(w, static_cast<int>(m.words.size()));
    m.words.push_back(std::move(w));
  }
  const auto rows = static_cast<Eigen::Index>(m.words.size());
  m.embedding.resize(rows, dim);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const int pre = (pretrained != nullptr && r >= 2) ? pretrained->find(m.words[static_cast<std::size_t>(r)]) : -1;
    for (int c = 0; c < dim; ++c) m.embedding(r, c) = rng.uniform(-0.25, 0.25);
    if (pre >= 0) m.embedding.row(r) = pretrained->matrix.row(pre);
  }
  m.embedding.row(kPad).setZero();
  for (int s : regions) {
    FilterBank bank;
    bank.region = s;
    const double scale = std::sqrt(6.0 / (s * dim + n_maps));
    bank.weights.resize(n_maps, s * dim);
    for (Eigen::Index c = 0; c < bank.weights.cols(); ++c) {
      for (Eigen::Index r = 0; r < bank.weights.rows(); ++r) bank.weights(r, c) = rng.uniform(-scale, scale);
    }
    bank.bias = Eigen::VectorXd::Zero(n_maps);
    m.banks.push_back(std::move(bank));
  }
  const int features = m.pooled_size() + 3;
  const double scale = std::sqrt(6.0 / (features + 2));
  m.out_w.resize(2, features);
  for (Eigen::Index c = 0; c < m.out_w.cols(); ++c) {
    for (Eigen::Index r = 0; r < 2; ++r) m.out_w(r, c) = rng.uniform(-scale, scale);
  }
  m.out_b = Eigen::VectorXd::Zero(2);
  return m;
}

CnnModel CnnModel::zeros_like(const CnnModel& m) {
  CnnModel g = m;
  for (auto& v : g.views()) v.setZero();
  return g;
}

int CnnModel::pooled_size() const {
  int n = 0;
  for (const auto& b : banks) n += static_cast<int>(b.weights.rows());
  return n;
}

int CnnModel::max_region() const {
  int r = 1;
  for (const auto& b : banks) r = std::max(r, b.region);
  return r;
}

std::size_t CnnModel::parameter_count() const {
  std::size_t n = static_cast<std::size_t>(out_w.size() + out_b.size());
  for (const auto& b : banks) n += static_cast<std::size_t>(b.weights.size() + b.bias.size());
  return n;
}

std::vector<int> CnnModel::encode(const TokenSequence& tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens.tokens) {
    const auto it = index.find(t);
    ids.push_back(it == index.end() ? kUnk : it->second);
  }
  return ids;
}

std::vector<Eigen::Map<Eigen::VectorXd>> CnnModel::views() {
  std::vector<Eigen::Map<Eigen::VectorXd>> v;
  v.emplace_back(embedding.data(), embedding.size());
  for (auto& b : banks) {
    v.emplace_back(b.weights.data(), b.weights.size());
    v.emplace_back(b.bias.data(), b.bias.size());
  }
  v.emplace_back(out_w.data(), out_w.size());
  v.emplace_back(out_b.data(), out_b.size());
  return v;
}

namespace {

struct Forward {
  std::vector<int> ids;
  Eigen::MatrixXd x;                     // padded length x dim
  std::vector<std::vector<int>> argmax;  // per bank, per filter: window start
  Eigen::VectorXd pooled;                // after ReLU + max-pool
  Eigen::VectorXd mask;                  // dropout scaling (ones in eval mode)
  Eigen::VectorXd features;
  Eigen::Vector2d prob;
};

Forward forward(std::span<const int> raw_ids, const std::array<double, 3>& external, const CnnModel& m,
                const Eigen::VectorXd* mask) {
  Forward f;
  std::size_t len = raw_ids.size();
  while (len > 0 && raw_ids[len - 1] == CnnModel::kPad) --len;
  f.ids.assign(raw_ids.begin(), raw_ids.begin() + static_cast<std::ptrdiff_t>(len));
  while (f.ids.size() < static_cast<std::size_t>(m.max_region())) f.ids.push_back(CnnModel::kPad);

  const int dim = m.dim();
  const auto n_tok = static_cast<Eigen::Index>(f.ids.size());
  f.x.resize(n_tok, dim);
  for (Eigen::Index t = 0; t < n_tok; ++t) {
    const int id = f.ids[static_cast<std::size_t>(t)];
    if (id < 0 || id >= m.embedding.rows()) throw Error(ErrorKind::ShapeError, "token id out of range");
    f.x.row(t) = m.embedding.row(id);
  }

  const int pooled = m.pooled_size();
  f.pooled.resize(pooled);
  int offset = 0;
  for (const auto& bank : m.banks) {
    const auto maps = bank.weights.rows();
    std::vector<int> best(static_cast<std::size_t>(maps), 0);
    Eigen::VectorXd best_val = Eigen::VectorXd::Constant(maps, -std::numeric_limits<double>::infinity());
    for (Eigen::Index p = 0; p + bank.region <= n_tok; ++p) {
      Eigen::VectorXd a = bank.bias;
      for (int k = 0; k < bank.region; ++k) {
        a.noalias() += bank.weights.middleCols(k * dim, dim) * f.x.row(p + k).transpose();
      }
      for (Eigen::Index j = 0; j < maps; ++j) {
        if (a[j] > best_val[j]) {
          best_val[j] = a[j];
          best[static_cast<std::size_t>(j)] = static_cast<int>(p);
        }
      }
    }
    for (Eigen::Index j = 0; j < maps; ++j) f.pooled[offset + j] = std::max(0.0, best_val[j]);
    f.argmax.push_back(std::move(best));
    offset += static_cast<int>(maps);
  }

  f.mask = mask != nullptr ? *mask : Eigen::VectorXd::Ones(pooled);
  f.features.resize(pooled + 3);
  f.features.head(pooled) = f.pooled.cwiseProduct(f.mask);
  for (int s = 0; s < 3; ++s) f.features[pooled + s] = external[static_cast<std::size_t>(s)];
  const Eigen::Vector2d logits = m.out_w * f.features + m.out_b;
  const double mx = logits.maxCoeff();
  const Eigen::Vector2d e = (logits.array() - mx).exp();
  f.prob = e / e.sum();
  return f;
}

// Cross entropy of one example; gradients accumulate into grad.
double backward(const Forward& f, Label gold, const CnnModel& m, CnnModel& grad) {
  const int target = gold == Label::Chat ? 0 : 1;
  Eigen::Vector2d dlogits = f.prob;
  dlogits[target] -= 1.0;
  grad.out_w.noalias() += dlogits * f.features.transpose();
  grad.out_b += dlogits;
  const int pooled = m.pooled_size();
  const Eigen::VectorXd dfeat = m.out_w.transpose() * dlogits;
  const Eigen::VectorXd dpooled = dfeat.head(pooled).cwiseProduct(f.mask);

  const int dim = m.dim();
  int offset = 0;
  for (std::size_t b = 0; b < m.banks.size(); ++b) {
    const FilterBank& bank = m.banks[b];
    FilterBank& gbank = grad.banks[b];
    for (Eigen::Index j = 0; j < bank.weights.rows(); ++j) {
      const double g = dpooled[offset + j];
      if (f.pooled[offset + j] <= 0.0 || g == 0.0) continue;
      const int p = f.argmax[b][static_cast<std::size_t>(j)];
      gbank.bias[j] += g;
      for (int k = 0; k < bank.region; ++k) {
        gbank.weights.row(j).segment(k * dim, dim) += g * f.x.row(p + k);
        const int id = f.ids[static_cast<std::size_t>(p + k)];
        if (id != CnnModel::kPad && m.fine_tune) {
          grad.embedding.row(id) += g * bank.weights.row(j).segment(k * dim, dim);
        }
      }
    }
    offset += static_cast<int>(bank.weights.rows());
  }
  return -std::log(f.prob[target]);
}

Eigen::VectorXd dropout_mask(int size, double rate, Rng& rng) {
  Eigen::VectorXd mask(size);
  const double keep = 1.0 - rate;
  for (int i = 0; i < size; ++i) mask[i] = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
  return mask;
}

}  // namespace

std::array<double, 2> cnn_forward(std::span<const int> ids, const std::array<double, 3>& external,
                                  const CnnModel& model, bool train_mode, Rng* rng) {
  Eigen::VectorXd mask;
  const Eigen::VectorXd* mask_ptr = nullptr;
  if (train_mode && model.dropout > 0.0) {
    if (rng == nullptr) throw Error(ErrorKind::InvalidConfig, "train-mode forward needs a random source for dropout");
    mask = dropout_mask(model.pooled_size(), model.dropout, *rng);
    mask_ptr = &mask;
  }
  const Forward f = forward(ids, external, model, mask_ptr);
  return {f.prob[0], f.prob[1]};
}

std::array<double, 2> cnn_forward(const TokenSequence& tokens, const std::array<double, 3>& external,
                                  const CnnModel& model, bool train_mode, Rng* rng) {
  const std::vector<int> ids = model.encode(tokens);
  return cnn_forward(ids, external, model, train_mode, rng);
}

Label cnn_predict(const TokenSequence& tokens, const std::array<double, 3>& external, const CnnModel& model) {
  const auto p = cnn_forward(tokens, external, model, false);
  return p[0] > p[1] ? Label::Chat : Label::NonChat;
}

double cnn_loss(const CnnModel& model, std::span<const CnnExample> examples, CnnModel* grad) {
  double loss = 0.0;
  for (const auto& ex : examples) {
    const Forward f = forward(model.encode(ex.tokens), ex.external, model, nullptr);
    if (grad != nullptr) {
      loss += backward(f, ex.label, model, *grad);
    } else {
      loss -= std::log(f.prob[ex.label == Label::Chat ? 0 : 1]);
    }
  }
  return loss;
}

nlohmann::json CnnConfig::to_json() const {
  return {{"n_maps", n_maps}, {"regions", regions}, {"dropout", dropout},   {"batch", batch},
          {"lr", lr},         {"beta1", beta1},     {"beta2", beta2},       {"adam_eps", adam_eps},
          {"max_epochs", max_epochs}, {"patience", patience}, {"embed_dim", embed_dim},
          {"fine_tune", fine_tune},   {"seed", seed}};
}

namespace {

double dev_f1(const CnnModel& model, std::span<const CnnExample> dev) {
  std::vector<Label> pred, gold;
  for (const auto& ex : dev) {
    pred.push_back(cnn_predict(ex.tokens, ex.external, model));
    gold.push_back(ex.label);
  }
  return compute_metrics(pred, gold).f1_or_zero();
}

}  // namespace

CnnTrainResult train_cnn(std::span<const CnnExample> train, std::span<const CnnExample> dev,
                         const EmbeddingTable* pretrained, const CnnConfig& config) {
  if (config.batch <= 0 || config.max_epochs <= 0 || config.patience <= 0 || !(config.lr > 0.0)) {
    throw Error(ErrorKind::InvalidConfig, "batch, max_epochs, patience and lr must be positive");
  }
  const bool has_chat = std::any_of(train.begin(), train.end(), [](const auto& e) { return e.label == Label::Chat; });
  const bool has_non = std::any_of(train.begin(), train.end(), [](const auto& e) { return e.label == Label::NonChat; });
  if (!has_chat || !has_non) throw Error(ErrorKind::SingleClassError, "CNN training needs both classes");

  std::set<std::string> vocab;
  for (const auto& ex : train) vocab.insert(ex.tokens.tokens.begin(), ex.tokens.tokens.end());
  if (pretrained != nullptr) vocab.insert(pretrained->words.begin(), pretrained->words.end());

  Rng rng(config.seed);
  CnnModel model = CnnModel::create(std::vector<std::string>(vocab.begin(), vocab.end()), config.embed_dim,
                                    config.n_maps, config.regions, config.dropout, pretrained, rng.next());
  model.fine_tune = config.fine_tune;

  std::vector<std::vector<int>> ids;
  ids.reserve(train.size());
  for (const auto& ex : train) ids.push_back(model.encode(ex.tokens));

  std::vector<Eigen::VectorXd> m_state, v_state;
  for (auto& view : model.views()) {
    m_state.push_back(Eigen::VectorXd::Zero(view.size()));
    v_state.push_back(Eigen::VectorXd::Zero(view.size()));
  }
  long step = 0;

  CnnTrainResult result{model, -1.0, {}};
  int since_best = 0;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch));
      CnnModel grad = CnnModel::zeros_like(model);
      double loss = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        const CnnExample& ex = train[order[k]];
        Eigen::VectorXd mask = model.dropout > 0.0 ? dropout_mask(model.pooled_size(), model.dropout, rng)
                                                   : Eigen::VectorXd::Ones(model.pooled_size());
        const Forward f = forward(ids[order[k]], ex.external, model, &mask);
        loss += backward(f, ex.label, model, grad);
      }
      if (!std::isfinite(loss)) throw Error(ErrorKind::DivergenceError, "CNN loss became non-finite");
      grad.embedding.row(CnnModel::kPad).setZero();
      ++step;
      const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
      const double scale = 1.0 / static_cast<double>(end - start);
      auto params = model.views();
      auto grads = grad.views();
      for (std::size_t i = 0; i < params.size(); ++i) {
        if (i == 0 && !model.fine_tune) continue;
        const Eigen::VectorXd g = grads[i] * scale;
        m_state[i] = config.beta1 * m_state[i] + (1.0 - config.beta1) * g;
        v_state[i] = config.beta2 * v_state[i] + (1.0 - config.beta2) * g.cwiseProduct(g);
        params[i].array() -= config.lr * (m_state[i].array() / c1) / ((v_state[i].array() / c2).sqrt() + config.adam_eps);
      }
      model.embedding.row(CnnModel::kPad).setZero();
    }
    const double f1 = dev.empty() ? 0.0 : dev_f1(model, dev);
    result.dev_f1_history.push_back(f1);
    if (f1 > result.dev_f1) {
      result.dev_f1 = f1;
      result.model = model;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  return result;
}

Container CnnModel::to_container(const nlohmann::json& header) const {
  Container c;
  c.kind = "cnn_model";
  c.header = header;
  std::vector<int> regions;
  for (const auto& b : banks) regions.push_back(b.region);
  c.header["words"] = std::vector<std::string>(words.begin() + 2, words.end());
  c.header["regions"] = regions;
  c.header["dropout"] = dropout;
  c.header["fine_tune"] = fine_tune;
  c.tensors.push_back(to_tensor("embedding", embedding));
  for (std::size_t b = 0; b < banks.size(); ++b) {
    c.tensors.push_back(to_tensor("filters_" + std::to_string(b), banks[b].weights));
    c.tensors.push_back(to_tensor("filter_bias_" + std::to_string(b), banks[b].bias));
  }
  c.tensors.push_back(to_tensor("out_w", out_w));
  c.tensors.push_back(to_tensor("out_b", out_b));
  return c;
}

CnnModel CnnModel::from_container(const Container& c) {
  if (c.kind != "cnn_model") throw Error(ErrorKind::FormatError, "expected a cnn_model container, got " + c.kind);
  try {
    CnnModel m;
    m.words = {"<pad>", "<unk>"};
    for (const auto& w : c.header.at("words").get<std::vector<std::string>>()) {
      m.index.emplace(w, static_cast<int>(m.words.size()));
      m.words.push_back(w);
    }
    m.dropout = c.header.at("dropout").get<double>();
    m.fine_tune = c.header.at("fine_tune").get<bool>();
    m.embedding = to_matrix(c.tensor("embedding"));
    if (m.embedding.rows() != static_cast<Eigen::Index>(m.words.size())) {
      throw Error(ErrorKind::ShapeError, "embedding rows disagree with vocabulary");
    }
    const auto regions = c.header.at("regions").get<std::vector<int>>();
    for (std::size_t b = 0; b < regions.size(); ++b) {
      FilterBank bank{regions[b], to_matrix(c.tensor("filters_" + std::to_string(b))),
                      to_vector(c.tensor("filter_bias_" + std::to_string(b)))};
      if (bank.weights.cols() != bank.region * m.dim()) throw Error(ErrorKind::ShapeError, "filter shape mismatch");
      m.banks.push_back(std::move(bank));
    }
    m.out_w = to_matrix(c.tensor("out_w"));
    m.out_b = to_vector(c.tensor("out_b"));
    if (m.out_w.rows() != 2 || m.out_w.cols() != m.pooled_size() + 3 || m.out_b.size() != 2) {
      throw Error(ErrorKind::ShapeError, "softmax layer shape mismatch");
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::FormatError, std::string("bad cnn_model header: ") + e.what());
  }
}

}  // namespace chatgate
