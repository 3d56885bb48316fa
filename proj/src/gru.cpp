#include <algorithm>
#include <cmath>
#include <numeric>

#include "chatgate/error.hpp"
#include "chatgate/lm.hpp"
#include "chatgate/rng.hpp"
#include "chatgate/utf8.hpp"

namespace chatgate {

namespace {

Eigen::VectorXd sigmoid(const Eigen::VectorXd& a) {
  return a.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  const double m = logits.maxCoeff();
  Eigen::VectorXd e = (logits.array() - m).exp().matrix();
  return e / e.sum();
}

void check_shape(const Eigen::MatrixXd& m, Eigen::Index rows, Eigen::Index cols, const char* name) {
  if (m.rows() != rows || m.cols() != cols) {
    throw Error(ErrorKind::ShapeError, std::string(name) + " is " + std::to_string(m.rows()) + "x" +
                                           std::to_string(m.cols()) + ", expected " + std::to_string(rows) + "x" +
                                           std::to_string(cols));
  }
}

void fill_uniform(Eigen::MatrixXd& m, double scale, Rng& rng) {
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = rng.uniform(-scale, scale);
  }
}

}  // namespace

Eigen::VectorXd gru_step(const Eigen::VectorXd& x, const Eigen::VectorXd& h_prev, const GruCell& cell) {
  const Eigen::Index e = x.size();
  const Eigen::Index h = h_prev.size();
  check_shape(cell.w_z, h, e, "W_z");
  check_shape(cell.w_r, h, e, "W_r");
  check_shape(cell.w_h, h, e, "W_h");
  check_shape(cell.u_z, h, h, "U_z");
  check_shape(cell.u_r, h, h, "U_r");
  check_shape(cell.u_h, h, h, "U_h");
  const Eigen::VectorXd z = sigmoid(cell.w_z * x + cell.u_z * h_prev);
  const Eigen::VectorXd r = sigmoid(cell.w_r * x + cell.u_r * h_prev);
  const Eigen::VectorXd cand = (cell.w_h * x + cell.u_h * r.cwiseProduct(h_prev)).array().tanh().matrix();
  return (1.0 - z.array()).matrix().cwiseProduct(h_prev) + z.cwiseProduct(cand);
}

GruParams GruParams::zeros_like(const GruParams& p) {
  GruParams g;
  g.embedding = Eigen::MatrixXd::Zero(p.embedding.rows(), p.embedding.cols());
  g.cell.w_z = Eigen::MatrixXd::Zero(p.cell.w_z.rows(), p.cell.w_z.cols());
  g.cell.u_z = Eigen::MatrixXd::Zero(p.cell.u_z.rows(), p.cell.u_z.cols());
  g.cell.w_r = Eigen::MatrixXd::Zero(p.cell.w_r.rows(), p.cell.w_r.cols());
  g.cell.u_r = Eigen::MatrixXd::Zero(p.cell.u_r.rows(), p.cell.u_r.cols());
  g.cell.w_h = Eigen::MatrixXd::Zero(p.cell.w_h.rows(), p.cell.w_h.cols());
  g.cell.u_h = Eigen::MatrixXd::Zero(p.cell.u_h.rows(), p.cell.u_h.cols());
  g.out_w = Eigen::MatrixXd::Zero(p.out_w.rows(), p.out_w.cols());
  g.out_b = Eigen::VectorXd::Zero(p.out_b.size());
  return g;
}

std::vector<Eigen::Map<Eigen::VectorXd>> GruParams::views() {
  std::vector<Eigen::Map<Eigen::VectorXd>> v;
  auto add = [&](auto& m) { v.emplace_back(m.data(), m.size()); };
  add(embedding);
  add(cell.w_z);
  add(cell.u_z);
  add(cell.w_r);
  add(cell.u_r);
  add(cell.w_h);
  add(cell.u_h);
  add(out_w);
  add(out_b);
  return v;
}

std::vector<std::string> GruParams::names() const {
  return {"embedding", "w_z", "u_z", "w_r", "u_r", "w_h", "u_h", "out_w", "out_b"};
}

bool GruParams::all_finite() const {
  return embedding.allFinite() && cell.w_z.allFinite() && cell.u_z.allFinite() && cell.w_r.allFinite() &&
         cell.u_r.allFinite() && cell.w_h.allFinite() && cell.u_h.allFinite() && out_w.allFinite() &&
         out_b.allFinite();
}

GruLm::GruLm(CharVocab vocab, int embed_dim, int hidden_dim)
    : vocab_(std::move(vocab)), embed_dim_(embed_dim), hidden_dim_(hidden_dim) {
  if (embed_dim <= 0 || hidden_dim <= 0) throw Error(ErrorKind::InvalidConfig, "GRU dimensions must be positive");
  const int v = vocab_.output_size();
  params_.embedding = Eigen::MatrixXd::Zero(vocab_.input_size(), embed_dim);
  params_.cell.w_z = Eigen::MatrixXd::Zero(hidden_dim, embed_dim);
  params_.cell.w_r = Eigen::MatrixXd::Zero(hidden_dim, embed_dim);
  params_.cell.w_h = Eigen::MatrixXd::Zero(hidden_dim, embed_dim);
  params_.cell.u_z = Eigen::MatrixXd::Zero(hidden_dim, hidden_dim);
  params_.cell.u_r = Eigen::MatrixXd::Zero(hidden_dim, hidden_dim);
  params_.cell.u_h = Eigen::MatrixXd::Zero(hidden_dim, hidden_dim);
  params_.out_w = Eigen::MatrixXd::Zero(v, hidden_dim);
  params_.out_b = Eigen::VectorXd::Zero(v);
}

GruLm GruLm::random(CharVocab vocab, int embed_dim, int hidden_dim, std::uint64_t seed) {
  GruLm lm(std::move(vocab), embed_dim, hidden_dim);
  Rng rng(seed);
  GruParams& p = lm.params_;
  fill_uniform(p.embedding, 0.1, rng);
  const double we = 1.0 / std::sqrt(static_cast<double>(embed_dim));
  const double wh = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
  fill_uniform(p.cell.w_z, we, rng);
  fill_uniform(p.cell.u_z, wh, rng);
  fill_uniform(p.cell.w_r, we, rng);
  fill_uniform(p.cell.u_r, wh, rng);
  fill_uniform(p.cell.w_h, we, rng);
  fill_uniform(p.cell.u_h, wh, rng);
  fill_uniform(p.out_w, wh, rng);
  return lm;
}

namespace {

class GruCursor : public LmCursor {
 public:
  explicit GruCursor(const GruLm& lm) : lm_(lm) {
    h_ = Eigen::VectorXd::Zero(lm.hidden_dim());
    advance(lm.vocab().bos());
  }

  Eigen::VectorXd dist() const override {
    const GruParams& p = lm_.params();
    return softmax(p.out_w * h_ + p.out_b);
  }

  void advance(int id) override {
    const GruParams& p = lm_.params();
    h_ = gru_step(p.embedding.row(id).transpose(), h_, p.cell);
  }

 private:
  const GruLm& lm_;
  Eigen::VectorXd h_;
};

}  // namespace

std::unique_ptr<LmCursor> GruLm::cursor() const { return std::make_unique<GruCursor>(*this); }

double gru_loss(const GruLm& lm, std::span<const std::vector<int>> sequences, GruParams* grad) {
  const GruParams& p = lm.params();
  const GruCell& c = p.cell;
  const int hd = lm.hidden_dim();
  const int bos = lm.vocab().bos();
  double loss = 0.0;

  struct Step {
    int input;
    Eigen::VectorXd h_prev, z, r, cand, h, prob;
  };
  std::vector<Step> steps;

  for (const auto& seq : sequences) {
    steps.clear();
    steps.reserve(seq.size());
    Eigen::VectorXd h = Eigen::VectorXd::Zero(hd);
    int input = bos;
    for (int target : seq) {
      Step s;
      s.input = input;
      s.h_prev = h;
      const auto x = p.embedding.row(input).transpose();
      s.z = sigmoid(c.w_z * x + c.u_z * h);
      s.r = sigmoid(c.w_r * x + c.u_r * h);
      s.cand = (c.w_h * x + c.u_h * s.r.cwiseProduct(h)).array().tanh().matrix();
      s.h = (1.0 - s.z.array()).matrix().cwiseProduct(h) + s.z.cwiseProduct(s.cand);
      s.prob = softmax(p.out_w * s.h + p.out_b);
      loss -= std::log(s.prob[target]);
      h = s.h;
      input = target;
      steps.push_back(std::move(s));
    }
    if (grad == nullptr) continue;

    Eigen::VectorXd dh_next = Eigen::VectorXd::Zero(hd);
    for (std::size_t t = steps.size(); t-- > 0;) {
      const Step& s = steps[t];
      Eigen::VectorXd dlogits = s.prob;
      dlogits[seq[t]] -= 1.0;
      grad->out_w.noalias() += dlogits * s.h.transpose();
      grad->out_b += dlogits;
      const Eigen::VectorXd dh = p.out_w.transpose() * dlogits + dh_next;

      const auto x = p.embedding.row(s.input).transpose();
      const Eigen::VectorXd dz = dh.cwiseProduct(s.cand - s.h_prev);
      const Eigen::VectorXd dcand = dh.cwiseProduct(s.z);
      Eigen::VectorXd dh_prev = dh.cwiseProduct((1.0 - s.z.array()).matrix());

      const Eigen::VectorXd da = dcand.cwiseProduct((1.0 - s.cand.array().square()).matrix());
      const Eigen::VectorXd rh = s.r.cwiseProduct(s.h_prev);
      grad->cell.w_h.noalias() += da * x.transpose();
      grad->cell.u_h.noalias() += da * rh.transpose();
      const Eigen::VectorXd drh = c.u_h.transpose() * da;
      const Eigen::VectorXd dr = drh.cwiseProduct(s.h_prev);
      dh_prev += drh.cwiseProduct(s.r);

      const Eigen::VectorXd dz_pre = dz.cwiseProduct(s.z.cwiseProduct((1.0 - s.z.array()).matrix()));
      const Eigen::VectorXd dr_pre = dr.cwiseProduct(s.r.cwiseProduct((1.0 - s.r.array()).matrix()));
      grad->cell.w_z.noalias() += dz_pre * x.transpose();
      grad->cell.u_z.noalias() += dz_pre * s.h_prev.transpose();
      grad->cell.w_r.noalias() += dr_pre * x.transpose();
      grad->cell.u_r.noalias() += dr_pre * s.h_prev.transpose();
      dh_prev.noalias() += c.u_z.transpose() * dz_pre + c.u_r.transpose() * dr_pre;

      const Eigen::VectorXd dx = c.w_h.transpose() * da + c.w_z.transpose() * dz_pre + c.w_r.transpose() * dr_pre;
      grad->embedding.row(s.input) += dx.transpose();
      dh_next = dh_prev;
    }
  }
  return loss;
}

nlohmann::json GruTrainConfig::to_json() const {
  return {{"embed_dim", embed_dim}, {"hidden_dim", hidden_dim}, {"epochs", epochs},
          {"lr", lr},               {"batch", batch},           {"clip", clip},
          {"seed", seed},           {"holdout_fraction", holdout_fraction},
          {"vocab_min_count", vocab_min_count}};
}

namespace {

struct Adam {
  double lr, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long step = 0;
  std::vector<Eigen::VectorXd> m, v;

  void update(std::vector<Eigen::Map<Eigen::VectorXd>> params, std::vector<Eigen::Map<Eigen::VectorXd>> grads) {
    if (m.empty()) {
      for (const auto& g : grads) {
        m.push_back(Eigen::VectorXd::Zero(g.size()));
        v.push_back(Eigen::VectorXd::Zero(g.size()));
      }
    }
    ++step;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * grads[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * grads[i].cwiseProduct(grads[i]);
      params[i].array() -= lr * (m[i].array() / c1) / ((v[i].array() / c2).sqrt() + eps);
    }
  }
};

double perplexity_of(const GruLm& lm, std::span<const std::vector<int>> seqs) {
  std::size_t chars = 0;
  for (const auto& s : seqs) chars += s.size();
  if (chars == 0) return std::nan("");
  return std::exp(gru_loss(lm, seqs) / static_cast<double>(chars));
}

}  // namespace

GruTrainResult train_gru_lm(std::span<const std::string> lines, const GruTrainConfig& config) {
  if (config.epochs <= 0 || config.batch <= 0 || config.lr <= 0.0 || config.clip <= 0.0) {
    throw Error(ErrorKind::InvalidConfig, "epochs, batch, lr and clip must be positive");
  }
  std::vector<std::string> kept;
  for (const auto& line : lines) {
    if (!line.empty()) kept.push_back(line);
  }
  if (kept.empty()) throw Error(ErrorKind::EmptyCorpus, "language model corpus is empty");

  CharVocab vocab = CharVocab::build(kept, config.vocab_min_count);
  std::vector<std::vector<int>> seqs;
  seqs.reserve(kept.size());
  for (const auto& line : kept) seqs.push_back(vocab.encode(line));

  Rng rng(config.seed);
  std::vector<std::size_t> order(seqs.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(std::span<std::size_t>(order));
  const auto n_heldout = static_cast<std::size_t>(config.holdout_fraction * static_cast<double>(seqs.size()));
  std::vector<std::vector<int>> train, heldout;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_heldout ? heldout : train).push_back(seqs[order[i]]);
  }
  if (train.empty()) throw Error(ErrorKind::EmptyCorpus, "no training lines left after the held-out split");

  GruTrainResult result{GruLm::random(std::move(vocab), config.embed_dim, config.hidden_dim, rng.next()), {}, {}};
  GruLm& lm = result.model;
  Adam adam{config.lr};
  std::vector<std::size_t> idx(train.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<std::vector<int>> batch;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(idx));
    for (std::size_t start = 0; start < idx.size(); start += static_cast<std::size_t>(config.batch)) {
      const std::size_t end = std::min(idx.size(), start + static_cast<std::size_t>(config.batch));
      batch.clear();
      std::size_t chars = 0;
      for (std::size_t k = start; k < end; ++k) {
        batch.push_back(train[idx[k]]);
        chars += batch.back().size();
      }
      GruParams grad = GruParams::zeros_like(lm.params());
      const double loss = gru_loss(lm, batch, &grad);
      if (!std::isfinite(loss)) {
        throw Error(ErrorKind::DivergenceError, "GRU loss became non-finite in epoch " + std::to_string(epoch + 1) +
                                                    "; try a lower learning rate");
      }
      auto gviews = grad.views();
      double sq = 0.0;
      for (auto& g : gviews) {
        g /= static_cast<double>(chars);
        sq += g.squaredNorm();
      }
      const double norm = std::sqrt(sq);
      if (norm > config.clip) {
        for (auto& g : gviews) g *= config.clip / norm;
      }
      adam.update(lm.params().views(), gviews);
    }
    if (!lm.params().all_finite()) {
      throw Error(ErrorKind::DivergenceError, "GRU parameters became non-finite; try a lower learning rate");
    }
    result.train_perplexity.push_back(perplexity_of(lm, train));
    result.heldout_perplexity.push_back(heldout.empty() ? result.train_perplexity.back() : perplexity_of(lm, heldout));
  }
  return result;
}

namespace {

std::vector<std::pair<std::string, Eigen::MatrixXd*>> named_matrices(GruParams& p) {
  return {{"embedding", &p.embedding}, {"w_z", &p.cell.w_z}, {"u_z", &p.cell.u_z}, {"w_r", &p.cell.w_r},
          {"u_r", &p.cell.u_r},        {"w_h", &p.cell.w_h}, {"u_h", &p.cell.u_h}, {"out_w", &p.out_w}};
}

}  // namespace

Container GruLm::to_container(const nlohmann::json& meta) const {
  Container c;
  c.kind = "gru_lm";
  std::vector<std::uint32_t> chars(vocab_.chars().begin(), vocab_.chars().end());
  c.header = {{"meta", meta}, {"vocab", chars}, {"embed_dim", embed_dim_}, {"hidden_dim", hidden_dim_}};
  GruParams copy = params_;
  for (const auto& [name, m] : named_matrices(copy)) c.tensors.push_back(to_tensor(name, *m));
  c.tensors.push_back(to_tensor("out_b", params_.out_b));
  return c;
}

GruLm GruLm::from_container(const Container& c) {
  if (c.kind != "gru_lm") throw Error(ErrorKind::FormatError, "expected a gru_lm container, got " + c.kind);
  try {
    const auto chars32 = c.header.at("vocab").get<std::vector<std::uint32_t>>();
    GruLm lm(CharVocab(std::vector<char32_t>(chars32.begin(), chars32.end())), c.header.at("embed_dim").get<int>(),
             c.header.at("hidden_dim").get<int>());
    for (const auto& [name, m] : named_matrices(lm.params_)) {
      Eigen::MatrixXd loaded = to_matrix(c.tensor(name));
      check_shape(loaded, m->rows(), m->cols(), name.c_str());
      *m = std::move(loaded);
    }
    Eigen::VectorXd bias = to_vector(c.tensor("out_b"));
    if (bias.size() != lm.params_.out_b.size()) throw Error(ErrorKind::ShapeError, "out_b has the wrong size");
    lm.params_.out_b = std::move(bias);
    return lm;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::FormatError, std::string("bad gru_lm header: ") + e.what());
  }
}

}  // namespace chatgate
