#include <doctest.h>

#include "checks.hpp"
#include "chatgate/cnn.hpp"
#include "chatgate/error.hpp"
#include "chatgate/grid.hpp"

using namespace chatgate;

TEST_CASE("CNN analytic gradients match central differences") {
  const checks::GradCheck r = checks::cnn_gradient_check(3, 2, {1, 2}, 5);
  CHECK(r.parameters > 30);
  CHECK(r.max_relative_error < 1e-4);
}

TEST_CASE("CNN output is a distribution and ignores trailing padding") {
  const CnnModel m = CnnModel::create({"a", "b", "c"}, 4, 3, {2, 3}, 0.5, nullptr, 2);
  const std::array<double, 3> ext{0.3, -1.0, 1.0};
  const std::vector<int> ids{2, 3, 4};
  const auto p = cnn_forward(ids, ext, m, false);
  CHECK(p[0] + p[1] == doctest::Approx(1.0));
  std::vector<int> padded = ids;
  padded.insert(padded.end(), 5, CnnModel::kPad);
  const auto q = cnn_forward(padded, ext, m, false);
  CHECK(q[0] == p[0]);
  // A single token is padded up to the widest filter.
  const auto one = cnn_forward(std::vector<int>{2}, ext, m, false);
  CHECK(one[0] + one[1] == doctest::Approx(1.0));
  CHECK(m.encode(tokenize("a zz")) == std::vector<int>{2, CnnModel::kUnk});
}

TEST_CASE("CNN copies pre-trained vectors and keeps PAD at zero") {
  Eigen::MatrixXd e(2, 3);
  e << 1, 2, 3, 4, 5, 6;
  const EmbeddingTable table = EmbeddingTable::from_rows({"b", "q"}, e);
  const CnnModel m = CnnModel::create({"a", "b"}, 3, 2, {2}, 0.5, &table, 1);
  CHECK(m.embedding.row(CnnModel::kPad).isZero());
  CHECK(m.embedding.row(m.index.at("b")) == e.row(0));
}

TEST_CASE("CNN container round-trip preserves predictions") {
  const CnnModel m = CnnModel::create({"a", "b", "c"}, 4, 3, {2, 3}, 0.5, nullptr, 2);
  const CnnModel back = CnnModel::from_container(parse_container(serialize_container(m.to_container({{"k", 1}}))));
  const std::array<double, 3> ext{0.1, 0.2, 0.0};
  const TokenSequence t = tokenize("a b zz c");
  CHECK(cnn_forward(t, ext, back, false)[0] == doctest::Approx(cnn_forward(t, ext, m, false)[0]).epsilon(1e-5));
}

namespace {

// One class-marker token ("hello" vs "weather") hidden among shared filler
// words: linearly separable at the token level, invisible from length alone.
void marker_task(std::vector<CnnExample>& train, std::vector<CnnExample>& dev) {
  Rng rng(1);
  const std::vector<std::string> filler{"the", "a", "is", "what", "today", "now", "please", "my", "on", "it"};
  for (int i = 0; i < 400; ++i) {
    CnnExample ex;
    const bool chat = i % 3 == 0;
    const int len = 2 + static_cast<int>(rng.index(4));
    for (int t = 0; t < len; ++t) ex.tokens.tokens.push_back(filler[rng.index(filler.size())]);
    ex.tokens.tokens.insert(ex.tokens.tokens.begin() + static_cast<long>(rng.index(static_cast<std::size_t>(len))),
                            chat ? "hello" : "weather");
    ex.label = chat ? Label::Chat : Label::NonChat;
    (i < 300 ? train : dev).push_back(ex);
  }
}

}  // namespace

TEST_CASE("CNN training separates a class-marker problem and is seeded") {
  std::vector<CnnExample> train, dev;
  marker_task(train, dev);
  CnnConfig cfg;
  cfg.n_maps = 4;
  cfg.regions = {1, 2};
  cfg.embed_dim = 8;
  cfg.lr = 0.01;
  cfg.max_epochs = 30;
  cfg.seed = 3;
  const CnnTrainResult a = train_cnn(train, dev, nullptr, cfg);
  CHECK(a.dev_f1 == doctest::Approx(100.0));
  const CnnTrainResult b = train_cnn(train, dev, nullptr, cfg);
  CHECK(a.dev_f1_history == b.dev_f1_history);
  CHECK(a.model.embedding == b.model.embedding);
  CHECK(a.model.embedding.row(CnnModel::kPad).isZero());
  // Early stopping: once 100 is reached, patience ends the run long before the cap.
  CHECK(a.dev_f1_history.size() < 30);
  for (Label want : {Label::Chat, Label::NonChat}) {
    for (const auto& ex : dev) {
      if (ex.label == want) CHECK(cnn_predict(ex.tokens, ex.external, a.model) == want);
    }
  }
}

TEST_CASE("CNN grid search prefers fewer parameters on ties") {
  std::vector<CnnExample> train, dev;
  marker_task(train, dev);
  CnnConfig cfg;
  cfg.embed_dim = 4;
  cfg.lr = 0.01;
  cfg.max_epochs = 20;
  cfg.seed = 3;
  const CnnGridResult r = grid_search_cnn(train, dev, nullptr, {2, 3}, {{1}, {1, 2}}, cfg);
  REQUIRE(r.points.size() == 4);
  for (std::size_t i = 1; i < r.points.size(); ++i) CHECK(r.points[i - 1].parameters <= r.points[i].parameters);
  for (const auto& p : r.points) CHECK(p.dev_f1 == doctest::Approx(100.0));
  CHECK(r.dev_f1 == doctest::Approx(100.0));
  CHECK(r.config.n_maps == 2);
  CHECK(r.config.regions == std::vector<int>{1});
}
