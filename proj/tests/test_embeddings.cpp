#include <doctest.h>

#include "chatgate/corpus.hpp"
#include "chatgate/embeddings.hpp"
#include "chatgate/error.hpp"
#include "oracles.hpp"

using namespace chatgate;

TEST_CASE("negative-sampling pair loss gradients match finite differences") {
  Rng rng(4);
  const int d = 6;
  auto rand_vec = [&] {
    Eigen::VectorXd v(d);
    for (int i = 0; i < d; ++i) v[i] = rng.normal() * 0.5;
    return v;
  };
  Eigen::VectorXd center = rand_vec(), positive = rand_vec();
  std::vector<Eigen::VectorXd> negatives{rand_vec(), rand_vec(), rand_vec()};
  SgnsGradient g;
  sgns_pair_loss(center, positive, negatives, &g);
  auto f = [&] { return sgns_pair_loss(center, positive, negatives); };
  auto check = [&](Eigen::VectorXd& param, const Eigen::VectorXd& analytic) {
    const Eigen::VectorXd numeric = oracle::numeric_gradient(f, std::span<double>(param.data(), d), 1e-6);
    for (int i = 0; i < d; ++i) CHECK(oracle::relative_error(analytic[i], numeric[i]) < 1e-6);
  };
  check(center, g.center);
  check(positive, g.positive);
  for (std::size_t k = 0; k < negatives.size(); ++k) check(negatives[k], g.negatives[k]);
}

TEST_CASE("embedding text format round-trips exactly") {
  Rng rng(1);
  Eigen::MatrixXd m(3, 4);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal() / 3.0;
  const EmbeddingTable t = EmbeddingTable::from_rows({"a", "東京", "it's"}, m);
  const std::string text = serialize_table(t, "note");
  CHECK(text.rfind("3 4 # note\n", 0) == 0);
  CHECK(parse_table(text) == t);
}

TEST_CASE("embedding parser rejects malformed files") {
  auto kind = [](const std::string& s) {
    try {
      parse_table(s);
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::IoError;
  };
  CHECK(kind("") == ErrorKind::FormatError);
  CHECK(kind("1 3\na 1 2\n") == ErrorKind::FormatError);
  CHECK(kind("2 2\na 1 2\n") == ErrorKind::FormatError);
  CHECK(kind("1 2\na 1 x\n") == ErrorKind::FormatError);
}

TEST_CASE("skip-gram training is seeded and lowers the loss") {
  const auto lines = sample_lines(MarkovSource::resolve("conversational"), 300, 3);
  SkipGramConfig cfg;
  cfg.dim = 16;
  cfg.epochs = 1;
  cfg.seed = 5;
  const SkipGramResult one = train_skipgram(lines, cfg);
  CHECK(train_skipgram(lines, cfg).table == one.table);
  cfg.epochs = 8;
  const SkipGramResult many = train_skipgram(lines, cfg);
  CHECK(many.final_epoch_loss < one.final_epoch_loss);
  CHECK(many.table.dim() == 16);
  CHECK(many.table.matrix.allFinite());
  CHECK_THROWS_AS(train_skipgram({"solo"}, cfg), Error);
}
