#include <doctest.h>

#include <cmath>
#include <limits>
#include <map>

#include <nlohmann/json.hpp>

#include "chatgate/error.hpp"
#include "chatgate/features.hpp"

using namespace chatgate;

TEST_CASE("sparse vectors sort, merge duplicates and drop zeros") {
  const SparseVector v = SparseVector::from_pairs({{5, 1.0}, {2, 2.0}, {5, 0.5}, {3, 0.0}, {2, -2.0}});
  CHECK(v.indices == std::vector<std::uint32_t>{5});
  CHECK(v.values == std::vector<double>{1.5});
  CHECK(v.valid(6));
  CHECK_FALSE(v.valid(5));
  const std::vector<double> dense{0, 0, 0, 0, 0, 2.0};
  CHECK(v.dot(dense) == 3.0);
}

TEST_CASE("feature space orders vocabularies and lays out blocks") {
  const std::vector<std::string> texts{"hi you", "you hi"};
  const FeatureSpace s = build_feature_space(texts, {1, 4, false, false});
  // Character unigrams and bigrams (space included), sorted bytewise.
  CHECK(s.char_vocab() == std::vector<std::string>{" ", " h", " y", "h", "hi", "i", "i ", "o", "ou", "u", "u ", "y", "yo"});
  const std::string sep(kBigramSeparator);
  CHECK(s.word_vocab() == std::vector<std::string>{"hi", "hi" + sep + "you", "you", "you" + sep + "hi"});
  CHECK(s.word_offset() == 13);
  CHECK(s.embedding_offset() == 17);
  CHECK(s.external_offset() == 21);
  CHECK(s.total_dim() == 24);
  // Ids are global feature indices.
  CHECK(s.char_id("yo") == 12);
  CHECK(s.word_id("you") == 15);
  CHECK(s.word_id("zzz") == -1);
  CHECK(FeatureSpace::from_json(s.to_json()) == s);
  CHECK_THROWS_AS(build_feature_space(std::vector<std::string>{}), Error);
}

TEST_CASE("min_count prunes rare n-grams") {
  const std::vector<std::string> texts{"ab", "ab", "cd"};
  const FeatureSpace s = build_feature_space(texts, {2, 0, false, false});
  CHECK(s.char_vocab() == std::vector<std::string>{"a", "ab", "b"});
  CHECK(s.word_vocab() == std::vector<std::string>{"ab"});
  const std::vector<std::string> unique{"xy", "zw"};
  const FeatureSpace empty = build_feature_space(unique, {2, 5, false, false});
  CHECK(empty.total_dim() == 5 + 3);
}

TEST_CASE("n-gram block equals brute-force multiset counts") {
  const std::vector<std::string> texts{"to be or not to be", "be it"};
  const FeatureSpace s = build_feature_space(texts, {1, 0, false, false});
  const std::string query = "not to be, to be";
  const SparseVector v = featurize(query, s, nullptr, {});
  std::map<std::size_t, double> expected;
  for (int n = 1; n <= 2; ++n) {
    // Brute force: every substring of n code points (ASCII here).
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= query.size(); ++i) {
      const long id = s.char_id(query.substr(i, static_cast<std::size_t>(n)));
      if (id >= 0) expected[static_cast<std::size_t>(id)] += 1.0;
    }
    const auto toks = tokenize(query).tokens;
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= toks.size(); ++i) {
      std::string gram = toks[i];
      if (n == 2) gram += std::string(kBigramSeparator) + toks[i + 1];
      const long id = s.word_id(gram);
      if (id >= 0) expected[static_cast<std::size_t>(id)] += 1.0;
    }
  }
  std::map<std::size_t, double> got;
  for (std::size_t i = 0; i < v.nnz(); ++i) got[v.indices[i]] = v.values[i];
  CHECK(got == expected);
  CHECK(featurize("qqq", s, nullptr, {}).nnz() == 0);
}

TEST_CASE("featurize produces counts, averaged embeddings and externals") {
  const std::vector<std::string> texts{"aa b"};
  const FeatureSpace s = build_feature_space(texts, {1, 2, false, false});
  Eigen::MatrixXd m(2, 2);
  m << 1.0, 2.0, 3.0, -4.0;
  const EmbeddingTable table = EmbeddingTable::from_rows({"aa", "b"}, m);
  const SparseVector v = featurize("aa aa b zz", s, &table, {0.5, -1.0, 1.0});
  REQUIRE(v.valid(s.total_dim()));
  std::vector<double> dense(s.total_dim(), 0.0);
  for (std::size_t i = 0; i < v.nnz(); ++i) dense[v.indices[i]] = v.values[i];
  CHECK(dense[static_cast<std::size_t>(s.char_id("aa"))] == 2.0);
  CHECK(dense[static_cast<std::size_t>(s.char_id("a "))] == 2.0);
  CHECK(dense[static_cast<std::size_t>(s.char_id("a"))] == 4.0);
  CHECK(dense[static_cast<std::size_t>(s.word_id("aa"))] == 2.0);
  // Known tokens aa, aa, b: mean of (1,2), (1,2), (3,-4).
  CHECK(dense[s.embedding_offset()] == doctest::Approx(5.0 / 3.0));
  CHECK(dense[s.embedding_offset() + 1] == doctest::Approx(0.0));
  CHECK(dense[s.external_index(ExternalSlot::TweetScore)] == 0.5);
  CHECK(dense[s.external_index(ExternalSlot::QueryScore)] == -1.0);
  CHECK(dense[s.external_index(ExternalSlot::QueryBinary)] == 1.0);

  const SparseVector without = featurize("aa aa b zz", s, nullptr, {});
  for (auto idx : without.indices) CHECK(idx < s.embedding_offset());
}

TEST_CASE("binary n-grams clip counts to one") {
  const std::vector<std::string> texts{"aaa"};
  const FeatureSpace s = build_feature_space(texts, {1, 0, true, false});
  const SparseVector v = featurize("aaaa", s, nullptr, {});
  for (double x : v.values) CHECK(x == 1.0);
}

TEST_CASE("featurize rejects non-finite and mismatched inputs") {
  const std::vector<std::string> texts{"x y"};
  const FeatureSpace s = build_feature_space(texts, {1, 3, false, false});
  try {
    featurize("x", s, nullptr, {std::numeric_limits<double>::quiet_NaN(), 0, 0});
    FAIL("expected InvalidFeature");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InvalidFeature);
  }
  const EmbeddingTable wrong = EmbeddingTable::from_rows({"x"}, Eigen::MatrixXd::Ones(1, 2));
  try {
    featurize("x", s, &wrong, {});
    FAIL("expected ShapeError");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ShapeError);
  }
}

TEST_CASE("average embeddings normalization and out-of-vocabulary handling") {
  Eigen::MatrixXd m(1, 2);
  m << 3.0, 4.0;
  const EmbeddingTable table = EmbeddingTable::from_rows({"a"}, m);
  CHECK(average_embeddings(tokenize("zz"), table).isZero());
  const Eigen::VectorXd n = average_embeddings(tokenize("a"), table, true);
  CHECK(n[0] == doctest::Approx(0.6));
  CHECK(n[1] == doctest::Approx(0.8));
}
