#include <doctest.h>

#include "chatgate/error.hpp"
#include "chatgate/experiment.hpp"

using namespace chatgate;
using nlohmann::json;

namespace {

json small_config() {
  return {
      {"seed", 3},
      {"k", 5},
      {"corpus", {{"synth", {{"n_chat", 60}, {"n_nonchat", 140}, {"vote_noise", 0.15}, {"seed", 3}}}}},
      {"embeddings",
       {{"train", {{"lines", {{"mix", {{{"corpus_texts", true}}, {{"synth", {{"source", "entity"}, {"n", 200}}}}}}}},
                   {"dim", 8},
                   {"epochs", 2}}}}},
      {"tweet_lm",
       {{"train", {{"kind", "ngram"}, {"lines", {{"synth", {{"source", "conversational"}, {"n", 300}, {"seed", 4}}}}}}}}},
      {"query_lm",
       {{"train", {{"kind", "ngram"}, {"lines", {{"synth", {{"source", "entity"}, {"n", 300}, {"seed", 5}}}}}}}}},
      {"queries", {{"lines", {{"synth", {{"source", "entity"}, {"n", 300}, {"seed", 6}}}}}}},
      {"methods", {"majority", "tweet-gru", "svm", "svm+embed+tweet-query"}},
      {"svm", {{"c_grid", {0.1, 1.0}}}},
      {"learning_curve", {{"methods", {"svm"}}, {"fractions", {0.5, 1.0}}}},
  };
}

}  // namespace

TEST_CASE("method names parse into feature sets") {
  const MethodSpec a = MethodSpec::parse("svm+embed+tweet-query");
  CHECK(a.kind == MethodSpec::Kind::Svm);
  CHECK((a.embeddings && a.tweet && a.query && a.query_binary));
  const MethodSpec b = MethodSpec::parse("cnn+pretrain+query-binary");
  CHECK(b.kind == MethodSpec::Kind::Cnn);
  CHECK((b.embeddings && !b.tweet && !b.query && b.query_binary));
  CHECK(MethodSpec::parse("tweet-gru").kind == MethodSpec::Kind::TweetThreshold);
  CHECK_THROWS_AS(MethodSpec::parse("svm+pretrain"), Error);
  CHECK_THROWS_AS(MethodSpec::parse("forest"), Error);
}

TEST_CASE("config defaults use the standard search grids") {
  const ExperimentConfig c = ExperimentConfig::from_json({{"corpus", "x.jsonl"}});
  CHECK(c.k == 10);
  CHECK(c.c_grid.size() == 21);
  CHECK(c.c_grid.front() == doctest::Approx(1.0 / 1024));
  CHECK(c.cnn_maps == std::vector<int>{100, 150});
  CHECK(c.length_bins.size() == 4);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"k", "ten"}}), Error);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"methods", json::array()}}), Error);
}

TEST_CASE("validation catches missing inputs without training") {
  json cfg = small_config();
  cfg["corpus"] = "does/not/exist.jsonl";
  CHECK_THROWS_AS(validate_inputs(ExperimentConfig::from_json(cfg), "."), Error);
  json no_lm = small_config();
  no_lm.erase("tweet_lm");
  CHECK_THROWS_AS(validate_inputs(ExperimentConfig::from_json(no_lm), "."), Error);
  CHECK_NOTHROW(validate_inputs(ExperimentConfig::from_json(small_config()), "."));
}

TEST_CASE("a small experiment accounts for every utterance and is reproducible") {
  const ExperimentConfig cfg = ExperimentConfig::from_json(small_config());
  const ExperimentInputs in = resolve_inputs(cfg, ".");
  const Report r = run_experiment(in.corpus, cfg, in.resources);
  CHECK_FALSE(r.any_failed());
  REQUIRE(r.methods.size() == 4);
  for (const auto& m : r.methods) {
    CHECK(m.folds.size() == 5);
    std::size_t tested = 0;
    for (const auto& f : m.folds) tested += f.metrics.support();
    CHECK(tested == in.corpus.size());
    CHECK(m.records.size() == in.corpus.size());
    REQUIRE(m.votes.has_value());
    std::size_t by_votes = m.votes->skipped;
    for (const auto& [count, met] : m.votes->rows) by_votes += met.support();
    CHECK(by_votes == in.corpus.size());
    std::size_t by_length = 0;
    for (const auto& row : m.lengths) by_length += row.support;
    CHECK(by_length == in.corpus.size());
  }
  const auto& majority = r.method("majority");
  CHECK(majority.micro.accuracy == doctest::Approx(100.0 * in.corpus.n_nonchat / in.corpus.size()));
  CHECK(r.method("svm").folds[0].selection.contains("c"));
  REQUIRE(r.learning_curve.size() == 2);
  // Fraction 1.0 is the standard cross-validation run of the same method.
  CHECK(*r.learning_curve[1].mean_accuracy == doctest::Approx(r.method("svm").macro.accuracy));

  const Report again = run_experiment(in.corpus, cfg, in.resources);
  CHECK(report_to_json(again).dump() == report_to_json(r).dump());
  ExperimentConfig parallel = cfg;
  parallel.jobs = 3;
  CHECK(report_to_json(run_experiment(in.corpus, parallel, in.resources)).dump() == report_to_json(r).dump());

  const std::string text = report_to_text(report_to_json(r));
  CHECK(text.find("svm+embed+tweet-query") != std::string::npos);
  CHECK(text.find("N/A") != std::string::npos);
  CHECK(learning_curve_tsv(report_to_json(r)).rfind("method\tfraction", 0) == 0);
}

TEST_CASE("fold failures are recorded, or rethrown under fail_fast") {
  // With k = 2 the training part of each fold is empty, so the SVM cannot train.
  json j = small_config();
  j["k"] = 2;
  j["methods"] = {"majority", "svm"};
  j.erase("learning_curve");
  const ExperimentConfig cfg = ExperimentConfig::from_json(j);
  const ExperimentInputs in = resolve_inputs(cfg, ".");
  const Report r = run_experiment(in.corpus, cfg, in.resources);
  CHECK(r.any_failed());
  CHECK_FALSE(r.method("majority").any_failed());
  CHECK(r.method("majority").folds.size() == 2);
  REQUIRE(r.method("svm").folds.size() == 2);
  CHECK(r.method("svm").folds[0].error.find("fold 0") != std::string::npos);
  CHECK(report_to_text(report_to_json(r)).find("FAILED") != std::string::npos);

  ExperimentConfig strict = cfg;
  strict.fail_fast = true;
  CHECK_THROWS_AS(run_experiment(in.corpus, strict, in.resources), Error);
}

TEST_CASE("classifiers trained on a whole corpus embed their preprocessing") {
  json j = small_config();
  j["methods"] = {"svm+embed+tweet-query"};
  const ExperimentConfig cfg = ExperimentConfig::from_json(j);
  const ExperimentInputs in = resolve_inputs(cfg, ".");
  const TrainedClassifier t = train_classifier(in.corpus, cfg.methods[0], cfg, in.resources);
  CHECK(t.container.kind == "svm_model");
  CHECK(t.container.header.at("meta").at("seed") == 3);
  CHECK(t.container.header.contains("feature_space"));
  CHECK(t.container.header.at("standardizer").at("active") == json::array({true, true, true}));
  const FeatureSpace space = FeatureSpace::from_json(t.container.header.at("feature_space"));
  CHECK(t.container.tensor("weights").numel() == space.total_dim());
  CHECK_THROWS_AS(train_classifier(in.corpus, MethodSpec::parse("majority"), cfg, in.resources), Error);
}
