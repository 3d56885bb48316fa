// Acceptance checks: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "checks.hpp"
#include "chatgate/cli.hpp"
#include "chatgate/corpus.hpp"
#include "chatgate/eval.hpp"
#include "chatgate/experiment.hpp"
#include "chatgate/lm.hpp"
#include "chatgate/svm.hpp"
#include "chatgate/utf8.hpp"
#include "oracles.hpp"

using namespace chatgate;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* pattern, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, pattern, args...);
  return buf;
}

// 1 -------------------------------------------------------------------------
Outcome gru_gradients() {
  const auto start = Clock::now();
  const checks::GradCheck r = checks::gru_gradient_check(8, 12, 20, 2024);
  const double t = seconds_since(start);
  return {r.max_relative_error < 1e-4 && t < 10.0,
          fmt("max relative error %.2e over %zu parameters, %.2f s", r.max_relative_error, r.parameters, t)};
}

// 2 -------------------------------------------------------------------------
Outcome cnn_gradients() {
  const auto start = Clock::now();
  const checks::GradCheck r = checks::cnn_gradient_check(4, 2, {2, 3}, 2024);
  const double t = seconds_since(start);
  return {r.max_relative_error < 1e-4 && t < 10.0,
          fmt("max relative error %.2e over %zu parameters, %.2f s", r.max_relative_error, r.parameters, t)};
}

// 3 -------------------------------------------------------------------------
Outcome lm_normalization() {
  Rng rng(33);
  double worst_sum = 0.0, worst_score = 0.0;
  int pairs = 0;
  const auto training = sample_lines(MarkovSource::resolve("conversational"), 200, 3);
  while (pairs < 1000) {
    // Alternate GRU models of random shape with n-gram models of random order.
    std::unique_ptr<CharLanguageModel> lm;
    const int n_chars = 2 + static_cast<int>(rng.index(10));
    std::vector<char32_t> chars;
    for (int i = 0; i < n_chars; ++i) chars.push_back(static_cast<char32_t>(U'a' + i));
    if (pairs % 2 == 0) {
      lm = std::make_unique<GruLm>(GruLm::random(CharVocab(chars), 1 + static_cast<int>(rng.index(8)),
                                                 1 + static_cast<int>(rng.index(12)), rng.next()));
    } else {
      lm = std::make_unique<NgramLm>(train_ngram_lm(training, 1 + static_cast<int>(rng.index(5))));
    }
    for (int p = 0; p < 10; ++p, ++pairs) {
      const int out = lm->vocab().output_size();
      std::vector<int> ids;
      const std::size_t len = 1 + rng.index(15);
      for (std::size_t t = 0; t < len; ++t) ids.push_back(static_cast<int>(rng.index(static_cast<std::size_t>(out))));
      std::string text;
      for (int id : ids) text += id == CharVocab::kUnk ? std::string("§") : utf8::encode(lm->vocab().chars()[id - 1]);
      double sum_log = 0.0;
      for (std::size_t t = 0; t < ids.size(); ++t) {
        const Eigen::VectorXd d = lm->next_char_dist(std::span<const int>(ids).first(t));
        worst_sum = std::max(worst_sum, std::abs(d.sum() - 1.0));
        sum_log += std::log(d[ids[t]]);
      }
      const double expected = sum_log / static_cast<double>(ids.size());
      worst_score = std::max(worst_score, std::abs(lm_score(text, *lm) - expected));
    }
  }
  return {worst_sum <= 1e-6 && worst_score <= 1e-10,
          fmt("%d pairs: max |sum - 1| = %.2e, max |score - mean log p| = %.2e", pairs, worst_sum, worst_score)};
}

// 4 -------------------------------------------------------------------------
Outcome uniform_score() {
  GruLm lm = GruLm::random(CharVocab({U'a', U'b', U'c'}), 5, 7, 4);
  lm.params().out_w.setZero();
  lm.params().out_b.setZero();
  const double s = lm_score("abcab", lm);
  return {lm.vocab().output_size() == 4 && std::abs(s - (-1.386294)) <= 1e-6 &&
              std::abs(s + std::log(4.0)) <= 1e-9,
          fmt("V = %d, score = %.12f, -ln V = %.12f", lm.vocab().output_size(), s, -std::log(4.0))};
}

// 5 -------------------------------------------------------------------------
Outcome svm_correctness() {
  Rng rng(55);
  double worst_rel = 0.0;
  bool monotone = true;
  for (int problem = 0; problem < 10; ++problem) {
    const int dim = 5;
    std::vector<SparseVector> x;
    std::vector<Label> y;
    Eigen::MatrixXd dense = Eigen::MatrixXd::Zero(10, dim + 1);
    Eigen::VectorXd ys(10);
    for (int i = 0; i < 10; ++i) {
      std::vector<std::pair<std::uint32_t, double>> pairs;
      for (int j = 0; j < dim; ++j) {
        const double v = rng.normal();
        pairs.emplace_back(static_cast<std::uint32_t>(j), v);
        dense(i, j) = v;
      }
      dense(i, dim) = 1.0;
      x.push_back(SparseVector::from_pairs(pairs));
      const bool chat = i < 2 ? i == 0 : rng.bernoulli(0.5);
      y.push_back(chat ? Label::Chat : Label::NonChat);
      ys[i] = chat ? 1.0 : -1.0;
    }
    SvmConfig cfg;
    cfg.c = std::pow(2.0, static_cast<double>(problem) - 5.0);
    cfg.seed = static_cast<std::uint64_t>(problem);
    SvmTrace trace;
    const LinearModel m = train_svm(x, y, dim, cfg, &trace);
    const Eigen::VectorXd w_ref = oracle::l2svm_projected_gradient(dense, ys, cfg.c);
    const double f_ref = oracle::l2svm_primal(w_ref, dense, ys, cfg.c);
    worst_rel = std::max(worst_rel, std::abs(svm_primal_objective(m, x, y) - f_ref) / std::abs(f_ref));
    for (std::size_t k = 1; k < trace.dual_objective.size(); ++k) {
      monotone = monotone && trace.dual_objective[k] >= trace.dual_objective[k - 1];
    }
  }
  // Separable toy set: two clusters on either side of a hyperplane.
  std::vector<SparseVector> sx;
  std::vector<Label> sy;
  for (int i = 0; i < 20; ++i) {
    const bool chat = i % 2 == 0;
    const double a = rng.uniform(0.5, 2.0) * (chat ? 1.0 : -1.0);
    sx.push_back(SparseVector::from_pairs({{0, a}, {1, rng.normal()}, {2, rng.normal()}}));
    sy.push_back(chat ? Label::Chat : Label::NonChat);
  }
  SvmConfig sep;
  sep.c = 100.0;
  const LinearModel sm = train_svm(sx, sy, 3, sep);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < sx.size(); ++i) correct += predict_linear(sm, sx[i]).label == sy[i];
  const double acc = 100.0 * static_cast<double>(correct) / static_cast<double>(sx.size());
  return {worst_rel <= 1e-4 && monotone && acc == 100.0,
          fmt("max primal rel. diff %.2e vs projected gradient, dual monotone: %s, separable train acc %.1f%%",
              worst_rel, monotone ? "yes" : "no", acc)};
}

// 6 -------------------------------------------------------------------------
Outcome metrics_oracle() {
  Rng rng(66);
  int mismatches = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.index(1000);
    std::vector<Label> pred, gold;
    std::vector<bool> pp, gp;
    for (std::size_t i = 0; i < n; ++i) {
      pred.push_back(rng.bernoulli(0.4) ? Label::Chat : Label::NonChat);
      gold.push_back(rng.bernoulli(0.3) ? Label::Chat : Label::NonChat);
      pp.push_back(pred.back() == Label::Chat);
      gp.push_back(gold.back() == Label::Chat);
    }
    const Metrics m = compute_metrics(pred, gold);
    const oracle::Confusion c = oracle::confusion(pp, gp);
    const double acc = 100.0 * static_cast<double>(c.tp + c.tn) / static_cast<double>(n);
    if (m.tp != c.tp || m.fp != c.fp || m.fn != c.fn || m.tn != c.tn || std::abs(m.accuracy - acc) > 1e-9) ++mismatches;
  }
  std::vector<Label> gold(10327, Label::NonChat);
  gold.resize(10327 + 4833, Label::Chat);
  const Metrics maj = majority_baseline(gold);
  return {mismatches == 0 && std::abs(maj.accuracy - 68.12) <= 0.01 && !maj.f1,
          fmt("%d/100 mismatches; Majority accuracy %.4f, F1 %s", mismatches, maj.accuracy,
              maj.f1 ? "defined" : "N/A")};
}

// 7 -------------------------------------------------------------------------
Outcome fold_hygiene() {
  const Corpus corpus = synth_corpus({360, 1140, "conversational", "entity", 0.1, 77});
  const auto folds = kfold_splits(corpus.size(), 10, 77);
  std::vector<int> tested(corpus.size(), 0);
  bool sizes_ok = folds.size() == 10, disjoint = true;
  for (const auto& f : folds) {
    for (std::size_t i : f.test) tested[i]++;
    sizes_ok = sizes_ok && std::abs(static_cast<long>(f.train.size()) - 1200) <= 1 &&
               std::abs(static_cast<long>(f.dev.size()) - 150) <= 1 &&
               std::abs(static_cast<long>(f.test.size()) - 150) <= 1;
    std::set<std::size_t> train(f.train.begin(), f.train.end());
    for (std::size_t i : f.test) disjoint = disjoint && !train.count(i);
    for (std::size_t i : f.dev) disjoint = disjoint && !train.count(i);
  }
  const bool partition = std::all_of(tested.begin(), tested.end(), [](int n) { return n == 1; });
  return {partition && sizes_ok && disjoint,
          fmt("%zu utterances; partition: %s, 80/10/10 sizes: %s, train disjoint from dev/test: %s", corpus.size(),
              partition ? "yes" : "no", sizes_ok ? "yes" : "no", disjoint ? "yes" : "no")};
}

// 8 -------------------------------------------------------------------------
GruTrainConfig small_gru(std::uint64_t seed) {
  GruTrainConfig cfg;
  cfg.embed_dim = 24;
  cfg.hidden_dim = 32;
  cfg.epochs = 4;
  cfg.seed = seed;
  return cfg;
}

Outcome lm_separation() {
  const auto start = Clock::now();
  const MarkovSource chat_src = MarkovSource::resolve("conversational");
  const MarkovSource entity_src = MarkovSource::resolve("entity");
  const auto chat_train = sample_lines(chat_src, 2000, 81);
  const auto entity_train = sample_lines(entity_src, 2000, 82);
  const GruLm chat_lm = train_gru_lm(chat_train, small_gru(83)).model;
  const GruLm entity_lm = train_gru_lm(entity_train, small_gru(84)).model;
  // Held-out lines: fresh samples that do not occur in either training set.
  const std::set<std::string> seen_chat(chat_train.begin(), chat_train.end());
  const std::set<std::string> seen_entity(entity_train.begin(), entity_train.end());
  std::size_t total = 0, own = 0;
  for (const auto& line : sample_lines(chat_src, 500, 85)) {
    if (seen_chat.count(line) || seen_entity.count(line)) continue;
    ++total;
    own += lm_score(line, chat_lm) > lm_score(line, entity_lm);
  }
  for (const auto& line : sample_lines(entity_src, 500, 86)) {
    if (seen_chat.count(line) || seen_entity.count(line)) continue;
    ++total;
    own += lm_score(line, entity_lm) > lm_score(line, chat_lm);
  }
  const double rate = 100.0 * static_cast<double>(own) / static_cast<double>(total);
  const double t = seconds_since(start);
  return {total >= 500 && rate >= 90.0 && t < 120.0,
          fmt("%zu/%zu held-out lines (%.2f%%) prefer their own-source LM, %.1f s", own, total, rate, t)};
}

// 9-11 share one cross-validated run -----------------------------------------
json desk_config() {
  return json::parse(R"({
    "seed": 7,
    "k": 10,
    "corpus": {"synth": {"n_chat": 480, "n_nonchat": 1520, "vote_noise": 0.1, "seed": 7}},
    "embeddings": {"train": {"lines": {"mix": [{"corpus_texts": true},
                                               {"synth": {"source": "conversational", "n": 2000, "seed": 11}},
                                               {"synth": {"source": "entity", "n": 2000, "seed": 12}}]},
                             "dim": 50, "epochs": 5, "seed": 13}},
    "tweet_lm": {"train": {"kind": "gru", "lines": {"synth": {"source": "conversational", "n": 2000, "seed": 21}},
                           "embed_dim": 24, "hidden_dim": 32, "epochs": 4, "seed": 22}},
    "query_lm": {"train": {"kind": "gru", "lines": {"synth": {"source": "entity", "n": 2000, "seed": 31}},
                           "embed_dim": 24, "hidden_dim": 32, "epochs": 4, "seed": 32}},
    "queries": {"lines": {"synth": {"source": "entity", "n": 5000, "seed": 41}}},
    "methods": ["majority", "svm+embed", "svm+embed+tweet-query"],
    "learning_curve": {"methods": ["svm+embed"], "fractions": [0.05, 1.0]}
  })");
}

struct DeskRun {
  Report report;
  Corpus corpus;
  double seconds = 0.0;
};

DeskRun run_desk() {
  const auto start = Clock::now();
  const ExperimentConfig cfg = ExperimentConfig::from_json(desk_config());
  ExperimentInputs in = resolve_inputs(cfg, ".");
  DeskRun out{run_experiment(in.corpus, cfg, in.resources), std::move(in.corpus), 0.0};
  out.seconds = seconds_since(start);
  return out;
}

Outcome end_to_end(const DeskRun& run) {
  const auto& base = run.report.method("svm+embed");
  const auto& full = run.report.method("svm+embed+tweet-query");
  const auto& maj = run.report.method("majority");
  const double prior = 100.0 * static_cast<double>(run.corpus.n_nonchat) / static_cast<double>(run.corpus.size());
  const double f1_base = base.macro.f1.value_or(0.0), f1_full = full.macro.f1.value_or(0.0);
  const bool pass = !run.report.any_failed() && f1_full >= f1_base && base.macro.accuracy >= 85.0 &&
                    std::abs(maj.macro.accuracy - prior) <= 1.0 && run.seconds < 600.0;
  return {pass, fmt("F1 svm+embed %.2f -> +tweet-query %.2f; svm+embed acc %.2f; majority acc %.2f vs prior %.2f; "
                    "%.0f s",
                    f1_base, f1_full, base.macro.accuracy, maj.macro.accuracy, prior, run.seconds)};
}

Outcome learning_curve_shape(const DeskRun& run) {
  std::optional<double> low, high;
  for (const auto& pt : run.report.learning_curve) {
    if (pt.fraction == 0.05) low = pt.mean_accuracy;
    if (pt.fraction == 1.0) high = pt.mean_accuracy;
  }
  if (!low || !high) return {false, "learning-curve points missing"};
  return {*high - *low >= 2.0, fmt("svm+embed accuracy %.2f at 5%% -> %.2f at 100%% (+%.2f)", *low, *high, *high - *low)};
}

Outcome vote_breakdown_shape(const DeskRun& run) {
  const auto& m = run.report.method("svm+embed+tweet-query");
  if (!m.votes) return {false, "no vote breakdown"};
  std::vector<double> acc;
  std::string row;
  for (int count = 4; count <= 7; ++count) {
    const auto it = m.votes->rows.find(count);
    if (it == m.votes->rows.end()) return {false, fmt("no utterances with %d agreeing votes", count)};
    acc.push_back(it->second.accuracy);
    row += fmt("%d:%.2f(n=%zu) ", count, it->second.accuracy, it->second.support());
  }
  int inversions = 0;
  double worst = 0.0;
  for (std::size_t i = 1; i < acc.size(); ++i) {
    if (acc[i] < acc[i - 1]) {
      ++inversions;
      worst = std::max(worst, acc[i - 1] - acc[i]);
    }
  }
  return {inversions == 0 || (inversions == 1 && worst <= 0.5),
          row + fmt("-- %d inversion(s), largest %.2f points", inversions, worst)};
}

// 12 ------------------------------------------------------------------------
std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome determinism() {
  const auto dir = std::filesystem::temp_directory_path() / ("chatgate_accept_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  auto path = [&](const std::string& name) { return (dir / name).string(); };
  std::ostringstream sink;
  auto cli = [&](std::vector<std::string> args) {
    args.insert(args.begin(), "chatgate");
    return cli::dispatch(args, sink, sink);
  };
  {
    std::ofstream lines(path("lines.txt"));
    for (const auto& l : sample_lines(MarkovSource::resolve("conversational"), 300, 1)) lines << l << '\n';
    for (const auto& l : sample_lines(MarkovSource::resolve("entity"), 300, 2)) lines << l << '\n';
  }
  std::vector<std::string> mismatched;
  int failures = 0;
  for (int run = 0; run < 2; ++run) {
    const std::string r = std::to_string(run);
    failures += cli({"synth", "--n-chat", "60", "--n-nonchat", "140", "--vote-noise", "0.1", "--seed", "12", "-o",
                     path("corpus" + r + ".jsonl")}) != 0;
    failures += cli({"train-lm", "--kind", "gru", "-i", path("lines.txt"), "-o", path("gru" + r + ".lm"),
                     "--embed-dim", "8", "--hidden-dim", "12", "--epochs", "2", "--seed", "12"}) != 0;
    failures += cli({"train-lm", "--kind", "ngram", "-i", path("lines.txt"), "-o", path("ngram" + r + ".lm"),
                     "--seed", "12"}) != 0;
    failures += cli({"train-embeddings", "-i", path("lines.txt"), "-o", path("emb" + r + ".vec"), "--dim", "10",
                     "--seed", "12"}) != 0;
    failures += cli({"train", "--clf", "svm", "--corpus", path("corpus0.jsonl"), "--emb", path("emb0.vec"),
                     "--tweet-lm", path("gru0.lm"), "--query-lm", path("ngram0.lm"), "--queries", path("lines.txt"),
                     "--seed", "12", "-o", path("svm" + r + ".bin")}) != 0;
    failures += cli({"train", "--clf", "cnn", "--corpus", path("corpus0.jsonl"), "--emb", path("emb0.vec"),
                     "--seed", "12", "-o", path("cnn" + r + ".bin")}) != 0;
  }
  const json exp = {{"k", 4},
                    {"corpus", "corpus0.jsonl"},
                    {"embeddings", {{"path", "emb0.vec"}}},
                    {"tweet_lm", {{"path", "gru0.lm"}}},
                    {"query_lm", {{"path", "ngram0.lm"}}},
                    {"queries", {{"path", "lines.txt"}}},
                    {"methods", {"majority", "tweet-gru", "svm+embed+tweet-query", "cnn+pretrain+tweet-query"}},
                    {"svm", {{"c_grid", {0.25, 1.0, 4.0}}}},
                    {"cnn", {{"maps", {4}}, {"regions", {{1, 2}}}, {"max_epochs", 5}}},
                    {"learning_curve", {{"methods", {"svm"}}, {"fractions", {0.5, 1.0}}}}};
  std::ofstream(path("exp.json")) << exp.dump(2);
  for (int run = 0; run < 2; ++run) {
    const std::string r = std::to_string(run);
    failures += cli({"evaluate", "--config", path("exp.json"), "--seed", "12", "--json", path("report" + r + ".json"),
                     "--text", path("report" + r + ".txt"), "--tsv", path("curve" + r + ".tsv")}) != 0;
  }
  const std::vector<std::pair<std::string, std::string>> pairs{
      {"corpus0.jsonl", "corpus1.jsonl"}, {"gru0.lm", "gru1.lm"},         {"ngram0.lm", "ngram1.lm"},
      {"emb0.vec", "emb1.vec"},           {"svm0.bin", "svm1.bin"},       {"cnn0.bin", "cnn1.bin"},
      {"report0.json", "report1.json"},   {"report0.txt", "report1.txt"}, {"curve0.tsv", "curve1.tsv"}};
  for (const auto& [a, b] : pairs) {
    const std::string x = slurp(dir / a);
    if (x.empty() || x != slurp(dir / b)) mismatched.push_back(a);
  }
  std::filesystem::remove_all(dir);
  std::string detail = fmt("%zu artifact pairs compared byte for byte, %d command failures", pairs.size(), failures);
  for (const auto& m : mismatched) detail += "; differs: " + m;
  return {failures == 0 && mismatched.empty(), detail};
}

}  // namespace

int main() {
  int failed = 0;
  auto report = [&](int id, const char* name, const std::function<Outcome()>& check) {
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << std::setw(2) << id << "] " << name << ": " << o.detail
              << std::endl;
  };
  report(1, "GRU gradient fidelity", gru_gradients);
  report(2, "CNN gradient fidelity", cnn_gradients);
  report(3, "LM normalization", lm_normalization);
  report(4, "Uniform-model score", uniform_score);
  report(5, "SVM correctness", svm_correctness);
  report(6, "Metrics oracle", metrics_oracle);
  report(7, "Fold hygiene", fold_hygiene);
  report(8, "LM separation on synthetic sources", lm_separation);
  std::optional<DeskRun> desk;
  std::string desk_error;
  try {
    desk = run_desk();
  } catch (const std::exception& e) {
    desk_error = e.what();
  }
  auto with_desk = [&](Outcome (*f)(const DeskRun&)) {
    return [&, f]() -> Outcome {
      if (!desk) return {false, "cross-validated run failed: " + desk_error};
      return f(*desk);
    };
  };
  report(9, "End-to-end direction check", with_desk(end_to_end));
  report(10, "Learning-curve shape", with_desk(learning_curve_shape));
  report(11, "Vote breakdown shape", with_desk(vote_breakdown_shape));
  report(12, "Determinism", determinism);
  std::cout << (failed == 0 ? "all 12 criteria pass" : std::to_string(failed) + " of 12 criteria fail") << std::endl;
  return failed == 0 ? 0 : 1;
}
