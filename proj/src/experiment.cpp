#include "chatgate/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <iomanip>
#include <sstream>

#include "chatgate/error.hpp"
#include "chatgate/grid.hpp"
#include "chatgate/rng.hpp"
#include "chatgate/utf8.hpp"

namespace chatgate {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Methods and scorers

MethodSpec MethodSpec::parse(std::string_view name) {
  MethodSpec m;
  m.name = std::string(name);
  if (name == "majority") return m;
  if (name == "tweet-gru") {
    m.kind = Kind::TweetThreshold;
    return m;
  }
  std::vector<std::string> parts;
  std::string cur;
  for (char ch : name) {
    if (ch == '+') {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  parts.push_back(cur);
  if (parts[0] == "svm") {
    m.kind = Kind::Svm;
  } else if (parts[0] == "cnn") {
    m.kind = Kind::Cnn;
  } else {
    throw Error(ErrorKind::InvalidConfig, "unknown method '" + m.name + "'");
  }
  for (std::size_t i = 1; i < parts.size(); ++i) {
    const std::string& p = parts[i];
    if ((p == "embed" && m.kind == Kind::Svm) || (p == "pretrain" && m.kind == Kind::Cnn)) {
      m.embeddings = true;
    } else if (p == "tweet-query") {
      m.tweet = m.query = m.query_binary = true;
    } else if (p == "tweet") {
      m.tweet = true;
    } else if (p == "query") {
      m.query = true;
    } else if (p == "query-binary") {
      m.query_binary = true;
    } else {
      throw Error(ErrorKind::InvalidConfig, "unknown option '" + p + "' in method '" + m.name + "'");
    }
  }
  return m;
}

double LmScorer::score(std::string_view text) const {
  const double s = lm_score(text, *primary);
  if (!secondary) return s;
  return combine_scores(s, lm_score(text, *secondary), weight);
}

// ---------------------------------------------------------------------------
// Config

namespace {

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  const auto it = j.find(key);
  if (it == j.end() || it->is_null()) return fallback;
  return it->get<T>();
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  try {
    ExperimentConfig c;
    c.raw = j;
    c.seed = get_or<std::uint64_t>(j, "seed", 1);
    c.k = get_or<int>(j, "k", 10);
    c.jobs = std::max(1, get_or<int>(j, "jobs", 1));
    c.fail_fast = get_or<bool>(j, "fail_fast", false);

    const json feats = j.value("features", json::object());
    c.features.min_count = get_or<int>(feats, "min_count", 1);
    c.features.embedding_dim = get_or<int>(feats, "embedding_dim", 300);
    c.features.binary_ngrams = get_or<bool>(feats, "binary_ngrams", false);
    c.features.normalize_embeddings = get_or<bool>(feats, "normalize_embeddings", false);
    c.standardize_external = get_or<bool>(feats, "standardize_external", true);

    const auto methods = j.value("methods", std::vector<std::string>{"majority", "svm", "svm+embed", "svm+embed+tweet-query"});
    if (methods.empty()) throw Error(ErrorKind::InvalidConfig, "no methods configured");
    for (const auto& name : methods) c.methods.push_back(MethodSpec::parse(name));

    const json svm = j.value("svm", json::object());
    c.c_grid = get_or<std::vector<double>>(svm, "c_grid", default_c_grid());
    if (c.c_grid.empty()) throw Error(ErrorKind::InvalidConfig, "empty c grid");
    c.svm.eps = get_or<double>(svm, "eps", 1e-3);
    c.svm.max_epochs = get_or<int>(svm, "max_epochs", 1000);
    c.svm.use_bias = get_or<bool>(svm, "bias", true);

    const json cnn = j.value("cnn", json::object());
    c.cnn_maps = get_or<std::vector<int>>(cnn, "maps", default_map_grid());
    c.cnn_regions = get_or<std::vector<std::vector<int>>>(cnn, "regions", default_region_grid());
    if (c.cnn_maps.empty() || c.cnn_regions.empty()) throw Error(ErrorKind::InvalidConfig, "empty CNN grid");
    c.cnn.embed_dim = get_or<int>(cnn, "embed_dim", 300);
    c.cnn.batch = get_or<int>(cnn, "batch", 32);
    c.cnn.dropout = get_or<double>(cnn, "dropout", 0.5);
    c.cnn.lr = get_or<double>(cnn, "lr", 0.001);
    c.cnn.max_epochs = get_or<int>(cnn, "max_epochs", 50);
    c.cnn.patience = get_or<int>(cnn, "patience", 5);
    c.cnn.fine_tune = get_or<bool>(cnn, "fine_tune", true);

    if (j.contains("learning_curve")) {
      const json& lc = j["learning_curve"];
      c.learning_curve_methods = get_or<std::vector<std::string>>(lc, "methods", {});
      c.learning_curve_fractions =
          get_or<std::vector<double>>(lc, "fractions", std::vector<double>{0.05, 0.1, 0.25, 0.5, 0.75, 1.0});
      for (double f : c.learning_curve_fractions) {
        if (!(f > 0.0 && f <= 1.0)) throw Error(ErrorKind::InvalidConfig, "learning-curve fractions must lie in (0, 1]");
      }
      for (const auto& m : c.learning_curve_methods) MethodSpec::parse(m);
    }

    if (j.contains("length_bins")) {
      for (const auto& bin : j["length_bins"]) {
        LengthBin b;
        b.lo = bin.at(0).get<std::size_t>();
        if (bin.size() > 1 && !bin.at(1).is_null()) b.hi = bin.at(1).get<std::size_t>();
        c.length_bins.push_back(b);
      }
    } else {
      c.length_bins = default_length_bins();
    }
    return c;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("bad experiment config: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Inputs

namespace {

std::filesystem::path resolve_path(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open '" + path.string() + "'");
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

// A line source: a file path, {"synth": {source, n, seed}}, {"mix": [...]},
// or {"corpus_texts": true}.
std::vector<std::string> resolve_lines(const json& spec, const std::filesystem::path& base, const Corpus* corpus) {
  if (spec.is_string()) return read_lines(resolve_path(base, spec.get<std::string>()));
  if (spec.contains("synth")) {
    const json& s = spec["synth"];
    return sample_lines(MarkovSource::resolve(s.at("source").get<std::string>()), s.at("n").get<std::size_t>(),
                        get_or<std::uint64_t>(s, "seed", 1));
  }
  if (spec.contains("mix")) {
    std::vector<std::string> out;
    for (const auto& part : spec["mix"]) {
      auto lines = resolve_lines(part, base, corpus);
      out.insert(out.end(), lines.begin(), lines.end());
    }
    return out;
  }
  if (spec.value("corpus_texts", false)) {
    if (corpus == nullptr) throw Error(ErrorKind::InvalidConfig, "corpus_texts used before the corpus is known");
    std::vector<std::string> out;
    for (const auto& u : corpus->utterances) out.push_back(u.text);
    return out;
  }
  throw Error(ErrorKind::InvalidConfig, "unrecognized line source " + spec.dump());
}

std::shared_ptr<const CharLanguageModel> resolve_single_lm(const json& spec, const std::filesystem::path& base,
                                                           const Corpus* corpus) {
  if (spec.contains("path")) {
    return std::shared_ptr<const CharLanguageModel>(load_lm(resolve_path(base, spec["path"].get<std::string>())));
  }
  const json& t = spec.at("train");
  const auto lines = resolve_lines(t.at("lines"), base, corpus);
  const std::string kind = get_or<std::string>(t, "kind", "gru");
  if (kind == "ngram") {
    return std::make_shared<NgramLm>(train_ngram_lm(lines, get_or<int>(t, "order", 4),
                                                    get_or<std::vector<double>>(t, "weights", {}),
                                                    get_or<int>(t, "vocab_min_count", 1)));
  }
  if (kind != "gru") throw Error(ErrorKind::InvalidConfig, "unknown LM kind '" + kind + "'");
  GruTrainConfig cfg;
  cfg.embed_dim = get_or<int>(t, "embed_dim", cfg.embed_dim);
  cfg.hidden_dim = get_or<int>(t, "hidden_dim", cfg.hidden_dim);
  cfg.epochs = get_or<int>(t, "epochs", cfg.epochs);
  cfg.lr = get_or<double>(t, "lr", cfg.lr);
  cfg.batch = get_or<int>(t, "batch", cfg.batch);
  cfg.clip = get_or<double>(t, "clip", cfg.clip);
  cfg.seed = get_or<std::uint64_t>(t, "seed", cfg.seed);
  cfg.holdout_fraction = get_or<double>(t, "holdout_fraction", cfg.holdout_fraction);
  cfg.vocab_min_count = get_or<int>(t, "vocab_min_count", cfg.vocab_min_count);
  return std::make_shared<GruLm>(std::move(train_gru_lm(lines, cfg).model));
}

LmScorer resolve_lm(const json& spec, const std::filesystem::path& base, const Corpus* corpus) {
  LmScorer scorer;
  if (spec.contains("combine")) {
    const json& c = spec["combine"];
    scorer.primary = resolve_single_lm(c.at("gru"), base, corpus);
    scorer.secondary = resolve_single_lm(c.at("ngram"), base, corpus);
    scorer.weight = get_or<double>(c, "weight", 0.5);
    if (!(scorer.weight >= 0.0 && scorer.weight <= 1.0)) throw Error(ErrorKind::InvalidConfig, "combination weight outside [0, 1]");
  } else {
    scorer.primary = resolve_single_lm(spec, base, corpus);
  }
  return scorer;
}

void check_file(const json& spec, const std::filesystem::path& base, const char* what) {
  if (spec.is_string() || spec.contains("path")) {
    const std::string p = spec.is_string() ? spec.get<std::string>() : spec["path"].get<std::string>();
    if (!std::filesystem::exists(resolve_path(base, p))) {
      throw Error(ErrorKind::IoError, std::string(what) + " file '" + p + "' does not exist");
    }
  }
}

void check_lines(const json& spec, const std::filesystem::path& base, const char* what) {
  if (spec.is_string()) {
    check_file(spec, base, what);
  } else if (spec.contains("mix")) {
    for (const auto& part : spec["mix"]) check_lines(part, base, what);
  } else if (spec.contains("synth")) {
    const std::string src = spec["synth"].at("source").get<std::string>();
    if (src != "conversational" && src != "entity" && !std::filesystem::exists(resolve_path(base, src))) {
      throw Error(ErrorKind::IoError, std::string(what) + " source '" + src + "' does not exist");
    }
  }
}

void check_lm(const json& spec, const std::filesystem::path& base, const char* what) {
  if (spec.contains("combine")) {
    check_lm(spec["combine"].at("gru"), base, what);
    check_lm(spec["combine"].at("ngram"), base, what);
  } else if (spec.contains("path")) {
    check_file(spec, base, what);
  } else {
    check_lines(spec.at("train").at("lines"), base, what);
  }
}

}  // namespace

void validate_inputs(const ExperimentConfig& config, const std::filesystem::path& base_dir) {
  const json& j = config.raw;
  try {
    if (!j.contains("corpus")) throw Error(ErrorKind::InvalidConfig, "config names no corpus");
    const json& corpus = j["corpus"];
    if (corpus.is_string()) {
      check_file(corpus, base_dir, "corpus");
    } else if (corpus.contains("synth")) {
      const json& s = corpus["synth"];
      if (get_or<double>(s, "vote_noise", 0.0) > 0.5) throw Error(ErrorKind::InvalidSpec, "vote_noise must lie in [0, 0.5]");
    } else {
      check_file(corpus, base_dir, "corpus");
    }
    bool need_emb = false, need_tweet = false, need_query = false, need_queries = false;
    std::vector<MethodSpec> all = config.methods;
    for (const auto& name : config.learning_curve_methods) all.push_back(MethodSpec::parse(name));
    for (const auto& m : all) {
      need_emb |= m.embeddings;
      need_tweet |= m.tweet || m.kind == MethodSpec::Kind::TweetThreshold;
      need_query |= m.query;
      need_queries |= m.query_binary;
    }
    auto require = [&](bool needed, const char* key) {
      if (needed && !j.contains(key)) throw Error(ErrorKind::InvalidConfig, std::string("methods need '") + key + "'");
    };
    require(need_emb, "embeddings");
    require(need_tweet, "tweet_lm");
    require(need_query, "query_lm");
    require(need_queries, "queries");
    if (j.contains("embeddings")) {
      const json& e = j["embeddings"];
      if (e.contains("path")) check_file(e, base_dir, "embeddings");
      else check_lines(e.at("train").at("lines"), base_dir, "embeddings");
    }
    if (j.contains("tweet_lm")) check_lm(j["tweet_lm"], base_dir, "tweet_lm");
    if (j.contains("query_lm")) check_lm(j["query_lm"], base_dir, "query_lm");
    if (j.contains("queries")) {
      const json& q = j["queries"];
      if (q.contains("path")) check_file(q, base_dir, "queries");
      else check_lines(q.at("lines"), base_dir, "queries");
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("bad experiment config: ") + e.what());
  }
}

ExperimentInputs resolve_inputs(const ExperimentConfig& config, const std::filesystem::path& base_dir) {
  validate_inputs(config, base_dir);
  const json& j = config.raw;
  ExperimentInputs in;
  try {
    const json& corpus = j["corpus"];
    if (corpus.is_object() && corpus.contains("synth")) {
      const json& s = corpus["synth"];
      SynthSpec spec;
      spec.n_chat = s.at("n_chat").get<std::size_t>();
      spec.n_nonchat = s.at("n_nonchat").get<std::size_t>();
      spec.chat_source = get_or<std::string>(s, "chat_source", spec.chat_source);
      spec.nonchat_source = get_or<std::string>(s, "nonchat_source", spec.nonchat_source);
      spec.vote_noise = get_or<double>(s, "vote_noise", 0.0);
      spec.seed = get_or<std::uint64_t>(s, "seed", config.seed);
      in.corpus = synth_corpus(spec);
    } else {
      const std::string p = corpus.is_string() ? corpus.get<std::string>() : corpus.at("path").get<std::string>();
      const auto path = resolve_path(base_dir, p);
      in.corpus = load_corpus(path, format_from_path(path));
    }
    if (j.contains("embeddings")) {
      const json& e = j["embeddings"];
      if (e.contains("path")) {
        in.resources.embeddings = load_table(resolve_path(base_dir, e["path"].get<std::string>()));
      } else {
        const json& t = e.at("train");
        SkipGramConfig cfg;
        cfg.dim = get_or<int>(t, "dim", cfg.dim);
        cfg.window = get_or<int>(t, "window", cfg.window);
        cfg.negatives = get_or<int>(t, "negatives", cfg.negatives);
        cfg.epochs = get_or<int>(t, "epochs", cfg.epochs);
        cfg.lr = get_or<double>(t, "lr", cfg.lr);
        cfg.min_count = get_or<int>(t, "min_count", cfg.min_count);
        cfg.seed = get_or<std::uint64_t>(t, "seed", cfg.seed);
        in.resources.embeddings = train_skipgram(resolve_lines(t.at("lines"), base_dir, &in.corpus), cfg).table;
      }
    }
    if (j.contains("tweet_lm")) in.resources.tweet_lm = resolve_lm(j["tweet_lm"], base_dir, &in.corpus);
    if (j.contains("query_lm")) in.resources.query_lm = resolve_lm(j["query_lm"], base_dir, &in.corpus);
    if (j.contains("queries")) {
      const json& q = j["queries"];
      if (q.contains("path")) {
        in.resources.queries = QuerySet::load(resolve_path(base_dir, q["path"].get<std::string>()));
      } else {
        in.resources.queries = QuerySet(resolve_lines(q.at("lines"), base_dir, &in.corpus));
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("bad experiment config: ") + e.what());
  }
  return in;
}

// ---------------------------------------------------------------------------
// Per-fold evaluation

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (a + 1) + 0xBF58476D1CE4E5B9ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

struct Prepared {
  std::vector<TokenSequence> tokens;
  std::vector<std::size_t> lengths;
  std::vector<std::array<double, 3>> external;  // raw tweet score, query score, query presence
  std::vector<Label> golds;
};

Prepared prepare(const Corpus& corpus, const ExperimentResources& res, bool need_tweet, bool need_query,
                 bool need_binary) {
  if (need_tweet && !res.tweet_lm) throw Error(ErrorKind::InvalidConfig, "a method needs the tweet LM");
  if (need_query && !res.query_lm) throw Error(ErrorKind::InvalidConfig, "a method needs the query LM");
  if (need_binary && !res.queries) throw Error(ErrorKind::InvalidConfig, "a method needs the query set");
  Prepared p;
  for (const auto& u : corpus.utterances) {
    p.tokens.push_back(tokenize(u.text));
    p.lengths.push_back(utf8::length(u.text));
    std::array<double, 3> ext{0.0, 0.0, 0.0};
    if (need_tweet) ext[0] = res.tweet_lm->score(u.text);
    if (need_query) ext[1] = res.query_lm->score(u.text);
    if (need_binary) ext[2] = query_presence(u.text, *res.queries);
    p.external.push_back(ext);
    p.golds.push_back(u.label);
  }
  return p;
}

struct Standardizer {
  std::array<bool, 3> active{false, false, false};
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  std::array<double, 3> scale{1.0, 1.0, 1.0};

  std::array<double, 3> apply(const std::array<double, 3>& raw) const {
    std::array<double, 3> out{0.0, 0.0, 0.0};
    for (std::size_t s = 0; s < 3; ++s) {
      if (active[s]) out[s] = (raw[s] - mean[s]) / scale[s];
    }
    return out;
  }
};

Standardizer fit_standardizer(const MethodSpec& m, const Prepared& p, std::span<const std::size_t> train, bool enabled) {
  Standardizer st;
  st.active = {m.tweet, m.query, m.query_binary};
  if (!enabled) return st;
  for (std::size_t s = 0; s < 3; ++s) {
    if (!st.active[s] || train.empty()) continue;
    double sum = 0.0;
    for (std::size_t i : train) sum += p.external[i][s];
    const double mean = sum / static_cast<double>(train.size());
    double var = 0.0;
    for (std::size_t i : train) var += (p.external[i][s] - mean) * (p.external[i][s] - mean);
    var /= static_cast<double>(train.size());
    st.mean[s] = mean;
    st.scale[s] = var > 0.0 ? std::sqrt(var) : 1.0;
  }
  return st;
}

struct FoldRun {
  FoldOutcome outcome;
  std::vector<Label> predictions;  // aligned with the test positions
};

std::vector<Label> gather(const Prepared& p, std::span<const std::size_t> pos) {
  std::vector<Label> out;
  out.reserve(pos.size());
  for (std::size_t i : pos) out.push_back(p.golds[i]);
  return out;
}

FoldRun run_fold(const MethodSpec& m, const Corpus& corpus, const Prepared& p, int fold,
                 std::span<const std::size_t> train, std::span<const std::size_t> dev,
                 std::span<const std::size_t> test, const ExperimentConfig& config, const ExperimentResources& res) {
  FoldRun run;
  run.outcome.fold = fold;
  run.outcome.selection = json::object();
  const std::vector<Label> test_golds = gather(p, test);

  switch (m.kind) {
    case MethodSpec::Kind::Majority:
      run.predictions.assign(test.size(), Label::NonChat);
      break;
    case MethodSpec::Kind::TweetThreshold: {
      std::vector<double> dev_scores, test_scores;
      for (std::size_t i : dev) dev_scores.push_back(p.external[i][0]);
      for (std::size_t i : test) test_scores.push_back(p.external[i][0]);
      const ThresholdResult t = lm_threshold_baseline(dev_scores, gather(p, dev), test_scores, test_golds);
      run.predictions = apply_threshold(test_scores, t.threshold);
      run.outcome.selection = {{"threshold", t.threshold}, {"dev_f1", t.dev_f1}};
      break;
    }
    case MethodSpec::Kind::Svm: {
      const Standardizer st = fit_standardizer(m, p, train, config.standardize_external);
      std::vector<std::string> texts;
      for (std::size_t i : train) texts.push_back(corpus[i].text);
      FeatureConfig fc = config.features;
      if (res.embeddings) fc.embedding_dim = res.embeddings->dim();
      const FeatureSpace space = build_feature_space(texts, fc);
      const EmbeddingTable* table = m.embeddings ? &*res.embeddings : nullptr;
      auto featurize_all = [&](std::span<const std::size_t> pos) {
        std::vector<SparseVector> xs;
        xs.reserve(pos.size());
        for (std::size_t i : pos) {
          const auto ext = st.apply(p.external[i]);
          xs.push_back(featurize(corpus[i].text, space, table, {ext[0], ext[1], ext[2]}));
        }
        return xs;
      };
      const auto train_x = featurize_all(train);
      const auto dev_x = featurize_all(dev);
      const auto test_x = featurize_all(test);
      SvmConfig svm = config.svm;
      svm.seed = mix_seed(config.seed, static_cast<std::uint64_t>(fold), 1);
      const SvmGridResult best =
          grid_search_svm(train_x, gather(p, train), dev_x, gather(p, dev), space.total_dim(), config.c_grid, svm);
      for (const auto& x : test_x) run.predictions.push_back(predict_linear(best.model, x).label);
      run.outcome.selection = {{"c", best.c}, {"dev_f1", best.dev_f1}};
      break;
    }
    case MethodSpec::Kind::Cnn: {
      const Standardizer st = fit_standardizer(m, p, train, config.standardize_external);
      auto examples = [&](std::span<const std::size_t> pos) {
        std::vector<CnnExample> out;
        out.reserve(pos.size());
        for (std::size_t i : pos) out.push_back({p.tokens[i], st.apply(p.external[i]), p.golds[i]});
        return out;
      };
      const auto train_ex = examples(train);
      const auto dev_ex = examples(dev);
      CnnConfig cnn = config.cnn;
      cnn.seed = mix_seed(config.seed, static_cast<std::uint64_t>(fold), 2);
      const EmbeddingTable* table = m.embeddings ? &*res.embeddings : nullptr;
      const CnnGridResult best = grid_search_cnn(train_ex, dev_ex, table, config.cnn_maps, config.cnn_regions, cnn);
      for (std::size_t i : test) run.predictions.push_back(cnn_predict(p.tokens[i], st.apply(p.external[i]), best.model));
      run.outcome.selection = {{"n_maps", best.config.n_maps}, {"regions", best.config.regions}, {"dev_f1", best.dev_f1}};
      break;
    }
  }
  run.outcome.metrics = compute_metrics(run.predictions, test_golds);
  run.outcome.ok = true;
  return run;
}

FoldRun run_fold_guarded(const MethodSpec& m, const Corpus& corpus, const Prepared& p, int fold,
                         std::span<const std::size_t> train, std::span<const std::size_t> dev,
                         std::span<const std::size_t> test, const ExperimentConfig& config,
                         const ExperimentResources& res) {
  try {
    return run_fold(m, corpus, p, fold, train, dev, test, config, res);
  } catch (const Error& e) {
    const std::string context = "method " + m.name + ", fold " + std::to_string(fold) + ": ";
    if (config.fail_fast) throw Error(e.kind(), context + e.detail());
    FoldRun run;
    run.outcome.fold = fold;
    run.outcome.ok = false;
    run.outcome.error = context + e.what();
    run.outcome.selection = json::object();
    return run;
  }
}

// Runs `task(i)` for i in [0, n) with at most `jobs` in flight; results keep index order.
template <typename Task>
auto parallel_map(std::size_t n, int jobs, Task task) {
  using Result = decltype(task(std::size_t{0}));
  std::vector<Result> out;
  out.reserve(n);
  if (jobs <= 1) {
    for (std::size_t i = 0; i < n; ++i) out.push_back(task(i));
    return out;
  }
  for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(jobs)) {
    std::vector<std::future<Result>> wave;
    for (std::size_t i = start; i < std::min(n, start + static_cast<std::size_t>(jobs)); ++i) {
      wave.push_back(std::async(std::launch::async, task, i));
    }
    for (auto& f : wave) out.push_back(f.get());
  }
  return out;
}

Prepared prepare_for(const Corpus& corpus, const ExperimentResources& res, std::span<const MethodSpec> methods) {
  bool tweet = false, query = false, binary = false;
  for (const auto& m : methods) {
    tweet |= m.tweet || m.kind == MethodSpec::Kind::TweetThreshold;
    query |= m.query;
    binary |= m.query_binary;
    if (m.embeddings && !res.embeddings) throw Error(ErrorKind::InvalidConfig, "method " + m.name + " needs embeddings");
  }
  return prepare(corpus, res, tweet, query, binary);
}

std::vector<LearningCurvePoint> curve_points(const Corpus& corpus, const Prepared& p, const MethodSpec& m,
                                             std::span<const double> fractions, const std::vector<FoldSplit>& folds,
                                             const ExperimentConfig& config, const ExperimentResources& res) {
  std::vector<LearningCurvePoint> points;
  for (double fraction : fractions) {
    LearningCurvePoint point;
    point.method = m.name;
    point.fraction = fraction;
    auto results = parallel_map(folds.size(), config.jobs, [&](std::size_t f) -> std::optional<double> {
      const FoldSplit& split = folds[f];
      const std::vector<Label> labels = gather(p, split.train);
      const auto sub = stratified_subsample(split.train, labels, fraction, mix_seed(config.seed, f, 3));
      ExperimentConfig cfg = config;
      cfg.fail_fast = false;
      FoldRun run = run_fold_guarded(m, corpus, p, split.fold, sub, split.dev, split.test, cfg, res);
      if (!run.outcome.ok) return std::nullopt;
      return run.outcome.metrics.accuracy;
    });
    double sum = 0.0;
    std::size_t ok = 0;
    for (const auto& r : results) {
      point.fold_accuracy.push_back(r);
      if (r) {
        sum += *r;
        ++ok;
      } else {
        ++point.failed;
      }
    }
    if (ok > 0) point.mean_accuracy = sum / static_cast<double>(ok);
    points.push_back(std::move(point));
  }
  return points;
}

}  // namespace

bool MethodReport::any_failed() const {
  return std::any_of(folds.begin(), folds.end(), [](const FoldOutcome& f) { return !f.ok; });
}

bool Report::any_failed() const {
  return std::any_of(methods.begin(), methods.end(), [](const MethodReport& m) { return m.any_failed(); });
}

const MethodReport& Report::method(std::string_view name) const {
  for (const auto& m : methods) {
    if (m.name == name) return m;
  }
  throw Error(ErrorKind::InvalidConfig, "report has no method '" + std::string(name) + "'");
}

std::vector<LearningCurvePoint> learning_curve(const Corpus& corpus, const MethodSpec& method,
                                               std::span<const double> fractions, const ExperimentConfig& config,
                                               const ExperimentResources& resources) {
  const std::vector<MethodSpec> ms{method};
  const Prepared p = prepare_for(corpus, resources, ms);
  const auto folds = kfold_splits(corpus.size(), config.k, config.seed);
  return curve_points(corpus, p, method, fractions, folds, config, resources);
}

Report run_experiment(const Corpus& corpus, const ExperimentConfig& config, const ExperimentResources& resources) {
  std::vector<MethodSpec> all = config.methods;
  std::vector<MethodSpec> curve_methods;
  for (const auto& name : config.learning_curve_methods) curve_methods.push_back(MethodSpec::parse(name));
  all.insert(all.end(), curve_methods.begin(), curve_methods.end());
  const Prepared p = prepare_for(corpus, resources, all);
  const auto folds = kfold_splits(corpus.size(), config.k, config.seed);

  Report report;
  report.meta = artifact_meta(config.raw, config.seed);
  report.config = config.raw;
  report.corpus_size = corpus.size();
  report.n_chat = corpus.n_chat;
  report.n_nonchat = corpus.n_nonchat;
  for (const auto& u : corpus.utterances) {
    if (u.majority_count) report.vote_histogram[*u.majority_count]++;
  }
  report.k = config.k;

  for (const auto& m : config.methods) {
    MethodReport mr;
    mr.name = m.name;
    auto runs = parallel_map(folds.size(), config.jobs, [&](std::size_t f) {
      const FoldSplit& s = folds[f];
      return run_fold_guarded(m, corpus, p, s.fold, s.train, s.dev, s.test, config, resources);
    });
    std::vector<Metrics> ok_metrics;
    for (std::size_t f = 0; f < runs.size(); ++f) {
      FoldRun& run = runs[f];
      if (run.outcome.ok) {
        ok_metrics.push_back(run.outcome.metrics);
        const FoldSplit& s = folds[f];
        for (std::size_t t = 0; t < s.test.size(); ++t) {
          const std::size_t i = s.test[t];
          mr.records.push_back({i, s.fold, run.predictions[t], p.golds[i], corpus[i].majority_count, p.lengths[i]});
        }
      }
      mr.folds.push_back(std::move(run.outcome));
    }
    std::sort(mr.records.begin(), mr.records.end(),
              [](const PredictionRecord& a, const PredictionRecord& b) { return a.position < b.position; });
    mr.macro = macro_average(ok_metrics);
    mr.micro = metrics_of(mr.records);
    try {
      mr.votes = breakdown_by_votes(mr.records);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::MissingVotes) throw;
    }
    mr.lengths = breakdown_by_length(mr.records, config.length_bins);
    report.methods.push_back(std::move(mr));
  }

  for (const auto& m : curve_methods) {
    auto pts = curve_points(corpus, p, m, config.learning_curve_fractions, folds, config, resources);
    report.learning_curve.insert(report.learning_curve.end(), pts.begin(), pts.end());
  }
  return report;
}

TrainedClassifier train_classifier(const Corpus& corpus, const MethodSpec& method, const ExperimentConfig& config,
                                   const ExperimentResources& resources, double dev_fraction) {
  if (!method.is_classifier()) throw Error(ErrorKind::InvalidConfig, "method " + method.name + " is not a classifier");
  if (!(dev_fraction > 0.0 && dev_fraction < 1.0)) throw Error(ErrorKind::InvalidConfig, "dev fraction must lie in (0, 1)");
  const std::vector<MethodSpec> ms{method};
  const Prepared p = prepare_for(corpus, resources, ms);

  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(mix_seed(config.seed, 0, 4));
  rng.shuffle(std::span<std::size_t>(order));
  const auto n_dev = static_cast<std::size_t>(
      std::max<long long>(1, std::llround(dev_fraction * static_cast<double>(corpus.size()))));
  if (n_dev >= corpus.size()) throw Error(ErrorKind::TooSmall, "corpus too small to hold out a dev set");
  std::vector<std::size_t> dev(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_dev));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_dev), order.end());
  std::sort(dev.begin(), dev.end());
  std::sort(train.begin(), train.end());

  const Standardizer st = fit_standardizer(method, p, train, config.standardize_external);
  json header;
  header["meta"] = artifact_meta(config.raw, config.seed);
  header["method"] = method.name;
  header["standardizer"] = {{"active", st.active}, {"mean", st.mean}, {"scale", st.scale}};

  TrainedClassifier out;
  if (method.kind == MethodSpec::Kind::Svm) {
    std::vector<std::string> texts;
    for (std::size_t i : train) texts.push_back(corpus[i].text);
    FeatureConfig fc = config.features;
    if (resources.embeddings) fc.embedding_dim = resources.embeddings->dim();
    const FeatureSpace space = build_feature_space(texts, fc);
    const EmbeddingTable* table = method.embeddings ? &*resources.embeddings : nullptr;
    auto featurize_all = [&](std::span<const std::size_t> pos) {
      std::vector<SparseVector> xs;
      for (std::size_t i : pos) {
        const auto ext = st.apply(p.external[i]);
        xs.push_back(featurize(corpus[i].text, space, table, {ext[0], ext[1], ext[2]}));
      }
      return xs;
    };
    SvmConfig svm = config.svm;
    svm.seed = mix_seed(config.seed, 0, 1);
    const SvmGridResult best = grid_search_svm(featurize_all(train), gather(p, train), featurize_all(dev),
                                               gather(p, dev), space.total_dim(), config.c_grid, svm);
    out.dev_f1 = best.dev_f1;
    out.selection = {{"c", best.c}, {"dev_f1", best.dev_f1}};
    header["feature_space"] = space.to_json();
    header["bias"] = best.model.bias;
    header["c"] = best.c;
    header["selection"] = out.selection;
    out.container.kind = "svm_model";
    out.container.header = header;
    out.container.tensors.push_back(to_tensor("weights", best.model.weights));
  } else {
    auto examples = [&](std::span<const std::size_t> pos) {
      std::vector<CnnExample> ex;
      for (std::size_t i : pos) ex.push_back({p.tokens[i], st.apply(p.external[i]), p.golds[i]});
      return ex;
    };
    CnnConfig cnn = config.cnn;
    cnn.seed = mix_seed(config.seed, 0, 2);
    const EmbeddingTable* table = method.embeddings ? &*resources.embeddings : nullptr;
    const CnnGridResult best =
        grid_search_cnn(examples(train), examples(dev), table, config.cnn_maps, config.cnn_regions, cnn);
    out.dev_f1 = best.dev_f1;
    out.selection = {{"n_maps", best.config.n_maps}, {"regions", best.config.regions}, {"dev_f1", best.dev_f1}};
    header["selection"] = out.selection;
    out.container = best.model.to_container(header);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rendering

namespace {

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json("N/A"); }

}  // namespace

json report_to_json(const Report& report) {
  json j;
  j["meta"] = report.meta;
  j["config"] = report.config;
  json hist = json::object();
  for (const auto& [count, n] : report.vote_histogram) hist[std::to_string(count)] = n;
  j["corpus"] = {{"size", report.corpus_size}, {"n_chat", report.n_chat}, {"n_nonchat", report.n_nonchat},
                 {"vote_histogram", hist}};
  j["k"] = report.k;
  json methods = json::array();
  for (const auto& m : report.methods) {
    json mj;
    mj["name"] = m.name;
    json folds = json::array();
    for (const auto& f : m.folds) {
      json fj = {{"fold", f.fold}, {"ok", f.ok}};
      if (f.ok) {
        fj["metrics"] = to_json(f.metrics);
        fj["selection"] = f.selection;
      } else {
        fj["error"] = f.error;
      }
      folds.push_back(fj);
    }
    mj["folds"] = folds;
    mj["macro"] = {{"accuracy", m.macro.accuracy},
                   {"precision", opt_json(m.macro.precision)},
                   {"recall", opt_json(m.macro.recall)},
                   {"f1", opt_json(m.macro.f1)}};
    mj["micro"] = to_json(m.micro);
    if (m.votes) {
      json rows = json::array();
      for (const auto& [count, met] : m.votes->rows) {
        json r = to_json(met);
        r["votes"] = count;
        r["support"] = met.support();
        rows.push_back(r);
      }
      mj["votes"] = {{"rows", rows}, {"skipped", m.votes->skipped}};
    }
    json lengths = json::array();
    for (const auto& row : m.lengths) {
      lengths.push_back({{"bin", row.bin.label()}, {"support", row.support}, {"accuracy", opt_json(row.accuracy)}});
    }
    mj["length"] = lengths;
    methods.push_back(mj);
  }
  j["methods"] = methods;
  json curve = json::array();
  for (const auto& pt : report.learning_curve) {
    json folds = json::array();
    for (const auto& a : pt.fold_accuracy) folds.push_back(a ? json(*a) : json(nullptr));
    curve.push_back({{"method", pt.method},
                     {"fraction", pt.fraction},
                     {"mean_accuracy", pt.mean_accuracy ? json(*pt.mean_accuracy) : json(nullptr)},
                     {"fold_accuracy", folds},
                     {"failed", pt.failed}});
  }
  j["learning_curve"] = curve;
  return j;
}

namespace {

std::string fmt(const json& v, int width) {
  std::ostringstream o;
  o << std::setw(width);
  if (v.is_number()) {
    o << std::fixed << std::setprecision(2) << v.get<double>();
  } else if (v.is_null()) {
    o << "failed";
  } else if (v.is_string()) {
    o << v.get<std::string>();
  } else {
    o << v.dump();
  }
  return o.str();
}

std::string pad_right(const std::string& s, std::size_t width) {
  return s.size() >= width ? s + " " : s + std::string(width - s.size(), ' ');
}

}  // namespace

std::string report_to_text(const json& report) {
  std::ostringstream out;
  const json& meta = report.at("meta");
  out << "# " << meta.value("tool", "") << ' ' << meta.value("version", "") << " config=" << meta.value("config_hash", "")
      << " seed=" << meta.at("seed").dump() << '\n';
  const json& corpus = report.at("corpus");
  out << "Corpus: " << corpus.at("size").get<std::size_t>() << " utterances (" << corpus.at("n_chat").get<std::size_t>()
      << " Chat, " << corpus.at("n_nonchat").get<std::size_t>() << " NonChat), " << report.at("k").get<int>()
      << "-fold cross validation\n";
  if (!corpus.at("vote_histogram").empty()) {
    out << "\n#Votes  No. of utterances\n";
    for (const auto& [count, n] : corpus.at("vote_histogram").items()) {
      out << std::setw(6) << count << "  " << std::setw(17) << n.get<std::size_t>() << '\n';
    }
  }

  std::size_t name_width = 8;
  for (const auto& m : report.at("methods")) name_width = std::max(name_width, m.at("name").get<std::string>().size() + 2);

  out << "\nChat detection results (mean over folds)\n";
  out << pad_right("Model", name_width) << std::setw(8) << "Acc." << std::setw(8) << "P" << std::setw(8) << "R"
      << std::setw(8) << "F1" << '\n';
  for (const auto& m : report.at("methods")) {
    const json& mac = m.at("macro");
    out << pad_right(m.at("name").get<std::string>(), name_width) << fmt(mac.at("accuracy"), 8)
        << fmt(mac.at("precision"), 8) << fmt(mac.at("recall"), 8) << fmt(mac.at("f1"), 8) << '\n';
  }
  out << "\nPooled over folds (micro)\n";
  out << pad_right("Model", name_width) << std::setw(8) << "Acc." << std::setw(8) << "P" << std::setw(8) << "R"
      << std::setw(8) << "F1" << '\n';
  for (const auto& m : report.at("methods")) {
    const json& mic = m.at("micro");
    out << pad_right(m.at("name").get<std::string>(), name_width) << fmt(mic.at("accuracy"), 8)
        << fmt(mic.at("precision"), 8) << fmt(mic.at("recall"), 8) << fmt(mic.at("f1"), 8) << '\n';
  }

  for (const auto& m : report.at("methods")) {
    for (const auto& f : m.at("folds")) {
      if (!f.at("ok").get<bool>()) out << "FAILED " << f.at("error").get<std::string>() << '\n';
    }
  }

  for (const auto& m : report.at("methods")) {
    if (!m.contains("votes")) continue;
    out << "\nResults across the numbers of votes: " << m.at("name").get<std::string>() << '\n';
    out << std::setw(6) << "#Votes" << std::setw(9) << "#Utter." << std::setw(8) << "Acc." << std::setw(8) << "P"
        << std::setw(8) << "R" << std::setw(8) << "F1" << '\n';
    for (const auto& r : m.at("votes").at("rows")) {
      out << std::setw(6) << r.at("votes").get<int>() << std::setw(9) << r.at("support").get<std::size_t>()
          << fmt(r.at("accuracy"), 8) << fmt(r.at("precision"), 8) << fmt(r.at("recall"), 8) << fmt(r.at("f1"), 8)
          << '\n';
    }
  }

  out << "\nAccuracy across utterance lengths (characters)\n";
  out << pad_right("Model", name_width);
  const json& methods = report.at("methods");
  if (!methods.empty()) {
    for (const auto& row : methods.front().at("length")) out << std::setw(15) << row.at("bin").get<std::string>();
  }
  out << '\n';
  for (const auto& m : methods) {
    out << pad_right(m.at("name").get<std::string>(), name_width);
    for (const auto& row : m.at("length")) {
      out << fmt(row.at("accuracy"), 8) << " (" << std::setw(4) << row.at("support").get<std::size_t>() << ")";
    }
    out << '\n';
  }

  if (!report.at("learning_curve").empty()) {
    out << "\nLearning curve (mean accuracy)\n";
    out << pad_right("Model", name_width) << std::setw(10) << "Fraction" << std::setw(10) << "Acc." << std::setw(8)
        << "Failed" << '\n';
    for (const auto& pt : report.at("learning_curve")) {
      out << pad_right(pt.at("method").get<std::string>(), name_width) << std::setw(10) << std::fixed
          << std::setprecision(2) << pt.at("fraction").get<double>() << fmt(pt.at("mean_accuracy"), 10) << std::setw(8)
          << pt.at("failed").get<std::size_t>() << '\n';
    }
  }
  return out.str();
}

std::string learning_curve_tsv(const json& report) {
  std::ostringstream out;
  out << "method\tfraction\tmean_accuracy\tfailed\n";
  for (const auto& pt : report.at("learning_curve")) {
    out << pt.at("method").get<std::string>() << '\t' << pt.at("fraction").get<double>() << '\t';
    if (pt.at("mean_accuracy").is_null()) out << "NA";
    else out << std::setprecision(10) << pt.at("mean_accuracy").get<double>();
    out << '\t' << pt.at("failed").get<std::size_t>() << '\n';
  }
  return out.str();
}

}  // namespace chatgate
