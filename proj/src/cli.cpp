#include "chatgate/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "chatgate/container.hpp"
#include "chatgate/corpus.hpp"
#include "chatgate/embeddings.hpp"
#include "chatgate/error.hpp"
#include "chatgate/experiment.hpp"
#include "chatgate/lm.hpp"

namespace chatgate::cli {

using nlohmann::json;

namespace {

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv("CHATGATE_SEED"); env != nullptr && *env != '\0') {
    try {
      std::size_t used = 0;
      const unsigned long long v = std::stoull(env, &used);
      if (used == std::string_view(env).size()) return v;
    } catch (const std::exception&) {
    }
    throw Error(ErrorKind::InvalidConfig, std::string("CHATGATE_SEED is not an unsigned integer: '") + env + "'");
  }
  return 1;
}

std::vector<std::string> read_text_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open '" + path + "'");
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::IoError, "cannot write '" + path + "'");
  out << content;
  if (!out) throw Error(ErrorKind::IoError, "failed writing '" + path + "'");
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ParseError, "'" + path + "': " + e.what());
  }
}

std::size_t edit_distance(std::string_view a, std::string_view b) {
  std::vector<std::size_t> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

// Closest known flag or subcommand name to each unrecognized argument.
std::vector<std::string> suggestions(const CLI::App& app, const CLI::App& active, const std::vector<std::string>& args) {
  std::vector<std::string> known;
  for (const CLI::Option* opt : active.get_options()) {
    for (const auto& l : opt->get_lnames()) known.push_back("--" + l);
  }
  std::vector<std::string> commands;
  for (const CLI::App* sub : app.get_subcommands({})) commands.push_back(sub->get_name());
  std::vector<std::string> out;
  for (std::size_t i = 1; i < args.size(); ++i) {
    const std::string& arg = args[i];
    const bool is_flag = arg.rfind("--", 0) == 0;
    const std::string name = is_flag ? arg.substr(0, arg.find('=')) : arg;
    const auto& pool = is_flag ? known : commands;
    if (std::find(pool.begin(), pool.end(), name) != pool.end()) continue;
    if (!is_flag && (&active != &app || i != 1)) continue;
    std::string best;
    std::size_t best_d = 3;
    for (const auto& k : pool) {
      const std::size_t d = edit_distance(name, k);
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    if (!best.empty()) out.push_back(name + " -> did you mean " + best + "?");
  }
  return out;
}

int exit_code_for(const Error& e) {
  return e.kind() == ErrorKind::DivergenceError ? kExitDivergence : kExitData;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::size_t n_chat = 0;
  std::size_t n_nonchat = 0;
  double vote_noise = 0.0;
  std::optional<std::uint64_t> seed;
  std::string chat_source = "conversational";
  std::string nonchat_source = "entity";
  std::string output;
};

int run_synth(const SynthArgs& a, std::ostream& out) {
  SynthSpec spec;
  spec.n_chat = a.n_chat;
  spec.n_nonchat = a.n_nonchat;
  spec.vote_noise = a.vote_noise;
  spec.seed = resolve_seed(a.seed);
  spec.chat_source = a.chat_source;
  spec.nonchat_source = a.nonchat_source;
  const Corpus corpus = synth_corpus(spec);
  const json config = {{"command", "synth"},          {"n_chat", a.n_chat},
                       {"n_nonchat", a.n_nonchat},    {"vote_noise", a.vote_noise},
                       {"chat_source", a.chat_source}, {"nonchat_source", a.nonchat_source}};
  const json meta = artifact_meta(config, spec.seed);
  const CorpusFormat format = format_from_path(a.output);
  const std::string meta_line = format == CorpusFormat::Jsonl ? json{{"_meta", meta}}.dump() : "# " + meta.dump();
  save_corpus(corpus, a.output, format, meta_line);
  out << "wrote " << corpus.size() << " utterances (" << corpus.n_chat << " Chat, " << corpus.n_nonchat
      << " NonChat) to " << a.output << '\n';
  return kExitOk;
}

struct EmbeddingArgs {
  std::string input;
  std::string output;
  SkipGramConfig cfg;
  std::optional<std::uint64_t> seed;
};

int run_train_embeddings(EmbeddingArgs a, std::ostream& out) {
  a.cfg.seed = resolve_seed(a.seed);
  const auto lines = read_text_lines(a.input);
  const SkipGramResult r = train_skipgram(lines, a.cfg);
  const json config = {{"command", "train-embeddings"}, {"dim", a.cfg.dim},       {"window", a.cfg.window},
                       {"negatives", a.cfg.negatives},   {"epochs", a.cfg.epochs}, {"lr", a.cfg.lr},
                       {"min_count", a.cfg.min_count}};
  save_table(r.table, a.output, artifact_meta(config, a.cfg.seed).dump());
  out << "wrote " << r.table.words.size() << " vectors of dimension " << r.table.dim() << " to " << a.output
      << " (final epoch loss " << r.final_epoch_loss << ")\n";
  return kExitOk;
}

struct LmArgs {
  std::string kind = "gru";
  std::string input;
  std::string output;
  GruTrainConfig gru;
  int order = 4;
  std::vector<double> weights;
  int ngram_min_count = 1;
  std::optional<std::uint64_t> seed;
};

int run_train_lm(LmArgs a, std::ostream& out) {
  const std::uint64_t seed = resolve_seed(a.seed);
  const auto lines = read_text_lines(a.input);
  if (a.kind == "gru") {
    a.gru.seed = seed;
    json config = a.gru.to_json();
    config["command"] = "train-lm";
    config["kind"] = "gru";
    const GruTrainResult r = train_gru_lm(lines, a.gru);
    save_lm(r.model, a.output, artifact_meta(config, seed));
    for (std::size_t e = 0; e < r.heldout_perplexity.size(); ++e) {
      out << "epoch " << e + 1 << " train_ppl " << r.train_perplexity[e] << " heldout_ppl " << r.heldout_perplexity[e]
          << '\n';
    }
  } else {
    const NgramLm lm = train_ngram_lm(lines, a.order, a.weights, a.ngram_min_count);
    const json config = {{"command", "train-lm"},
                         {"kind", "ngram"},
                         {"order", a.order},
                         {"weights", lm.weights()},
                         {"vocab_min_count", a.ngram_min_count}};
    save_lm(lm, a.output, artifact_meta(config, seed));
    out << "order " << lm.order() << " perplexity " << perplexity(lines, lm) << '\n';
  }
  out << "wrote " << a.output << '\n';
  return kExitOk;
}

int run_score_lm(const std::string& model, const std::string& text, std::ostream& out) {
  const auto lm = load_lm(model);
  std::ostringstream line;
  line << std::fixed << std::setprecision(6) << lm_score(text, *lm) << '\n';
  out << line.str();
  return kExitOk;
}

struct TrainArgs {
  std::string clf = "svm";
  std::string corpus;
  std::string emb;
  std::string tweet_lm;
  std::string query_lm;
  std::string queries;
  std::string output;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  double dev_fraction = 0.1;
};

int run_train(const TrainArgs& a, std::ostream& out) {
  json config = a.config_path.empty() ? json::object() : read_json(a.config_path);
  config["seed"] = resolve_seed(a.seed);
  std::string name = a.clf;
  if (!a.emb.empty()) name += a.clf == "svm" ? "+embed" : "+pretrain";
  if (!a.tweet_lm.empty() && !a.query_lm.empty() && !a.queries.empty()) {
    name += "+tweet-query";
  } else {
    if (!a.tweet_lm.empty()) name += "+tweet";
    if (!a.query_lm.empty()) name += "+query";
    if (!a.queries.empty()) name += "+query-binary";
  }
  config["methods"] = json::array({name});
  config["command"] = "train";
  const ExperimentConfig cfg = ExperimentConfig::from_json(config);

  const Corpus corpus = load_corpus(a.corpus, format_from_path(a.corpus));
  ExperimentResources res;
  if (!a.emb.empty()) res.embeddings = load_table(a.emb);
  if (!a.tweet_lm.empty()) res.tweet_lm = LmScorer{std::shared_ptr<const CharLanguageModel>(load_lm(a.tweet_lm)), {}, 1.0};
  if (!a.query_lm.empty()) res.query_lm = LmScorer{std::shared_ptr<const CharLanguageModel>(load_lm(a.query_lm)), {}, 1.0};
  if (!a.queries.empty()) res.queries = QuerySet::load(a.queries);

  const TrainedClassifier trained = train_classifier(corpus, cfg.methods.front(), cfg, res, a.dev_fraction);
  write_container(trained.container, a.output);
  out << "method " << name << " selection " << trained.selection.dump() << '\n';
  out << "wrote " << a.output << '\n';
  return kExitOk;
}

struct EvaluateArgs {
  std::string config;
  bool dry_run = false;
  std::optional<int> jobs;
  std::optional<std::uint64_t> seed;
  std::string json_out;
  std::string text_out;
  std::string tsv_out;
};

int run_evaluate(const EvaluateArgs& a, std::ostream& out) {
  json raw = read_json(a.config);
  if (!raw.contains("seed") || a.seed) raw["seed"] = resolve_seed(a.seed);
  ExperimentConfig cfg = ExperimentConfig::from_json(raw);
  // Worker count changes scheduling only, never results, so it stays out of the hash.
  if (a.jobs) cfg.jobs = std::max(1, *a.jobs);
  const std::filesystem::path base = std::filesystem::path(a.config).parent_path();
  if (a.dry_run) {
    validate_inputs(cfg, base);
    out << "config ok: " << cfg.methods.size() << " methods, k=" << cfg.k << ", seed " << cfg.seed << '\n';
    return kExitOk;
  }
  const ExperimentInputs inputs = resolve_inputs(cfg, base);
  const Report report = run_experiment(inputs.corpus, cfg, inputs.resources);
  const json j = report_to_json(report);
  const std::string text = report_to_text(j);
  if (!a.json_out.empty()) write_text(a.json_out, j.dump(2) + "\n");
  if (!a.text_out.empty()) write_text(a.text_out, text);
  if (!a.tsv_out.empty()) write_text(a.tsv_out, learning_curve_tsv(j));
  if (a.text_out.empty()) out << text;
  return report.any_failed() ? kExitData : kExitOk;
}

int run_report(const std::string& input, const std::string& tsv_out, std::ostream& out) {
  const json j = read_json(input);
  try {
    out << report_to_text(j);
    if (!tsv_out.empty()) write_text(tsv_out, learning_curve_tsv(j));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::FormatError, "'" + input + "' is not a report: " + e.what());
  }
  return kExitOk;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Chat detection: corpora, language models, classifiers and cross-validated evaluation", "chatgate"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolVersion));

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic crowd-labelled corpus");
  synth_cmd->add_option("--n-chat", synth.n_chat, "Number of Chat utterances")->required();
  synth_cmd->add_option("--n-nonchat", synth.n_nonchat, "Number of NonChat utterances")->required();
  synth_cmd->add_option("--vote-noise", synth.vote_noise, "Per-vote flip probability")->check(CLI::Range(0.0, 1.0));
  synth_cmd->add_option("--seed", synth.seed, "Random seed (default: $CHATGATE_SEED or 1)");
  synth_cmd->add_option("--chat-source", synth.chat_source, "Chat text source: profile name or seed-line file");
  synth_cmd->add_option("--nonchat-source", synth.nonchat_source, "NonChat text source: profile name or seed-line file");
  synth_cmd->add_option("-o,--output", synth.output, "Output corpus (.jsonl or .tsv)")->required();

  EmbeddingArgs emb;
  auto* emb_cmd = app.add_subcommand("train-embeddings", "Train skip-gram word embeddings");
  emb_cmd->add_option("-i,--input", emb.input, "Text file, one sentence per line")->required();
  emb_cmd->add_option("-o,--output", emb.output, "Output embedding text file")->required();
  emb_cmd->add_option("--dim", emb.cfg.dim, "Vector dimension")->check(CLI::PositiveNumber);
  emb_cmd->add_option("--window", emb.cfg.window, "Context window")->check(CLI::PositiveNumber);
  emb_cmd->add_option("--negatives", emb.cfg.negatives, "Negative samples per pair")->check(CLI::PositiveNumber);
  emb_cmd->add_option("--epochs", emb.cfg.epochs, "Training epochs")->check(CLI::PositiveNumber);
  emb_cmd->add_option("--lr", emb.cfg.lr, "Initial learning rate")->check(CLI::PositiveNumber);
  emb_cmd->add_option("--min-count", emb.cfg.min_count, "Minimum word frequency")->check(CLI::PositiveNumber);
  emb_cmd->add_option("--seed", emb.seed, "Random seed (default: $CHATGATE_SEED or 1)");

  LmArgs lm;
  auto* lm_cmd = app.add_subcommand("train-lm", "Train a character language model");
  lm_cmd->add_option("--kind", lm.kind, "Model kind")->check(CLI::IsMember({"gru", "ngram"}));
  lm_cmd->add_option("-i,--input", lm.input, "Text file, one line per training sequence")->required();
  lm_cmd->add_option("-o,--output", lm.output, "Output model file")->required();
  lm_cmd->add_option("--embed-dim", lm.gru.embed_dim, "GRU character embedding size")->check(CLI::PositiveNumber);
  lm_cmd->add_option("--hidden-dim", lm.gru.hidden_dim, "GRU hidden size")->check(CLI::PositiveNumber);
  lm_cmd->add_option("--epochs", lm.gru.epochs, "GRU training epochs")->check(CLI::PositiveNumber);
  lm_cmd->add_option("--lr", lm.gru.lr, "GRU Adam step size")->check(CLI::PositiveNumber);
  lm_cmd->add_option("--batch", lm.gru.batch, "GRU minibatch size")->check(CLI::PositiveNumber);
  lm_cmd->add_option("--clip", lm.gru.clip, "Gradient-norm clipping threshold")->check(CLI::PositiveNumber);
  lm_cmd->add_option("--holdout", lm.gru.holdout_fraction, "GRU held-out fraction")->check(CLI::Range(0.0, 0.5));
  lm_cmd->add_option("--vocab-min-count", lm.gru.vocab_min_count, "GRU: characters rarer than this map to UNK");
  lm_cmd->add_option("--order", lm.order, "n-gram order")->check(CLI::PositiveNumber);
  lm_cmd->add_option("--weights", lm.weights, "n-gram interpolation weights: uniform floor, then orders 1..n");
  lm_cmd->add_option("--ngram-min-count", lm.ngram_min_count, "n-gram: characters rarer than this map to UNK");
  lm_cmd->add_option("--seed", lm.seed, "Random seed (default: $CHATGATE_SEED or 1)");

  std::string score_model, score_text;
  auto* score_cmd = app.add_subcommand("score-lm", "Print the mean log-probability of a text");
  score_cmd->add_option("-m,--model", score_model, "Language model file")->required();
  score_cmd->add_option("-t,--text", score_text, "Text to score")->required();

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train a chat classifier on a corpus");
  train_cmd->add_option("--clf", train.clf, "Classifier")->check(CLI::IsMember({"svm", "cnn"}));
  train_cmd->add_option("--corpus", train.corpus, "Labelled corpus (.jsonl or .tsv)")->required();
  train_cmd->add_option("--emb", train.emb, "Word embedding file");
  train_cmd->add_option("--tweet-lm", train.tweet_lm, "Tweet language model");
  train_cmd->add_option("--query-lm", train.query_lm, "Query language model");
  train_cmd->add_option("--queries", train.queries, "Query dictionary, one per line");
  train_cmd->add_option("--config", train.config_path, "JSON file with feature/grid/classifier settings");
  train_cmd->add_option("--dev-fraction", train.dev_fraction, "Fraction held out for grid search")
      ->check(CLI::Range(0.01, 0.5));
  train_cmd->add_option("--seed", train.seed, "Random seed (default: $CHATGATE_SEED or 1)");
  train_cmd->add_option("-o,--output", train.output, "Output model file")->required();

  EvaluateArgs eval;
  auto* eval_cmd = app.add_subcommand("evaluate", "Run a cross-validated experiment from a JSON config");
  eval_cmd->add_option("--config", eval.config, "Experiment config")->required();
  eval_cmd->add_flag("--dry-run", eval.dry_run, "Validate inputs without training");
  eval_cmd->add_option("--jobs", eval.jobs, "Maximum parallel folds")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--seed", eval.seed, "Seed override (default: config, then $CHATGATE_SEED, then 1)");
  eval_cmd->add_option("--json", eval.json_out, "Write the report as JSON");
  eval_cmd->add_option("--text", eval.text_out, "Write the report tables (otherwise printed)");
  eval_cmd->add_option("--tsv", eval.tsv_out, "Write learning-curve points as TSV");

  std::string report_in, report_tsv;
  auto* report_cmd = app.add_subcommand("report", "Render a JSON report as tables");
  report_cmd->add_option("-i,--input", report_in, "Report JSON")->required();
  report_cmd->add_option("--tsv", report_tsv, "Write learning-curve points as TSV");

  std::vector<const char*> argv;
  argv.reserve(args.size());
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << kToolVersion << '\n';
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    const CLI::App* failing = &app;
    for (const CLI::App* sub : app.get_subcommands()) failing = sub;
    for (const auto& hint : suggestions(app, *failing, args)) err << hint << '\n';
    err << failing->help();
    return kExitUsage;
  }

  try {
    if (synth_cmd->parsed()) return run_synth(synth, out);
    if (emb_cmd->parsed()) return run_train_embeddings(emb, out);
    if (lm_cmd->parsed()) return run_train_lm(lm, out);
    if (score_cmd->parsed()) return run_score_lm(score_model, score_text, out);
    if (train_cmd->parsed()) return run_train(train, out);
    if (eval_cmd->parsed()) return run_evaluate(eval, out);
    if (report_cmd->parsed()) return run_report(report_in, report_tsv, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}

int dispatch(int argc, const char* const* argv) {
  std::vector<std::string> args(argv, argv + argc);
  return dispatch(args, std::cout, std::cerr);
}

}  // namespace chatgate::cli
