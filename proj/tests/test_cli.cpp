#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include <nlohmann/json.hpp>

#include "chatgate/cli.hpp"
#include "chatgate/container.hpp"

using namespace chatgate;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "chatgate");
  std::ostringstream out, err;
  const int code = cli::dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() / ("chatgate_cli_" + std::to_string(::getpid()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("usage errors exit 1") {
  CHECK(run({}).code == cli::kExitUsage);
  const Run missing = run({"score-lm", "-t", "hi"});
  CHECK(missing.code == cli::kExitUsage);
  CHECK(missing.err.find("--model") != std::string::npos);
  CHECK(missing.err.find("Usage") != std::string::npos);
  const Run unknown = run({"synth", "--n-chat", "1", "--n-nonchat", "1", "-o", "x.jsonl", "--sed", "3"});
  CHECK(unknown.code == cli::kExitUsage);
  CHECK(unknown.err.find("did you mean --seed?") != std::string::npos);
  const Run typo = run({"evalute", "--config", "x.json"});
  CHECK(typo.code == cli::kExitUsage);
  CHECK(typo.err.find("did you mean evaluate?") != std::string::npos);
  CHECK(run({"train-lm", "--kind", "lstm", "-i", "a", "-o", "b"}).code == cli::kExitUsage);
  CHECK(run({"--help"}).code == cli::kExitOk);
}

TEST_CASE("data errors exit 2") {
  const TempDir dir;
  CHECK(run({"score-lm", "-m", dir / "missing.lm", "-t", "hi"}).code == cli::kExitData);
  std::ofstream(dir / "bad.jsonl") << "{not json\n";
  CHECK(run({"train", "--corpus", dir / "bad.jsonl", "-o", dir / "m.bin"}).code == cli::kExitData);
}

TEST_CASE("the seeded pipeline runs from synth to evaluate and is reproducible") {
  const TempDir dir;
  REQUIRE(run({"synth", "--n-chat", "40", "--n-nonchat", "80", "--vote-noise", "0.1", "--seed", "4", "-o",
               dir / "c.jsonl"})
              .code == 0);
  REQUIRE(run({"synth", "--n-chat", "40", "--n-nonchat", "80", "--vote-noise", "0.1", "--seed", "4", "-o",
               dir / "c2.jsonl"})
              .code == 0);
  CHECK(slurp(dir / "c.jsonl") == slurp(dir / "c2.jsonl"));
  CHECK(slurp(dir / "c.jsonl").rfind("{\"_meta\":{\"config_hash\":", 0) == 0);

  {
    std::ofstream lines(dir / "lines.txt");
    lines << "hello there friend\nhow are you today\ni like cats\ntokyo weather\nset an alarm\n";
  }
  for (int i = 0; i < 2; ++i) {
    const std::string out = dir / ("g" + std::to_string(i) + ".lm");
    REQUIRE(run({"train-lm", "-i", dir / "lines.txt", "-o", out, "--embed-dim", "4", "--hidden-dim", "6", "--epochs",
                 "2", "--seed", "9"})
                .code == 0);
  }
  CHECK(slurp(dir / "g0.lm") == slurp(dir / "g1.lm"));
  CHECK(read_container(dir / "g0.lm").header.at("meta").at("seed") == 9);
  REQUIRE(run({"train-lm", "--kind", "ngram", "-i", dir / "lines.txt", "-o", dir / "n.lm"}).code == 0);

  const Run score = run({"score-lm", "-m", dir / "g0.lm", "-t", "hi"});
  CHECK(score.code == 0);
  CHECK(std::regex_match(score.out, std::regex("-[0-9]+\\.[0-9]{6}\n")));

  REQUIRE(run({"train-embeddings", "-i", dir / "lines.txt", "-o", dir / "e.vec", "--dim", "5", "--seed", "2"}).code ==
          0);
  CHECK(slurp(dir / "e.vec").find("\"seed\":2") != std::string::npos);

  for (int i = 0; i < 2; ++i) {
    const Run t = run({"train", "--clf", "svm", "--corpus", dir / "c.jsonl", "--emb", dir / "e.vec", "--tweet-lm",
                       dir / "g0.lm", "--query-lm", dir / "n.lm", "--queries", dir / "lines.txt", "--seed", "5", "-o",
                       dir / ("s" + std::to_string(i) + ".bin")});
    REQUIRE(t.code == 0);
  }
  CHECK(slurp(dir / "s0.bin") == slurp(dir / "s1.bin"));
  for (int i = 0; i < 2; ++i) {
    REQUIRE(run({"train", "--clf", "cnn", "--corpus", dir / "c.jsonl", "--seed", "5", "-o",
                 dir / ("k" + std::to_string(i) + ".bin")})
                .code == 0);
  }
  CHECK(slurp(dir / "k0.bin") == slurp(dir / "k1.bin"));
  CHECK(read_container(dir / "k0.bin").kind == "cnn_model");

  const nlohmann::json exp = {{"k", 3},
                              {"corpus", "c.jsonl"},
                              {"embeddings", {{"path", "e.vec"}}},
                              {"tweet_lm", {{"path", "g0.lm"}}},
                              {"query_lm", {{"path", "n.lm"}}},
                              {"queries", {{"path", "lines.txt"}}},
                              {"methods", {"majority", "svm+embed+tweet-query"}},
                              {"svm", {{"c_grid", {0.5, 2.0}}}}};
  std::ofstream(dir / "exp.json") << exp.dump(2);
  const Run dry = run({"evaluate", "--config", dir / "exp.json", "--dry-run"});
  CHECK(dry.code == 0);
  for (int i = 0; i < 2; ++i) {
    const std::string n = std::to_string(i);
    const Run e = run({"evaluate", "--config", dir / "exp.json", "--seed", "6", "--json", dir / ("r" + n + ".json"),
                       "--text", dir / ("r" + n + ".txt"), "--tsv", dir / ("r" + n + ".tsv")});
    REQUIRE(e.code == 0);
  }
  CHECK(slurp(dir / "r0.json") == slurp(dir / "r1.json"));
  CHECK(slurp(dir / "r0.txt") == slurp(dir / "r1.txt"));
  const auto report = nlohmann::json::parse(slurp(dir / "r0.json"));
  CHECK(report.at("meta").at("seed") == 6);
  CHECK(report.at("meta").at("tool") == "chatgate");
  const Run rendered = run({"report", "-i", dir / "r0.json"});
  CHECK(rendered.code == 0);
  CHECK(rendered.out == slurp(dir / "r0.txt"));

  std::ofstream(dir / "broken.json") << nlohmann::json{{"corpus", "nope.jsonl"}}.dump();
  CHECK(run({"evaluate", "--config", dir / "broken.json", "--dry-run"}).code == cli::kExitData);
}

TEST_CASE("CHATGATE_SEED is the seed fallback") {
  const TempDir dir;
  ::setenv("CHATGATE_SEED", "12", 1);
  REQUIRE(run({"synth", "--n-chat", "3", "--n-nonchat", "3", "-o", dir / "a.jsonl"}).code == 0);
  ::unsetenv("CHATGATE_SEED");
  REQUIRE(run({"synth", "--n-chat", "3", "--n-nonchat", "3", "--seed", "12", "-o", dir / "b.jsonl"}).code == 0);
  CHECK(slurp(dir / "a.jsonl") == slurp(dir / "b.jsonl"));
  CHECK(slurp(dir / "a.jsonl").find("\"seed\":12") != std::string::npos);
}
