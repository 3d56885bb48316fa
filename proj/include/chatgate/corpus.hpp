#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "chatgate/rng.hpp"

namespace chatgate {

enum class Label { Chat, NonChat };

std::string_view to_string(Label label);
Label parse_label(std::string_view text);

struct VoteCounts {
  int chat = 0;
  int nonchat = 0;

  bool operator==(const VoteCounts&) const = default;
};

inline constexpr int kWorkersPerUtterance = 7;

struct Utterance {
  std::string id;
  std::string text;
  std::optional<VoteCounts> votes;
  Label label = Label::NonChat;
  // Winning tally 4..7; absent when the record carries no vote data.
  std::optional<int> majority_count;
  // Raw JSON of an optional sampling-bucket field; carried through, never used.
  std::optional<std::string> freq_bucket;

  bool operator==(const Utterance&) const = default;
};

struct Corpus {
  std::vector<Utterance> utterances;
  std::size_t n_chat = 0;
  std::size_t n_nonchat = 0;

  std::size_t size() const { return utterances.size(); }
  bool empty() const { return utterances.empty(); }
  const Utterance& operator[](std::size_t i) const { return utterances[i]; }

  bool operator==(const Corpus&) const = default;
};

struct VoteResult {
  Label label;
  int majority_count;
};

VoteResult aggregate_votes(std::span<const Label> votes);
VoteResult aggregate_counts(VoteCounts counts);

// Validates every utterance (text, votes, unique ids) and fills the counts.
Corpus make_corpus(std::vector<Utterance> utterances);

enum class CorpusFormat { Jsonl, Tsv };

CorpusFormat format_from_path(const std::filesystem::path& path);

Corpus load_corpus(const std::filesystem::path& path, CorpusFormat format);
Corpus parse_corpus(std::string_view content, CorpusFormat format);

// JSONL output may start with a `_meta` header line, which loading skips.
void save_corpus(const Corpus& corpus, const std::filesystem::path& path, CorpusFormat format,
                 const std::string& meta_line = {});
std::string serialize_corpus(const Corpus& corpus, CorpusFormat format, const std::string& meta_line = {});

std::map<int, std::size_t> vote_histogram(const Corpus& corpus);

// Order-2 character Markov generator fitted to a set of seed lines.
class MarkovSource {
 public:
  explicit MarkovSource(const std::vector<std::string>& seed_lines);

  // Built-in profiles: "conversational" (first-person chat style) and
  // "entity" (keywords, entity names and device commands). Anything else is
  // read as a file of seed lines.
  static MarkovSource resolve(const std::string& name_or_path);
  static const std::vector<std::string>& builtin_profile(std::string_view name);

  // 1..max_length code points, never whitespace-only.
  std::string sample(Rng& rng, std::size_t max_length = 40) const;

 private:
  struct Transitions {
    std::vector<char32_t> next;
    std::vector<double> cumulative;
  };
  // Key packs the two preceding symbols; kBoundary marks start/end.
  std::map<std::pair<char32_t, char32_t>, Transitions> table_;
};

struct SynthSpec {
  std::size_t n_chat = 0;
  std::size_t n_nonchat = 0;
  std::string chat_source = "conversational";
  std::string nonchat_source = "entity";
  double vote_noise = 0.0;
  std::uint64_t seed = 1;
};

struct SynthResult {
  Corpus corpus;
  // Source each utterance was generated from, before vote noise.
  std::vector<Label> true_labels;
};

SynthResult synth_corpus_with_truth(const SynthSpec& spec);
Corpus synth_corpus(const SynthSpec& spec);

// Unlabeled lines sampled from one source; used for language-model and
// embedding corpora in desk-scale experiments.
std::vector<std::string> sample_lines(const MarkovSource& source, std::size_t n, std::uint64_t seed);

}  // namespace chatgate
