#include "chatgate/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "chatgate/error.hpp"
#include "chatgate/utf8.hpp"

namespace chatgate {

using nlohmann::json;

std::string_view to_string(Label label) { return label == Label::Chat ? "Chat" : "NonChat"; }

Label parse_label(std::string_view text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "chat") return Label::Chat;
  if (lower == "nonchat") return Label::NonChat;
  throw Error(ErrorKind::ParseError, "unknown label '" + std::string(text) + "'");
}

VoteResult aggregate_votes(std::span<const Label> votes) {
  if (votes.size() != kWorkersPerUtterance) {
    throw Error(ErrorKind::InvalidVoteCount,
                "expected " + std::to_string(kWorkersPerUtterance) + " votes, got " + std::to_string(votes.size()));
  }
  VoteCounts counts;
  for (Label v : votes) (v == Label::Chat ? counts.chat : counts.nonchat)++;
  return aggregate_counts(counts);
}

VoteResult aggregate_counts(VoteCounts counts) {
  if (counts.chat < 0 || counts.nonchat < 0 || counts.chat + counts.nonchat != kWorkersPerUtterance) {
    throw Error(ErrorKind::InvalidVoteCount, "vote counts " + std::to_string(counts.chat) + "/" +
                                                 std::to_string(counts.nonchat) + " do not sum to 7");
  }
  if (counts.chat > counts.nonchat) return {Label::Chat, counts.chat};
  return {Label::NonChat, counts.nonchat};
}

Corpus make_corpus(std::vector<Utterance> utterances) {
  Corpus corpus;
  std::set<std::string> seen;
  for (auto& u : utterances) {
    if (utf8::trim(u.text).empty()) throw Error(ErrorKind::EmptyUtterance, "utterance '" + u.id + "' has no text");
    if (!seen.insert(u.id).second) throw Error(ErrorKind::DuplicateId, "duplicate id '" + u.id + "'");
    if (u.votes) {
      const VoteResult r = aggregate_counts(*u.votes);
      if (r.label != u.label) {
        throw Error(ErrorKind::ParseError, "label of '" + u.id + "' contradicts its votes");
      }
      u.majority_count = r.majority_count;
    } else {
      u.majority_count.reset();
    }
    (u.label == Label::Chat ? corpus.n_chat : corpus.n_nonchat)++;
  }
  corpus.utterances = std::move(utterances);
  return corpus;
}

CorpusFormat format_from_path(const std::filesystem::path& path) {
  return path.extension() == ".tsv" ? CorpusFormat::Tsv : CorpusFormat::Jsonl;
}

namespace {

[[noreturn]] void parse_fail(std::size_t line_no, const std::string& what) {
  throw Error(ErrorKind::ParseError, "line " + std::to_string(line_no) + ": " + what);
}

// Fills votes/label from whatever the record carried; exactly one of the two
// may be absent.
void resolve_label(Utterance& u, std::optional<VoteCounts> votes, std::optional<Label> label, std::size_t line_no) {
  if (!votes && !label) parse_fail(line_no, "record has neither votes nor label");
  if (votes) {
    VoteResult r{};
    try {
      r = aggregate_counts(*votes);
    } catch (const Error& e) {
      throw Error(e.kind(), "line " + std::to_string(line_no) + ": " + e.detail());
    }
    if (label && *label != r.label) parse_fail(line_no, "label contradicts votes");
    u.votes = votes;
    u.label = r.label;
    u.majority_count = r.majority_count;
  } else {
    u.label = *label;
  }
}

Utterance parse_jsonl_record(const json& obj, std::size_t line_no) {
  if (!obj.is_object()) parse_fail(line_no, "expected a JSON object");
  Utterance u;
  const auto id = obj.find("id");
  if (id == obj.end()) parse_fail(line_no, "missing 'id'");
  if (id->is_string()) {
    u.id = id->get<std::string>();
  } else if (id->is_number_integer()) {
    u.id = std::to_string(id->get<long long>());
  } else {
    parse_fail(line_no, "'id' must be a string");
  }
  const auto text = obj.find("text");
  if (text == obj.end() || !text->is_string()) parse_fail(line_no, "missing or non-string 'text'");
  u.text = text->get<std::string>();

  std::optional<VoteCounts> votes;
  const auto vc = obj.find("votes_chat");
  const auto vn = obj.find("votes_nonchat");
  const bool has_vc = vc != obj.end() && !vc->is_null();
  const bool has_vn = vn != obj.end() && !vn->is_null();
  if (has_vc != has_vn) parse_fail(line_no, "votes_chat and votes_nonchat must appear together");
  if (has_vc) {
    if (!vc->is_number_integer() || !vn->is_number_integer()) parse_fail(line_no, "vote counts must be integers");
    votes = VoteCounts{vc->get<int>(), vn->get<int>()};
  }
  std::optional<Label> label;
  const auto lab = obj.find("label");
  if (lab != obj.end() && !lab->is_null()) {
    if (!lab->is_string()) parse_fail(line_no, "'label' must be a string");
    try {
      label = parse_label(lab->get<std::string>());
    } catch (const Error& e) {
      parse_fail(line_no, e.what());
    }
  }
  resolve_label(u, votes, label, line_no);
  const auto fb = obj.find("freq_bucket");
  if (fb != obj.end()) u.freq_bucket = fb->dump();
  return u;
}

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> cols;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    if (tab == std::string_view::npos) {
      cols.push_back(line.substr(start));
      break;
    }
    cols.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
  return cols;
}

std::optional<int> parse_int_column(std::string_view col, std::size_t line_no) {
  if (col.empty()) return std::nullopt;
  int v = 0;
  const auto [ptr, ec] = std::from_chars(col.data(), col.data() + col.size(), v);
  if (ec != std::errc() || ptr != col.data() + col.size()) parse_fail(line_no, "bad integer '" + std::string(col) + "'");
  return v;
}

Utterance parse_tsv_record(std::string_view line, std::size_t line_no) {
  const auto cols = split_tabs(line);
  if (cols.size() < 4 || cols.size() > 5) parse_fail(line_no, "expected 4 or 5 tab-separated columns");
  Utterance u;
  u.id = std::string(cols[0]);
  if (u.id.empty()) parse_fail(line_no, "empty id");
  u.text = std::string(cols[1]);
  const auto vc = parse_int_column(cols[2], line_no);
  const auto vn = parse_int_column(cols[3], line_no);
  if (vc.has_value() != vn.has_value()) parse_fail(line_no, "votes_chat and votes_nonchat must appear together");
  std::optional<VoteCounts> votes;
  if (vc) votes = VoteCounts{*vc, *vn};
  std::optional<Label> label;
  if (cols.size() == 5 && !cols[4].empty()) {
    try {
      label = parse_label(cols[4]);
    } catch (const Error& e) {
      parse_fail(line_no, e.what());
    }
  }
  resolve_label(u, votes, label, line_no);
  return u;
}

}  // namespace

Corpus parse_corpus(std::string_view content, CorpusFormat format) {
  std::vector<Utterance> utterances;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < content.size()) {
    std::size_t end = content.find('\n', pos);
    if (end == std::string_view::npos) end = content.size();
    std::string_view line = content.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;

    Utterance u;
    if (format == CorpusFormat::Jsonl) {
      json obj;
      try {
        obj = json::parse(line);
      } catch (const json::parse_error& e) {
        parse_fail(line_no, e.what());
      }
      if (obj.is_object() && obj.contains("_meta")) continue;
      u = parse_jsonl_record(obj, line_no);
    } else {
      if (line.front() == '#') continue;
      if (utterances.empty() && line.starts_with("id\ttext")) continue;
      u = parse_tsv_record(line, line_no);
    }
    if (utf8::trim(u.text).empty()) {
      throw Error(ErrorKind::EmptyUtterance, "line " + std::to_string(line_no) + ": utterance '" + u.id + "' is empty");
    }
    if (!seen.insert(u.id).second) {
      throw Error(ErrorKind::DuplicateId, "line " + std::to_string(line_no) + ": duplicate id '" + u.id + "'");
    }
    utterances.push_back(std::move(u));
  }
  return make_corpus(std::move(utterances));
}

Corpus load_corpus(const std::filesystem::path& path, CorpusFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open corpus '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_corpus(buf.str(), format);
}

std::string serialize_corpus(const Corpus& corpus, CorpusFormat format, const std::string& meta_line) {
  std::ostringstream out;
  if (format == CorpusFormat::Jsonl) {
    if (!meta_line.empty()) out << meta_line << '\n';
    for (const auto& u : corpus.utterances) {
      json obj = json::object();
      obj["id"] = u.id;
      obj["text"] = u.text;
      if (u.votes) {
        obj["votes_chat"] = u.votes->chat;
        obj["votes_nonchat"] = u.votes->nonchat;
      }
      obj["label"] = to_string(u.label);
      if (u.freq_bucket) obj["freq_bucket"] = json::parse(*u.freq_bucket);
      out << obj.dump() << '\n';
    }
  } else {
    if (!meta_line.empty()) out << "# " << meta_line << '\n';
    for (const auto& u : corpus.utterances) {
      if (u.text.find_first_of("\t\n\r") != std::string::npos || u.id.find_first_of("\t\n\r") != std::string::npos) {
        throw Error(ErrorKind::FormatError, "utterance '" + u.id + "' cannot be written as TSV");
      }
      out << u.id << '\t' << u.text << '\t';
      if (u.votes) out << u.votes->chat << '\t' << u.votes->nonchat;
      else out << '\t';
      out << '\t' << to_string(u.label) << '\n';
    }
  }
  return out.str();
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path, CorpusFormat format,
                 const std::string& meta_line) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::IoError, "cannot write corpus '" + path.string() + "'");
  out << serialize_corpus(corpus, format, meta_line);
}

std::map<int, std::size_t> vote_histogram(const Corpus& corpus) {
  std::map<int, std::size_t> hist;
  for (const auto& u : corpus.utterances) {
    if (!u.majority_count) throw Error(ErrorKind::MissingVotes, "utterance '" + u.id + "' has no vote data");
    hist[*u.majority_count]++;
  }
  return hist;
}

// ---------------------------------------------------------------------------
// Synthetic sources

namespace {

constexpr char32_t kBoundary = 0;

const std::vector<std::string> kConversational = {
    "let's talk about something",
    "i am free today",
    "are you angry?",
    "i'm so tired today",
    "halloween has already finished",
    "may the force be with you",
    "do you like me?",
    "i love you",
    "good morning!",
    "good night",
    "thank you so much",
    "you are funny",
    "i'm bored",
    "tell me something fun",
    "how are you doing?",
    "what do you think about me?",
    "i feel so happy now",
    "i want to go home",
    "are you a robot?",
    "do you have a boyfriend?",
    "i'm hungry",
    "you're so cute",
    "what's up?",
    "i am sad",
    "let's be friends",
    "can you sing for me?",
    "i had a bad day",
    "what is your favorite food?",
    "i'm going to sleep now",
    "hello there",
    "do you dream?",
    "i miss you",
    "you are smart",
    "that's so funny haha",
    "i don't know what to do",
    "are you happy?",
    "i think so too",
    "what are you doing now?",
    "sorry about that",
    "i like talking with you",
    "me too!",
    "really?",
    "oh well",
    "i am so sleepy",
    "it was a long day for me",
    "you know what i mean",
};

const std::vector<std::string> kEntity = {
    "tokyo tower",
    "weather tomorrow",
    "set an alarm for 7 am",
    "call mom",
    "volume up",
    "train to osaka",
    "pizza near me",
    "news today",
    "play music",
    "timer 3 minutes",
    "osaka castle opening hours",
    "iphone 7 price",
    "turn off the light",
    "call to tanaka",
    "yahoo finance",
    "bus schedule kyoto station",
    "stock price sony",
    "weather in sapporo",
    "open the camera",
    "mount fuji height",
    "send a message to ken",
    "nearest convenience store",
    "ramen shibuya",
    "baseball score giants",
    "translate apple to french",
    "volume down",
    "start navigation to home",
    "exchange rate dollar yen",
    "shinkansen timetable",
    "hotel reservation nagoya",
    "wifi settings",
    "battery level",
    "movie showtimes",
    "population of japan",
    "capital of france",
    "recipe curry rice",
    "flight status jal 123",
    "bluetooth on",
    "open calendar",
    "alarm 6:30",
    "tokyo disneyland tickets",
    "cafe near shinjuku",
    "traffic info route 246",
    "earthquake information",
    "lyrics of yesterday",
    "call office",
};

}  // namespace

const std::vector<std::string>& MarkovSource::builtin_profile(std::string_view name) {
  if (name == "conversational") return kConversational;
  if (name == "entity") return kEntity;
  throw Error(ErrorKind::InvalidSpec, "unknown source profile '" + std::string(name) + "'");
}

MarkovSource::MarkovSource(const std::vector<std::string>& seed_lines) {
  std::map<std::pair<char32_t, char32_t>, std::map<char32_t, double>> counts;
  for (const auto& line : seed_lines) {
    const std::u32string cps = utf8::decode(line);
    if (cps.empty()) continue;
    char32_t a = kBoundary;
    char32_t b = kBoundary;
    for (char32_t c : cps) {
      if (c == kBoundary) continue;
      counts[{a, b}][c] += 1.0;
      a = b;
      b = c;
    }
    counts[{a, b}][kBoundary] += 1.0;
  }
  if (counts.empty()) throw Error(ErrorKind::InvalidSpec, "source has no seed text");
  for (const auto& [key, next] : counts) {
    Transitions t;
    double total = 0.0;
    for (const auto& [c, n] : next) {
      total += n;
      t.next.push_back(c);
      t.cumulative.push_back(total);
    }
    for (double& v : t.cumulative) v /= total;
    table_.emplace(key, std::move(t));
  }
}

MarkovSource MarkovSource::resolve(const std::string& name_or_path) {
  if (name_or_path == "conversational" || name_or_path == "entity") {
    return MarkovSource(builtin_profile(name_or_path));
  }
  std::ifstream in(name_or_path);
  if (!in) throw Error(ErrorKind::InvalidSpec, "source '" + name_or_path + "' is neither a profile nor a readable file");
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!utf8::trim(line).empty()) lines.push_back(line);
  }
  return MarkovSource(lines);
}

std::string MarkovSource::sample(Rng& rng, std::size_t max_length) const {
  while (true) {
    std::u32string out;
    char32_t a = kBoundary;
    char32_t b = kBoundary;
    while (out.size() < max_length) {
      const auto it = table_.find({a, b});
      if (it == table_.end()) break;
      const Transitions& t = it->second;
      const double u = rng.uniform();
      const auto pos = std::upper_bound(t.cumulative.begin(), t.cumulative.end(), u) - t.cumulative.begin();
      const char32_t c = t.next[std::min<std::size_t>(pos, t.next.size() - 1)];
      if (c == kBoundary) break;
      out.push_back(c);
      a = b;
      b = c;
    }
    std::string text = utf8::encode(out);
    if (!utf8::trim(text).empty()) return text;
  }
}

SynthResult synth_corpus_with_truth(const SynthSpec& spec) {
  if (!(spec.vote_noise >= 0.0) || spec.vote_noise > 0.5) {
    throw Error(ErrorKind::InvalidSpec, "vote_noise must lie in [0, 0.5]");
  }
  const MarkovSource chat = MarkovSource::resolve(spec.chat_source);
  const MarkovSource nonchat = MarkovSource::resolve(spec.nonchat_source);
  Rng rng(spec.seed);

  std::vector<Label> order;
  order.insert(order.end(), spec.n_chat, Label::Chat);
  order.insert(order.end(), spec.n_nonchat, Label::NonChat);
  rng.shuffle(std::span<Label>(order));

  const std::size_t width = std::to_string(order.size()).size();
  SynthResult result;
  std::vector<Utterance> utterances;
  utterances.reserve(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    const Label truth = order[i];
    Utterance u;
    std::string num = std::to_string(i);
    u.id = "syn-" + std::string(width - num.size(), '0') + num;
    u.text = (truth == Label::Chat ? chat : nonchat).sample(rng);
    VoteCounts votes;
    for (int w = 0; w < kWorkersPerUtterance; ++w) {
      const bool correct = !rng.bernoulli(spec.vote_noise);
      const Label vote = correct ? truth : (truth == Label::Chat ? Label::NonChat : Label::Chat);
      (vote == Label::Chat ? votes.chat : votes.nonchat)++;
    }
    u.votes = votes;
    u.label = aggregate_counts(votes).label;
    utterances.push_back(std::move(u));
    result.true_labels.push_back(truth);
  }
  result.corpus = make_corpus(std::move(utterances));
  return result;
}

Corpus synth_corpus(const SynthSpec& spec) { return synth_corpus_with_truth(spec).corpus; }

std::vector<std::string> sample_lines(const MarkovSource& source, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::string> lines;
  lines.reserve(n);
  for (std::size_t i = 0; i < n; ++i) lines.push_back(source.sample(rng));
  return lines;
}

}  // namespace chatgate
