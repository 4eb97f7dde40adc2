#include "ntmdlg/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "ntmdlg/rng.hpp"

namespace ntmdlg {

Vocabulary::Vocabulary() {
  id_to_token_ = {"<pad>", "<unk>", "</s>", "<eos>"};
  rebuild_index();
}

void Vocabulary::rebuild_index() {
  index_.clear();
  index_.reserve(id_to_token_.size());
  for (int i = 0; i < static_cast<int>(id_to_token_.size()); ++i)
    index_.emplace_back(id_to_token_[i], i);
  std::sort(index_.begin(), index_.end());
}

int Vocabulary::id(const std::string& token) const {
  auto it = std::lower_bound(
      index_.begin(), index_.end(), token,
      [](const auto& p, const std::string& t) { return p.first < t; });
  if (it != index_.end() && it->first == token) return it->second;
  return kUnk;
}

bool Vocabulary::contains(const std::string& token) const {
  auto it = std::lower_bound(
      index_.begin(), index_.end(), token,
      [](const auto& p, const std::string& t) { return p.first < t; });
  return it != index_.end() && it->first == token;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size())
    throw std::out_of_range("vocabulary id " + std::to_string(id));
  return id_to_token_[id];
}

int Vocabulary::add(const std::string& token) {
  id_to_token_.push_back(token);
  rebuild_index();
  return size() - 1;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write vocabulary: " + path);
  for (const auto& t : id_to_token_) out << t << "\n";
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read vocabulary: " + path);
  Vocabulary v;
  std::string line;
  int idx = 0;
  while (std::getline(in, line)) {
    if (idx < 4) {
      if (line != v.id_to_token_[idx])
        throw std::runtime_error("vocabulary file missing reserved token at line " +
                                 std::to_string(idx));
    } else {
      v.id_to_token_.push_back(line);
    }
    ++idx;
  }
  if (idx < 4) throw std::runtime_error("vocabulary file truncated: " + path);
  v.rebuild_index();
  return v;
}

std::vector<Conversation> load_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read corpus: " + path);
  std::vector<Conversation> corpus;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    Conversation c;
    std::size_t start = 0;
    while (start <= line.size()) {
      std::size_t tab = line.find('\t', start);
      std::string turn = line.substr(
          start, tab == std::string::npos ? std::string::npos : tab - start);
      std::vector<std::string> tokens;
      std::istringstream ts(turn);
      std::string tok;
      while (ts >> tok) tokens.push_back(tok);
      if (!tokens.empty()) c.turns.push_back(std::move(tokens));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (!c.turns.empty()) corpus.push_back(std::move(c));
  }
  return corpus;
}

void save_corpus(const std::string& path,
                 const std::vector<Conversation>& corpus) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write corpus: " + path);
  for (const auto& c : corpus) {
    for (std::size_t i = 0; i < c.turns.size(); ++i) {
      if (i) out << '\t';
      for (std::size_t j = 0; j < c.turns[i].size(); ++j) {
        if (j) out << ' ';
        out << c.turns[i][j];
      }
    }
    out << '\n';
  }
}

Vocabulary build_vocab(const std::vector<Conversation>& corpus, int cap) {
  if (corpus.empty())
    throw std::invalid_argument("build_vocab: empty corpus");
  struct Entry {
    long count = 0;
    long first_seen = 0;
  };
  std::map<std::string, Entry> counts;
  long position = 0;
  Vocabulary reserved;
  for (const auto& c : corpus)
    for (const auto& turn : c.turns)
      for (const auto& tok : turn) {
        ++position;
        if (reserved.contains(tok)) continue;  // reserved spellings stay reserved
        auto [it, fresh] = counts.try_emplace(tok);
        if (fresh) it->second.first_seen = position;
        ++it->second.count;
      }
  std::vector<std::pair<std::string, Entry>> ranked(counts.begin(),
                                                    counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second.count != b.second.count) return a.second.count > b.second.count;
    return a.second.first_seen < b.second.first_seen;
  });
  Vocabulary v;
  int keep = std::max(0, cap - 4);
  for (int i = 0; i < static_cast<int>(ranked.size()) && i < keep; ++i)
    v.add(ranked[i].first);
  return v;
}

std::vector<int> EncodedDialogue::flat_history() const {
  std::vector<int> flat;
  for (const auto& t : turns)
    flat.insert(flat.end(), t.ids.begin(), t.ids.end());
  return flat;
}

std::optional<EncodedDialogue> encode_seq2seq(const Conversation& c,
                                              const Vocabulary& v) {
  if (c.turns.size() < 2) return std::nullopt;  // skip with warning upstream

  // Flat history: turns joined with </s>; the separator belongs to the turn
  // it closes so segment taps include it.
  struct Tagged {
    int turn;
    int id;
  };
  std::vector<Tagged> flat;
  int history_turns = static_cast<int>(c.turns.size()) - 1;
  for (int i = 0; i < history_turns; ++i) {
    for (const auto& tok : c.turns[i]) flat.push_back({i, v.id(tok)});
    if (i + 1 < history_turns) flat.push_back({i, Vocabulary::kSep});
  }
  // Head-truncate: keep the most recent ids.
  if (static_cast<int>(flat.size()) > kMaxHistoryTokens)
    flat.erase(flat.begin(),
               flat.end() - kMaxHistoryTokens);

  EncodedDialogue e;
  int current_turn = -1;
  for (const auto& t : flat) {
    if (t.turn != current_turn) {
      e.turns.push_back({t.turn % 2, {}});
      current_turn = t.turn;
    }
    e.turns.back().ids.push_back(t.id);
  }

  const auto& last = c.turns.back();
  for (const auto& tok : last) {
    if (static_cast<int>(e.response.size()) >= kMaxResponseTokens) break;
    e.response.push_back(v.id(tok));
  }
  if (static_cast<int>(e.response.size()) < kMaxResponseTokens)
    e.response.push_back(Vocabulary::kEos);
  return e;
}

EncodedStream encode_lm(const Conversation& c, const Vocabulary& v,
                        int segment_size) {
  if (c.turns.empty())
    throw std::invalid_argument("encode_lm: empty conversation");
  if (segment_size < 1)
    throw std::invalid_argument("encode_lm: segment size must be >= 1");
  EncodedStream s;
  s.segment_size = segment_size;
  for (std::size_t i = 0; i < c.turns.size(); ++i) {
    if (i) s.ids.push_back(Vocabulary::kSep);
    for (const auto& tok : c.turns[i]) s.ids.push_back(v.id(tok));
  }
  s.ids.push_back(Vocabulary::kEos);
  if (static_cast<int>(s.ids.size()) > kMaxStreamTokens)
    s.ids.resize(kMaxStreamTokens);
  s.mask.assign(s.ids.size(), true);
  return s;
}

CopyTask gen_copy_task(int length, int width, std::uint64_t seed) {
  if (length < 1 || width < 1)
    throw std::invalid_argument("gen_copy_task: length and width must be >= 1");
  Rng rng(seed);
  CopyTask t;
  t.pattern.resize(length);
  for (auto& row : t.pattern) {
    row.resize(width);
    for (auto& b : row) b = rng.coin() ? 1 : 0;
  }
  int total = 2 * length + 1;
  t.input.assign(total, std::vector<int>(width + 1, 0));
  t.target.assign(total, std::vector<int>(width, 0));
  for (int i = 0; i < length; ++i)
    for (int j = 0; j < width; ++j) t.input[i][j] = t.pattern[i][j];
  t.input[length][width] = 1;  // delimiter channel
  for (int i = 0; i < length; ++i) t.target[length + 1 + i] = t.pattern[i];
  return t;
}

std::string copy_token(const std::vector<int>& bits) {
  std::string s = "b";
  for (int b : bits) s += b ? '1' : '0';
  return s;
}

Vocabulary copy_vocab(int width) {
  Vocabulary v;
  int n = 1 << width;
  for (int code = 0; code < n; ++code) {
    std::vector<int> bits(width);
    for (int j = 0; j < width; ++j) bits[j] = (code >> (width - 1 - j)) & 1;
    v.add(copy_token(bits));
  }
  return v;
}

EncodedStream encode_copy_stream(const CopyTask& task, const Vocabulary& v,
                                 int segment_size) {
  EncodedStream s;
  s.segment_size = segment_size;
  int len = static_cast<int>(task.pattern.size());
  for (const auto& row : task.pattern) s.ids.push_back(v.id(copy_token(row)));
  s.ids.push_back(Vocabulary::kSep);
  for (const auto& row : task.pattern) s.ids.push_back(v.id(copy_token(row)));
  s.ids.push_back(Vocabulary::kEos);
  s.mask.assign(s.ids.size(), false);
  for (int i = len + 1; i <= 2 * len; ++i) s.mask[i] = true;
  return s;
}

namespace {

const std::vector<std::string> kNames = {"alice", "bob",   "carol", "dave",
                                         "erin",  "frank", "grace", "heidi"};
const std::vector<std::string> kProfessions = {"doctor", "teacher", "pilot",
                                               "farmer", "singer",  "lawyer",
                                               "baker",  "nurse"};
const std::vector<std::string> kCities = {"paris", "london", "tokyo",
                                          "cairo", "oslo",   "madrid",
                                          "berlin", "sydney"};
const std::vector<std::string> kSlots = {"name", "profession", "city"};
const std::vector<std::string> kTopics = {"weather", "food",   "music",
                                          "sports",  "movies", "books",
                                          "travel",  "games"};
const std::vector<std::string> kVerbs = {"like", "enjoy", "discuss", "follow"};

std::vector<std::string> split_words(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string w;
  while (is >> w) out.push_back(w);
  return out;
}

}  // namespace

const std::vector<std::string>& recall_fact_list(const std::string& slot) {
  if (slot == "name") return kNames;
  if (slot == "profession") return kProfessions;
  if (slot == "city") return kCities;
  throw std::invalid_argument("unknown recall slot: " + slot);
}

const std::vector<std::string>& recall_slots() { return kSlots; }

std::vector<Conversation> gen_recall_dialogues(int n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("gen_recall_dialogues: n must be >= 1");
  Rng rng(seed);
  std::vector<Conversation> corpus;
  corpus.reserve(n);
  for (int i = 0; i < n; ++i) {
    const std::string& slot = kSlots[rng.below(kSlots.size())];
    const auto& facts = recall_fact_list(slot);
    const std::string& fact = facts[rng.below(facts.size())];
    Conversation c;
    c.turns.push_back(split_words("hi what is your " + slot + " ?"));
    c.turns.push_back(split_words("my " + slot + " is " + fact + " ."));
    int fillers = 1 + static_cast<int>(rng.below(3));
    for (int f = 0; f < fillers; ++f) {
      const std::string& topic = kTopics[rng.below(kTopics.size())];
      const std::string& verb = kVerbs[rng.below(kVerbs.size())];
      c.turns.push_back(split_words("do you like " + topic + " ?"));
      c.turns.push_back(
          split_words("i " + verb + " " + topic + " very much ."));
    }
    c.turns.push_back(split_words("tell me your " + slot + " again ."));
    c.turns.push_back(split_words("my " + slot + " is " + fact + " ."));
    corpus.push_back(std::move(c));
  }
  return corpus;
}

}  // namespace ntmdlg
