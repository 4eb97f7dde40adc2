#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <string>

#include "ntmdlg/corpus.hpp"
#include "ntmdlg/rng.hpp"

using namespace ntmdlg;

namespace {

Conversation conv(std::vector<std::vector<std::string>> turns) {
  Conversation c;
  c.turns = std::move(turns);
  return c;
}

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name) : path("/tmp/ntmdlg_" + name) {}
  ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("vocabulary reserves pad, unk, separator and eos") {
  Vocabulary v;
  CHECK(v.size() == 4);
  CHECK(v.token(Vocabulary::kPad) == "<pad>");
  CHECK(v.token(Vocabulary::kUnk) == "<unk>");
  CHECK(v.token(Vocabulary::kSep) == "</s>");
  CHECK(v.token(Vocabulary::kEos) == "<eos>");
  CHECK(v.id("never-seen") == Vocabulary::kUnk);
  int id = v.add("hello");
  CHECK(id == 4);
  CHECK(v.id("hello") == 4);
  CHECK(v.contains("hello"));
  CHECK(!v.contains("world"));
  CHECK_THROWS_AS(v.token(99), std::out_of_range);
}

TEST_CASE("vocabulary file round trip") {
  Vocabulary v;
  v.add("alpha");
  v.add("beta");
  TempFile f("vocab.txt");
  v.save(f.path);
  Vocabulary w = Vocabulary::load(f.path);
  CHECK(w.size() == v.size());
  for (int i = 0; i < v.size(); ++i) CHECK(w.token(i) == v.token(i));
  CHECK_THROWS_AS(Vocabulary::load("/tmp/ntmdlg_no_such_file"),
                  std::runtime_error);
}

TEST_CASE("build_vocab ranks by frequency with first-seen tie break") {
  std::vector<Conversation> corpus = {
      conv({{"b", "a", "b"}, {"c", "a", "b"}}),
      conv({{"d", "c"}})};
  // counts: b=3, a=2, c=2, d=1; a first seen before c
  Vocabulary v = build_vocab(corpus);
  CHECK(v.id("b") == 4);
  CHECK(v.id("a") == 5);
  CHECK(v.id("c") == 6);
  CHECK(v.id("d") == 7);
}

TEST_CASE("build_vocab honours the cap including reserved slots") {
  std::vector<Conversation> corpus = {
      conv({{"a", "a", "b", "b", "c", "d"}})};
  Vocabulary v = build_vocab(corpus, 6);  // room for two real tokens
  CHECK(v.size() == 6);
  CHECK(v.contains("a"));
  CHECK(v.contains("b"));
  CHECK(!v.contains("c"));
  CHECK(!v.contains("d"));
}

TEST_CASE("reserved spellings in the text never become fresh entries") {
  std::vector<Conversation> corpus = {conv({{"<eos>", "x", "</s>"}})};
  Vocabulary v = build_vocab(corpus);
  CHECK(v.size() == 5);  // only "x" added
  CHECK(v.id("<eos>") == Vocabulary::kEos);
}

TEST_CASE("corpus file round trip preserves turns and tokens") {
  std::vector<Conversation> corpus = {
      conv({{"hello", "there"}, {"hi"}, {"how", "are", "you", "?"}}),
      conv({{"one"}, {"two", "words"}})};
  TempFile f("corpus.txt");
  save_corpus(f.path, corpus);
  auto loaded = load_corpus(f.path);
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0].turns == corpus[0].turns);
  CHECK(loaded[1].turns == corpus[1].turns);
}

TEST_CASE("seq2seq encoding splits history from response") {
  Vocabulary v;
  int hello = v.add("hello");
  int hi = v.add("hi");
  int bye = v.add("bye");
  auto e = encode_seq2seq(conv({{"hello", "hello"}, {"hi"}, {"bye"}}), v);
  REQUIRE(e.has_value());
  REQUIRE(e->turns.size() == 2);
  CHECK(e->turns[0].speaker == 0);
  // separator folded into the turn it closes
  CHECK(e->turns[0].ids == std::vector<int>{hello, hello, Vocabulary::kSep});
  CHECK(e->turns[1].speaker == 1);
  CHECK(e->turns[1].ids == std::vector<int>{hi});
  CHECK(e->response == std::vector<int>{bye, Vocabulary::kEos});
}

TEST_CASE("single-turn conversations are not encodable as seq2seq") {
  Vocabulary v;
  v.add("hello");
  CHECK(!encode_seq2seq(conv({{"hello"}}), v).has_value());
}

TEST_CASE("history is capped at 170 tokens keeping the most recent") {
  Vocabulary v;
  v.add("w");
  std::vector<std::string> long_turn(150, "w");
  auto e = encode_seq2seq(conv({long_turn, long_turn, {"w"}}), v);
  REQUIRE(e.has_value());
  auto flat = e->flat_history();
  CHECK(flat.size() == kMaxHistoryTokens);
  // the head of the first turn was dropped, so turn 0 is shorter
  REQUIRE(e->turns.size() == 2);
  CHECK(e->turns[0].speaker == 0);
  CHECK(e->turns[0].ids.size() == 170 - 150);
  CHECK(e->turns[1].ids.size() == 150);
}

TEST_CASE("responses are capped at 30 tokens and eos fits inside the cap") {
  Vocabulary v;
  v.add("w");
  std::vector<std::string> long_reply(60, "w");
  auto e = encode_seq2seq(conv({{"w"}, long_reply}), v);
  REQUIRE(e.has_value());
  CHECK(e->response.size() == kMaxResponseTokens);
  CHECK(e->response.back() == v.id("w"));  // no room left for eos

  std::vector<std::string> exact(29, "w");
  auto e2 = encode_seq2seq(conv({{"w"}, exact}), v);
  CHECK(e2->response.size() == 30);
  CHECK(e2->response.back() == Vocabulary::kEos);
}

TEST_CASE("lm encoding joins turns with separators and appends eos") {
  Vocabulary v;
  int a = v.add("a");
  int b = v.add("b");
  auto s = encode_lm(conv({{"a", "a"}, {"b"}}), v, 20);
  CHECK(s.ids == std::vector<int>{a, a, Vocabulary::kSep, b, Vocabulary::kEos});
  CHECK(s.mask == std::vector<bool>(5, true));
  CHECK(s.segment_size == 20);
}

TEST_CASE("lm encoding truncates at 200 tokens") {
  Vocabulary v;
  v.add("w");
  std::vector<std::string> turn(300, "w");
  auto s = encode_lm(conv({turn}), v, 20);
  CHECK(s.ids.size() == kMaxStreamTokens);
  CHECK(s.mask.size() == s.ids.size());
}

TEST_CASE("copy task layout: pattern, delimiter, recall span") {
  auto t = gen_copy_task(4, 6, 123);
  CHECK(t.pattern.size() == 4);
  CHECK(t.input.size() == 9);
  CHECK(t.target.size() == 9);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 6; ++j) {
      CHECK(t.input[i][j] == t.pattern[i][j]);
      CHECK(t.target[5 + i][j] == t.pattern[i][j]);
    }
    CHECK(t.input[i][6] == 0);
  }
  CHECK(t.input[4][6] == 1);  // delimiter row
  for (int j = 0; j < 6; ++j) CHECK(t.input[4][j] == 0);
  // rows after the delimiter carry no input signal
  for (int i = 5; i < 9; ++i)
    for (int j = 0; j < 7; ++j) CHECK(t.input[i][j] == 0);
  CHECK_THROWS_AS(gen_copy_task(0, 6, 1), std::invalid_argument);
}

TEST_CASE("copy task bits are deterministic per seed and roughly fair") {
  auto a = gen_copy_task(8, 6, 42);
  auto b = gen_copy_task(8, 6, 42);
  CHECK(a.pattern == b.pattern);
  auto c = gen_copy_task(8, 6, 43);
  CHECK(a.pattern != c.pattern);

  long ones = 0, total = 0;
  for (int seed = 0; seed < 250; ++seed) {
    auto t = gen_copy_task(10, 6, static_cast<std::uint64_t>(seed));
    for (auto& row : t.pattern)
      for (int bit : row) {
        ones += bit;
        ++total;
      }
  }
  double mean = static_cast<double>(ones) / total;
  CHECK(std::abs(mean - 0.5) < 0.02);
}

TEST_CASE("copy tokens and vocabulary cover every pattern") {
  CHECK(copy_token({0, 1, 0, 1}) == "b0101");
  Vocabulary v = copy_vocab(3);
  CHECK(v.size() == 4 + 8);
  std::set<std::string> seen;
  for (int i = 4; i < v.size(); ++i) seen.insert(v.token(i));
  CHECK(seen.size() == 8);
  CHECK(seen.count("b000") == 1);
  CHECK(seen.count("b111") == 1);
}

TEST_CASE("copy stream masks exactly the recall span") {
  Vocabulary v = copy_vocab(3);
  auto task = gen_copy_task(5, 3, 7);
  auto s = encode_copy_stream(task, v, 1);
  CHECK(s.ids.size() == 12);  // 5 + sep + 5 + eos
  CHECK(s.ids[5] == Vocabulary::kSep);
  CHECK(s.ids.back() == Vocabulary::kEos);
  for (int i = 0; i < 5; ++i) {
    CHECK(s.ids[i] == s.ids[6 + i]);       // repeated pattern
    CHECK(s.ids[i] >= 4);                  // real pattern tokens
    CHECK(!s.mask[i]);
    CHECK(s.mask[6 + i]);
  }
  CHECK(!s.mask[5]);
  CHECK(!s.mask[11]);
  int masked = 0;
  for (bool b : s.mask) masked += b ? 1 : 0;
  CHECK(masked == 5);
}

TEST_CASE("recall dialogues always restate the fact in the final turn") {
  auto corpus = gen_recall_dialogues(500, 99);
  REQUIRE(corpus.size() == 500);
  for (const auto& c : corpus) {
    REQUIRE(c.turns.size() >= 6);
    CHECK(c.turns.size() % 2 == 0);  // strictly alternating, B closes
    // turn 1: "my <slot> is <fact> ."; final turn repeats it verbatim
    CHECK(c.turns[1] == c.turns.back());
    REQUIRE(c.turns[1].size() == 5);
    const std::string& slot = c.turns[1][1];
    const std::string& fact = c.turns[1][3];
    const auto& facts = recall_fact_list(slot);
    CHECK(std::find(facts.begin(), facts.end(), fact) != facts.end());
    // the opening question asks for the same slot
    CHECK(c.turns[0][4] == slot);
    // the reminder question also names the slot
    CHECK(c.turns[c.turns.size() - 2][3] == slot);
  }
}

TEST_CASE("recall generator uses all slots and facts roughly uniformly") {
  auto corpus = gen_recall_dialogues(3000, 7);
  std::map<std::string, int> slot_counts;
  std::map<std::string, int> fact_counts;
  for (const auto& c : corpus) {
    slot_counts[c.turns[1][1]]++;
    fact_counts[c.turns[1][3]]++;
  }
  CHECK(slot_counts.size() == recall_slots().size());
  for (const auto& slot : recall_slots()) {
    CHECK(recall_fact_list(slot).size() == 8);
    // each slot close to n/3
    CHECK(slot_counts[slot] > 3000 / 3 * 0.8);
    CHECK(slot_counts[slot] < 3000 / 3 * 1.2);
    for (const auto& f : recall_fact_list(slot)) CHECK(fact_counts[f] > 0);
  }
  CHECK_THROWS_AS(recall_fact_list("nonsense"), std::invalid_argument);
}

TEST_CASE("recall dialogues are deterministic per seed") {
  auto a = gen_recall_dialogues(50, 5);
  auto b = gen_recall_dialogues(50, 5);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].turns == b[i].turns);
}

TEST_CASE("recall dialogues encode under a small vocabulary without unks") {
  auto corpus = gen_recall_dialogues(1000, 11);
  Vocabulary v = build_vocab(corpus, 100);
  CHECK(v.size() <= 100);
  for (const auto& c : corpus)
    for (const auto& turn : c.turns)
      for (const auto& tok : turn) CHECK(v.id(tok) != Vocabulary::kUnk);
}
