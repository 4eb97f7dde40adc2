#pragma once

// Corpus ingestion, vocabulary construction, seq2seq/LM encodings, and the
// synthetic copy / recall-dialogue generators used to verify the memory
// mechanism.
//
// Corpus file format: UTF-8, one conversation per line, turns separated by a
// TAB, tokens separated by single spaces, speakers alternating from the
// first turn.

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace ntmdlg {

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kSep = 2;  // utterance separator </s>
  static constexpr int kEos = 3;

  Vocabulary();

  int id(const std::string& token) const;  // kUnk when missing
  const std::string& token(int id) const;
  int size() const { return static_cast<int>(id_to_token_.size()); }
  bool contains(const std::string& token) const;

  // Appends a non-reserved token; returns its id.
  int add(const std::string& token);

  // One token per line, line number = id, reserved tokens first.
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

 private:
  std::vector<std::string> id_to_token_;
  std::vector<std::pair<std::string, int>> index_;  // sorted token -> id
  void rebuild_index();
};

struct Conversation {
  // Speaker of turn i is i % 2 (two speakers, strictly alternating).
  std::vector<std::vector<std::string>> turns;
};

std::vector<Conversation> load_corpus(const std::string& path);
void save_corpus(const std::string& path,
                 const std::vector<Conversation>& corpus);

// Top (cap - 4) tokens by frequency, ties broken by first occurrence.
Vocabulary build_vocab(const std::vector<Conversation>& corpus,
                       int cap = 50000);

// Seq2seq view: history turns (with separators folded into the preceding
// turn) plus the final-turn response. Ready for the D-NTMS encoder.
struct EncodedDialogue {
  struct Turn {
    int speaker = 0;             // 0 = A, 1 = B
    std::vector<int> ids;
  };
  std::vector<Turn> turns;       // history only, total ids <= 170
  std::vector<int> response;     // last turn + EOS, <= 30 ids
  std::vector<int> flat_history() const;
};

// LM view: one token stream with a loss mask and fixed-size segments.
struct EncodedStream {
  std::vector<int> ids;          // <= 200 for corpus streams
  std::vector<bool> mask;        // mask[t]: prediction of token t counts
  int segment_size = 20;
};

inline constexpr int kMaxHistoryTokens = 170;
inline constexpr int kMaxResponseTokens = 30;
inline constexpr int kMaxStreamTokens = 200;

// Returns nullopt (skip with warning) for single-turn conversations.
std::optional<EncodedDialogue> encode_seq2seq(const Conversation& c,
                                              const Vocabulary& v);

EncodedStream encode_lm(const Conversation& c, const Vocabulary& v,
                        int segment_size);

// --- synthetic tasks ------------------------------------------------------

// Copy benchmark. Input rows have width B+1 (last channel marks the
// delimiter); the target holds the pattern after the delimiter position.
struct CopyTask {
  std::vector<std::vector<int>> pattern;  // L rows of B bits
  std::vector<std::vector<int>> input;    // 2L+1 rows of width B+1
  std::vector<std::vector<int>> target;   // 2L+1 rows of width B
};

CopyTask gen_copy_task(int length, int width, std::uint64_t seed);

// Token rendering of a bit pattern ("b0101...") for LM-style training.
std::string copy_token(const std::vector<int>& bits);

// Builds the vocabulary of all 2^width pattern tokens.
Vocabulary copy_vocab(int width);

// Stream "p1..pL </s> p1..pL <eos>" with loss restricted to the recall span.
EncodedStream encode_copy_stream(const CopyTask& task, const Vocabulary& v,
                                 int segment_size);

// Toy two-speaker dialogues where a fact stated early must be repeated in
// the final turn.
std::vector<Conversation> gen_recall_dialogues(int n, std::uint64_t seed);

// Closed fact lists used by the generator (exposed for tests).
const std::vector<std::string>& recall_fact_list(const std::string& slot);
const std::vector<std::string>& recall_slots();

}  // namespace ntmdlg
