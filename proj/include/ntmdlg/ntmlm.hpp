#pragma once

// Single-NTM language model (NTM-LM): a GRU language model over the whole
// conversation with one NTM interaction after every full fixed-size segment.
// The step's read output conditions every token of the following segment.
// The LM baseline replaces the conditioning vector with zeros and performs
// no NTM calls.

#include <stdexcept>
#include <vector>

#include "ntmdlg/cells.hpp"
#include "ntmdlg/corpus.hpp"
#include "ntmdlg/ntm.hpp"
#include "ntmdlg/tensor.hpp"

namespace ntmdlg {

struct NtmLmConfig {
  int vocab = 0;
  int emb = 200;
  int hidden = 400;
  bool use_ntm = true;            // false: plain LM (no NTM parameters)
  NtmConfig ntm;                  // input forced to hidden; output = cond dim
  int segment_size = 20;
  bool head_sees_read = true;     // head input: hidden (+ conditioning)

  static NtmLmConfig defaults(int vocab_size, bool with_ntm) {
    NtmLmConfig c;
    c.vocab = vocab_size;
    c.use_ntm = with_ntm;
    c.ntm.slots = 32;
    c.ntm.width = 64;
    c.ntm.read_heads = 4;
    c.ntm.write_heads = 4;
    c.ntm.ctrl_hidden = 512;
    c.ntm.output = 64;
    c.finalize();
    return c;
  }

  void finalize() { ntm.input = hidden; }
  int cond_dim() const { return ntm.output; }
  int head_in() const {
    return hidden + (head_sees_read ? cond_dim() : 0);
  }
};

template <class S>
struct NtmLmModel {
  NtmLmConfig cfg;
  Param<S> emb;
  GruParams<S> gru;
  Param<S> cond_init;   // conditioning for the first segment
  NtmParams<S> ntm;
  Param<S> head_W, head_b;

  explicit NtmLmModel(NtmLmConfig c)
      : cfg((c.finalize(), c)),
        emb("emb", {c.vocab, c.emb}),
        gru("gru", c.hidden, c.emb + c.cond_dim()),
        cond_init("cond_init", {c.cond_dim()}),
        ntm("ntm", c.ntm),
        head_W("head.W", {c.vocab, c.head_in()}),
        head_b("head.b", {c.vocab}) {}

  void init(Rng& rng) {
    emb.init_uniform(rng, 1.0 / std::sqrt(static_cast<double>(cfg.emb)));
    gru.init(rng);
    if (cfg.use_ntm) {
      cond_init.init_uniform(rng, 0.1);
      ntm.init(rng);
    }
    head_W.init_uniform(rng,
                        1.0 / std::sqrt(static_cast<double>(cfg.head_in())));
  }

  std::vector<Param<S>*> params() {
    std::vector<Param<S>*> out;
    out.push_back(&emb);
    gru.collect(out);
    if (cfg.use_ntm) {
      out.push_back(&cond_init);
      ntm.collect(out);
    }
    out.push_back(&head_W);
    out.push_back(&head_b);
    return out;
  }
};

enum class LmMode { kNtmLm, kLm };

// Incremental run state: consume tokens one at a time, read the next-token
// logits after any position.
template <class S>
struct LmRun {
  Tape<S>* tape = nullptr;
  NtmLmModel<S>* model = nullptr;
  LmMode mode = LmMode::kNtmLm;
  Var<S> h;
  Var<S> cond;
  NtmState<S> ntm_state;
  int consumed = 0;
  int segment_size = 0;
  long ntm_calls = 0;

  static LmRun start(Tape<S>& t, NtmLmModel<S>& m, LmMode mode) {
    if (mode == LmMode::kNtmLm && !m.cfg.use_ntm)
      throw std::invalid_argument("ntm-lm mode on a model without an NTM");
    LmRun r;
    r.tape = &t;
    r.model = &m;
    r.mode = mode;
    r.segment_size = m.cfg.segment_size;
    r.h = t.constant({m.cfg.hidden}, S(0));
    if (mode == LmMode::kNtmLm) {
      r.cond = t.param(m.cond_init);
      r.ntm_state = ntm_initial_state(t, m.ntm);
    } else {
      r.cond = t.constant({m.cfg.cond_dim()}, S(0));
    }
    return r;
  }

  // Advances the GRU over one token; fires the NTM step when this token
  // completes a segment.
  void consume(int token) {
    Tape<S>& t = *tape;
    NtmLmModel<S>& m = *model;
    if (token < 0 || token >= m.cfg.vocab)
      throw std::out_of_range("lm consume: token id out of range");
    auto x = t.concat(t.row(t.param(m.emb), token), cond);
    h = gru_step(t, x, h, m.gru);
    ++consumed;
    if (mode == LmMode::kNtmLm && consumed % segment_size == 0) {
      auto res = ntm_step(t, h, ntm_state, m.ntm);
      ntm_state = res.state;
      cond = res.output;
      ++ntm_calls;
    }
  }

  // Next-token logits from the current position.
  Var<S> logits() const {
    Tape<S>& t = *tape;
    NtmLmModel<S>& m = *model;
    auto in = m.cfg.head_sees_read ? t.concat(h, cond) : h;
    return t.add(t.matmul(t.param(m.head_W), in), t.param(m.head_b));
  }
};

template <class S>
struct LmForwardResult {
  std::vector<Var<S>> logits;   // logits[t]: after consuming token t
  Var<S> total_nll;             // sum over masked predicted tokens
  int token_count = 0;          // number of predictions in the loss
  long ntm_calls = 0;
};

// Runs the language model over a stream. logits[t] is emitted after
// consuming token t and predicts token t+1; position t contributes to the
// loss when mask[t+1] is set.
template <class S>
LmForwardResult<S> lm_forward(Tape<S>& t, const EncodedStream& stream,
                              NtmLmModel<S>& m, LmMode mode) {
  if (stream.ids.empty())
    throw std::invalid_argument("lm_forward: empty stream");
  LmForwardResult<S> r;
  r.total_nll = t.constant({}, S(0));
  LmRun<S> run = LmRun<S>::start(t, m, mode);
  if (stream.segment_size >= 1) run.segment_size = stream.segment_size;
  int n = static_cast<int>(stream.ids.size());
  for (int pos = 0; pos < n; ++pos) {
    run.consume(stream.ids[pos]);
    auto lg = run.logits();
    r.logits.push_back(lg);
    int next = pos + 1;
    if (next < n && stream.mask[next]) {
      r.total_nll = t.add(r.total_nll, t.cross_entropy(lg, stream.ids[next]));
      ++r.token_count;
    }
  }
  r.ntm_calls = run.ntm_calls;
  return r;
}

// Distribution over the token following the prefix.
template <class S>
Var<S> next_token_distribution(Tape<S>& t, const std::vector<int>& prefix,
                               NtmLmModel<S>& m, LmMode mode) {
  if (prefix.empty())
    throw std::invalid_argument("next_token_distribution: empty prefix");
  std::vector<int> ids = prefix;
  if (static_cast<int>(ids.size()) > kMaxStreamTokens)
    ids.erase(ids.begin(), ids.end() - kMaxStreamTokens);
  LmRun<S> run = LmRun<S>::start(t, m, mode);
  for (int id : ids) run.consume(id);
  return t.softmax(run.logits());
}

}  // namespace ntmdlg
