#pragma once

// Dual-NTM sequence-to-sequence dialogue model (D-NTMS): encoder GRU with
// speaker-alternating segment-end NTM writes, decoder GRU whose predictions
// fuse reads from both NTMs. The Seq2Seq baseline is the NTM-disabled
// configuration with an FC head on the decoder state.

#include <stdexcept>
#include <string>
#include <vector>

#include "ntmdlg/cells.hpp"
#include "ntmdlg/corpus.hpp"
#include "ntmdlg/ntm.hpp"
#include "ntmdlg/tensor.hpp"

namespace ntmdlg {

enum class SegmentPolicy { kQuarterTurn, kFixedSize5 };

// Segment lengths for one turn. Default: four contiguous segments of
// ceil(T/4) except the last, which takes the remainder (short turns yield
// fewer, nonempty segments). The fixed-size-5 policy chunks greedily by 5.
inline std::vector<int> segment_turn(int turn_len,
                                     SegmentPolicy policy =
                                         SegmentPolicy::kQuarterTurn) {
  if (turn_len < 1)
    throw std::invalid_argument("segment_turn: empty turn");
  int chunk = policy == SegmentPolicy::kFixedSize5
                  ? 5
                  : (turn_len + 3) / 4;
  std::vector<int> segs;
  int remaining = turn_len;
  while (remaining > 0) {
    int take = std::min(chunk, remaining);
    segs.push_back(take);
    remaining -= take;
  }
  return segs;
}

struct DntmsConfig {
  int vocab = 0;
  int emb = 200;
  int enc_hidden = 200;
  int dec_hidden = 400;
  bool use_ntm = true;             // false: Seq2Seq baseline
  NtmConfig ntm;                   // input is forced to dec_hidden
  SegmentPolicy segment_policy = SegmentPolicy::kQuarterTurn;
  bool decode_read_only = false;   // ablation: decode-time reads only

  static DntmsConfig defaults(int vocab_size, bool with_ntm) {
    DntmsConfig c;
    c.vocab = vocab_size;
    c.use_ntm = with_ntm;
    c.ntm.slots = 20;
    c.ntm.width = 512;
    c.ntm.read_heads = 1;
    c.ntm.write_heads = 1;
    c.ntm.ctrl_hidden = 512;
    c.ntm.output = 512;
    c.finalize();
    return c;
  }

  void finalize() { ntm.input = dec_hidden; }
};

template <class S>
struct DntmsModel {
  DntmsConfig cfg;
  Param<S> enc_emb, dec_emb;       // separate tables
  GruParams<S> enc_gru, dec_gru;
  Param<S> dec_init_W, dec_init_b;
  Param<S> enc2ntm_W, enc2ntm_b;
  NtmParams<S> ntm_a, ntm_b;
  Param<S> fc_W, fc_b;

  explicit DntmsModel(DntmsConfig c)
      : cfg((c.finalize(), c)),
        enc_emb("enc_emb", {c.vocab, c.emb}),
        dec_emb("dec_emb", {c.vocab, c.emb}),
        enc_gru("enc_gru", c.enc_hidden, c.emb),
        dec_gru("dec_gru", c.dec_hidden, c.emb + c.enc_hidden),
        dec_init_W("dec_init.W", {c.dec_hidden, c.enc_hidden}),
        dec_init_b("dec_init.b", {c.dec_hidden}),
        enc2ntm_W("enc2ntm.W", {c.ntm.input, c.enc_hidden}),
        enc2ntm_b("enc2ntm.b", {c.ntm.input}),
        ntm_a("ntm_a", c.ntm),
        ntm_b("ntm_b", c.ntm),
        fc_W("fc.W",
             {c.vocab, c.use_ntm ? 2 * c.ntm.output : c.dec_hidden}),
        fc_b("fc.b", {c.vocab}) {}

  void init(Rng& rng) {
    double es = 1.0 / std::sqrt(static_cast<double>(cfg.emb));
    enc_emb.init_uniform(rng, es);
    dec_emb.init_uniform(rng, es);
    enc_gru.init(rng);
    dec_gru.init(rng);
    dec_init_W.init_uniform(rng,
                            1.0 / std::sqrt(static_cast<double>(cfg.enc_hidden)));
    if (cfg.use_ntm) {
      enc2ntm_W.init_uniform(
          rng, 1.0 / std::sqrt(static_cast<double>(cfg.enc_hidden)));
      ntm_a.init(rng);
      ntm_b.init(rng);
    }
    int fc_in = cfg.use_ntm ? 2 * cfg.ntm.output : cfg.dec_hidden;
    fc_W.init_uniform(rng, 1.0 / std::sqrt(static_cast<double>(fc_in)));
  }

  std::vector<Param<S>*> params() {
    std::vector<Param<S>*> out;
    out.push_back(&enc_emb);
    out.push_back(&dec_emb);
    enc_gru.collect(out);
    dec_gru.collect(out);
    out.push_back(&dec_init_W);
    out.push_back(&dec_init_b);
    if (cfg.use_ntm) {
      out.push_back(&enc2ntm_W);
      out.push_back(&enc2ntm_b);
      ntm_a.collect(out);
      ntm_b.collect(out);
    }
    out.push_back(&fc_W);
    out.push_back(&fc_b);
    return out;
  }
};

template <class S>
struct DntmsEncoding {
  Var<S> context;        // final encoder state c
  NtmState<S> ntm_a;
  NtmState<S> ntm_b;
};

// Encoder GRU reads all history tokens in order (state carried across
// turns); at each segment end of a turn the encoder state is written to the
// active speaker's NTM (step output discarded). The other NTM is untouched.
template <class S>
DntmsEncoding<S> encode_history(Tape<S>& t, const EncodedDialogue& d,
                                DntmsModel<S>& m) {
  if (d.turns.empty())
    throw std::invalid_argument("encode_history: no history turns");
  DntmsEncoding<S> enc;
  if (m.cfg.use_ntm) {
    enc.ntm_a = ntm_initial_state(t, m.ntm_a);
    enc.ntm_b = ntm_initial_state(t, m.ntm_b);
  }
  Var<S> h = t.constant({m.cfg.enc_hidden}, S(0));
  auto emb_mat = t.param(m.enc_emb);
  for (const auto& turn : d.turns) {
    if (turn.ids.empty())
      throw std::invalid_argument("encode_history: empty turn");
    std::vector<int> segs = segment_turn(static_cast<int>(turn.ids.size()),
                                         m.cfg.segment_policy);
    std::size_t pos = 0;
    for (int seg_len : segs) {
      for (int k = 0; k < seg_len; ++k, ++pos) {
        int id = turn.ids[pos];
        if (id < 0 || id >= m.cfg.vocab)
          throw std::out_of_range("encode_history: token id out of range");
        h = gru_step(t, t.row(emb_mat, id), h, m.enc_gru);
      }
      if (m.cfg.use_ntm) {
        auto x = t.add(t.matmul(t.param(m.enc2ntm_W), h),
                       t.param(m.enc2ntm_b));
        NtmState<S>& active = turn.speaker == 0 ? enc.ntm_a : enc.ntm_b;
        auto res = ntm_step(t, x, active, turn.speaker == 0 ? m.ntm_a
                                                            : m.ntm_b);
        active = res.state;  // step output discarded during encoding
      }
    }
  }
  enc.context = h;
  return enc;
}

template <class S>
struct DntmsDecodeState {
  Var<S> dec_state;      // s_{t-1}
  NtmState<S> ntm_a;
  NtmState<S> ntm_b;
};

template <class S>
DntmsDecodeState<S> init_decode(Tape<S>& t, const DntmsEncoding<S>& enc,
                                DntmsModel<S>& m) {
  DntmsDecodeState<S> st;
  st.dec_state = t.add(t.matmul(t.param(m.dec_init_W), enc.context),
                       t.param(m.dec_init_b));
  st.ntm_a = enc.ntm_a;
  st.ntm_b = enc.ntm_b;
  return st;
}

template <class S>
struct DntmsStepResult {
  Var<S> logits;
  DntmsDecodeState<S> state;
};

// One teacher-forced decode step. The prediction is made from the previous
// decoder state (both NTMs query s_{t-1}); the decoder GRU then consumes
// embed(y_prev) concatenated with the context c to form s_t.
template <class S>
DntmsStepResult<S> decode_step_logits(Tape<S>& t, int y_prev, Var<S> context,
                                      const DntmsDecodeState<S>& st,
                                      DntmsModel<S>& m) {
  if (y_prev < 0 || y_prev >= m.cfg.vocab)
    throw std::out_of_range("decode_step: token id " + std::to_string(y_prev));
  DntmsStepResult<S> r;
  r.state = st;
  Var<S> logits;
  if (m.cfg.use_ntm) {
    auto res_a = ntm_step(t, st.dec_state, st.ntm_a, m.ntm_a);
    auto res_b = ntm_step(t, st.dec_state, st.ntm_b, m.ntm_b);
    if (m.cfg.decode_read_only) {
      // Keep reads/controller, discard memory mutation and write addresses.
      res_a.state.memory = st.ntm_a.memory;
      res_a.state.write_w = st.ntm_a.write_w;
      res_b.state.memory = st.ntm_b.memory;
      res_b.state.write_w = st.ntm_b.write_w;
    }
    r.state.ntm_a = res_a.state;
    r.state.ntm_b = res_b.state;
    logits = t.add(t.matmul(t.param(m.fc_W),
                            t.concat(res_a.output, res_b.output)),
                   t.param(m.fc_b));
  }
  auto x = t.concat(t.row(t.param(m.dec_emb), y_prev), context);
  r.state.dec_state = gru_step(t, x, st.dec_state, m.dec_gru);
  if (!m.cfg.use_ntm) {
    logits = t.add(t.matmul(t.param(m.fc_W), r.state.dec_state),
                   t.param(m.fc_b));
  }
  r.logits = logits;
  return r;
}

template <class S>
DntmsStepResult<S> decode_step(Tape<S>& t, int y_prev, Var<S> context,
                               const DntmsDecodeState<S>& st,
                               DntmsModel<S>& m) {
  auto r = decode_step_logits(t, y_prev, context, st, m);
  r.logits = t.softmax(r.logits);
  return r;
}

template <class S>
struct DntmsLoss {
  Var<S> total_nll;
  int token_count = 0;
};

// Teacher-forced sum of cross-entropies over the response (EOS included).
// The decoder start input is the PAD token.
template <class S>
DntmsLoss<S> forward_loss(Tape<S>& t, const EncodedDialogue& d,
                          DntmsModel<S>& m) {
  if (d.response.empty())
    throw std::invalid_argument("forward_loss: empty response");
  auto enc = encode_history(t, d, m);
  auto st = init_decode(t, enc, m);
  Var<S> total = t.constant({}, S(0));
  int y_prev = Vocabulary::kPad;
  for (int target : d.response) {
    auto r = decode_step_logits(t, y_prev, enc.context, st, m);
    total = t.add(total, t.cross_entropy(r.logits, target));
    st = r.state;
    y_prev = target;
  }
  return DntmsLoss<S>{total, static_cast<int>(d.response.size())};
}

}  // namespace ntmdlg
