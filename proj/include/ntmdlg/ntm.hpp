#pragma once

// Neural Turing Machine: memory matrix, content + location addressing,
// erase/add writes, multi-head reads and an LSTM controller behind a single
// step interface. Reads see the memory as it stood at step entry; writes are
// applied afterwards in head order.

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "ntmdlg/cells.hpp"
#include "ntmdlg/tensor.hpp"

namespace ntmdlg {

struct NtmConfig {
  int slots = 20;       // N
  int width = 512;      // W
  int read_heads = 1;
  int write_heads = 1;
  int ctrl_hidden = 512;
  int input = 0;        // external input width (x)
  int output = 0;       // step output width
};

// Emission widths per head. Read heads emit key, strength, gate, shift,
// sharpening; write heads additionally emit erase and add vectors.
inline int read_emit_dim(int width) { return width + 6; }
inline int write_emit_dim(int width) { return 3 * width + 6; }

template <class S>
struct NtmParams {
  NtmConfig cfg;
  LstmParams<S> controller;
  std::vector<Param<S>> head_W;  // read heads first, then write heads
  std::vector<Param<S>> head_b;
  Param<S> out_W, out_b;
  Param<S> mem_init;                  // broadcast to all slots
  std::vector<Param<S>> read_init;    // one per read head
  mutable long step_calls = 0;        // instrumentation for tests

  NtmParams() = default;
  NtmParams(const std::string& prefix, const NtmConfig& c)
      : cfg(c),
        controller(prefix + ".ctrl", c.ctrl_hidden,
                   c.input + c.read_heads * c.width),
        out_W(prefix + ".out_W",
              {c.output, c.ctrl_hidden + c.read_heads * c.width}),
        out_b(prefix + ".out_b", {c.output}),
        mem_init(prefix + ".mem_init", {c.width}) {
    for (int h = 0; h < c.read_heads + c.write_heads; ++h) {
      bool wr = h >= c.read_heads;
      int dim = wr ? write_emit_dim(c.width) : read_emit_dim(c.width);
      std::string hn = prefix + (wr ? ".whead" : ".rhead") +
                       std::to_string(wr ? h - c.read_heads : h);
      head_W.emplace_back(hn + ".W", Shape{dim, c.ctrl_hidden});
      head_b.emplace_back(hn + ".b", Shape{dim});
    }
    for (int h = 0; h < c.read_heads; ++h)
      read_init.emplace_back(prefix + ".read_init" + std::to_string(h),
                             Shape{c.width});
  }

  void init(Rng& rng) {
    controller.init(rng);
    double hs = 1.0 / std::sqrt(static_cast<double>(cfg.ctrl_hidden));
    for (auto& w : head_W) w.init_uniform(rng, hs);
    double os = 1.0 / std::sqrt(
        static_cast<double>(cfg.ctrl_hidden + cfg.read_heads * cfg.width));
    out_W.init_uniform(rng, os);
    mem_init.init_uniform(rng, 0.1);
    for (auto& r : read_init) r.init_uniform(rng, 0.1);
  }

  void collect(std::vector<Param<S>*>& out) {
    controller.collect(out);
    for (auto& w : head_W) out.push_back(&w);
    for (auto& b : head_b) out.push_back(&b);
    out.push_back(&out_W);
    out.push_back(&out_b);
    out.push_back(&mem_init);
    for (auto& r : read_init) out.push_back(&r);
  }
};

template <class S>
struct NtmState {
  Var<S> memory;                    // [N, W]
  std::vector<Var<S>> read_w;       // one [N] per read head
  std::vector<Var<S>> write_w;      // one [N] per write head
  std::vector<Var<S>> reads;        // one [W] per read head
  LstmState<S> controller;
};

// Memory starts as a learned bias broadcast to every slot; head weightings
// start one-hot at slot 0; previous reads start from learned bias vectors.
template <class S>
NtmState<S> ntm_initial_state(Tape<S>& t, NtmParams<S>& p) {
  const NtmConfig& c = p.cfg;
  NtmState<S> st;
  st.memory = t.broadcast_rows(t.param(p.mem_init), c.slots);
  std::vector<S> onehot(c.slots, S(0));
  onehot[0] = S(1);
  for (int h = 0; h < c.read_heads; ++h) {
    st.read_w.push_back(t.input({c.slots}, onehot));
    st.reads.push_back(t.param(p.read_init[h]));
  }
  for (int h = 0; h < c.write_heads; ++h)
    st.write_w.push_back(t.input({c.slots}, onehot));
  st.controller.c = t.constant({c.ctrl_hidden}, S(0));
  st.controller.h = t.constant({c.ctrl_hidden}, S(0));
  return st;
}

// w[i] = softmax_i(beta * cos(k, M[i])).
template <class S>
Var<S> content_address(Tape<S>& t, Var<S> key, Var<S> beta, Var<S> memory) {
  int slots = t.shape(memory)[0];
  std::vector<Var<S>> sims;
  sims.reserve(slots);
  for (int i = 0; i < slots; ++i)
    sims.push_back(t.cosine_similarity(key, t.row(memory, i)));
  return t.softmax(t.scalev(t.pack(sims), beta));
}

template <class S>
Var<S> interpolate(Tape<S>& t, Var<S> w_content, Var<S> w_prev, Var<S> gate) {
  auto one = t.constant({1}, S(1));
  auto g1 = t.sub(one, gate);
  return t.add(t.scalev(w_content, gate), t.scalev(w_prev, g1));
}

template <class S>
Var<S> read_memory(Tape<S>& t, Var<S> memory, Var<S> w) {
  return t.vecmat(w, memory);
}

// M'[i] = M[i] * (1 - w[i] e) + w[i] a.
template <class S>
Var<S> write_memory(Tape<S>& t, Var<S> memory, Var<S> w, Var<S> erase,
                    Var<S> add_vec) {
  const Shape& sm = t.shape(memory);
  auto ones = t.constant(sm, S(1));
  auto keep = t.sub(ones, t.outer(w, erase));
  return t.add(t.mul(memory, keep), t.outer(w, add_vec));
}

template <class S>
struct HeadEmission {
  Var<S> key;      // [W]
  Var<S> beta;     // [1], >= 0
  Var<S> gate;     // [1], (0,1)
  Var<S> shift;    // [3] simplex
  Var<S> gamma;    // [1], >= 1
  Var<S> erase;    // [W], (0,1) (write heads only)
  Var<S> add;      // [W] (write heads only)
};

template <class S>
HeadEmission<S> emit_head(Tape<S>& t, Var<S> ctrl_out, Param<S>& W,
                          Param<S>& b, int width, bool write_head) {
  auto raw = t.add(t.matmul(t.param(W), ctrl_out), t.param(b));
  HeadEmission<S> e;
  e.key = t.slice(raw, 0, width);
  e.beta = t.softplus(t.slice(raw, width, 1));
  e.gate = t.sigmoid(t.slice(raw, width + 1, 1));
  e.shift = t.softmax(t.slice(raw, width + 2, 3));
  e.gamma = t.affine(t.softplus(t.slice(raw, width + 5, 1)), S(1), S(1));
  if (write_head) {
    e.erase = t.sigmoid(t.slice(raw, width + 6, width));
    e.add = t.slice(raw, 2 * width + 6, width);
  }
  return e;
}

// Full addressing chain for one head.
template <class S>
Var<S> address_head(Tape<S>& t, const HeadEmission<S>& e, Var<S> w_prev,
                    Var<S> memory) {
  auto wc = content_address(t, e.key, e.beta, memory);
  auto wg = interpolate(t, wc, w_prev, e.gate);
  auto ws = t.shift(wg, e.shift);
  return t.sharpen(ws, e.gamma);
}

template <class S>
struct NtmStepResult {
  Var<S> output;
  NtmState<S> state;
};

template <class S>
NtmStepResult<S> ntm_step(Tape<S>& t, Var<S> x, const NtmState<S>& state,
                          NtmParams<S>& p) {
  const NtmConfig& c = p.cfg;
  if (t.shape(x).size() != 1 || t.shape(x)[0] != c.input)
    throw std::invalid_argument("ntm_step: input width " +
                                shape_str(t.shape(x)) + " expected [" +
                                std::to_string(c.input) + "]");
  ++p.step_calls;

  auto ctrl_in = x;
  for (auto r : state.reads) ctrl_in = t.concat(ctrl_in, r);
  LstmState<S> ctrl = lstm_step(t, ctrl_in, state.controller, p.controller);

  NtmState<S> next;
  next.controller = ctrl;

  // Addressing uses the step-entry memory for every head.
  std::vector<HeadEmission<S>> write_emits;
  for (int h = 0; h < c.read_heads; ++h) {
    auto e = emit_head(t, ctrl.h, p.head_W[h], p.head_b[h], c.width, false);
    next.read_w.push_back(address_head(t, e, state.read_w[h], state.memory));
  }
  for (int h = 0; h < c.write_heads; ++h) {
    int idx = c.read_heads + h;
    auto e =
        emit_head(t, ctrl.h, p.head_W[idx], p.head_b[idx], c.width, true);
    next.write_w.push_back(
        address_head(t, e, state.write_w[h], state.memory));
    write_emits.push_back(e);
  }

  // Reads see the step-entry memory.
  for (int h = 0; h < c.read_heads; ++h)
    next.reads.push_back(read_memory(t, state.memory, next.read_w[h]));

  // Writes applied sequentially in head order.
  Var<S> mem = state.memory;
  for (int h = 0; h < c.write_heads; ++h)
    mem = write_memory(t, mem, next.write_w[h], write_emits[h].erase,
                       write_emits[h].add);
  next.memory = mem;

  auto out_in = ctrl.h;
  for (auto r : next.reads) out_in = t.concat(out_in, r);
  auto out = t.add(t.matmul(t.param(p.out_W), out_in), t.param(p.out_b));
  return NtmStepResult<S>{out, next};
}

}  // namespace ntmdlg
