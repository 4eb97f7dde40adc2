#pragma once

// GRU cell (update/reset gates, reset applied to the previous state before
// concatenation) plus the LSTM cell used as the NTM controller. Gate inputs
// are concatenated state-first: [h_prev, x].

#include <cmath>
#include <stdexcept>
#include <vector>

#include "ntmdlg/tensor.hpp"

namespace ntmdlg {

template <class S>
struct GruParams {
  Param<S> Wz, Wr, Wh;
  Param<S> bz, br, bh;
  int hidden = 0;
  int input = 0;
  // Strict mode freezes biases at zero and keeps them out of the trainable
  // parameter set.
  bool use_bias = true;

  GruParams() = default;
  GruParams(const std::string& prefix, int hidden_dim, int input_dim,
            bool bias = true)
      : Wz(prefix + ".Wz", {hidden_dim, hidden_dim + input_dim}),
        Wr(prefix + ".Wr", {hidden_dim, hidden_dim + input_dim}),
        Wh(prefix + ".Wh", {hidden_dim, hidden_dim + input_dim}),
        bz(prefix + ".bz", {hidden_dim}),
        br(prefix + ".br", {hidden_dim}),
        bh(prefix + ".bh", {hidden_dim}),
        hidden(hidden_dim),
        input(input_dim),
        use_bias(bias) {}

  void init(Rng& rng) {
    double scale = 1.0 / std::sqrt(static_cast<double>(hidden + input));
    Wz.init_uniform(rng, scale);
    Wr.init_uniform(rng, scale);
    Wh.init_uniform(rng, scale);
  }

  void collect(std::vector<Param<S>*>& out) {
    out.push_back(&Wz);
    out.push_back(&Wr);
    out.push_back(&Wh);
    if (use_bias) {
      out.push_back(&bz);
      out.push_back(&br);
      out.push_back(&bh);
    }
  }
};

template <class S>
using Var = typename Tape<S>::Var;

template <class S>
Var<S> gru_step(Tape<S>& t, Var<S> x, Var<S> h_prev, GruParams<S>& p) {
  auto gate = [&](Param<S>& w, Param<S>& b, Var<S> in) {
    auto pre = t.matmul(t.param(w), in);
    if (p.use_bias) pre = t.add(pre, t.param(b));
    return pre;
  };
  auto hx = t.concat(h_prev, x);
  auto z = t.sigmoid(gate(p.Wz, p.bz, hx));
  auto r = t.sigmoid(gate(p.Wr, p.br, hx));
  auto rh = t.mul(r, h_prev);
  auto cand = t.tanh_(gate(p.Wh, p.bh, t.concat(rh, x)));
  auto keep = t.affine(z, S(-1), S(1));  // 1 - z
  return t.add(t.mul(keep, h_prev), t.mul(z, cand));
}

// Runs gru_step over a nonempty sequence; returns every intermediate state
// so callers can tap segment boundaries.
template <class S>
std::vector<Var<S>> gru_sequence(Tape<S>& t, const std::vector<Var<S>>& xs,
                                 Var<S> h0, GruParams<S>& p) {
  if (xs.empty()) throw std::invalid_argument("gru_sequence: empty input");
  std::vector<Var<S>> states;
  states.reserve(xs.size());
  Var<S> h = h0;
  for (Var<S> x : xs) {
    h = gru_step(t, x, h, p);
    states.push_back(h);
  }
  return states;
}

template <class S>
struct LstmParams {
  Param<S> Wi, Wf, Wo, Wg;
  Param<S> bi, bf, bo, bg;
  int hidden = 0;
  int input = 0;

  LstmParams() = default;
  LstmParams(const std::string& prefix, int hidden_dim, int input_dim)
      : Wi(prefix + ".Wi", {hidden_dim, hidden_dim + input_dim}),
        Wf(prefix + ".Wf", {hidden_dim, hidden_dim + input_dim}),
        Wo(prefix + ".Wo", {hidden_dim, hidden_dim + input_dim}),
        Wg(prefix + ".Wg", {hidden_dim, hidden_dim + input_dim}),
        bi(prefix + ".bi", {hidden_dim}),
        bf(prefix + ".bf", {hidden_dim}),
        bo(prefix + ".bo", {hidden_dim}),
        bg(prefix + ".bg", {hidden_dim}),
        hidden(hidden_dim),
        input(input_dim) {}

  void init(Rng& rng) {
    double scale = 1.0 / std::sqrt(static_cast<double>(hidden + input));
    Wi.init_uniform(rng, scale);
    Wf.init_uniform(rng, scale);
    Wo.init_uniform(rng, scale);
    Wg.init_uniform(rng, scale);
    bf.fill(S(1));  // open forget gate at the start of training
  }

  void collect(std::vector<Param<S>*>& out) {
    out.push_back(&Wi);
    out.push_back(&Wf);
    out.push_back(&Wo);
    out.push_back(&Wg);
    out.push_back(&bi);
    out.push_back(&bf);
    out.push_back(&bo);
    out.push_back(&bg);
  }
};

template <class S>
struct LstmState {
  Var<S> c;
  Var<S> h;
};

template <class S>
LstmState<S> lstm_step(Tape<S>& t, Var<S> x, LstmState<S> state,
                       LstmParams<S>& p) {
  auto hx = t.concat(state.h, x);
  auto gate = [&](Param<S>& w, Param<S>& b) {
    return t.add(t.matmul(t.param(w), hx), t.param(b));
  };
  auto i = t.sigmoid(gate(p.Wi, p.bi));
  auto f = t.sigmoid(gate(p.Wf, p.bf));
  auto o = t.sigmoid(gate(p.Wo, p.bo));
  auto g = t.tanh_(gate(p.Wg, p.bg));
  auto c = t.add(t.mul(f, state.c), t.mul(i, g));
  auto h = t.mul(o, t.tanh_(c));
  return LstmState<S>{c, h};
}

}  // namespace ntmdlg
