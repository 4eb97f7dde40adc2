#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "ntmdlg/ntm.hpp"
#include "testutil.hpp"

using namespace ntmdlg;
using namespace ntmdlg::testutil;

namespace {

bool is_simplex(const std::vector<double>& w, double tol = 1e-9) {
  double sum = 0;
  for (double v : w) {
    if (v < -tol) return false;
    sum += v;
  }
  return std::abs(sum - 1.0) < tol;
}

NtmConfig tiny_config() {
  NtmConfig c;
  c.slots = 4;
  c.width = 5;
  c.read_heads = 1;
  c.write_heads = 1;
  c.ctrl_hidden = 6;
  c.input = 3;
  c.output = 5;
  return c;
}

}  // namespace

TEST_CASE("content addressing with zero strength is uniform") {
  Tape<double> t;
  auto mem = t.input({3, 2}, {1, 0, 0, 1, -1, 0});
  auto key = t.input({2}, {1, 0});
  auto beta = t.constant({1}, 0.0);
  auto w = t.val(content_address(t, key, beta, mem));
  for (double v : w) CHECK(v == doctest::Approx(1.0 / 3));
}

TEST_CASE("content addressing with a strong matching key is near one-hot") {
  Tape<double> t;
  // orthonormal rows; key equals row 2
  auto mem = t.input({4, 4}, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1});
  auto key = t.input({4}, {0, 0, 1, 0});
  auto beta = t.constant({1}, 100.0);
  auto w = t.val(content_address(t, key, beta, mem));
  CHECK(w[2] > 0.99);
  CHECK(is_simplex(w));
}

TEST_CASE("interpolation endpoints") {
  Tape<double> t;
  auto wc = t.input({3}, {0.7, 0.2, 0.1});
  auto wp = t.input({3}, {0.1, 0.1, 0.8});
  auto full = t.val(interpolate(t, wc, wp, t.constant({1}, 1.0)));
  CHECK(full == t.val(wc));
  auto none = t.val(interpolate(t, wc, wp, t.constant({1}, 0.0)));
  CHECK(none == t.val(wp));
  auto half = t.val(interpolate(t, wc, wp, t.constant({1}, 0.5)));
  CHECK(half[0] == doctest::Approx(0.4));
}

TEST_CASE("shift identity, rotation, and convolution oracle") {
  Tape<double> t;
  auto w = t.input({4}, {0.4, 0.3, 0.2, 0.1});
  auto keep = t.val(t.shift(w, t.input({3}, {0, 1, 0})));
  CHECK(keep == t.val(w));
  // all mass on offset +1 rotates the weighting forward one slot
  auto fwd = t.val(t.shift(w, t.input({3}, {0, 0, 1})));
  CHECK(fwd == std::vector<double>{0.1, 0.4, 0.3, 0.2});
  auto back = t.val(t.shift(w, t.input({3}, {1, 0, 0})));
  CHECK(back == std::vector<double>{0.3, 0.2, 0.1, 0.4});
  // general case against a hand-rolled circular convolution
  Rng rng(211);
  for (int rep = 0; rep < 100; ++rep) {
    auto wv = random_vector(rng, 5, 0, 1);
    auto sv = random_vector(rng, 3, 0, 1);
    Tape<double> t2;
    auto out =
        t2.val(t2.shift(t2.input({5}, wv), t2.input({3}, sv)));
    for (int i = 0; i < 5; ++i) {
      double want = 0;
      for (int j = -1; j <= 1; ++j) want += wv[((i - j) % 5 + 5) % 5] * sv[j + 1];
      CHECK(out[i] == doctest::Approx(want).epsilon(1e-12));
    }
  }
}

TEST_CASE("sharpen worked example and identity at gamma=1") {
  Tape<double> t;
  auto w = t.input({2}, {0.6, 0.4});
  auto sharp = t.val(t.sharpen(w, t.constant({1}, 2.0)));
  CHECK(sharp[0] == doctest::Approx(0.36 / 0.52));
  CHECK(sharp[1] == doctest::Approx(0.16 / 0.52));
  auto same = t.val(t.sharpen(w, t.constant({1}, 1.0)));
  CHECK(same[0] == doctest::Approx(0.6));
  CHECK(same[1] == doctest::Approx(0.4));
}

TEST_CASE("sharpen gradients match finite differences") {
  Rng rng(223);
  for (int rep = 0; rep < 20; ++rep) {
    Param<double> w("w", {4}), g("g", {1});
    w.value = random_vector(rng, 4, 0.05, 1.0);
    double z = std::accumulate(w.value.begin(), w.value.end(), 0.0);
    for (auto& v : w.value) v /= z;
    g.value = {rng.uniform(1.0, 3.0)};
    std::vector<double> probe = random_vector(rng, 4);
    auto loss_of = [&](const std::vector<double>& wv,
                       const std::vector<double>& gv) {
      Param<double> pw("w", {4}), pg("g", {1});
      pw.value = wv;
      pg.value = gv;
      Tape<double> t;
      auto y = t.sharpen(t.param(pw), t.param(pg));
      return t.scalar(t.sum(t.mul(y, t.input({4}, probe))));
    };
    Tape<double> t;
    auto y = t.sharpen(t.param(w), t.param(g));
    t.backward(t.sum(t.mul(y, t.input({4}, probe))));
    auto fdw = fd_gradient(
        [&](const std::vector<double>& x) { return loss_of(x, g.value); },
        w.value, 1e-6);
    auto fdg = fd_gradient(
        [&](const std::vector<double>& x) { return loss_of(w.value, x); },
        g.value, 1e-6);
    for (int i = 0; i < 4; ++i) CHECK(rel_err(w.grad[i], fdw[i]) < 1e-4);
    CHECK(rel_err(g.grad[0], fdg[0]) < 1e-4);
  }
}

TEST_CASE("read is a convex combination of memory rows") {
  Tape<double> t;
  auto mem = t.input({2, 3}, {1, 2, 3, 10, 20, 30});
  auto onehot = t.val(read_memory(t, mem, t.input({2}, {0, 1})));
  CHECK(onehot == std::vector<double>{10, 20, 30});
  auto mix = t.val(read_memory(t, mem, t.input({2}, {0.5, 0.5})));
  CHECK(mix == std::vector<double>{5.5, 11, 16.5});

  // with a simplex weighting every read channel lies in the rows' hull
  Rng rng(227);
  for (int rep = 0; rep < 100; ++rep) {
    auto mv = random_vector(rng, 12);
    auto wv = random_vector(rng, 4, 0, 1);
    double z = std::accumulate(wv.begin(), wv.end(), 0.0);
    for (auto& v : wv) v /= z;
    Tape<double> t2;
    auto r = t2.val(
        read_memory(t2, t2.input({4, 3}, mv), t2.input({4}, wv)));
    for (int c = 0; c < 3; ++c) {
      double lo = 1e18, hi = -1e18;
      for (int row = 0; row < 4; ++row) {
        lo = std::min(lo, mv[row * 3 + c]);
        hi = std::max(hi, mv[row * 3 + c]);
      }
      CHECK(r[c] >= lo - 1e-9);
      CHECK(r[c] <= hi + 1e-9);
    }
  }
}

TEST_CASE("write identity and full overwrite") {
  Tape<double> t;
  auto mem = t.input({2, 2}, {1, 2, 3, 4});
  // zero weighting leaves memory untouched
  auto same = t.val(write_memory(t, mem, t.input({2}, {0, 0}),
                                 t.constant({2}, 1.0), t.input({2}, {9, 9})));
  CHECK(same == t.val(mem));
  // one-hot weighting with erase=1 replaces that row with the add vector
  auto repl = t.val(write_memory(t, mem, t.input({2}, {0, 1}),
                                 t.constant({2}, 1.0), t.input({2}, {7, 8})));
  CHECK(repl == std::vector<double>{1, 2, 7, 8});
  // erase=0 accumulates the add vector
  auto acc = t.val(write_memory(t, mem, t.input({2}, {1, 0}),
                                t.constant({2}, 0.0), t.input({2}, {10, 10})));
  CHECK(acc == std::vector<double>{11, 12, 3, 4});
}

TEST_CASE("write then strong read recovers the written vector") {
  Rng rng(229);
  NtmConfig c = tiny_config();
  Tape<double> t;
  auto mem = t.input({c.slots, c.width},
                     random_vector(rng, c.slots * c.width, -0.1, 0.1));
  std::vector<double> payload = random_vector(rng, c.width);
  std::vector<double> onehot(c.slots, 0.0);
  onehot[2] = 1.0;
  auto written =
      write_memory(t, mem, t.input({c.slots}, onehot), t.constant({c.width}, 1.0),
                   t.input({c.width}, payload));
  auto got = t.val(read_memory(t, written, t.input({c.slots}, onehot)));
  for (int i = 0; i < c.width; ++i)
    CHECK(got[i] == doctest::Approx(payload[i]).epsilon(1e-12));
}

TEST_CASE("addressing keeps the weighting on the simplex at every stage") {
  Rng rng(233);
  for (int rep = 0; rep < 100; ++rep) {
    Tape<double> t;
    int slots = 5, width = 4;
    auto mem = t.input({slots, width}, random_vector(rng, slots * width));
    auto key = t.input({width}, random_vector(rng, width));
    auto beta = t.input({1}, {rng.uniform(0, 10)});
    auto wprev_raw = random_vector(rng, slots, 0, 1);
    double z = std::accumulate(wprev_raw.begin(), wprev_raw.end(), 0.0);
    for (auto& v : wprev_raw) v /= z;
    auto wprev = t.input({slots}, wprev_raw);
    auto gate = t.input({1}, {rng.uniform(0, 1)});
    auto sv = random_vector(rng, 3, 0, 1);
    double sz = sv[0] + sv[1] + sv[2];
    for (auto& v : sv) v /= sz;
    auto shift_w = t.input({3}, sv);
    auto gamma = t.input({1}, {rng.uniform(1, 5)});

    auto wc = content_address(t, key, beta, mem);
    CHECK(is_simplex(t.val(wc)));
    auto wg = interpolate(t, wc, wprev, gate);
    CHECK(is_simplex(t.val(wg)));
    auto ws = t.shift(wg, shift_w);
    CHECK(is_simplex(t.val(ws)));
    auto wf = t.sharpen(ws, gamma);
    CHECK(is_simplex(t.val(wf)));
  }
}

TEST_CASE("ntm step counts calls and validates the input width") {
  Rng rng(239);
  NtmConfig c = tiny_config();
  NtmParams<double> p("ntm", c);
  p.init(rng);
  Tape<double> t;
  auto st = ntm_initial_state(t, p);
  CHECK(p.step_calls == 0);
  auto r = ntm_step(t, t.input({c.input}, random_vector(rng, c.input)), st, p);
  CHECK(p.step_calls == 1);
  CHECK(t.shape(r.output) == Shape{c.output});
  ntm_step(t, t.input({c.input}, random_vector(rng, c.input)), r.state, p);
  CHECK(p.step_calls == 2);
  CHECK_THROWS_AS(
      ntm_step(t, t.input({c.input + 1}, random_vector(rng, c.input + 1)), st,
               p),
      std::invalid_argument);
}

TEST_CASE("ntm step keeps weightings on the simplex across steps") {
  Rng rng(241);
  NtmConfig c = tiny_config();
  c.read_heads = 2;
  c.write_heads = 2;
  NtmParams<double> p("ntm", c);
  p.init(rng);
  Tape<double> t;
  auto st = ntm_initial_state(t, p);
  for (int step = 0; step < 6; ++step) {
    auto r = ntm_step(t, t.input({c.input}, random_vector(rng, c.input)), st, p);
    st = r.state;
    for (auto w : st.read_w) CHECK(is_simplex(t.val(w)));
    for (auto w : st.write_w) CHECK(is_simplex(t.val(w)));
  }
}

TEST_CASE("ntm step is a pure function of tape state") {
  Rng rng(251);
  NtmConfig c = tiny_config();
  NtmParams<double> p("ntm", c);
  p.init(rng);
  auto x = random_vector(rng, c.input);
  auto run = [&] {
    Tape<double> t;
    auto st = ntm_initial_state(t, p);
    auto r1 = ntm_step(t, t.input({c.input}, x), st, p);
    auto r2 = ntm_step(t, t.input({c.input}, x), r1.state, p);
    return t.val(r2.output);
  };
  CHECK(run() == run());
}

TEST_CASE("ntm gradients match finite differences on a tiny machine") {
  Rng rng(257);
  NtmConfig c = tiny_config();
  NtmParams<double> p("ntm", c);
  p.init(rng);
  std::vector<std::vector<double>> xs = {random_vector(rng, c.input),
                                         random_vector(rng, c.input)};
  auto loss_with = [&](NtmParams<double>& q) {
    Tape<double> t;
    auto st = ntm_initial_state(t, q);
    Var<double> out;
    for (auto& x : xs) {
      auto r = ntm_step(t, t.input({c.input}, x), st, q);
      st = r.state;
      out = r.output;
    }
    return t.scalar(t.sum(t.mul(out, out)));
  };
  {
    Tape<double> t;
    auto st = ntm_initial_state(t, p);
    Var<double> out;
    for (auto& x : xs) {
      auto r = ntm_step(t, t.input({c.input}, x), st, p);
      st = r.state;
      out = r.output;
    }
    t.backward(t.sum(t.mul(out, out)));
  }
  std::vector<Param<double>*> params;
  p.collect(params);
  for (Param<double>* pp : params) {
    auto fd = fd_gradient(
        [&](const std::vector<double>& v) {
          NtmParams<double> q = p;
          std::vector<Param<double>*> qs;
          q.collect(qs);
          for (std::size_t k = 0; k < params.size(); ++k)
            if (params[k] == pp) qs[k]->value = v;
          return loss_with(q);
        },
        pp->value);
    for (std::size_t i = 0; i < fd.size(); ++i)
      CHECK(rel_err(pp->grad[i], fd[i]) < 1e-4);
  }
}
