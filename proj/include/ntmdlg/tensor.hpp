#pragma once

// Reverse-mode automatic differentiation over dense real tensors (rank 0..2).
// A Tape owns all intermediate nodes of one computation graph; model
// parameters live outside the tape as Param values and receive gradients
// when backward() runs. No implicit broadcasting: every shape change is an
// explicit op, so each backward rule stays small and testable.

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "ntmdlg/rng.hpp"

namespace ntmdlg {

using Shape = std::vector<int>;

inline std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string r = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) r += "x";
    r += std::to_string(s[i]);
  }
  return r + "]";
}

inline void check_shape(bool ok, const std::string& what, const Shape& a,
                        const Shape& b) {
  if (!ok) {
    throw std::invalid_argument("dimension error in " + what + ": " +
                                shape_str(a) + " vs " + shape_str(b));
  }
}

// A trainable tensor. Gradient is dense and shaped like the value.
template <class S>
struct Param {
  std::string name;
  Shape shape;
  std::vector<S> value;
  std::vector<S> grad;

  Param() = default;
  Param(std::string n, Shape sh)
      : name(std::move(n)), shape(std::move(sh)) {
    value.assign(numel(shape), S(0));
    grad.assign(numel(shape), S(0));
  }

  std::size_t size() const { return value.size(); }

  void fill(S v) { value.assign(value.size(), v); }

  // Uniform init in +-scale (scale defaults to 1/sqrt(fan_in) at call sites).
  void init_uniform(Rng& rng, double scale) {
    for (auto& v : value) v = static_cast<S>(rng.uniform(-scale, scale));
  }

  void zero_grad() { grad.assign(grad.size(), S(0)); }
};

template <class S>
class Tape {
 public:
  struct Var {
    int i = -1;
    explicit operator bool() const { return i >= 0; }
  };

  const Shape& shape(Var v) const { return nodes_[v.i].shape; }
  const std::vector<S>& val(Var v) const { return nodes_[v.i].val; }
  const std::vector<S>& grad_of(Var v) const { return nodes_[v.i].grad; }

  S scalar(Var v) const {
    if (nodes_[v.i].val.size() != 1)
      throw std::logic_error("scalar() on non-scalar node");
    return nodes_[v.i].val[0];
  }

  std::size_t node_count() const { return nodes_.size(); }

  Var input(Shape sh, std::vector<S> vals) {
    if (numel(sh) != vals.size())
      throw std::invalid_argument("input: shape/value count mismatch");
    return push(std::move(sh), std::move(vals), false);
  }

  Var constant(Shape sh, S fill_value) {
    std::vector<S> v(numel(sh), fill_value);
    return push(std::move(sh), std::move(v), false);
  }

  Var param(Param<S>& p) {
    auto it = leaves_.find(&p);
    if (it != leaves_.end()) return Var{it->second};
    Var v = push(p.shape, p.value, true);
    leaves_.emplace(&p, v.i);
    leaf_order_.push_back(&p);
    return v;
  }

  // --- elementwise -------------------------------------------------------

  Var add(Var a, Var b) { return ew(a, b, Ew::Add); }
  Var sub(Var a, Var b) { return ew(a, b, Ew::Sub); }
  Var mul(Var a, Var b) { return ew(a, b, Ew::Mul); }

  // c1 * x + c0, elementwise with constants.
  Var affine(Var x, S c1, S c0) {
    const auto& xv = nodes_[x.i].val;
    std::vector<S> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = c1 * xv[i] + c0;
    Var o = push(nodes_[x.i].shape, std::move(out), needs(x));
    if (needs(o)) {
      record([this, x, o, c1] {
        auto& xg = nodes_[x.i].grad;
        const auto& og = nodes_[o.i].grad;
        for (std::size_t i = 0; i < og.size(); ++i) xg[i] += c1 * og[i];
      });
    }
    return o;
  }

  // v scaled by a 1-element tensor s.
  Var scalev(Var v, Var s) {
    if (nodes_[s.i].val.size() != 1)
      throw std::invalid_argument("scalev: scale must have one element");
    const auto& vv = nodes_[v.i].val;
    S sv = nodes_[s.i].val[0];
    std::vector<S> out(vv.size());
    for (std::size_t i = 0; i < vv.size(); ++i) out[i] = vv[i] * sv;
    Var o = push(nodes_[v.i].shape, std::move(out), needs(v) || needs(s));
    if (needs(o)) {
      record([this, v, s, o, sv] {
        const auto& og = nodes_[o.i].grad;
        const auto& vv2 = nodes_[v.i].val;
        if (nodes_[v.i].need) {
          auto& vg = nodes_[v.i].grad;
          for (std::size_t i = 0; i < og.size(); ++i) vg[i] += sv * og[i];
        }
        if (nodes_[s.i].need) {
          S acc = 0;
          for (std::size_t i = 0; i < og.size(); ++i) acc += og[i] * vv2[i];
          nodes_[s.i].grad[0] += acc;
        }
      });
    }
    return o;
  }

  // --- linear algebra -----------------------------------------------------

  // a[m,k] * b[k,n] -> [m,n]; also a[m,k] * b[k] -> [m].
  Var matmul(Var a, Var b) {
    const Shape& sa = nodes_[a.i].shape;
    const Shape& sb = nodes_[b.i].shape;
    check_shape(sa.size() == 2 && (sb.size() == 1 || sb.size() == 2),
                "matmul rank", sa, sb);
    int m = sa[0], k = sa[1];
    bool vec = sb.size() == 1;
    int kb = vec ? sb[0] : sb[0];
    int n = vec ? 1 : sb[1];
    check_shape(k == kb, "matmul", sa, sb);
    const auto& av = nodes_[a.i].val;
    const auto& bv = nodes_[b.i].val;
    std::vector<S> out(static_cast<std::size_t>(m) * n, S(0));
    for (int i = 0; i < m; ++i)
      for (int p = 0; p < k; ++p) {
        S av_ip = av[i * k + p];
        for (int j = 0; j < n; ++j) out[i * n + j] += av_ip * bv[p * n + j];
      }
    Shape so = vec ? Shape{m} : Shape{m, n};
    Var o = push(std::move(so), std::move(out), needs(a) || needs(b));
    if (needs(o)) {
      record([this, a, b, o, m, k, n] {
        const auto& og = nodes_[o.i].grad;
        const auto& av2 = nodes_[a.i].val;
        const auto& bv2 = nodes_[b.i].val;
        if (nodes_[a.i].need) {
          auto& ag = nodes_[a.i].grad;
          for (int i = 0; i < m; ++i)
            for (int p = 0; p < k; ++p) {
              S acc = 0;
              for (int j = 0; j < n; ++j) acc += og[i * n + j] * bv2[p * n + j];
              ag[i * k + p] += acc;
            }
        }
        if (nodes_[b.i].need) {
          auto& bg = nodes_[b.i].grad;
          for (int p = 0; p < k; ++p)
            for (int j = 0; j < n; ++j) {
              S acc = 0;
              for (int i = 0; i < m; ++i) acc += av2[i * k + p] * og[i * n + j];
              bg[p * n + j] += acc;
            }
        }
      });
    }
    return o;
  }

  // v[m]^T * M[m,n] -> [n]  (weighted sum of rows).
  Var vecmat(Var v, Var m) {
    const Shape& sv = nodes_[v.i].shape;
    const Shape& sm = nodes_[m.i].shape;
    check_shape(sv.size() == 1 && sm.size() == 2 && sv[0] == sm[0], "vecmat",
                sv, sm);
    int rows = sm[0], cols = sm[1];
    const auto& vv = nodes_[v.i].val;
    const auto& mv = nodes_[m.i].val;
    std::vector<S> out(cols, S(0));
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) out[c] += vv[r] * mv[r * cols + c];
    Var o = push(Shape{cols}, std::move(out), needs(v) || needs(m));
    if (needs(o)) {
      record([this, v, m, o, rows, cols] {
        const auto& og = nodes_[o.i].grad;
        const auto& vv2 = nodes_[v.i].val;
        const auto& mv2 = nodes_[m.i].val;
        if (nodes_[v.i].need) {
          auto& vg = nodes_[v.i].grad;
          for (int r = 0; r < rows; ++r) {
            S acc = 0;
            for (int c = 0; c < cols; ++c) acc += og[c] * mv2[r * cols + c];
            vg[r] += acc;
          }
        }
        if (nodes_[m.i].need) {
          auto& mg = nodes_[m.i].grad;
          for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) mg[r * cols + c] += vv2[r] * og[c];
        }
      });
    }
    return o;
  }

  // u[m] outer v[n] -> [m,n].
  Var outer(Var u, Var v) {
    const Shape& su = nodes_[u.i].shape;
    const Shape& sv = nodes_[v.i].shape;
    check_shape(su.size() == 1 && sv.size() == 1, "outer", su, sv);
    int m = su[0], n = sv[0];
    const auto& uv = nodes_[u.i].val;
    const auto& vv = nodes_[v.i].val;
    std::vector<S> out(static_cast<std::size_t>(m) * n);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) out[i * n + j] = uv[i] * vv[j];
    Var o = push(Shape{m, n}, std::move(out), needs(u) || needs(v));
    if (needs(o)) {
      record([this, u, v, o, m, n] {
        const auto& og = nodes_[o.i].grad;
        const auto& uv2 = nodes_[u.i].val;
        const auto& vv2 = nodes_[v.i].val;
        if (nodes_[u.i].need) {
          auto& ug = nodes_[u.i].grad;
          for (int i = 0; i < m; ++i) {
            S acc = 0;
            for (int j = 0; j < n; ++j) acc += og[i * n + j] * vv2[j];
            ug[i] += acc;
          }
        }
        if (nodes_[v.i].need) {
          auto& vg = nodes_[v.i].grad;
          for (int j = 0; j < n; ++j) {
            S acc = 0;
            for (int i = 0; i < m; ++i) acc += og[i * n + j] * uv2[i];
            vg[j] += acc;
          }
        }
      });
    }
    return o;
  }

  // --- shape ops ----------------------------------------------------------

  Var broadcast_rows(Var v, int rows) {
    const Shape& sv = nodes_[v.i].shape;
    check_shape(sv.size() == 1 && rows >= 1, "broadcast_rows", sv,
                Shape{rows});
    int n = sv[0];
    const auto& vv = nodes_[v.i].val;
    std::vector<S> out(static_cast<std::size_t>(rows) * n);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < n; ++c) out[r * n + c] = vv[c];
    Var o = push(Shape{rows, n}, std::move(out), needs(v));
    if (needs(o)) {
      record([this, v, o, rows, n] {
        auto& vg = nodes_[v.i].grad;
        const auto& og = nodes_[o.i].grad;
        for (int r = 0; r < rows; ++r)
          for (int c = 0; c < n; ++c) vg[c] += og[r * n + c];
      });
    }
    return o;
  }

  // Last-axis concatenation; all other extents must match.
  Var concat(Var a, Var b) {
    const Shape& sa = nodes_[a.i].shape;
    const Shape& sb = nodes_[b.i].shape;
    check_shape(sa.size() == sb.size() && !sa.empty(), "concat rank", sa, sb);
    int rows = 1;
    if (sa.size() == 2) {
      check_shape(sa[0] == sb[0], "concat", sa, sb);
      rows = sa[0];
    }
    int p = sa.back(), q = sb.back();
    const auto& av = nodes_[a.i].val;
    const auto& bv = nodes_[b.i].val;
    std::vector<S> out(static_cast<std::size_t>(rows) * (p + q));
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < p; ++c) out[r * (p + q) + c] = av[r * p + c];
      for (int c = 0; c < q; ++c) out[r * (p + q) + p + c] = bv[r * q + c];
    }
    Shape so = sa;
    so.back() = p + q;
    Var o = push(std::move(so), std::move(out), needs(a) || needs(b));
    if (needs(o)) {
      record([this, a, b, o, rows, p, q] {
        const auto& og = nodes_[o.i].grad;
        if (nodes_[a.i].need) {
          auto& ag = nodes_[a.i].grad;
          for (int r = 0; r < rows; ++r)
            for (int c = 0; c < p; ++c) ag[r * p + c] += og[r * (p + q) + c];
        }
        if (nodes_[b.i].need) {
          auto& bg = nodes_[b.i].grad;
          for (int r = 0; r < rows; ++r)
            for (int c = 0; c < q; ++c)
              bg[r * q + c] += og[r * (p + q) + p + c];
        }
      });
    }
    return o;
  }

  // Contiguous slice of a rank-1 tensor.
  Var slice(Var v, int start, int len) {
    const Shape& sv = nodes_[v.i].shape;
    check_shape(sv.size() == 1 && start >= 0 && len >= 0 &&
                    start + len <= sv[0],
                "slice", sv, Shape{start, len});
    const auto& vv = nodes_[v.i].val;
    std::vector<S> out(vv.begin() + start, vv.begin() + start + len);
    Var o = push(Shape{len}, std::move(out), needs(v));
    if (needs(o)) {
      record([this, v, o, start, len] {
        auto& vg = nodes_[v.i].grad;
        const auto& og = nodes_[o.i].grad;
        for (int c = 0; c < len; ++c) vg[start + c] += og[c];
      });
    }
    return o;
  }

  // Row r of a rank-2 tensor (embedding lookup, memory slot access).
  Var row(Var m, int r) {
    const Shape& sm = nodes_[m.i].shape;
    check_shape(sm.size() == 2 && r >= 0 && r < sm[0], "row", sm, Shape{r});
    int cols = sm[1];
    const auto& mv = nodes_[m.i].val;
    std::vector<S> out(mv.begin() + static_cast<std::size_t>(r) * cols,
                       mv.begin() + static_cast<std::size_t>(r + 1) * cols);
    Var o = push(Shape{cols}, std::move(out), needs(m));
    if (needs(o)) {
      record([this, m, o, r, cols] {
        auto& mg = nodes_[m.i].grad;
        const auto& og = nodes_[o.i].grad;
        for (int c = 0; c < cols; ++c)
          mg[static_cast<std::size_t>(r) * cols + c] += og[c];
      });
    }
    return o;
  }

  // Assemble N one-element tensors into a rank-1 tensor.
  Var pack(const std::vector<Var>& parts) {
    std::vector<S> out;
    out.reserve(parts.size());
    bool need_any = false;
    for (Var p : parts) {
      if (nodes_[p.i].val.size() != 1)
        throw std::invalid_argument("pack: parts must have one element");
      out.push_back(nodes_[p.i].val[0]);
      need_any = need_any || needs(p);
    }
    Var o = push(Shape{static_cast<int>(parts.size())}, std::move(out),
                 need_any);
    if (needs(o)) {
      std::vector<int> idx;
      idx.reserve(parts.size());
      for (Var p : parts) idx.push_back(p.i);
      record([this, idx, o] {
        const auto& og = nodes_[o.i].grad;
        for (std::size_t c = 0; c < idx.size(); ++c)
          if (nodes_[idx[c]].need) nodes_[idx[c]].grad[0] += og[c];
      });
    }
    return o;
  }

  // --- nonlinearities -----------------------------------------------------

  Var sigmoid(Var x) {
    return unary(x, [](S v) -> S {
      if (v >= 0) return S(1) / (S(1) + std::exp(-v));
      S e = std::exp(v);
      return e / (S(1) + e);
    },
    [](S, S y) -> S { return y * (S(1) - y); });
  }

  Var tanh_(Var x) {
    return unary(x, [](S v) -> S { return std::tanh(v); },
                 [](S, S y) -> S { return S(1) - y * y; });
  }

  Var softplus(Var x) {
    return unary(x, [](S v) -> S {
      return std::max(v, S(0)) + std::log1p(std::exp(-std::abs(v)));
    },
    [](S v, S) -> S {
      if (v >= 0) return S(1) / (S(1) + std::exp(-v));
      S e = std::exp(v);
      return e / (S(1) + e);
    });
  }

  // Rank-1 softmax with max subtraction.
  Var softmax(Var x) {
    const Shape& sx = nodes_[x.i].shape;
    check_shape(sx.size() == 1, "softmax rank", sx, sx);
    const auto& xv = nodes_[x.i].val;
    std::vector<S> out(xv.size());
    S mx = xv[0];
    for (S v : xv) mx = std::max(mx, v);
    S z = 0;
    for (std::size_t i = 0; i < xv.size(); ++i) {
      out[i] = std::exp(xv[i] - mx);
      z += out[i];
    }
    for (auto& v : out) v /= z;
    Var o = push(sx, std::move(out), needs(x));
    if (needs(o)) {
      record([this, x, o] {
        const auto& y = nodes_[o.i].val;
        const auto& og = nodes_[o.i].grad;
        auto& xg = nodes_[x.i].grad;
        S dot = 0;
        for (std::size_t i = 0; i < y.size(); ++i) dot += og[i] * y[i];
        for (std::size_t i = 0; i < y.size(); ++i)
          xg[i] += y[i] * (og[i] - dot);
      });
    }
    return o;
  }

  // u.v / (|u||v| + eps), eps = 1e-8. Scalar output.
  Var cosine_similarity(Var u, Var v) {
    const Shape& su = nodes_[u.i].shape;
    const Shape& sv = nodes_[v.i].shape;
    check_shape(su.size() == 1 && su == sv, "cosine_similarity", su, sv);
    const auto& uv = nodes_[u.i].val;
    const auto& vv = nodes_[v.i].val;
    S dot = 0, nu = 0, nv = 0;
    for (std::size_t i = 0; i < uv.size(); ++i) {
      dot += uv[i] * vv[i];
      nu += uv[i] * uv[i];
      nv += vv[i] * vv[i];
    }
    nu = std::sqrt(nu);
    nv = std::sqrt(nv);
    const S eps = S(1e-8);
    S denom = nu * nv + eps;
    S c = dot / denom;
    Var o = push(Shape{}, std::vector<S>{c}, needs(u) || needs(v));
    if (needs(o)) {
      record([this, u, v, o, nu, nv, denom, c] {
        S g = nodes_[o.i].grad[0];
        const auto& uv2 = nodes_[u.i].val;
        const auto& vv2 = nodes_[v.i].val;
        const S tiny = S(1e-12);
        // d c / d u_i = v_i/denom - c * (|v| u_i / |u|) / denom
        if (nodes_[u.i].need) {
          auto& ug = nodes_[u.i].grad;
          S f = nv / (nu + tiny) * c / denom;
          for (std::size_t i = 0; i < uv2.size(); ++i)
            ug[i] += g * (vv2[i] / denom - f * uv2[i]);
        }
        if (nodes_[v.i].need) {
          auto& vg = nodes_[v.i].grad;
          S f = nu / (nv + tiny) * c / denom;
          for (std::size_t i = 0; i < vv2.size(); ++i)
            vg[i] += g * (uv2[i] / denom - f * vv2[i]);
        }
      });
    }
    return o;
  }

  // -log softmax(logits)[target], computed via log-sum-exp.
  Var cross_entropy(Var logits, int target) {
    const Shape& sl = nodes_[logits.i].shape;
    check_shape(sl.size() == 1, "cross_entropy rank", sl, sl);
    if (target < 0 || target >= sl[0])
      throw std::out_of_range("cross_entropy: target " +
                              std::to_string(target) + " out of range for " +
                              shape_str(sl));
    const auto& lv = nodes_[logits.i].val;
    S mx = lv[0];
    for (S v : lv) mx = std::max(mx, v);
    S z = 0;
    for (S v : lv) z += std::exp(v - mx);
    S lse = mx + std::log(z);
    S loss = lse - lv[target];
    Var o = push(Shape{}, std::vector<S>{loss}, needs(logits));
    if (needs(o)) {
      record([this, logits, o, target, mx, z] {
        S g = nodes_[o.i].grad[0];
        const auto& lv2 = nodes_[logits.i].val;
        auto& lg = nodes_[logits.i].grad;
        for (std::size_t i = 0; i < lv2.size(); ++i) {
          S p = std::exp(lv2[i] - mx) / z;
          lg[i] += g * (p - (static_cast<int>(i) == target ? S(1) : S(0)));
        }
      });
    }
    return o;
  }

  Var sum(Var x) {
    const auto& xv = nodes_[x.i].val;
    S acc = 0;
    for (S v : xv) acc += v;
    Var o = push(Shape{}, std::vector<S>{acc}, needs(x));
    if (needs(o)) {
      record([this, x, o] {
        S g = nodes_[o.i].grad[0];
        auto& xg = nodes_[x.i].grad;
        for (auto& v : xg) v += g;
      });
    }
    return o;
  }

  // --- NTM addressing primitives ------------------------------------------

  // Circular convolution over offsets {-1,0,+1}: out[i] = sum_j w[(i-j) mod N] s[j].
  Var shift(Var w, Var s) {
    const Shape& sw = nodes_[w.i].shape;
    const Shape& ss = nodes_[s.i].shape;
    check_shape(sw.size() == 1 && ss.size() == 1 && ss[0] == 3, "shift", sw,
                ss);
    int n = sw[0];
    const auto& wv = nodes_[w.i].val;
    const auto& sv = nodes_[s.i].val;
    std::vector<S> out(n, S(0));
    for (int i = 0; i < n; ++i)
      for (int j = -1; j <= 1; ++j)
        out[i] += wv[((i - j) % n + n) % n] * sv[j + 1];
    Var o = push(Shape{n}, std::move(out), needs(w) || needs(s));
    if (needs(o)) {
      record([this, w, s, o, n] {
        const auto& og = nodes_[o.i].grad;
        const auto& wv2 = nodes_[w.i].val;
        const auto& sv2 = nodes_[s.i].val;
        if (nodes_[w.i].need) {
          auto& wg = nodes_[w.i].grad;
          for (int i = 0; i < n; ++i)
            for (int j = -1; j <= 1; ++j)
              wg[((i - j) % n + n) % n] += og[i] * sv2[j + 1];
        }
        if (nodes_[s.i].need) {
          auto& sg = nodes_[s.i].grad;
          for (int i = 0; i < n; ++i)
            for (int j = -1; j <= 1; ++j)
              sg[j + 1] += og[i] * wv2[((i - j) % n + n) % n];
        }
      });
    }
    return o;
  }

  // w^gamma normalized; gamma is a 1-element tensor, gamma >= 1.
  Var sharpen(Var w, Var gamma) {
    const Shape& sw = nodes_[w.i].shape;
    check_shape(sw.size() == 1 && nodes_[gamma.i].val.size() == 1, "sharpen",
                sw, nodes_[gamma.i].shape);
    const auto& wv = nodes_[w.i].val;
    S gm = nodes_[gamma.i].val[0];
    int n = sw[0];
    std::vector<S> pw(n);
    S z = 0;
    for (int i = 0; i < n; ++i) {
      pw[i] = std::pow(wv[i], gm);
      z += pw[i];
    }
    std::vector<S> out(n);
    for (int i = 0; i < n; ++i) out[i] = pw[i] / z;
    Var o =
        push(Shape{n}, std::move(out), needs(w) || needs(gamma));
    if (needs(o)) {
      record([this, w, gamma, o, gm, z, n] {
        const auto& og = nodes_[o.i].grad;
        const auto& y = nodes_[o.i].val;
        const auto& wv2 = nodes_[w.i].val;
        S dot = 0;
        for (int i = 0; i < n; ++i) dot += og[i] * y[i];
        if (nodes_[w.i].need) {
          auto& wg = nodes_[w.i].grad;
          for (int j = 0; j < n; ++j) {
            S d = gm * std::pow(wv2[j], gm - S(1));
            wg[j] += d * (og[j] - dot) / z;
          }
        }
        if (nodes_[gamma.i].need) {
          // d y_i / d gamma = y_i (ln w_i - sum_k y_k ln w_k)
          const S tiny = S(1e-30);
          S mean_log = 0;
          for (int k = 0; k < n; ++k)
            mean_log += y[k] * std::log(wv2[k] + tiny);
          S acc = 0;
          for (int i = 0; i < n; ++i)
            acc += og[i] * y[i] * (std::log(wv2[i] + tiny) - mean_log);
          nodes_[gamma.i].grad[0] += acc;
        }
      });
    }
    return o;
  }

  // --- backward -----------------------------------------------------------

  // Seeds the scalar root with 1 and replays the tape in reverse. Node
  // gradients are reset first, so repeated calls from the same tape state
  // produce identical leaf gradients. Leaf Param.grad is assigned, not
  // accumulated, by each call.
  void backward(Var root) {
    if (nodes_[root.i].val.size() != 1)
      throw std::logic_error("backward: root must be scalar");
    for (auto& n : nodes_) {
      if (n.need) n.grad.assign(n.val.size(), S(0));
    }
    if (nodes_[root.i].need) nodes_[root.i].grad[0] = S(1);
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
    for (Param<S>* p : leaf_order_) {
      int idx = leaves_[p];
      p->grad = nodes_[idx].grad;
    }
  }

 private:
  struct Node {
    Shape shape;
    std::vector<S> val;
    std::vector<S> grad;
    bool need = false;
  };

  enum class Ew { Add, Sub, Mul };

  bool needs(Var v) const { return nodes_[v.i].need; }

  Var push(Shape sh, std::vector<S> vals, bool need) {
    Node n;
    n.shape = std::move(sh);
    n.val = std::move(vals);
    n.need = need;
    if (need) n.grad.assign(n.val.size(), S(0));
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size() - 1)};
  }

  void record(std::function<void()> fn) { records_.push_back(std::move(fn)); }

  Var ew(Var a, Var b, Ew op) {
    const Shape& sa = nodes_[a.i].shape;
    const Shape& sb = nodes_[b.i].shape;
    check_shape(sa == sb, "elementwise", sa, sb);
    const auto& av = nodes_[a.i].val;
    const auto& bv = nodes_[b.i].val;
    std::vector<S> out(av.size());
    switch (op) {
      case Ew::Add:
        for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
        break;
      case Ew::Sub:
        for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
        break;
      case Ew::Mul:
        for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
        break;
    }
    Var o = push(sa, std::move(out), needs(a) || needs(b));
    if (needs(o)) {
      record([this, a, b, o, op] {
        const auto& og = nodes_[o.i].grad;
        const auto& av2 = nodes_[a.i].val;
        const auto& bv2 = nodes_[b.i].val;
        if (nodes_[a.i].need) {
          auto& ag = nodes_[a.i].grad;
          switch (op) {
            case Ew::Add:
            case Ew::Sub:
              for (std::size_t i = 0; i < og.size(); ++i) ag[i] += og[i];
              break;
            case Ew::Mul:
              for (std::size_t i = 0; i < og.size(); ++i)
                ag[i] += og[i] * bv2[i];
              break;
          }
        }
        if (nodes_[b.i].need) {
          auto& bg = nodes_[b.i].grad;
          switch (op) {
            case Ew::Add:
              for (std::size_t i = 0; i < og.size(); ++i) bg[i] += og[i];
              break;
            case Ew::Sub:
              for (std::size_t i = 0; i < og.size(); ++i) bg[i] -= og[i];
              break;
            case Ew::Mul:
              for (std::size_t i = 0; i < og.size(); ++i)
                bg[i] += og[i] * av2[i];
              break;
          }
        }
      });
    }
    return o;
  }

  template <class F, class G>
  Var unary(Var x, F fwd, G dfn) {
    const auto& xv = nodes_[x.i].val;
    std::vector<S> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
    Var o = push(nodes_[x.i].shape, std::move(out), needs(x));
    if (needs(o)) {
      record([this, x, o, dfn] {
        const auto& og = nodes_[o.i].grad;
        const auto& xv2 = nodes_[x.i].val;
        const auto& yv = nodes_[o.i].val;
        auto& xg = nodes_[x.i].grad;
        for (std::size_t i = 0; i < og.size(); ++i)
          xg[i] += og[i] * dfn(xv2[i], yv[i]);
      });
    }
    return o;
  }

  std::vector<Node> nodes_;
  std::vector<std::function<void()>> records_;
  std::unordered_map<Param<S>*, int> leaves_;
  std::vector<Param<S>*> leaf_order_;
};

}  // namespace ntmdlg
