#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "ntmdlg/rng.hpp"
#include "ntmdlg/tensor.hpp"

namespace ntmdlg::testutil {

inline double rel_err(double analytic, double fd) {
  return std::abs(analytic - fd) /
         std::max({std::abs(analytic), std::abs(fd), 1e-8});
}

// Central finite differences of a scalar function over a flat input vector.
inline std::vector<double> fd_gradient(
    const std::function<double(const std::vector<double>&)>& f,
    std::vector<double> x, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double orig = x[i];
    x[i] = orig + h;
    double lp = f(x);
    x[i] = orig - h;
    double lm = f(x);
    x[i] = orig;
    g[i] = (lp - lm) / (2 * h);
  }
  return g;
}

inline std::vector<double> random_vector(Rng& rng, std::size_t n,
                                         double lo = -2, double hi = 2) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

}  // namespace ntmdlg::testutil
