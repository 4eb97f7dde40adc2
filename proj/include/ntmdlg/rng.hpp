#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace ntmdlg {

// Deterministic RNG used for parameter init, shuffling and sampling.
// State serializes to a text blob so checkpoints can resume bit-exactly.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : eng_(seed) {}

  double uniform(double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    return d(eng_);
  }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    std::uniform_int_distribution<std::uint64_t> d(0, n - 1);
    return d(eng_);
  }

  bool coin() { return below(2) == 1; }

  std::string state() const {
    std::ostringstream os;
    os << eng_;
    return os.str();
  }

  void set_state(const std::string& s) {
    std::istringstream is(s);
    is >> eng_;
  }

  std::mt19937_64& engine() { return eng_; }

 private:
  std::mt19937_64 eng_;
};

// Stable 95/5 train/validation split by conversation index.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline bool is_validation_index(std::uint64_t index) {
  return splitmix64(index) % 20 == 0;
}

}  // namespace ntmdlg
