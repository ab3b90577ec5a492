#ifndef QSATTN_COMMON_HPP
#define QSATTN_COMMON_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace qsattn {

using Index = std::int64_t;
using Shape = std::vector<Index>;

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape/alignment mismatches between operands.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid knob values (even window sizes, n > HW, bad config keys, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// NaN inputs, invariant violations, non-finite losses.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Exceeded memory budgets (global attention on oversized maps).
class ResourceError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

inline Index shape_numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << "]";
  return os.str();
}

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Deterministic RNG with a fixed algorithm (xoshiro256**), so seeded runs
// reproduce across standard libraries. Streams for independent purposes are
// derived by hashing tags into the seed, which keeps training-time randomness
// a pure function of (seed, epoch, step, tag) and lets checkpoint resume skip
// RNG state entirely.
class Rng {
 public:
  explicit Rng(uint64_t seed) {
    uint64_t sm = seed;
    for (auto& s : state_) s = splitmix64(sm);
  }

  static Rng derive(uint64_t seed, std::initializer_list<uint64_t> tags) {
    uint64_t sm = seed;
    uint64_t mixed = splitmix64(sm);
    for (uint64_t t : tags) {
      sm = mixed ^ (t + 0x9e3779b97f4a7c15ull);
      mixed = splitmix64(sm);
    }
    return Rng(mixed);
  }

  uint64_t next_u64() {
    auto rotl = [](uint64_t x, int k) { return (x << k) | (x >> (64 - k)); };
    const uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller, no cached second sample so the stream stays position-addressable.
  double normal() {
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // [0, n)
  Index uniform_index(Index n) { return static_cast<Index>(next_u64() % static_cast<uint64_t>(n)); }

  std::vector<Index> permutation(Index n) {
    std::vector<Index> p(static_cast<size_t>(n));
    std::iota(p.begin(), p.end(), Index(0));
    for (Index i = n - 1; i > 0; --i) std::swap(p[i], p[uniform_index(i + 1)]);
    return p;
  }

  std::vector<Index> sample_without_replacement(Index population, Index n) {
    if (n > population) throw ConfigError("sample_without_replacement: n exceeds population");
    std::vector<Index> p = permutation(population);
    p.resize(static_cast<size_t>(n));
    return p;
  }

 private:
  uint64_t state_[4];
};

}  // namespace qsattn

#endif  // QSATTN_COMMON_HPP
