#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>

#include "cp2/error.hpp"

namespace cp2 {

// splitmix64 finalizer, used for seed expansion and stream derivation.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// xoshiro256** generator. Hand-rolled so that the produced sequence (and
// therefore every augmentation, mask and weight draw) is stable across
// standard libraries; std::*_distribution is implementation-defined.
class Rng {
 public:
  Rng() : Rng(0) {}

  explicit Rng(std::uint64_t seed) : root_seed_(seed) {
    std::uint64_t z = seed;
    for (auto& s : state_) s = z = mix64(z);
  }

  std::uint64_t next() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n), unbiased by rejection.
  std::uint64_t uniform_int(std::uint64_t n) {
    if (n == 0) throw InvalidInput("uniform_int: n must be positive");
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do {
      x = next();
    } while (x >= limit);
    return x % n;
  }

  int uniform_int(int lo, int hi_inclusive) {
    if (hi_inclusive < lo) throw InvalidInput("uniform_int: empty range");
    return lo + static_cast<int>(
                    uniform_int(static_cast<std::uint64_t>(hi_inclusive - lo) + 1));
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Standard normal, Box-Muller without state carry-over.
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Child stream derived from the root seed and a tag path. Independent of
  // how many draws the parent has made, so worker streams stay reproducible.
  Rng child(std::uint64_t tag) const { return Rng(mix64(root_seed_ ^ mix64(tag))); }

  Rng child(std::uint64_t tag_a, std::uint64_t tag_b) const {
    return child(tag_a).child(tag_b);
  }

  Rng child(std::uint64_t a, std::uint64_t b, std::uint64_t c) const {
    return child(a).child(b).child(c);
  }

  std::uint64_t root_seed() const { return root_seed_; }

  std::string serialize() const {
    std::ostringstream os;
    os << std::hex << root_seed_;
    for (auto s : state_) os << ':' << std::hex << s;
    return os.str();
  }

  static Rng deserialize(const std::string& text) {
    Rng r;
    std::istringstream is(text);
    char sep = 0;
    is >> std::hex >> r.root_seed_;
    for (auto& s : r.state_) {
      is >> sep >> std::hex >> s;
      if (sep != ':') throw InvalidInput("Rng::deserialize: malformed state string");
    }
    if (is.fail()) throw InvalidInput("Rng::deserialize: malformed state string");
    return r;
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t root_seed_ = 0;
  std::array<std::uint64_t, 4> state_{};
};

}  // namespace cp2
