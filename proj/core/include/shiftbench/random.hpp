#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

namespace shiftbench {

// Seeded generator with distribution code written out here instead of the
// <random> distributions, whose output differs between standard library
// implementations. The engine itself (mt19937_64) is fully specified.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal();
  double normal(double mean, double sigma) { return mean + sigma * normal(); }
  double gamma(double shape);
  double beta(double a, double b);

  // Uniform integer in [0, n).
  std::size_t index(std::size_t n);

  void shuffle(std::vector<std::size_t>& items);

  // Independent stream derived from this generator's seed material.
  Rng fork(std::uint64_t stream);

 private:
  std::mt19937_64 engine_;
};

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace shiftbench
