#pragma once

#include <cstdint>
#include <initializer_list>
#include <vector>

namespace fdrl {

// Deterministic PRNG for the whole simulator. xoshiro256++ seeded through
// splitmix64, with hand-rolled uniform/normal transforms so that sequences
// are reproducible across platforms and standard-library versions.
//
// Streams are derived, never shared: derive_rng(master, {tags...}) gives an
// independent generator per (component, round, hospital, ...) key, so the
// execution order of concurrent tasks cannot change any result.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  uint64_t next_u64();

  // Uniform on [0, 1), 53-bit resolution.
  double uniform();

  // Uniform integer in [0, n); n > 0.
  int uniform_int(int n);

  // Standard normal via Box-Muller. Each call consumes two uniforms.
  double normal();
  double normal(double mean, double stddev);

  std::vector<double> normal_vector(int len, double stddev);

  // Bernoulli(p).
  bool bernoulli(double p);

  // Fisher-Yates shuffle of an index vector.
  void shuffle(std::vector<int>& v);

 private:
  uint64_t s_[4];
};

// Stable stream derivation: hashes the master seed with a list of tags.
uint64_t derive_seed(uint64_t master, std::initializer_list<uint64_t> tags);
Rng derive_rng(uint64_t master, std::initializer_list<uint64_t> tags);

// Small string hash used for tagging streams and fingerprinting artifacts.
uint64_t fnv1a64(const void* data, size_t len);
uint64_t fnv1a64(const char* str);

}  // namespace fdrl
