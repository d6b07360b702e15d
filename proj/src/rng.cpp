#include "fdrl/rng.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace fdrl {

namespace {

// splitmix64 (Vigna). Used for seeding and for stream derivation.
uint64_t splitmix64(uint64_t& x) {
  x += 0x9e3779b97f4a7c15ULL;
  uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

Rng::Rng(uint64_t seed) {
  uint64_t x = seed;
  for (auto& s : s_) s = splitmix64(x);
}

uint64_t Rng::next_u64() {
  // xoshiro256++
  const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
  const uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

int Rng::uniform_int(int n) {
  if (n <= 0) throw std::invalid_argument("uniform_int: n must be positive");
  // Rejection sampling to avoid modulo bias.
  const uint64_t bound = static_cast<uint64_t>(n);
  const uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  uint64_t r;
  do {
    r = next_u64();
  } while (r >= limit);
  return static_cast<int>(r % bound);
}

double Rng::normal() {
  // Box-Muller, cosine branch only. u1 in (0,1] keeps the log finite.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

double Rng::normal(double mean, double stddev) { return mean + stddev * normal(); }

std::vector<double> Rng::normal_vector(int len, double stddev) {
  std::vector<double> v(static_cast<size_t>(len));
  for (auto& x : v) x = stddev * normal();
  return v;
}

bool Rng::bernoulli(double p) { return uniform() < p; }

void Rng::shuffle(std::vector<int>& v) {
  for (size_t i = v.size(); i > 1; --i) {
    const size_t j = static_cast<size_t>(uniform_int(static_cast<int>(i)));
    std::swap(v[i - 1], v[j]);
  }
}

uint64_t derive_seed(uint64_t master, std::initializer_list<uint64_t> tags) {
  uint64_t x = master ^ 0xd2b74407b1ce6e93ULL;
  uint64_t h = splitmix64(x);
  for (uint64_t t : tags) {
    x ^= t + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    h = splitmix64(x);
  }
  return h;
}

Rng derive_rng(uint64_t master, std::initializer_list<uint64_t> tags) {
  return Rng(derive_seed(master, tags));
}

uint64_t fnv1a64(const void* data, size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  uint64_t h = 0xcbf29ce484222325ULL;
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

uint64_t fnv1a64(const char* str) { return fnv1a64(str, std::strlen(str)); }

}  // namespace fdrl
