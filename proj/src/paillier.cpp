#include "fdrl/paillier.hpp"

#include <random>
#include <stdexcept>
#include <string>

namespace fdrl {

namespace {

// Random integer with exactly `bits` bits (top bit set), from our PRNG.
mpz_class random_bits(int bits, Rng& rng) {
  mpz_class x = 0;
  const int words = (bits + 63) / 64;
  for (int w = 0; w < words; ++w) {
    x <<= 64;
    x += mpz_class(static_cast<unsigned long>(rng.next_u64()));
  }
  // Trim to the requested width and force the top bit.
  mpz_class mask = 1;
  mask <<= bits;
  mask -= 1;
  x &= mask;
  mpz_class top = 1;
  top <<= (bits - 1);
  x |= top;
  return x;
}

mpz_class next_prime_at_least(const mpz_class& start) {
  mpz_class p;
  mpz_nextprime(p.get_mpz_t(), start.get_mpz_t());
  return p;
}

}  // namespace

uint64_t PaillierPublicKey::fingerprint() const {
  const std::string digits = n.get_str(16);
  return fnv1a64(digits.data(), digits.size());
}

PaillierKeyPair paillier_keygen(int key_bits, std::optional<uint64_t> seed) {
  if (key_bits != 512 && key_bits != 1024 && key_bits != 2048)
    throw std::invalid_argument("paillier_keygen: key_bits must be 512, 1024 or 2048");

  uint64_t seed_value;
  if (seed.has_value()) {
    seed_value = *seed;
  } else {
    std::random_device rd;
    seed_value = (static_cast<uint64_t>(rd()) << 32) ^ rd();
  }
  Rng rng = derive_rng(seed_value, {fnv1a64("paillier-keygen")});

  const int half_bits = key_bits / 2;
  for (int attempt = 0; attempt < 64; ++attempt) {
    mpz_class p = next_prime_at_least(random_bits(half_bits, rng));
    mpz_class q = next_prime_at_least(random_bits(half_bits, rng));
    if (p == q) continue;
    mpz_class n = p * q;
    // nextprime can overshoot the requested width; retry if it did.
    if (mpz_sizeinbase(n.get_mpz_t(), 2) < static_cast<size_t>(key_bits)) continue;
    mpz_class phi = (p - 1) * (q - 1);
    mpz_class g;
    mpz_gcd(g.get_mpz_t(), n.get_mpz_t(), phi.get_mpz_t());
    if (g != 1) continue;

    PaillierKeyPair kp;
    kp.pk.n = n;
    kp.pk.n_squared = n * n;
    kp.pk.key_bits = key_bits;
    mpz_lcm(kp.sk.lambda.get_mpz_t(), mpz_class(p - 1).get_mpz_t(),
            mpz_class(q - 1).get_mpz_t());
    // With g = n+1, L(g^lambda mod n^2) = lambda mod n, so mu = lambda^{-1} mod n.
    if (mpz_invert(kp.sk.mu.get_mpz_t(), kp.sk.lambda.get_mpz_t(), n.get_mpz_t()) == 0)
      continue;
    kp.sk.n = n;
    kp.sk.n_squared = kp.pk.n_squared;
    return kp;
  }
  throw std::runtime_error("paillier_keygen: prime generation failed");
}

Ciphertext paillier_encrypt(const PaillierPublicKey& pk, const mpz_class& m, Rng& rng) {
  if (m < 0 || m >= pk.n) throw std::out_of_range("paillier_encrypt: plaintext outside [0, n)");

  // Random r in [1, n) with gcd(r, n) = 1.
  mpz_class r;
  do {
    r = random_bits(pk.key_bits, rng) % pk.n;
  } while (r == 0 || mpz_class(gcd(r, pk.n)) != 1);

  // c = (1 + m*n) * r^n mod n^2
  mpz_class gm = (1 + m * pk.n) % pk.n_squared;
  mpz_class rn;
  mpz_powm(rn.get_mpz_t(), r.get_mpz_t(), pk.n.get_mpz_t(), pk.n_squared.get_mpz_t());
  Ciphertext c;
  c.value = (gm * rn) % pk.n_squared;
  return c;
}

mpz_class paillier_decrypt(const PaillierSecretKey& sk, const Ciphertext& c) {
  if (c.value < 0 || c.value >= sk.n_squared)
    throw std::out_of_range("paillier_decrypt: ciphertext outside [0, n^2)");
  mpz_class u;
  mpz_powm(u.get_mpz_t(), c.value.get_mpz_t(), sk.lambda.get_mpz_t(), sk.n_squared.get_mpz_t());
  mpz_class l = (u - 1) / sk.n;
  return (l * sk.mu) % sk.n;
}

Ciphertext paillier_add(const PaillierPublicKey& pk, const Ciphertext& a, const Ciphertext& b) {
  Ciphertext out;
  out.value = (a.value * b.value) % pk.n_squared;
  return out;
}

Ciphertext paillier_scale(const PaillierPublicKey& pk, const Ciphertext& c, const mpz_class& k) {
  if (k < 0) throw std::invalid_argument("paillier_scale: scalar must be non-negative");
  Ciphertext out;
  mpz_powm(out.value.get_mpz_t(), c.value.get_mpz_t(), k.get_mpz_t(), pk.n_squared.get_mpz_t());
  return out;
}

mpz_class signed_to_residue(int64_t v, const PaillierPublicKey& pk) {
  if (v >= 0) return mpz_class(static_cast<long>(v));
  return pk.n + mpz_class(static_cast<long>(v));
}

mpz_class residue_to_signed(const mpz_class& m, const mpz_class& n) {
  if (m * 2 > n) return m - n;
  return m;
}

}  // namespace fdrl
