#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <gmpxx.h>

#include "fdrl/rng.hpp"

namespace fdrl {

// Paillier additive homomorphic encryption (g = n+1 variant).
//
//   encrypt:  c = (1 + m*n) * r^n  mod n^2        (m in [0, n), r coprime to n)
//   decrypt:  m = L(c^lambda mod n^2) * mu mod n  (L(u) = (u-1)/n)
//   add:      Enc(a) (*) Enc(b)   = Enc(a + b mod n)   via ciphertext product
//   scale:    Enc(a)^k            = Enc(k * a mod n)
//
// Key sizes of 512 bits are the test profile; the scheme is exercised for its
// arithmetic, not its concrete security level.
struct PaillierPublicKey {
  mpz_class n;
  mpz_class n_squared;
  int key_bits = 0;

  // Short identifier for wire headers; hash of the modulus digits.
  uint64_t fingerprint() const;
};

struct PaillierSecretKey {
  mpz_class lambda;  // lcm(p-1, q-1)
  mpz_class mu;      // lambda^{-1} mod n (g = n+1 simplification)
  mpz_class n;
  mpz_class n_squared;
};

struct PaillierKeyPair {
  PaillierPublicKey pk;
  PaillierSecretKey sk;
};

struct Ciphertext {
  mpz_class value;  // in [0, n^2)
};

// Generates a keypair. key_bits must be one of {512, 1024, 2048}. A provided
// seed makes generation deterministic (test profile); otherwise system entropy
// is used. Throws std::runtime_error if prime search fails.
PaillierKeyPair paillier_keygen(int key_bits, std::optional<uint64_t> seed = std::nullopt);

// Randomized encryption of m in [0, n); throws std::out_of_range otherwise.
Ciphertext paillier_encrypt(const PaillierPublicKey& pk, const mpz_class& m, Rng& rng);

mpz_class paillier_decrypt(const PaillierSecretKey& sk, const Ciphertext& c);

// Homomorphic sum and scalar multiple of plaintexts.
Ciphertext paillier_add(const PaillierPublicKey& pk, const Ciphertext& a, const Ciphertext& b);
Ciphertext paillier_scale(const PaillierPublicKey& pk, const Ciphertext& c, const mpz_class& k);

// Offset encoding of signed fixed-point integers into [0, n): negatives map
// to n + v. to_signed inverts, treating residues above n/2 as negative.
mpz_class signed_to_residue(int64_t v, const PaillierPublicKey& pk);
mpz_class residue_to_signed(const mpz_class& m, const mpz_class& n);

}  // namespace fdrl
