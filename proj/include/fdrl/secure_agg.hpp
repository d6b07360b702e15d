#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fdrl/fixed_point.hpp"
#include "fdrl/paillier.hpp"
#include "fdrl/rng.hpp"

namespace fdrl {

// One hospital's encrypted submission: the fixed-point-encoded parameter
// vector, element-wise Paillier-encrypted, plus its sample count.
struct EncryptedUpdate {
  std::vector<Ciphertext> ciphertexts;
  int64_t sample_count = 0;
  int hospital_id = 0;
};

// Encodes and encrypts a flat parameter vector.
EncryptedUpdate encrypt_update(const PaillierPublicKey& pk, const FixedPointCodec& codec,
                               std::span<const double> flat_params, int64_t sample_count,
                               int hospital_id, Rng& rng);

// Component-wise homomorphic evaluation of sum_i n_i * theta_i: each update is
// raised to its sample count and the results multiplied together. The division
// by sum_i n_i happens after decryption, in plaintext. Throws on mismatched
// vector lengths or a non-positive total sample count.
std::vector<Ciphertext> homomorphic_weighted_sum(const std::vector<EncryptedUpdate>& updates,
                                                 const PaillierPublicKey& pk);

// Decrypts the summed ciphertexts and returns the weighted average
// (sum n_i theta_i) / total_samples as doubles.
std::vector<double> decrypt_weighted_average(const PaillierSecretKey& sk,
                                             const FixedPointCodec& codec,
                                             const std::vector<Ciphertext>& summed,
                                             int64_t total_samples);

// --- Pairwise masking -------------------------------------------------------
//
// Nodes share one seed per unordered pair. Node i submits, in uint64
// wraparound arithmetic,
//
//     x_i + sum_{j>i} mask(i,j) - sum_{j<i} mask(j,i)
//
// so the masks cancel exactly in the sum and the aggregate equals sum_i x_i in
// the signed fixed-point domain. No dropout recovery: a missing submission
// aborts the round.

struct PairwiseSeeds {
  std::vector<std::vector<uint64_t>> seed;  // symmetric, seed[i][j] == seed[j][i]
  int count() const { return static_cast<int>(seed.size()); }
};

PairwiseSeeds make_pairwise_seeds(uint64_t master_seed, int round, int num_nodes);

// The masked vector node `node` submits for its encoded update.
std::vector<uint64_t> masked_submission(std::span<const int64_t> encoded, int node,
                                        const PairwiseSeeds& seeds);

// Sum of masked submissions, mapped back to signed integers. Throws if the
// number of submissions does not match the seed matrix (dropped participant).
std::vector<int64_t> sum_masked_submissions(const std::vector<std::vector<uint64_t>>& submissions,
                                            const PairwiseSeeds& seeds);

// Full protocol over already-encoded integer vectors: returns sum_i updates[i]
// exactly.
std::vector<int64_t> masked_aggregate(const std::vector<std::vector<int64_t>>& updates,
                                      const PairwiseSeeds& seeds);

// --- Wire formats ------------------------------------------------------------

// EncryptedUpdate wire format "fdrl-enc-1": a length-prefixed JSON header
// {schema, hospital_id, sample_count, key_fingerprint}, then a length-prefixed
// array of big-endian big integers.
std::vector<uint8_t> serialize_encrypted_update(const EncryptedUpdate& update,
                                                const PaillierPublicKey& pk);
EncryptedUpdate parse_encrypted_update(std::span<const uint8_t> bytes,
                                       const PaillierPublicKey& pk);

// Masked submission wire format "fdrl-msk-1": length-prefixed JSON header
// {schema, hospital_id, sample_count}, then little-endian uint64 words.
std::vector<uint8_t> serialize_masked_update(std::span<const uint64_t> masked,
                                             int64_t sample_count, int hospital_id);
struct MaskedUpdateWire {
  std::vector<uint64_t> masked;
  int64_t sample_count = 0;
  int hospital_id = 0;
};
MaskedUpdateWire parse_masked_update(std::span<const uint8_t> bytes);

}  // namespace fdrl
