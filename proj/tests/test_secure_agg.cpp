#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cmath>

#include "fdrl/secure_agg.hpp"

using namespace fdrl;

TEST_CASE("fixed-point round trip error stays below 2^-scale_bits") {
  FixedPointCodec codec;
  Rng rng(5);
  for (int trial = 0; trial < 5000; ++trial) {
    const double x = rng.normal(0.0, std::pow(10.0, rng.uniform_int(5) - 2));
    if (!codec.in_range(x)) continue;
    const double back = codec.decode(codec.encode(x));
    CHECK(std::abs(back - x) <= std::ldexp(1.0, -codec.scale_bits));
  }
}

TEST_CASE("fixed-point saturates instead of wrapping") {
  FixedPointCodec codec;
  CHECK(codec.encode(1e9) == codec.encode(codec.clamp_limit));
  CHECK(codec.encode(-1e9) == codec.encode(-codec.clamp_limit));
  CHECK(codec.decode(codec.encode(1e9)) == doctest::Approx(codec.clamp_limit));
}

TEST_CASE("seeded keygen is deterministic; 512-bit completes quickly") {
  const auto start = std::chrono::steady_clock::now();
  const PaillierKeyPair a = paillier_keygen(512, 1);
  const auto elapsed = std::chrono::steady_clock::now() - start;
  CHECK(std::chrono::duration_cast<std::chrono::seconds>(elapsed).count() < 5);

  const PaillierKeyPair b = paillier_keygen(512, 1);
  CHECK(a.pk.n == b.pk.n);
  CHECK(a.sk.lambda == b.sk.lambda);
  CHECK(mpz_sizeinbase(a.pk.n.get_mpz_t(), 2) >= 512);

  const PaillierKeyPair c = paillier_keygen(512, 2);
  CHECK(a.pk.n != c.pk.n);
}

TEST_CASE("keygen rejects nonstandard sizes") {
  CHECK_THROWS_AS(paillier_keygen(100, 1), std::invalid_argument);
}

TEST_CASE("encrypt/decrypt round trip at boundary values") {
  const PaillierKeyPair kp = paillier_keygen(512, 3);
  Rng rng(10);
  for (const mpz_class& m : {mpz_class(0), mpz_class(1), mpz_class(kp.pk.n - 1)}) {
    const Ciphertext c = paillier_encrypt(kp.pk, m, rng);
    CHECK(paillier_decrypt(kp.sk, c) == m);
  }
  CHECK_THROWS_AS(paillier_encrypt(kp.pk, kp.pk.n, rng), std::out_of_range);
  CHECK_THROWS_AS(paillier_encrypt(kp.pk, mpz_class(-1), rng), std::out_of_range);
}

TEST_CASE("ciphertext product decrypts to the plaintext sum") {
  const PaillierKeyPair kp = paillier_keygen(512, 4);
  Rng rng(11);
  const Ciphertext c5 = paillier_encrypt(kp.pk, 5, rng);
  const Ciphertext c3 = paillier_encrypt(kp.pk, 3, rng);
  CHECK(paillier_decrypt(kp.sk, paillier_add(kp.pk, c5, c3)) == 8);

  // Scalar multiplication by exponentiation.
  CHECK(paillier_decrypt(kp.sk, paillier_scale(kp.pk, c5, 7)) == 35);
}

TEST_CASE("fresh randomness gives distinct ciphertexts, equal decryptions") {
  const PaillierKeyPair kp = paillier_keygen(512, 5);
  Rng rng(12);
  const Ciphertext a = paillier_encrypt(kp.pk, 42, rng);
  const Ciphertext b = paillier_encrypt(kp.pk, 42, rng);
  CHECK(a.value != b.value);
  CHECK(paillier_decrypt(kp.sk, a) == paillier_decrypt(kp.sk, b));
}

TEST_CASE("homomorphism over random vectors, exact in the encoded domain") {
  const PaillierKeyPair kp = paillier_keygen(512, 6);
  FixedPointCodec codec;
  Rng rng(13);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<int64_t> expected(4, 0);
    std::vector<EncryptedUpdate> updates;
    for (int i = 0; i < 3; ++i) {
      std::vector<double> params(4);
      for (auto& x : params) x = rng.normal(0.0, 2.0);
      const int64_t n_i = 1 + rng.uniform_int(200);
      updates.push_back(encrypt_update(kp.pk, codec, params, n_i, i, rng));
      for (size_t j = 0; j < params.size(); ++j)
        expected[j] += n_i * codec.encode(params[j]);
    }
    const std::vector<Ciphertext> summed = homomorphic_weighted_sum(updates, kp.pk);
    for (size_t j = 0; j < summed.size(); ++j) {
      const mpz_class m = residue_to_signed(paillier_decrypt(kp.sk, summed[j]), kp.sk.n);
      CHECK(m == expected[j]);
    }
  }
}

TEST_CASE("single update with n = 1 aggregates to itself") {
  const PaillierKeyPair kp = paillier_keygen(512, 7);
  FixedPointCodec codec;
  Rng rng(14);
  const std::vector<double> params{0.25, -1.5, 3.0};
  const EncryptedUpdate update = encrypt_update(kp.pk, codec, params, 1, 0, rng);
  const std::vector<Ciphertext> summed = homomorphic_weighted_sum({update}, kp.pk);
  const std::vector<double> avg = decrypt_weighted_average(kp.sk, codec, summed, 1);
  for (size_t j = 0; j < params.size(); ++j)
    CHECK(std::abs(avg[j] - params[j]) <= std::ldexp(1.0, -codec.scale_bits));
}

TEST_CASE("two equal-weight hospitals average (1,2) and (3,4) to (2,3)") {
  const PaillierKeyPair kp = paillier_keygen(512, 8);
  FixedPointCodec codec;
  Rng rng(15);
  const EncryptedUpdate u1 = encrypt_update(kp.pk, codec, std::vector<double>{1, 2}, 1, 0, rng);
  const EncryptedUpdate u2 = encrypt_update(kp.pk, codec, std::vector<double>{3, 4}, 1, 1, rng);
  const std::vector<double> avg =
      decrypt_weighted_average(kp.sk, codec, homomorphic_weighted_sum({u1, u2}, kp.pk), 2);
  CHECK(avg[0] == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(avg[1] == doctest::Approx(3.0).epsilon(1e-9));
}

TEST_CASE("weighted average matches the plaintext FedAvg oracle") {
  const PaillierKeyPair kp = paillier_keygen(512, 9);
  FixedPointCodec codec;
  Rng rng(16);
  std::vector<EncryptedUpdate> updates;
  std::vector<std::vector<double>> plains;
  std::vector<int64_t> counts{100, 40, 260};
  int64_t total = 0;
  for (int i = 0; i < 3; ++i) {
    std::vector<double> params(6);
    for (auto& x : params) x = rng.normal(0.0, 1.5);
    plains.push_back(params);
    updates.push_back(encrypt_update(kp.pk, codec, params, counts[static_cast<size_t>(i)], i, rng));
    total += counts[static_cast<size_t>(i)];
  }
  const std::vector<double> avg =
      decrypt_weighted_average(kp.sk, codec, homomorphic_weighted_sum(updates, kp.pk), total);
  for (size_t j = 0; j < avg.size(); ++j) {
    double oracle = 0;
    for (int i = 0; i < 3; ++i)
      oracle += static_cast<double>(counts[static_cast<size_t>(i)]) / total * plains[static_cast<size_t>(i)][j];
    CHECK(std::abs(avg[j] - oracle) <= std::ldexp(1.0, -12));
  }
}

TEST_CASE("mismatched vector lengths abort aggregation") {
  const PaillierKeyPair kp = paillier_keygen(512, 10);
  FixedPointCodec codec;
  Rng rng(17);
  const EncryptedUpdate u1 = encrypt_update(kp.pk, codec, std::vector<double>{1, 2}, 1, 0, rng);
  const EncryptedUpdate u2 = encrypt_update(kp.pk, codec, std::vector<double>{1, 2, 3}, 1, 1, rng);
  CHECK_THROWS_AS(homomorphic_weighted_sum({u1, u2}, kp.pk), std::invalid_argument);
}

TEST_CASE("masks cancel: opposite vectors sum to zero") {
  const PairwiseSeeds seeds = make_pairwise_seeds(99, 0, 2);
  const std::vector<int64_t> v{1000, -250, 7};
  std::vector<int64_t> neg(v.size());
  for (size_t i = 0; i < v.size(); ++i) neg[i] = -v[i];
  const std::vector<int64_t> sum = masked_aggregate({v, neg}, seeds);
  for (int64_t x : sum) CHECK(x == 0);
}

TEST_CASE("masked aggregate equals the plaintext sum exactly") {
  Rng rng(18);
  for (int trial = 0; trial < 20; ++trial) {
    const PairwiseSeeds seeds = make_pairwise_seeds(7, trial, 3);
    std::vector<std::vector<int64_t>> updates(3, std::vector<int64_t>(10));
    std::vector<int64_t> expected(10, 0);
    for (auto& u : updates)
      for (size_t j = 0; j < u.size(); ++j) {
        u[j] = static_cast<int64_t>(rng.next_u64() % (1ULL << 40)) - (1LL << 39);
        expected[j] += u[j];
      }
    const std::vector<int64_t> sum = masked_aggregate(updates, seeds);
    for (size_t j = 0; j < sum.size(); ++j) CHECK(sum[j] == expected[j]);
  }
}

TEST_CASE("a single masked submission does not reveal its input") {
  // Over many fresh mask seeds, a fixed input's masked words should match the
  // raw encoding only at chance level (i.e., never, for 64-bit words).
  const std::vector<int64_t> v{123456, -987654, 0, 42};
  int collisions = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const PairwiseSeeds seeds = make_pairwise_seeds(1234, trial, 3);
    const std::vector<uint64_t> sub = masked_submission(v, 0, seeds);
    for (size_t j = 0; j < v.size(); ++j)
      if (sub[j] == static_cast<uint64_t>(v[j])) ++collisions;
  }
  CHECK(collisions == 0);
}

TEST_CASE("dropped participant aborts the masked round") {
  const PairwiseSeeds seeds = make_pairwise_seeds(5, 0, 3);
  const std::vector<std::vector<int64_t>> two_updates{{1, 2}, {3, 4}};
  CHECK_THROWS_AS(masked_aggregate(two_updates, seeds), std::runtime_error);
}

TEST_CASE("encrypted update wire round trip") {
  const PaillierKeyPair kp = paillier_keygen(512, 11);
  FixedPointCodec codec;
  Rng rng(19);
  const std::vector<double> params{0.5, -0.25, 2.0, -1.0};
  const EncryptedUpdate update = encrypt_update(kp.pk, codec, params, 100, 2, rng);

  const std::vector<uint8_t> bytes = serialize_encrypted_update(update, kp.pk);
  const EncryptedUpdate back = parse_encrypted_update(bytes, kp.pk);
  CHECK(back.hospital_id == 2);
  CHECK(back.sample_count == 100);
  REQUIRE(back.ciphertexts.size() == update.ciphertexts.size());
  for (size_t j = 0; j < params.size(); ++j) {
    CHECK(back.ciphertexts[j].value == update.ciphertexts[j].value);
    const mpz_class m = residue_to_signed(paillier_decrypt(kp.sk, back.ciphertexts[j]), kp.sk.n);
    CHECK(m == codec.encode(params[j]));
  }
}

TEST_CASE("masked update wire round trip") {
  const std::vector<uint64_t> masked{1, 2, 0xffffffffffffffffULL, 42};
  const std::vector<uint8_t> bytes = serialize_masked_update(masked, 100, 1);
  const MaskedUpdateWire back = parse_masked_update(bytes);
  CHECK(back.hospital_id == 1);
  CHECK(back.sample_count == 100);
  REQUIRE(back.masked.size() == masked.size());
  for (size_t j = 0; j < masked.size(); ++j) CHECK(back.masked[j] == masked[j]);
}

namespace {

// Distribution of the top byte across all words/bytes of a transcript side.
std::vector<double> top_byte_histogram(const std::vector<std::vector<uint64_t>>& submissions) {
  std::vector<double> hist(256, 0.0);
  double total = 0;
  for (const auto& sub : submissions)
    for (uint64_t w : sub) {
      hist[static_cast<size_t>(w >> 56)] += 1.0;
      ++total;
    }
  for (auto& h : hist) h /= total;
  return hist;
}

}  // namespace

TEST_CASE("swapping two hospitals' inputs leaves the masked transcript statistics unchanged") {
  // The aggregator-visible words should look uniform regardless of whose
  // parameters sit underneath; swapping inputs must not shift the marginals.
  Rng rng(77);
  std::vector<int64_t> theta_a(64), theta_b(64);
  FixedPointCodec codec;
  for (size_t j = 0; j < theta_a.size(); ++j) {
    theta_a[j] = codec.encode(rng.normal(0.0, 2.0));
    theta_b[j] = codec.encode(rng.normal(5.0, 0.1));  // very different distribution
  }

  std::vector<std::vector<uint64_t>> original, swapped;
  for (int trial = 0; trial < 200; ++trial) {
    const PairwiseSeeds seeds = make_pairwise_seeds(31, trial, 2);
    original.push_back(masked_submission(theta_a, 0, seeds));
    original.push_back(masked_submission(theta_b, 1, seeds));
    swapped.push_back(masked_submission(theta_b, 0, seeds));
    swapped.push_back(masked_submission(theta_a, 1, seeds));
  }
  const std::vector<double> h_orig = top_byte_histogram(original);
  const std::vector<double> h_swap = top_byte_histogram(swapped);

  // Both marginals are near-uniform and indistinguishable from each other.
  double max_dev = 0, max_gap = 0;
  for (size_t b = 0; b < 256; ++b) {
    max_dev = std::max({max_dev, std::abs(h_orig[b] - 1.0 / 256), std::abs(h_swap[b] - 1.0 / 256)});
    max_gap = std::max(max_gap, std::abs(h_orig[b] - h_swap[b]));
  }
  // 25600 samples per side: binomial sd per bin ~ 0.00039; allow 5 sigma.
  CHECK(max_dev < 0.002);
  CHECK(max_gap < 0.002);
}

TEST_CASE("swapping plaintexts leaves ciphertext marginals unchanged") {
  const PaillierKeyPair kp = paillier_keygen(512, 13);
  FixedPointCodec codec;
  Rng rng(14);
  auto cipher_top_bytes = [&](double mean) {
    std::vector<double> hist(256, 0.0);
    double total = 0;
    for (int trial = 0; trial < 400; ++trial) {
      const mpz_class m = signed_to_residue(codec.encode(rng.normal(mean, 1.0)), kp.pk);
      const Ciphertext c = paillier_encrypt(kp.pk, m, rng);
      // Top byte of the fixed-width ciphertext representation.
      mpz_class shifted = c.value >> (2 * 512 - 8);
      hist[static_cast<size_t>(shifted.get_ui() & 0xff)] += 1.0;
      ++total;
    }
    for (auto& h : hist) h /= total;
    return hist;
  };
  const std::vector<double> h_a = cipher_top_bytes(0.0);
  const std::vector<double> h_b = cipher_top_bytes(100.0);
  // Coarse equality check at 400 draws per side: compare quartile masses.
  double qa = 0, qb = 0;
  for (size_t b = 0; b < 64; ++b) {
    qa += h_a[b];
    qb += h_b[b];
  }
  CHECK(std::abs(qa - qb) < 0.12);
}
