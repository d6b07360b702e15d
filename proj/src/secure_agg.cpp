#include "fdrl/secure_agg.hpp"

#include <algorithm>
#include <cstring>
#include <stdexcept>

#include <json.hpp>

namespace fdrl {

namespace {

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

uint32_t get_u32(std::span<const uint8_t> bytes, size_t& pos) {
  if (pos + 4 > bytes.size()) throw std::runtime_error("wire: truncated u32");
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(bytes[pos + i]) << (8 * i);
  pos += 4;
  return v;
}

void put_u64(std::vector<uint8_t>& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

uint64_t get_u64(std::span<const uint8_t> bytes, size_t& pos) {
  if (pos + 8 > bytes.size()) throw std::runtime_error("wire: truncated u64");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(bytes[pos + i]) << (8 * i);
  pos += 8;
  return v;
}

std::vector<uint8_t> mpz_to_bytes(const mpz_class& z) {
  if (z == 0) return {};
  const size_t count = (mpz_sizeinbase(z.get_mpz_t(), 2) + 7) / 8;
  std::vector<uint8_t> buf(count);
  size_t written = 0;
  mpz_export(buf.data(), &written, 1, 1, 1, 0, z.get_mpz_t());
  buf.resize(written);
  return buf;
}

mpz_class mpz_from_bytes(std::span<const uint8_t> bytes) {
  mpz_class z;
  if (!bytes.empty()) mpz_import(z.get_mpz_t(), bytes.size(), 1, 1, 1, 0, bytes.data());
  return z;
}

}  // namespace

EncryptedUpdate encrypt_update(const PaillierPublicKey& pk, const FixedPointCodec& codec,
                               std::span<const double> flat_params, int64_t sample_count,
                               int hospital_id, Rng& rng) {
  if (sample_count <= 0) throw std::invalid_argument("encrypt_update: sample_count must be > 0");
  EncryptedUpdate update;
  update.sample_count = sample_count;
  update.hospital_id = hospital_id;
  update.ciphertexts.reserve(flat_params.size());
  for (double x : flat_params) {
    const mpz_class m = signed_to_residue(codec.encode(x), pk);
    update.ciphertexts.push_back(paillier_encrypt(pk, m, rng));
  }
  return update;
}

std::vector<Ciphertext> homomorphic_weighted_sum(const std::vector<EncryptedUpdate>& updates,
                                                 const PaillierPublicKey& pk) {
  if (updates.empty()) throw std::invalid_argument("homomorphic_weighted_sum: no updates");
  const size_t len = updates.front().ciphertexts.size();
  int64_t total = 0;
  for (const auto& u : updates) {
    if (u.ciphertexts.size() != len)
      throw std::invalid_argument("homomorphic_weighted_sum: vector length mismatch");
    total += u.sample_count;
  }
  if (total <= 0) throw std::invalid_argument("homomorphic_weighted_sum: total samples must be > 0");

  std::vector<Ciphertext> acc(len);
  for (size_t j = 0; j < len; ++j) {
    // Enc(0) with unit randomness as the multiplicative identity.
    acc[j].value = 1;
  }
  for (const auto& u : updates) {
    const mpz_class weight(static_cast<long>(u.sample_count));
    for (size_t j = 0; j < len; ++j)
      acc[j] = paillier_add(pk, acc[j], paillier_scale(pk, u.ciphertexts[j], weight));
  }
  return acc;
}

std::vector<double> decrypt_weighted_average(const PaillierSecretKey& sk,
                                             const FixedPointCodec& codec,
                                             const std::vector<Ciphertext>& summed,
                                             int64_t total_samples) {
  if (total_samples <= 0)
    throw std::invalid_argument("decrypt_weighted_average: total_samples must be > 0");
  std::vector<double> out(summed.size());
  for (size_t j = 0; j < summed.size(); ++j) {
    const mpz_class m = residue_to_signed(paillier_decrypt(sk, summed[j]), sk.n);
    // Desk-scale sums fit comfortably in a double; the division by the total
    // sample count happens here, in plaintext.
    out[j] = m.get_d() / (codec.scale() * static_cast<double>(total_samples));
  }
  return out;
}

PairwiseSeeds make_pairwise_seeds(uint64_t master_seed, int round, int num_nodes) {
  PairwiseSeeds seeds;
  seeds.seed.assign(static_cast<size_t>(num_nodes),
                    std::vector<uint64_t>(static_cast<size_t>(num_nodes), 0));
  for (int i = 0; i < num_nodes; ++i)
    for (int j = i + 1; j < num_nodes; ++j) {
      const uint64_t s = derive_seed(master_seed, {fnv1a64("pairmask"),
                                                   static_cast<uint64_t>(round),
                                                   static_cast<uint64_t>(i),
                                                   static_cast<uint64_t>(j)});
      seeds.seed[static_cast<size_t>(i)][static_cast<size_t>(j)] = s;
      seeds.seed[static_cast<size_t>(j)][static_cast<size_t>(i)] = s;
    }
  return seeds;
}

std::vector<uint64_t> masked_submission(std::span<const int64_t> encoded, int node,
                                        const PairwiseSeeds& seeds) {
  const int n = seeds.count();
  if (node < 0 || node >= n) throw std::out_of_range("masked_submission: node out of range");
  std::vector<uint64_t> out(encoded.size());
  for (size_t k = 0; k < encoded.size(); ++k) out[k] = static_cast<uint64_t>(encoded[k]);
  for (int j = 0; j < n; ++j) {
    if (j == node) continue;
    Rng mask_rng(seeds.seed[static_cast<size_t>(node)][static_cast<size_t>(j)]);
    if (j > node) {
      for (auto& x : out) x += mask_rng.next_u64();
    } else {
      for (auto& x : out) x -= mask_rng.next_u64();
    }
  }
  return out;
}

std::vector<int64_t> sum_masked_submissions(const std::vector<std::vector<uint64_t>>& submissions,
                                            const PairwiseSeeds& seeds) {
  if (static_cast<int>(submissions.size()) != seeds.count())
    throw std::runtime_error("sum_masked_submissions: participant dropped, aborting round");
  if (submissions.empty()) throw std::invalid_argument("sum_masked_submissions: no submissions");
  const size_t len = submissions.front().size();
  std::vector<uint64_t> acc(len, 0);
  for (const auto& sub : submissions) {
    if (sub.size() != len)
      throw std::invalid_argument("sum_masked_submissions: vector length mismatch");
    for (size_t k = 0; k < len; ++k) acc[k] += sub[k];
  }
  std::vector<int64_t> out(len);
  for (size_t k = 0; k < len; ++k) out[k] = static_cast<int64_t>(acc[k]);
  return out;
}

std::vector<int64_t> masked_aggregate(const std::vector<std::vector<int64_t>>& updates,
                                      const PairwiseSeeds& seeds) {
  if (static_cast<int>(updates.size()) != seeds.count())
    throw std::runtime_error("masked_aggregate: participant dropped, aborting round");
  std::vector<std::vector<uint64_t>> submissions;
  submissions.reserve(updates.size());
  for (size_t i = 0; i < updates.size(); ++i)
    submissions.push_back(masked_submission(updates[i], static_cast<int>(i), seeds));
  return sum_masked_submissions(submissions, seeds);
}

std::vector<uint8_t> serialize_encrypted_update(const EncryptedUpdate& update,
                                                const PaillierPublicKey& pk) {
  nlohmann::json header;
  header["schema"] = "fdrl-enc-1";
  header["hospital_id"] = update.hospital_id;
  header["sample_count"] = update.sample_count;
  header["key_fingerprint"] = pk.fingerprint();
  const std::string head = header.dump();

  std::vector<uint8_t> out;
  put_u32(out, static_cast<uint32_t>(head.size()));
  out.insert(out.end(), head.begin(), head.end());
  put_u32(out, static_cast<uint32_t>(update.ciphertexts.size()));
  for (const auto& c : update.ciphertexts) {
    const std::vector<uint8_t> bytes = mpz_to_bytes(c.value);
    put_u32(out, static_cast<uint32_t>(bytes.size()));
    out.insert(out.end(), bytes.begin(), bytes.end());
  }
  return out;
}

EncryptedUpdate parse_encrypted_update(std::span<const uint8_t> bytes,
                                       const PaillierPublicKey& pk) {
  size_t pos = 0;
  const uint32_t head_len = get_u32(bytes, pos);
  if (pos + head_len > bytes.size()) throw std::runtime_error("wire: truncated header");
  nlohmann::json header = nlohmann::json::parse(bytes.begin() + static_cast<long>(pos),
                                                bytes.begin() + static_cast<long>(pos + head_len));
  pos += head_len;
  if (header.value("schema", "") != "fdrl-enc-1")
    throw std::runtime_error("wire: unexpected schema");
  if (header.at("key_fingerprint").get<uint64_t>() != pk.fingerprint())
    throw std::runtime_error("wire: key fingerprint mismatch");

  EncryptedUpdate update;
  update.hospital_id = header.at("hospital_id").get<int>();
  update.sample_count = header.at("sample_count").get<int64_t>();
  const uint32_t count = get_u32(bytes, pos);
  update.ciphertexts.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t len = get_u32(bytes, pos);
    if (pos + len > bytes.size()) throw std::runtime_error("wire: truncated ciphertext");
    Ciphertext c;
    c.value = mpz_from_bytes(bytes.subspan(pos, len));
    pos += len;
    update.ciphertexts.push_back(std::move(c));
  }
  return update;
}

std::vector<uint8_t> serialize_masked_update(std::span<const uint64_t> masked,
                                             int64_t sample_count, int hospital_id) {
  nlohmann::json header;
  header["schema"] = "fdrl-msk-1";
  header["hospital_id"] = hospital_id;
  header["sample_count"] = sample_count;
  const std::string head = header.dump();

  std::vector<uint8_t> out;
  put_u32(out, static_cast<uint32_t>(head.size()));
  out.insert(out.end(), head.begin(), head.end());
  put_u32(out, static_cast<uint32_t>(masked.size()));
  for (uint64_t w : masked) put_u64(out, w);
  return out;
}

MaskedUpdateWire parse_masked_update(std::span<const uint8_t> bytes) {
  size_t pos = 0;
  const uint32_t head_len = get_u32(bytes, pos);
  if (pos + head_len > bytes.size()) throw std::runtime_error("wire: truncated header");
  nlohmann::json header = nlohmann::json::parse(bytes.begin() + static_cast<long>(pos),
                                                bytes.begin() + static_cast<long>(pos + head_len));
  pos += head_len;
  if (header.value("schema", "") != "fdrl-msk-1")
    throw std::runtime_error("wire: unexpected schema");

  MaskedUpdateWire wire;
  wire.hospital_id = header.at("hospital_id").get<int>();
  wire.sample_count = header.at("sample_count").get<int64_t>();
  const uint32_t count = get_u32(bytes, pos);
  wire.masked.reserve(count);
  for (uint32_t i = 0; i < count; ++i) wire.masked.push_back(get_u64(bytes, pos));
  return wire;
}

}  // namespace fdrl
