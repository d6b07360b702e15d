#include "fdrl/federation.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "fdrl/selection.hpp"

namespace fdrl {

std::string to_string(AggregationBackend backend) {
  switch (backend) {
    case AggregationBackend::plaintext: return "plaintext";
    case AggregationBackend::he: return "he";
    case AggregationBackend::masked: return "masked";
  }
  throw std::logic_error("unknown backend");
}

AggregationBackend backend_from_string(const std::string& s) {
  if (s == "plaintext") return AggregationBackend::plaintext;
  if (s == "he") return AggregationBackend::he;
  if (s == "masked") return AggregationBackend::masked;
  throw std::invalid_argument("unknown aggregation backend: " + s);
}

void FederationConfig::validate() const {
  if (num_hospitals < 1) throw std::invalid_argument("config: num_hospitals must be >= 1");
  if (rounds < 0) throw std::invalid_argument("config: rounds must be >= 0");
  if (local_epochs < 1) throw std::invalid_argument("config: local_epochs must be >= 1");
  if (learning_rate <= 0) throw std::invalid_argument("config: learning_rate must be > 0");
  if (proximal_lambda < 0) throw std::invalid_argument("config: proximal_lambda must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
  if (temperature <= 0) throw std::invalid_argument("config: temperature must be > 0");
  if (heterogeneity < 0 || heterogeneity > 1)
    throw std::invalid_argument("config: heterogeneity outside [0,1]");
  if (samples_per_hospital < 1)
    throw std::invalid_argument("config: samples_per_hospital must be >= 1");
  if (backend == AggregationBackend::plaintext && !test_profile)
    throw std::invalid_argument("config: plaintext backend is only permitted in the test profile");
}

namespace {

constexpr uint64_t kTagDataset = 0x41;
constexpr uint64_t kTagKeygen = 0x42;
constexpr uint64_t kTagShuffle = 0x43;
constexpr uint64_t kTagNoise = 0x44;
constexpr uint64_t kTagEncrypt = 0x45;
constexpr uint64_t kTagEval = 0x46;
constexpr uint64_t kTagSelect = 0x47;
constexpr uint64_t kTagProbe = 0x48;
constexpr uint64_t kTagThreshold = 0x49;
constexpr uint64_t kTagCentral = 0x4a;

std::string fmt_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", x);
  return buf;
}

// Plaintext submission wire format "fdrl-pt-1" (test profile only): a
// length-prefixed JSON header, then little-endian doubles.
std::vector<uint8_t> serialize_plain_update(std::span<const double> values, int64_t sample_count,
                                            int hospital_id) {
  nlohmann::json header;
  header["schema"] = "fdrl-pt-1";
  header["hospital_id"] = hospital_id;
  header["sample_count"] = sample_count;
  const std::string head = header.dump();
  std::vector<uint8_t> out;
  const uint32_t len = static_cast<uint32_t>(head.size());
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>((len >> (8 * i)) & 0xff));
  out.insert(out.end(), head.begin(), head.end());
  const auto* raw = reinterpret_cast<const uint8_t*>(values.data());
  out.insert(out.end(), raw, raw + values.size() * sizeof(double));
  return out;
}

struct PlainUpdateWire {
  std::vector<double> values;
  int64_t sample_count = 0;
  int hospital_id = 0;
};

PlainUpdateWire parse_plain_update(std::span<const uint8_t> bytes) {
  if (bytes.size() < 4) throw std::runtime_error("wire: truncated plain update");
  uint32_t len = 0;
  for (int i = 0; i < 4; ++i) len |= static_cast<uint32_t>(bytes[static_cast<size_t>(i)]) << (8 * i);
  if (4 + len > bytes.size()) throw std::runtime_error("wire: truncated plain header");
  nlohmann::json header =
      nlohmann::json::parse(bytes.begin() + 4, bytes.begin() + 4 + static_cast<long>(len));
  if (header.value("schema", "") != "fdrl-pt-1")
    throw std::runtime_error("wire: unexpected schema");
  PlainUpdateWire wire;
  wire.hospital_id = header.at("hospital_id").get<int>();
  wire.sample_count = header.at("sample_count").get<int64_t>();
  const size_t payload = bytes.size() - 4 - len;
  if (payload % sizeof(double) != 0) throw std::runtime_error("wire: bad plain payload size");
  wire.values.resize(payload / sizeof(double));
  std::memcpy(wire.values.data(), bytes.data() + 4 + len, payload);
  return wire;
}

}  // namespace

FederationContext make_federation_context(const FederationConfig& config, const EnvParams& env) {
  config.validate();
  env.validate();

  FederationContext ctx;
  ctx.config = config;
  ctx.env = env;
  ctx.profiles = make_hospital_profiles(config.num_hospitals, config.samples_per_hospital,
                                        config.heterogeneity, env.state_dim);
  ctx.datasets.reserve(static_cast<size_t>(config.num_hospitals));
  for (const auto& profile : ctx.profiles) {
    const uint64_t ds_seed = derive_seed(config.master_seed, {kTagDataset});
    ctx.datasets.push_back(generate_dataset(profile, env, ds_seed, config.behavior_epsilon));
  }
  if (config.backend == AggregationBackend::he)
    ctx.keys = paillier_keygen(config.key_bits, derive_seed(config.master_seed, {kTagKeygen}));
  return ctx;
}

RoundState initial_round_state(const FederationContext& ctx) {
  RoundState state;
  state.round_index = 0;
  state.global_params = PolicyParams::zeros(ctx.env.action_count, ctx.env.state_dim);
  state.local_params.assign(static_cast<size_t>(ctx.config.num_hospitals), state.global_params);
  state.ledgers.assign(static_cast<size_t>(ctx.config.num_hospitals), PrivacyLedger{});
  return state;
}

PolicyParams hospital_local_training(const PolicyParams& received_global, const Dataset& dataset,
                                     const FederationContext& ctx, int round, int hospital) {
  const FederationConfig& cfg = ctx.config;
  const uint64_t r = static_cast<uint64_t>(round);
  const uint64_t h = static_cast<uint64_t>(hospital);
  Rng shuffle_rng = derive_rng(cfg.master_seed, {kTagShuffle, r, h});
  Rng noise_rng = derive_rng(cfg.master_seed, {kTagNoise, r, h});

  PolicyParams theta = received_global;
  std::vector<int> indices(dataset.transitions.size());
  for (size_t i = 0; i < indices.size(); ++i) indices[i] = static_cast<int>(i);

  for (int epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    shuffle_rng.shuffle(indices);
    for (size_t start = 0; start < indices.size(); start += static_cast<size_t>(cfg.batch_size)) {
      const size_t end = std::min(indices.size(), start + static_cast<size_t>(cfg.batch_size));
      TrainBatch batch;
      batch.temperature = cfg.temperature;
      batch.transitions.reserve(end - start);
      for (size_t k = start; k < end; ++k)
        batch.transitions.push_back(&dataset.transitions[static_cast<size_t>(indices[k])]);

      LossGradient lg = loss_and_gradient(theta, batch, received_global, cfg.proximal_lambda);
      std::vector<double> grad = clip(lg.gradient, cfg.privacy.clip_norm);
      if (cfg.privacy.mode == NoiseMode::gradient_noise)
        grad = add_gaussian_noise(grad, cfg.privacy.sigma, noise_rng);
      theta = local_update(theta, grad, cfg.learning_rate, cfg.proximal_lambda, received_global);
    }
  }
  if (cfg.privacy.mode == NoiseMode::parameter_noise) {
    const std::vector<double> noisy =
        add_gaussian_noise(theta.flatten(), cfg.privacy.sigma, noise_rng);
    theta = PolicyParams::from_flat(noisy, theta.action_count(), theta.state_dim());
  }
  return theta;
}

RoundState run_round(const RoundState& state, const FederationContext& ctx) {
  const FederationConfig& cfg = ctx.config;
  const int n_hosp = cfg.num_hospitals;
  const int round = state.round_index;
  const uint64_t r = static_cast<uint64_t>(round);

  RoundState next = state;

  // Server -> hospitals: the global model, wire-encoded even in-process.
  const std::vector<uint8_t> broadcast = checkpoint_bytes(state.global_params);
  next.transcript.push_back({Message::Kind::global_broadcast, round, -1, broadcast});
  const PolicyParams received = checkpoint_from_bytes(broadcast);

  // Local training, independent streams per hospital.
  std::vector<PolicyParams> locals;
  locals.reserve(static_cast<size_t>(n_hosp));
  for (int i = 0; i < n_hosp; ++i)
    locals.push_back(hospital_local_training(received, ctx.datasets[static_cast<size_t>(i)], ctx,
                                             round, i));

  // The shared object is either the full parameters or the delta to the
  // received global (ablation switch); FedAvg commutes with the shift.
  const std::vector<double> global_flat = received.flatten();
  std::vector<std::vector<double>> shares(static_cast<size_t>(n_hosp));
  for (int i = 0; i < n_hosp; ++i) {
    shares[static_cast<size_t>(i)] = locals[static_cast<size_t>(i)].flatten();
    if (cfg.share == ShareMode::gradients)
      for (size_t j = 0; j < shares[static_cast<size_t>(i)].size(); ++j)
        shares[static_cast<size_t>(i)][j] -= global_flat[j];
  }

  int64_t total_samples = 0;
  for (const auto& ds : ctx.datasets) total_samples += static_cast<int64_t>(ds.transitions.size());

  std::vector<double> aggregate;
  switch (cfg.backend) {
    case AggregationBackend::plaintext: {
      std::vector<PlainUpdateWire> received_updates;
      for (int i = 0; i < n_hosp; ++i) {
        const int64_t n_i = static_cast<int64_t>(ctx.datasets[static_cast<size_t>(i)].transitions.size());
        const std::vector<uint8_t> bytes =
            serialize_plain_update(shares[static_cast<size_t>(i)], n_i, i);
        next.transcript.push_back({Message::Kind::plaintext_update, round, i, bytes});
        received_updates.push_back(parse_plain_update(bytes));
      }
      aggregate.assign(shares.front().size(), 0.0);
      for (const auto& u : received_updates)
        for (size_t j = 0; j < aggregate.size(); ++j)
          aggregate[j] += static_cast<double>(u.sample_count) * u.values[j];
      for (auto& x : aggregate) x /= static_cast<double>(total_samples);
      break;
    }
    case AggregationBackend::he: {
      if (!ctx.keys.has_value()) throw std::runtime_error("run_round: missing HE keypair");
      std::vector<EncryptedUpdate> received_updates;
      for (int i = 0; i < n_hosp; ++i) {
        const int64_t n_i = static_cast<int64_t>(ctx.datasets[static_cast<size_t>(i)].transitions.size());
        Rng enc_rng = derive_rng(cfg.master_seed, {kTagEncrypt, r, static_cast<uint64_t>(i)});
        const EncryptedUpdate update = encrypt_update(
            ctx.keys->pk, ctx.codec, shares[static_cast<size_t>(i)], n_i, i, enc_rng);
        const std::vector<uint8_t> bytes = serialize_encrypted_update(update, ctx.keys->pk);
        next.transcript.push_back({Message::Kind::encrypted_update, round, i, bytes});
        received_updates.push_back(parse_encrypted_update(bytes, ctx.keys->pk));
      }
      const std::vector<Ciphertext> summed =
          homomorphic_weighted_sum(received_updates, ctx.keys->pk);
      aggregate = decrypt_weighted_average(ctx.keys->sk, ctx.codec, summed, total_samples);
      break;
    }
    case AggregationBackend::masked: {
      const PairwiseSeeds seeds = make_pairwise_seeds(cfg.master_seed, round, n_hosp);
      std::vector<MaskedUpdateWire> received_updates;
      for (int i = 0; i < n_hosp; ++i) {
        const int64_t n_i = static_cast<int64_t>(ctx.datasets[static_cast<size_t>(i)].transitions.size());
        std::vector<int64_t> encoded = ctx.codec.encode_vec(shares[static_cast<size_t>(i)]);
        for (auto& v : encoded) v *= n_i;  // sample-count weighting, exact in integers
        const std::vector<uint64_t> submission = masked_submission(encoded, i, seeds);
        const std::vector<uint8_t> bytes = serialize_masked_update(submission, n_i, i);
        next.transcript.push_back({Message::Kind::masked_update, round, i, bytes});
        received_updates.push_back(parse_masked_update(bytes));
      }
      std::vector<std::vector<uint64_t>> submissions;
      submissions.reserve(received_updates.size());
      for (auto& u : received_updates) submissions.push_back(std::move(u.masked));
      const std::vector<int64_t> summed = sum_masked_submissions(submissions, seeds);
      aggregate.resize(summed.size());
      for (size_t j = 0; j < summed.size(); ++j)
        aggregate[j] = static_cast<double>(summed[j]) /
                       (ctx.codec.scale() * static_cast<double>(total_samples));
      break;
    }
  }

  if (cfg.share == ShareMode::gradients)
    for (size_t j = 0; j < aggregate.size(); ++j) aggregate[j] += global_flat[j];

  next.global_params =
      PolicyParams::from_flat(aggregate, ctx.env.action_count, ctx.env.state_dim);
  next.local_params = std::move(locals);
  for (int i = 0; i < n_hosp; ++i)
    next.ledgers[static_cast<size_t>(i)] = accountant_update(
        state.ledgers[static_cast<size_t>(i)], cfg.privacy, cfg.local_epochs, round);

  next.transcript.push_back({Message::Kind::aggregate_result, round, -1,
                             checkpoint_bytes(next.global_params)});
  next.round_index = round + 1;
  return next;
}

Dataset pool_datasets(const std::vector<Dataset>& datasets) {
  if (datasets.empty()) throw std::invalid_argument("pool_datasets: no datasets");
  Dataset pooled;
  pooled.hospital_id = -1;
  pooled.behavior_epsilon = datasets.front().behavior_epsilon;
  pooled.episode_len = datasets.front().episode_len;
  for (const auto& ds : datasets) {
    if (ds.episode_len != pooled.episode_len)
      throw std::invalid_argument("pool_datasets: episode length mismatch");
    pooled.transitions.insert(pooled.transitions.end(), ds.transitions.begin(),
                              ds.transitions.end());
  }
  return pooled;
}

PolicyParams train_centralized(const FederationConfig& config, const EnvParams& env,
                               const Dataset& pooled, uint64_t seed) {
  PolicyParams theta = PolicyParams::zeros(env.action_count, env.state_dim);
  if (config.central_epochs == 0) return theta;

  Rng shuffle_rng = derive_rng(seed, {kTagCentral, 1});
  Rng noise_rng = derive_rng(seed, {kTagCentral, 2});
  std::vector<int> indices(pooled.transitions.size());
  for (size_t i = 0; i < indices.size(); ++i) indices[i] = static_cast<int>(i);

  for (int epoch = 0; epoch < config.central_epochs; ++epoch) {
    shuffle_rng.shuffle(indices);
    for (size_t start = 0; start < indices.size(); start += static_cast<size_t>(config.batch_size)) {
      const size_t end = std::min(indices.size(), start + static_cast<size_t>(config.batch_size));
      TrainBatch batch;
      batch.temperature = config.temperature;
      for (size_t k = start; k < end; ++k)
        batch.transitions.push_back(&pooled.transitions[static_cast<size_t>(indices[k])]);

      LossGradient lg = loss_and_gradient(theta, batch, theta, 0.0);
      std::vector<double> grad = clip(lg.gradient, config.privacy.clip_norm);
      if (config.privacy.mode != NoiseMode::off)
        grad = add_gaussian_noise(grad, config.central_sigma, noise_rng);
      theta = local_update(theta, grad, config.learning_rate, 0.0, theta);
    }
  }
  return theta;
}

namespace {

MetricsRow make_policy_row(int round, std::string scope, const PolicyParams& policy,
                           const FederationContext& ctx,
                           const std::vector<HospitalProfile>& eval_profiles, double threshold,
                           uint64_t eval_seed) {
  const std::vector<EvalEpisode> episodes = rollout_episodes(
      policy, ctx.env, eval_profiles, ctx.config.eval_episodes, eval_seed, /*greedy=*/true);
  MetricsRow row;
  row.round = round;
  row.scope = std::move(scope);
  row.a_task = task_accuracy(episodes);
  row.r_mit = risk_mitigation(episodes, ctx.env.risk_weights);
  const AdaptationRate adapt = adaptation_rate(episodes, threshold);
  row.alpha_adapt = adapt.switch_rate;
  row.alpha_adapt_simple = adapt.significant_change_rate;
  return row;
}

}  // namespace

TrainingResult run_training(const FederationContext& ctx, bool evaluate_metrics) {
  TrainingResult result;
  result.state = initial_round_state(ctx);

  ProbeSet probes;
  double threshold = 0.0;
  if (evaluate_metrics) {
    probes = ProbeSet::make(ctx.env, ctx.config.probe_count,
                            derive_seed(ctx.config.master_seed, {kTagProbe}));
    threshold = calibrate_adaptation_threshold(
        ctx.env, derive_seed(ctx.config.master_seed, {kTagThreshold}));
  }

  for (int k = 0; k < ctx.config.rounds; ++k) {
    try {
      result.state = run_round(result.state, ctx);
    } catch (const std::exception& e) {
      throw std::runtime_error("round " + std::to_string(k) + ": " + e.what());
    }

    if (!evaluate_metrics) continue;
    const uint64_t eval_seed = derive_seed(ctx.config.master_seed, {kTagEval, static_cast<uint64_t>(k)});

    double max_epsilon = 0.0;
    for (int i = 0; i < ctx.config.num_hospitals; ++i) {
      MetricsRow row = make_policy_row(
          k, std::to_string(i), result.state.local_params[static_cast<size_t>(i)], ctx,
          {ctx.profiles[static_cast<size_t>(i)]}, threshold,
          derive_seed(eval_seed, {static_cast<uint64_t>(i)}));
      row.d_kl = policy_kl(result.state.local_params[static_cast<size_t>(i)],
                           result.state.global_params, probes);
      row.epsilon = result.state.ledgers[static_cast<size_t>(i)].epsilon_total;
      max_epsilon = std::max(max_epsilon, row.epsilon);
      result.log.rows.push_back(std::move(row));
    }

    MetricsRow global_row =
        make_policy_row(k, "global", result.state.global_params, ctx, ctx.profiles, threshold,
                        derive_seed(eval_seed, {fnv1a64("global")}));
    global_row.d_kl = average_policy_divergence(result.state.local_params,
                                                result.state.global_params, probes);
    global_row.epsilon = max_epsilon;
    result.log.rows.push_back(std::move(global_row));

    // Meta policy selection over self-reported scores: hospitals evaluate
    // locally, the server only ranks.
    PolicyRegistry registry;
    for (int i = 0; i < ctx.config.num_hospitals; ++i)
      registry.entries.push_back(
          {i, result.state.local_params[static_cast<size_t>(i)], "", std::nullopt, -1});
    registry.entries.push_back(
        {ctx.config.num_hospitals, result.state.global_params, "", std::nullopt, -1});
    registry.global_policy_id = ctx.config.num_hospitals;
    registry = evaluate_registry(registry, ctx.env, ctx.config.eval_episodes, ctx.env.discount,
                                 derive_seed(ctx.config.master_seed, {kTagSelect, static_cast<uint64_t>(k)}),
                                 k);
    result.selected_policy_per_round.push_back(select_policy(registry, SelectionContext{}));
  }
  return result;
}

std::string metrics_log_to_csv(const MetricsLog& log) {
  std::ostringstream ss;
  ss << "# schema: fdrl-metrics-1\n";
  ss << "round,hospital_id,a_task,r_mit,alpha_adapt,alpha_adapt_simple,plr,d_kl,epsilon,ope\n";
  for (const auto& row : log.rows) {
    ss << row.round << "," << row.scope << "," << fmt_double(row.a_task) << ","
       << fmt_double(row.r_mit) << ",";
    if (row.alpha_adapt.has_value()) ss << fmt_double(*row.alpha_adapt);
    ss << "," << fmt_double(row.alpha_adapt_simple) << ",";
    if (row.plr.has_value()) ss << fmt_double(*row.plr);
    ss << "," << fmt_double(row.d_kl) << "," << fmt_double(row.epsilon) << ",";
    if (row.ope.has_value()) ss << fmt_double(*row.ope);
    ss << "\n";
  }
  return ss.str();
}

int transcript_plaintext_matches(const std::vector<Message>& transcript,
                                 const std::vector<std::vector<double>>& plain_params,
                                 const FixedPointCodec& codec) {
  // Every fixed-point encoding (and raw double) of a submitted component,
  // compared against the values the aggregator can actually read.
  std::vector<int64_t> encoded;
  std::vector<double> raw;
  for (const auto& params : plain_params)
    for (double x : params) {
      encoded.push_back(codec.encode(x));
      raw.push_back(x);
    }

  int matches = 0;
  for (const auto& msg : transcript) {
    switch (msg.kind) {
      case Message::Kind::plaintext_update: {
        const PlainUpdateWire wire = parse_plain_update(msg.payload);
        for (double v : wire.values)
          for (double x : raw)
            if (v == x) ++matches;
        break;
      }
      case Message::Kind::masked_update: {
        const MaskedUpdateWire wire = parse_masked_update(msg.payload);
        for (uint64_t w : wire.masked)
          for (int64_t v : encoded)
            if (w == static_cast<uint64_t>(v)) ++matches;
        break;
      }
      case Message::Kind::encrypted_update: {
        // Ciphertexts live mod n^2; a match against a small encoded component
        // would mean the value escaped encryption.
        size_t pos = 0;
        const auto& bytes = msg.payload;
        auto get_u32 = [&](size_t& p) {
          uint32_t v = 0;
          for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(bytes[p + static_cast<size_t>(i)]) << (8 * i);
          p += 4;
          return v;
        };
        const uint32_t head_len = get_u32(pos);
        pos += head_len;
        const uint32_t count = get_u32(pos);
        for (uint32_t c = 0; c < count; ++c) {
          const uint32_t len = get_u32(pos);
          mpz_class z;
          if (len > 0) mpz_import(z.get_mpz_t(), len, 1, 1, 1, 0, bytes.data() + pos);
          pos += len;
          for (int64_t v : encoded)
            if (v >= 0 && z == static_cast<long>(v)) ++matches;
        }
        break;
      }
      default:
        break;
    }
  }
  return matches;
}

}  // namespace fdrl
