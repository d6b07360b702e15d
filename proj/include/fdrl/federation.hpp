#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fdrl/env.hpp"
#include "fdrl/metrics.hpp"
#include "fdrl/paillier.hpp"
#include "fdrl/policy.hpp"
#include "fdrl/privacy.hpp"
#include "fdrl/secure_agg.hpp"

namespace fdrl {

enum class AggregationBackend { plaintext, he, masked };
enum class ShareMode { params, gradients };

std::string to_string(AggregationBackend backend);
AggregationBackend backend_from_string(const std::string& s);

struct FederationConfig {
  int num_hospitals = 3;
  int rounds = 50;
  int local_epochs = 5;
  double learning_rate = 0.05;
  double proximal_lambda = 0.1;
  int batch_size = 20;
  double temperature = 0.5;  // advantage weighting tau
  AggregationBackend backend = AggregationBackend::he;
  ShareMode share = ShareMode::params;
  PrivacyConfig privacy;
  double heterogeneity = 0.5;
  int samples_per_hospital = 100;
  double behavior_epsilon = 0.2;
  uint64_t master_seed = 1;
  int key_bits = 512;
  int central_epochs = 15;
  double central_sigma = 0.1;
  int eval_episodes = 20;
  int probe_count = 200;
  // The plaintext backend bypasses the privacy machinery; it exists for
  // equivalence tests and internal estimators only.
  bool test_profile = false;

  void validate() const;
};

// Simulated network message. Submissions are stored wire-encoded exactly as
// the aggregator sees them; the in-process exchange still round-trips through
// the serialization formats.
struct Message {
  enum class Kind {
    global_broadcast,
    encrypted_update,
    masked_update,
    plaintext_update,
    aggregate_result
  };
  Kind kind;
  int round = 0;
  int hospital_id = -1;  // -1 = server
  std::vector<uint8_t> payload;
};

struct RoundState {
  int round_index = 0;
  PolicyParams global_params;
  std::vector<PolicyParams> local_params;
  std::vector<PrivacyLedger> ledgers;
  std::vector<Message> transcript;
};

struct FederationContext {
  FederationConfig config;
  EnvParams env;
  std::vector<HospitalProfile> profiles;
  std::vector<Dataset> datasets;
  FixedPointCodec codec;
  std::optional<PaillierKeyPair> keys;  // present for the he backend
};

// Generates hospital profiles, datasets and (for the he backend) the keypair,
// all derived from config.master_seed.
FederationContext make_federation_context(const FederationConfig& config, const EnvParams& env);

RoundState initial_round_state(const FederationContext& ctx);

// One hospital's local phase: receive the broadcast global, run local_epochs
// of minibatch steps (gradient -> clip -> noise -> proximal update). Pure given
// the streams derived from (master_seed, round, hospital), so hospitals can be
// processed in any order.
PolicyParams hospital_local_training(const PolicyParams& received_global, const Dataset& dataset,
                                     const FederationContext& ctx, int round, int hospital);

// Full round: broadcast, parallel local training, backend-specific submission
// and aggregation, ledger updates. Returns the next state; on any backend
// failure the exception propagates and the input state is untouched.
RoundState run_round(const RoundState& state, const FederationContext& ctx);

struct MetricsRow {
  int round = 0;
  std::string scope;  // "global" or the hospital id
  double a_task = 0.0;
  double r_mit = 0.0;
  std::optional<double> alpha_adapt;   // switch rate among significant changes
  double alpha_adapt_simple = 0.0;     // plain significant-change rate
  std::optional<double> plr;
  double d_kl = 0.0;
  double epsilon = 0.0;
  std::optional<double> ope;
};

struct MetricsLog {
  std::vector<MetricsRow> rows;
};

// CSV with a schema-version comment line and a header row. Optional cells are
// left empty.
std::string metrics_log_to_csv(const MetricsLog& log);

struct TrainingResult {
  RoundState state;
  MetricsLog log;
  std::vector<int> selected_policy_per_round;  // meta-selection winner ids
};

// Executes config.rounds rounds. With evaluate_metrics, appends per-hospital
// and global metric rows after every round and runs the meta policy selection.
// Fully deterministic given master_seed.
TrainingResult run_training(const FederationContext& ctx, bool evaluate_metrics = true);

// Union of the hospital datasets, in hospital order.
Dataset pool_datasets(const std::vector<Dataset>& datasets);

// Centralized baseline: plain DP-SGD on the pooled dataset for
// config.central_epochs epochs at config.central_sigma, no proximal term, no
// encryption.
PolicyParams train_centralized(const FederationConfig& config, const EnvParams& env,
                               const Dataset& pooled, uint64_t seed);

// Scans aggregator-visible submissions for any fixed-point encoding of a
// plaintext parameter component; used by the aggregator-blindness checks.
// Returns the number of matching components found.
int transcript_plaintext_matches(const std::vector<Message>& transcript,
                                 const std::vector<std::vector<double>>& plain_params,
                                 const FixedPointCodec& codec);

}  // namespace fdrl
