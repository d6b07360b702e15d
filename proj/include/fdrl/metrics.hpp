#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "fdrl/env.hpp"
#include "fdrl/policy.hpp"

namespace fdrl {

// Fixed set of states on which policy action distributions are compared. One
// probe set is shared by every KL computation within an experiment so the
// divergences are comparable across policies and rounds.
struct ProbeSet {
  std::vector<std::vector<double>> states;

  // Draws `count` states from the H = 0 reference initial-state distribution.
  static ProbeSet make(const EnvParams& env, int count, uint64_t seed);
};

// Greedy evaluation rollouts. Each step records the visited state, the chosen
// and expert actions, and the risk signals, which is everything the surgical
// metrics consume.
struct EvalEpisode {
  std::vector<Transition> steps;
};

std::vector<EvalEpisode> rollout_episodes(const PolicyParams& policy, const EnvParams& env,
                                          const std::vector<HospitalProfile>& profiles,
                                          int episodes, uint64_t seed, bool greedy = true);

// Fraction of decision steps where the policy matched the expert benchmark:
// (1/N) sum_i (1/T) sum_t 1{a_t == a*_t}. Throws on an empty test set.
double task_accuracy(const std::vector<EvalEpisode>& episodes);

// 1 - (1/N) sum_i (1/T) sum_t D_t with D_t the weighted per-step risk.
double risk_mitigation(const std::vector<EvalEpisode>& episodes,
                       const std::array<double, 3>& risk_weights);

// Per-step combined risk; thin wrapper kept as the metric-level entry point.
double step_risk(double force, double tissue_damage, int critical_error,
                 const std::array<double, 3>& weights);

struct AdaptationRate {
  // Among steps with state change above threshold, the fraction where the
  // action changed; empty when no step qualifies.
  std::optional<double> switch_rate;
  // Plain fraction of steps whose state change exceeds the threshold.
  double significant_change_rate = 0.0;
};

AdaptationRate adaptation_rate(const std::vector<EvalEpisode>& episodes, double threshold);

// Median per-step state distance over expert-driven reference rollouts; used
// as the default adaptation threshold.
double calibrate_adaptation_threshold(const EnvParams& env, uint64_t seed, int episodes = 50);

// Shannon entropy in bits, -sum p log2 p with 0 log 0 = 0. Throws
// std::domain_error unless the entries are non-negative and sum to 1 within
// 1e-9.
double entropy_bits(std::span<const double> distribution);

// Mean over probe states of sum_a pi_a(a|s) log2(pi_a(a|s) / pi_b(a|s)).
// Softmax policies have strictly positive probabilities, so no smoothing is
// needed.
double policy_kl(const PolicyParams& policy_a, const PolicyParams& policy_b,
                 const ProbeSet& probes);

// (1/N) sum_i KL(local_i || reference). Throws on an empty list.
double average_policy_divergence(const std::vector<PolicyParams>& locals,
                                 const PolicyParams& reference, const ProbeSet& probes);

// Overall privacy effectiveness: l1 (1 - plr) + l2 * min(d_kl, 1) + l3 e^-eps.
// The KL term is clamped to [0,1] before weighting so one unbounded term
// cannot dominate the composite; callers keep the raw divergence alongside.
double ope(double plr, double d_kl, double epsilon, double lambda1, double lambda2,
           double lambda3);

// --- Privacy leakage rate -----------------------------------------------------
//
// PLR = I(W;D) / H2(D). Mutual information between one trained weight vector
// and one dataset is not defined without a distribution over both, so we
// construct one: R bootstrap-resampled datasets x S training seeds. The
// replicate index plays the role of the data random variable; the weight
// statistic (per-action weight-row L2 norms) is binned and plug-in MI is
// computed per statistic dimension and summed. A label-permutation null is
// subtracted to remove the finite-ensemble bias, the result is floored at 0
// and capped at the dataset entropy.

using TrainingProcedure = std::function<PolicyParams(const Dataset&, uint64_t seed)>;

struct PlrEnsembleConfig {
  int replicates = 6;          // R
  int seeds_per_replicate = 25; // S
  int bins = 8;                // B, equal-width over the observed range
  int permutations = 200;      // label permutations for the bias baseline
};

struct PlrResult {
  double plr = 0.0;    // I_hat / H_hat, in [0,1]
  double i_hat = 0.0;  // debiased, floored, capped MI estimate (bits)
  double i_raw = 0.0;  // plug-in MI before debiasing (bits)
  double i_null = 0.0; // permutation baseline (bits)
  double h_hat = 0.0;  // dataset entropy bound (bits)
};

// Bootstrap resample of whole episodes, same size as the input.
Dataset bootstrap_resample(const Dataset& ds, Rng& rng);

// Independence upper bound on the dataset entropy: sum over per-transition
// features (state coordinates, action, reward) of the binned marginal entropy.
double dataset_entropy_bits(const Dataset& ds, int bins);

// Trains replicates x seeds models and estimates PLR for this training
// procedure on this dataset. Every cell trains with an independent derived
// seed, so the within-replicate spread reflects the procedure's own
// randomness and the between-replicate spread the data effect. Throws
// std::invalid_argument when replicates < 2.
PlrResult estimate_plr(const TrainingProcedure& train, const Dataset& dataset,
                       const PlrEnsembleConfig& config, uint64_t seed);

}  // namespace fdrl
