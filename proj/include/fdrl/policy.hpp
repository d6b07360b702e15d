#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "fdrl/env.hpp"
#include "fdrl/vec.hpp"

namespace fdrl {

// Softmax-linear policy: pi(a|s) = softmax(W s + b). The flattened parameter
// vector is row-major W followed by b, length action_count * (state_dim + 1).
struct PolicyParams {
  Matrix weights;            // action_count x state_dim
  std::vector<double> bias;  // action_count

  static PolicyParams zeros(int action_count, int state_dim);

  int action_count() const { return weights.rows; }
  int state_dim() const { return weights.cols; }
  int flat_size() const { return weights.rows * (weights.cols + 1); }

  std::vector<double> flatten() const;
  static PolicyParams from_flat(std::span<const double> flat, int action_count, int state_dim);

  bool finite() const;
};

// Action probabilities at a state. Stable softmax (max subtraction); entries
// are strictly positive and sum to 1.
std::vector<double> action_distribution(const PolicyParams& params, std::span<const double> state);

int greedy_action(const PolicyParams& params, std::span<const double> state);
int sample_action(const PolicyParams& params, std::span<const double> state, Rng& rng);

struct TrainBatch {
  std::vector<const Transition*> transitions;
  double temperature = 0.5;  // tau for advantage weighting
};

struct LossGradient {
  double loss = 0.0;
  std::vector<double> gradient;  // flattened, matches PolicyParams::flatten()
};

// Advantage-weighted cross-entropy toward the logged actions plus a proximal
// penalty toward the global parameters:
//
//   loss = mean_b [ -w_b log pi(a_b|s_b) ] + (lambda/2) ||theta - theta_g||^2
//
// with w_b = exp(r_b / tau) normalized to mean 1 within the batch. The
// gradient is the exact analytic gradient with respect to the flattened theta.
LossGradient loss_and_gradient(const PolicyParams& params, const TrainBatch& batch,
                               const PolicyParams& global_params, double lambda);

// One local step: theta - eta * gradient + lambda * (theta_global - theta).
// Throws std::domain_error on a non-finite gradient.
PolicyParams local_update(const PolicyParams& params, std::span<const double> noisy_gradient,
                          double eta, double lambda, const PolicyParams& global_params);

// Monte-Carlo estimate of the discounted return under the policy (actions
// sampled), rolling out fresh episodes from the given initial-state profiles
// (uniform mixture). Deterministic given seed.
double estimate_cumulative_reward(const PolicyParams& params, const EnvParams& env, int episodes,
                                  double gamma, uint64_t seed);
double estimate_cumulative_reward(const PolicyParams& params, const EnvParams& env,
                                  const std::vector<HospitalProfile>& profiles, int episodes,
                                  double gamma, uint64_t seed);

// Checkpoint format "fdrl-ckpt-1": one JSON header line, then the flattened
// parameters as little-endian 64-bit floats.
void write_checkpoint(const PolicyParams& params, std::ostream& out);
PolicyParams read_checkpoint(std::istream& in);
std::vector<uint8_t> checkpoint_bytes(const PolicyParams& params);
PolicyParams checkpoint_from_bytes(std::span<const uint8_t> bytes);

}  // namespace fdrl
