#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "fdrl/rng.hpp"
#include "fdrl/vec.hpp"

namespace fdrl {

// Synthetic surgical MDP. Per-action linear dynamics with Gaussian transition
// noise; an expert benchmark defined by a fixed matrix shared across all
// hospitals; bounded per-step risk signals (force, tissue damage, critical
// error) feeding the reward and the safety metrics.
struct EnvParams {
  int state_dim = 5;
  int action_count = 3;
  int episode_len = 20;
  std::vector<Matrix> dynamics;        // one state_dim x state_dim matrix per action
  Matrix expert_matrix;                // action_count x state_dim; expert = argmax row . state
  Matrix force_rows;                   // action_count x state_dim; force proxy rows
  std::array<double, 3> risk_weights{0.4, 0.4, 0.2};  // weights on (force, damage, error)
  double critical_error_prob = 0.05;
  double transition_noise_std = 0.1;
  double discount = 0.99;
  double force_scale = 3.0;    // force = min(1, |f_a . s| / force_scale)
  double damage_margin = 1.0;  // damage = logistic(||s' - A_expert s|| - margin)

  // Throws std::invalid_argument on violated invariants (unnormalized risk
  // weights, dynamics with spectral norm above 1, dimension mismatches).
  void validate() const;
};

// Default environment per the standard profile: 5 state dims, 3 actions,
// 20-step episodes. Dynamics, expert and force rows are drawn once from
// env_seed and shared by every hospital; each dynamics matrix is rescaled to
// spectral norm 0.9 so trajectories stay bounded.
EnvParams make_default_env(uint64_t env_seed = 42);
EnvParams make_default_env(uint64_t env_seed, int state_dim, int action_count);

struct HospitalProfile {
  int hospital_id = 0;
  int n_samples = 100;
  std::vector<double> mean_shift;  // initial-state mean offset direction
  double heterogeneity = 0.0;      // H in [0,1]; 0 = identical distributions
};

// Standard non-IID layout: hospital i shifts along coordinate axis i mod state_dim.
std::vector<HospitalProfile> make_hospital_profiles(int count, int n_samples,
                                                    double heterogeneity, int state_dim);

// One logged step. critical_error is 0 whenever action == expert_action;
// reward = 1{action == expert_action} - D_t, so reward is in [-1, 1].
struct Transition {
  std::vector<double> state;
  int action = 0;
  double reward = 0.0;
  std::vector<double> next_state;
  double force = 0.0;          // F_t in [0,1]
  double tissue_damage = 0.0;  // T_d,t in [0,1]
  int critical_error = 0;      // C_t in {0,1}
  int expert_action = 0;
};

struct Dataset {
  int hospital_id = 0;
  std::vector<Transition> transitions;  // episode_len-sized contiguous episodes
  double behavior_epsilon = 0.2;        // logging policy: eps-greedy expert
  int episode_len = 20;

  int episode_count() const { return static_cast<int>(transitions.size()) / episode_len; }
};

// Expert benchmark: argmax over expert_matrix rows, ties to the lowest index.
int expert_action(std::span<const double> state, const EnvParams& env);

struct StepOutcome {
  std::vector<double> next_state;
  double reward = 0.0;
  double force = 0.0;
  double tissue_damage = 0.0;
  int critical_error = 0;
};

// Environment transition. Throws std::out_of_range for an invalid action.
StepOutcome step(std::span<const double> state, int action, const EnvParams& env, Rng& rng);

// Per-step combined risk D_t = w1*F + w2*T_d + w3*C.
double step_risk_value(double force, double tissue_damage, int critical_error,
                       const std::array<double, 3>& weights);

// Draws an initial state ~ N(base + H * mean_shift, I).
std::vector<double> sample_initial_state(const HospitalProfile& profile, const EnvParams& env,
                                         Rng& rng);

// Logged dataset of n_samples transitions in whole episodes, generated by an
// eps-greedy expert. Deterministic for fixed (profile, env, seed). Throws if
// n_samples is not a multiple of env.episode_len.
Dataset generate_dataset(const HospitalProfile& profile, const EnvParams& env, uint64_t seed,
                         double behavior_epsilon = 0.2);

// JSON-lines serialization, one transition per line, schema "fdrl-ds-1".
void write_dataset_jsonl(const Dataset& ds, std::ostream& out);
Dataset read_dataset_jsonl(std::istream& in);

}  // namespace fdrl
