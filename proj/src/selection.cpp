#include "fdrl/selection.hpp"

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <sstream>
#include <stdexcept>

namespace fdrl {

PolicyRegistry evaluate_registry(const PolicyRegistry& registry, const EnvParams& env,
                                 int eval_episodes, double gamma, uint64_t seed, int round) {
  if (registry.entries.empty()) throw std::runtime_error("evaluate_registry: empty registry");
  if (eval_episodes < 1)
    throw std::invalid_argument("evaluate_registry: eval_episodes must be >= 1");
  PolicyRegistry out = registry;
  for (auto& entry : out.entries) {
    // Same seed for every entry: common random numbers.
    entry.eval_score = estimate_cumulative_reward(entry.params, env, eval_episodes, gamma, seed);
    entry.last_evaluated_round = round;
  }
  return out;
}

int select_policy(const PolicyRegistry& registry, const SelectionContext& context) {
  if (registry.entries.empty()) throw std::runtime_error("select_policy: empty registry");

  const RegistryEntry* best = nullptr;
  for (const auto& entry : registry.entries) {
    if (context.task.has_value() && !entry.task_tag.empty() && entry.task_tag != *context.task)
      continue;
    if (!entry.eval_score.has_value())
      throw std::runtime_error("select_policy: registry entry not evaluated");
    if (best == nullptr || *entry.eval_score > *best->eval_score ||
        (*entry.eval_score == *best->eval_score && entry.policy_id < best->policy_id))
      best = &entry;
  }
  if (best != nullptr) return best->policy_id;

  if (registry.global_policy_id.has_value()) {
    // Fallback still has to honor the evaluated-before-selection contract.
    for (const auto& entry : registry.entries) {
      if (entry.policy_id != *registry.global_policy_id) continue;
      if (!entry.eval_score.has_value())
        throw std::runtime_error("select_policy: global fallback policy not evaluated");
      std::cerr << "select_policy: no policy matches task '" << context.task.value_or("")
                << "', falling back to global policy " << entry.policy_id << "\n";
      return entry.policy_id;
    }
    throw std::runtime_error("select_policy: global fallback policy not in registry");
  }
  throw std::runtime_error("select_policy: no matching policy and no global fallback");
}

namespace {

const RegistryEntry& entry_by_id(const PolicyRegistry& registry, int policy_id) {
  for (const auto& entry : registry.entries)
    if (entry.policy_id == policy_id) return entry;
  throw std::runtime_error("registry: unknown policy id");
}

}  // namespace

SwitchingRollout rollout_with_switching(const PolicyRegistry& registry, const EnvParams& env,
                                        double threshold, int episodes, uint64_t seed,
                                        const TaskClassifier& task_of_state) {
  if (registry.entries.empty()) throw std::runtime_error("rollout_with_switching: empty registry");

  Rng init_rng = derive_rng(seed, {fnv1a64("switch-init")});
  Rng step_rng = derive_rng(seed, {fnv1a64("switch-step")});

  HospitalProfile reference;
  reference.mean_shift.assign(static_cast<size_t>(env.state_dim), 0.0);
  reference.heterogeneity = 0.0;

  SwitchingRollout out;
  double total_return = 0.0;
  for (int e = 0; e < episodes; ++e) {
    std::vector<double> state = sample_initial_state(reference, env, init_rng);

    auto context_for = [&](std::span<const double> s) {
      SelectionContext ctx;
      ctx.state.assign(s.begin(), s.end());
      if (task_of_state) {
        const std::string tag = task_of_state(s);
        if (!tag.empty()) ctx.task = tag;
      }
      return ctx;
    };

    int active = select_policy(registry, context_for(state));
    EvalEpisode ep;
    double ep_return = 0.0;
    double disc = 1.0;
    std::vector<double> prev_state;
    for (int t = 0; t < env.episode_len; ++t) {
      if (t > 0) {
        const double d = l2_distance(state, prev_state);
        if (d > threshold) {
          const int chosen = select_policy(registry, context_for(state));
          out.switches.push_back({e, t, active, chosen, d});
          active = chosen;
        }
      }
      const int expert = expert_action(state, env);
      const int action = greedy_action(entry_by_id(registry, active).params, state);
      StepOutcome o = step(state, action, env, step_rng);
      ep_return += disc * o.reward;
      disc *= env.discount;
      Transition tr;
      tr.state = state;
      tr.action = action;
      tr.reward = o.reward;
      tr.next_state = o.next_state;
      tr.force = o.force;
      tr.tissue_damage = o.tissue_damage;
      tr.critical_error = o.critical_error;
      tr.expert_action = expert;
      ep.steps.push_back(std::move(tr));
      prev_state = state;
      state = ep.steps.back().next_state;
    }
    total_return += ep_return;
    out.episodes.push_back(std::move(ep));
  }
  out.mean_return = episodes > 0 ? total_return / episodes : 0.0;
  return out;
}

std::string switch_log_to_csv(const std::vector<SwitchEvent>& switches) {
  std::ostringstream ss;
  ss << "# schema: fdrl-switchlog-1\n";
  ss << "episode,step,from_policy,to_policy,state_distance\n";
  char buf[64];
  for (const auto& ev : switches) {
    std::snprintf(buf, sizeof(buf), "%.12g", ev.state_distance);
    ss << ev.episode << "," << ev.step << "," << ev.from_id << "," << ev.to_id << "," << buf
       << "\n";
  }
  return ss.str();
}

}  // namespace fdrl
