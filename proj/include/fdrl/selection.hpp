#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fdrl/env.hpp"
#include "fdrl/metrics.hpp"
#include "fdrl/policy.hpp"

namespace fdrl {

struct RegistryEntry {
  int policy_id = 0;
  PolicyParams params;
  std::string task_tag;  // empty = untagged, matches any context
  std::optional<double> eval_score;
  int last_evaluated_round = -1;
};

struct PolicyRegistry {
  std::vector<RegistryEntry> entries;
  std::optional<int> global_policy_id;  // fallback when no task tag matches
};

// Scores every entry with a Monte-Carlo estimate of its expected cumulative
// reward. All entries share the same rollout seed (common random numbers),
// which makes scores directly comparable. Throws on an empty registry.
PolicyRegistry evaluate_registry(const PolicyRegistry& registry, const EnvParams& env,
                                 int eval_episodes, double gamma, uint64_t seed, int round = -1);

struct SelectionContext {
  std::vector<double> state;
  std::optional<std::string> task;
};

// Argmax of eval_score over entries whose task_tag matches the context (all
// entries when the context carries no task). Ties break to the lowest
// policy_id. When nothing matches, falls back to the registry's global policy
// with a warning on stderr; throws std::runtime_error when the registry is
// unevaluated or there is no fallback either.
int select_policy(const PolicyRegistry& registry, const SelectionContext& context);

struct SwitchEvent {
  int episode = 0;
  int step = 0;
  int from_id = 0;
  int to_id = 0;
  double state_distance = 0.0;
};

struct SwitchingRollout {
  std::vector<EvalEpisode> episodes;
  std::vector<SwitchEvent> switches;  // identity re-selections included
  double mean_return = 0.0;
};

// Maps a state to the task tag of the surgical context; empty result = no tag.
using TaskClassifier = std::function<std::string(std::span<const double>)>;

// Rolls out with the selected policy, re-running selection whenever the state
// jump exceeds threshold. Every re-selection is logged, including ones that
// keep the active policy.
SwitchingRollout rollout_with_switching(const PolicyRegistry& registry, const EnvParams& env,
                                        double threshold, int episodes, uint64_t seed,
                                        const TaskClassifier& task_of_state = nullptr);

// CSV export: episode, step, from_policy, to_policy, state_distance.
std::string switch_log_to_csv(const std::vector<SwitchEvent>& switches);

}  // namespace fdrl
