#include "fdrl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace fdrl {

ProbeSet ProbeSet::make(const EnvParams& env, int count, uint64_t seed) {
  ProbeSet probes;
  probes.states.reserve(static_cast<size_t>(count));
  Rng rng = derive_rng(seed, {fnv1a64("probe-set")});
  HospitalProfile reference;
  reference.mean_shift.assign(static_cast<size_t>(env.state_dim), 0.0);
  reference.heterogeneity = 0.0;
  for (int i = 0; i < count; ++i) probes.states.push_back(sample_initial_state(reference, env, rng));
  return probes;
}

std::vector<EvalEpisode> rollout_episodes(const PolicyParams& policy, const EnvParams& env,
                                          const std::vector<HospitalProfile>& profiles,
                                          int episodes, uint64_t seed, bool greedy) {
  if (profiles.empty()) throw std::invalid_argument("rollout_episodes: profiles must be non-empty");
  Rng init_rng = derive_rng(seed, {fnv1a64("eval-init")});
  Rng step_rng = derive_rng(seed, {fnv1a64("eval-step")});
  Rng action_rng = derive_rng(seed, {fnv1a64("eval-action")});

  std::vector<EvalEpisode> out;
  out.reserve(static_cast<size_t>(episodes));
  for (int e = 0; e < episodes; ++e) {
    const auto& profile = profiles[static_cast<size_t>(e) % profiles.size()];
    EvalEpisode ep;
    ep.steps.reserve(static_cast<size_t>(env.episode_len));
    std::vector<double> state = sample_initial_state(profile, env, init_rng);
    for (int t = 0; t < env.episode_len; ++t) {
      const int expert = expert_action(state, env);
      const int action =
          greedy ? greedy_action(policy, state) : sample_action(policy, state, action_rng);
      StepOutcome o = step(state, action, env, step_rng);
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
      state = ep.steps.back().next_state;
    }
    out.push_back(std::move(ep));
  }
  return out;
}

double task_accuracy(const std::vector<EvalEpisode>& episodes) {
  if (episodes.empty()) throw std::invalid_argument("task_accuracy: empty test set");
  double acc = 0.0;
  for (const auto& ep : episodes) {
    if (ep.steps.empty()) throw std::invalid_argument("task_accuracy: empty episode");
    int matches = 0;
    for (const auto& tr : ep.steps)
      if (tr.action == tr.expert_action) ++matches;
    acc += static_cast<double>(matches) / static_cast<double>(ep.steps.size());
  }
  return acc / static_cast<double>(episodes.size());
}

double step_risk(double force, double tissue_damage, int critical_error,
                 const std::array<double, 3>& weights) {
  return step_risk_value(force, tissue_damage, critical_error, weights);
}

double risk_mitigation(const std::vector<EvalEpisode>& episodes,
                       const std::array<double, 3>& risk_weights) {
  if (episodes.empty()) throw std::invalid_argument("risk_mitigation: empty test set");
  double mean_risk = 0.0;
  for (const auto& ep : episodes) {
    if (ep.steps.empty()) throw std::invalid_argument("risk_mitigation: empty episode");
    double episode_risk = 0.0;
    for (const auto& tr : ep.steps)
      episode_risk += step_risk(tr.force, tr.tissue_damage, tr.critical_error, risk_weights);
    mean_risk += episode_risk / static_cast<double>(ep.steps.size());
  }
  return 1.0 - mean_risk / static_cast<double>(episodes.size());
}

AdaptationRate adaptation_rate(const std::vector<EvalEpisode>& episodes, double threshold) {
  int qualifying = 0;
  int switched = 0;
  int total_steps = 0;
  for (const auto& ep : episodes) {
    for (size_t t = 1; t < ep.steps.size(); ++t) {
      ++total_steps;
      const double d = l2_distance(ep.steps[t].state, ep.steps[t - 1].state);
      if (d > threshold) {
        ++qualifying;
        if (ep.steps[t].action != ep.steps[t - 1].action) ++switched;
      }
    }
  }
  AdaptationRate out;
  out.significant_change_rate =
      total_steps > 0 ? static_cast<double>(qualifying) / total_steps : 0.0;
  if (qualifying > 0)
    out.switch_rate = static_cast<double>(switched) / static_cast<double>(qualifying);
  return out;
}

double calibrate_adaptation_threshold(const EnvParams& env, uint64_t seed, int episodes) {
  // Expert-driven reference rollouts at H = 0.
  Rng init_rng = derive_rng(seed, {fnv1a64("adapt-init")});
  Rng step_rng = derive_rng(seed, {fnv1a64("adapt-step")});
  HospitalProfile reference;
  reference.mean_shift.assign(static_cast<size_t>(env.state_dim), 0.0);
  reference.heterogeneity = 0.0;

  std::vector<double> distances;
  distances.reserve(static_cast<size_t>(episodes) * env.episode_len);
  for (int e = 0; e < episodes; ++e) {
    std::vector<double> state = sample_initial_state(reference, env, init_rng);
    for (int t = 0; t < env.episode_len; ++t) {
      const int action = expert_action(state, env);
      StepOutcome o = step(state, action, env, step_rng);
      distances.push_back(l2_distance(o.next_state, state));
      state = std::move(o.next_state);
    }
  }
  std::sort(distances.begin(), distances.end());
  const size_t n = distances.size();
  return n % 2 == 1 ? distances[n / 2] : 0.5 * (distances[n / 2 - 1] + distances[n / 2]);
}

double entropy_bits(std::span<const double> distribution) {
  double sum = 0.0;
  for (double p : distribution) {
    if (p < 0) throw std::domain_error("entropy_bits: negative probability");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::domain_error("entropy_bits: probabilities must sum to 1");
  double h = 0.0;
  for (double p : distribution)
    if (p > 0) h -= p * std::log2(p);
  return h;
}

double policy_kl(const PolicyParams& policy_a, const PolicyParams& policy_b,
                 const ProbeSet& probes) {
  if (policy_a.action_count() != policy_b.action_count())
    throw std::invalid_argument("policy_kl: action space mismatch");
  if (probes.states.empty()) throw std::invalid_argument("policy_kl: empty probe set");
  double total = 0.0;
  for (const auto& s : probes.states) {
    const std::vector<double> pa = action_distribution(policy_a, s);
    const std::vector<double> pb = action_distribution(policy_b, s);
    double kl = 0.0;
    for (size_t a = 0; a < pa.size(); ++a) kl += pa[a] * std::log2(pa[a] / pb[a]);
    total += kl;
  }
  return total / static_cast<double>(probes.states.size());
}

double average_policy_divergence(const std::vector<PolicyParams>& locals,
                                 const PolicyParams& reference, const ProbeSet& probes) {
  if (locals.empty()) throw std::invalid_argument("average_policy_divergence: empty list");
  double total = 0.0;
  for (const auto& local : locals) total += policy_kl(local, reference, probes);
  return total / static_cast<double>(locals.size());
}

double ope(double plr, double d_kl, double epsilon, double lambda1, double lambda2,
           double lambda3) {
  if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0)
    throw std::invalid_argument("ope: weights must be non-negative");
  const double kl_term = std::min(d_kl, 1.0);
  return lambda1 * (1.0 - plr) + lambda2 * kl_term + lambda3 * std::exp(-epsilon);
}

Dataset bootstrap_resample(const Dataset& ds, Rng& rng) {
  const int episodes = ds.episode_count();
  if (episodes <= 0) throw std::invalid_argument("bootstrap_resample: dataset has no episodes");
  Dataset out;
  out.hospital_id = ds.hospital_id;
  out.behavior_epsilon = ds.behavior_epsilon;
  out.episode_len = ds.episode_len;
  out.transitions.reserve(ds.transitions.size());
  for (int e = 0; e < episodes; ++e) {
    const int pick = rng.uniform_int(episodes);
    const auto begin = ds.transitions.begin() + static_cast<long>(pick) * ds.episode_len;
    out.transitions.insert(out.transitions.end(), begin, begin + ds.episode_len);
  }
  return out;
}

namespace {

// Plug-in entropy (bits) of pre-binned counts.
double counts_entropy_bits(std::span<const int> counts, int total) {
  if (total <= 0) return 0.0;
  double h = 0.0;
  for (int c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / total;
    h -= p * std::log2(p);
  }
  return h;
}

// Equal-width bin index over [lo, hi]; degenerate ranges collapse to bin 0.
int bin_of(double x, double lo, double hi, int bins) {
  if (!(hi > lo)) return 0;
  int b = static_cast<int>((x - lo) / (hi - lo) * bins);
  if (b < 0) b = 0;
  if (b >= bins) b = bins - 1;
  return b;
}

double binned_entropy_bits(std::span<const double> values, int bins) {
  if (values.empty()) return 0.0;
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  std::vector<int> counts(static_cast<size_t>(bins), 0);
  for (double v : values) ++counts[static_cast<size_t>(bin_of(v, *lo_it, *hi_it, bins))];
  return counts_entropy_bits(counts, static_cast<int>(values.size()));
}

// Sum over statistic dimensions of H(binned dim) - mean_r H(binned dim | r),
// for an arbitrary assignment of cells to replicates.
double plug_in_mi_bits(const std::vector<std::vector<int>>& binned_dims,
                       std::span<const int> replicate_of_cell, int replicates, int bins) {
  const int cells = static_cast<int>(replicate_of_cell.size());
  double total = 0.0;
  for (const auto& dim_bins : binned_dims) {
    std::vector<int> all_counts(static_cast<size_t>(bins), 0);
    std::vector<std::vector<int>> rep_counts(
        static_cast<size_t>(replicates), std::vector<int>(static_cast<size_t>(bins), 0));
    std::vector<int> rep_totals(static_cast<size_t>(replicates), 0);
    for (int c = 0; c < cells; ++c) {
      const int b = dim_bins[static_cast<size_t>(c)];
      const int r = replicate_of_cell[static_cast<size_t>(c)];
      ++all_counts[static_cast<size_t>(b)];
      ++rep_counts[static_cast<size_t>(r)][static_cast<size_t>(b)];
      ++rep_totals[static_cast<size_t>(r)];
    }
    double h_all = counts_entropy_bits(all_counts, cells);
    double h_cond = 0.0;
    for (int r = 0; r < replicates; ++r)
      h_cond += counts_entropy_bits(rep_counts[static_cast<size_t>(r)],
                                    rep_totals[static_cast<size_t>(r)]);
    h_cond /= replicates;
    total += h_all - h_cond;
  }
  return total;
}

}  // namespace

double dataset_entropy_bits(const Dataset& ds, int bins) {
  if (ds.transitions.empty()) throw std::invalid_argument("dataset_entropy_bits: empty dataset");
  const int dim = static_cast<int>(ds.transitions.front().state.size());
  double h = 0.0;
  std::vector<double> feature(ds.transitions.size());
  for (int d = 0; d < dim; ++d) {
    for (size_t i = 0; i < ds.transitions.size(); ++i)
      feature[i] = ds.transitions[i].state[static_cast<size_t>(d)];
    h += binned_entropy_bits(feature, bins);
  }
  for (size_t i = 0; i < ds.transitions.size(); ++i)
    feature[i] = static_cast<double>(ds.transitions[i].action);
  h += binned_entropy_bits(feature, bins);
  for (size_t i = 0; i < ds.transitions.size(); ++i) feature[i] = ds.transitions[i].reward;
  h += binned_entropy_bits(feature, bins);
  return h;
}

PlrResult estimate_plr(const TrainingProcedure& train, const Dataset& dataset,
                       const PlrEnsembleConfig& config, uint64_t seed) {
  if (config.replicates < 2) throw std::invalid_argument("estimate_plr: need at least 2 replicates");
  if (config.seeds_per_replicate < 1)
    throw std::invalid_argument("estimate_plr: need at least 1 seed per replicate");
  if (config.bins < 2) throw std::invalid_argument("estimate_plr: need at least 2 bins");

  const int r_count = config.replicates;
  const int s_count = config.seeds_per_replicate;
  const int cells = r_count * s_count;

  // Statistic per trained model: L2 norm of each action's weight row.
  std::vector<std::vector<double>> stats;  // [cell][stat dim]
  stats.reserve(static_cast<size_t>(cells));
  std::vector<int> replicate_of_cell(static_cast<size_t>(cells));
  int stat_dims = 0;
  for (int r = 0; r < r_count; ++r) {
    Rng resample_rng = derive_rng(seed, {fnv1a64("plr-resample"), static_cast<uint64_t>(r)});
    const Dataset replicate_data = bootstrap_resample(dataset, resample_rng);
    for (int s = 0; s < s_count; ++s) {
      const uint64_t train_seed = derive_seed(
          seed, {fnv1a64("plr-train-seed"), static_cast<uint64_t>(r), static_cast<uint64_t>(s)});
      const PolicyParams model = train(replicate_data, train_seed);
      std::vector<double> stat(static_cast<size_t>(model.action_count()));
      for (int a = 0; a < model.action_count(); ++a) stat[static_cast<size_t>(a)] = l2_norm(model.weights.row(a));
      stat_dims = static_cast<int>(stat.size());
      replicate_of_cell[stats.size()] = r;
      stats.push_back(std::move(stat));
    }
  }

  // Bin each statistic dimension over its observed range.
  std::vector<std::vector<int>> binned_dims(
      static_cast<size_t>(stat_dims), std::vector<int>(static_cast<size_t>(cells), 0));
  for (int d = 0; d < stat_dims; ++d) {
    double lo = stats[0][static_cast<size_t>(d)];
    double hi = lo;
    for (const auto& s : stats) {
      lo = std::min(lo, s[static_cast<size_t>(d)]);
      hi = std::max(hi, s[static_cast<size_t>(d)]);
    }
    for (int c = 0; c < cells; ++c)
      binned_dims[static_cast<size_t>(d)][static_cast<size_t>(c)] =
          bin_of(stats[static_cast<size_t>(c)][static_cast<size_t>(d)], lo, hi, config.bins);
  }

  PlrResult result;
  result.i_raw = plug_in_mi_bits(binned_dims, replicate_of_cell, r_count, config.bins);

  // Label-permutation baseline: same marginals, replicate assignment shuffled.
  double null_total = 0.0;
  Rng perm_rng = derive_rng(seed, {fnv1a64("plr-permutation")});
  std::vector<int> permuted(replicate_of_cell);
  for (int p = 0; p < config.permutations; ++p) {
    perm_rng.shuffle(permuted);
    null_total += plug_in_mi_bits(binned_dims, permuted, r_count, config.bins);
  }
  result.i_null = config.permutations > 0 ? null_total / config.permutations : 0.0;

  result.h_hat = dataset_entropy_bits(dataset, config.bins);
  result.i_hat = std::max(0.0, result.i_raw - result.i_null);
  result.i_hat = std::min(result.i_hat, result.h_hat);
  result.plr = result.h_hat > 0 ? result.i_hat / result.h_hat : 0.0;
  return result;
}

}  // namespace fdrl
