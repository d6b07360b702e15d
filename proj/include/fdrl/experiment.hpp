#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "fdrl/federation.hpp"
#include "fdrl/metrics.hpp"

namespace fdrl {

struct PlrSettings {
  PlrEnsembleConfig ensemble;
  bool enabled = true;
  // Sweeps skip the leakage ensembles by default; a grid of them is costly.
  bool in_sweep = false;
  // Rounds at which the federated PLR curve is sampled for figure data; the
  // final round is always evaluated for the summary.
  std::vector<int> sample_rounds;
};

struct OpeWeights {
  double lambda1 = 0.3;
  double lambda2 = 0.4;
  double lambda3 = 0.3;
};

struct SweepGrid {
  std::vector<double> sigmas;
  std::vector<double> heterogeneities;
};

struct ExperimentConfig {
  FederationConfig federation;
  uint64_t env_seed = 42;
  int state_dim = 5;
  int action_count = 3;
  int episode_len = 20;
  double discount = 0.99;
  double transition_noise_std = 0.1;
  double critical_error_prob = 0.05;
  std::array<double, 3> risk_weights{0.4, 0.4, 0.2};
  PlrSettings plr;
  OpeWeights ope_weights;
  std::optional<SweepGrid> sweep;
  std::string output_dir = "out";
  std::set<std::string> emit{"csv", "json"};
  int summary_eval_episodes = 200;

  EnvParams build_env() const;
};

// Thrown by config parsing; carries one message per offending field.
struct ConfigError : std::runtime_error {
  explicit ConfigError(std::vector<std::string> problems);
  std::vector<std::string> issues;
};

// Schema "fdrl-cfg-1". Collects all field-level problems before throwing.
ExperimentConfig parse_experiment_config(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::string& path_or_preset);

// Single-flag reproduction of the reference setup: 3 hospitals x 100 samples,
// 5 state dims, 3 actions, 50 rounds x 5 epochs, sigma 0.1, centralized
// baseline 15 epochs at sigma 0.1, OPE weights (0.3, 0.4, 0.3).
ExperimentConfig paper_iv_preset();

nlohmann::json config_to_json(const ExperimentConfig& config);
uint64_t config_hash(const ExperimentConfig& config);

// Side-by-side results of the federated run and the centralized baseline.
struct ExperimentSummary {
  double a_task_fl = 0, a_task_cl = 0;
  double r_mit_fl = 0, r_mit_cl = 0;
  std::optional<double> alpha_adapt_fl, alpha_adapt_cl;
  double plr_fl = 0, plr_cl = 0;
  double d_kl_fl = 0, d_kl_cl = 0;
  double epsilon_fl = 0, epsilon_cl = 0;
  double ope_fl = 0, ope_cl = 0;
  int selected_policy_id = -1;
  uint64_t master_seed = 0;
  uint64_t cfg_hash = 0;

  nlohmann::json to_json(const ExperimentConfig& config) const;
};

// Runs federated training, the centralized baseline and the metric suite;
// writes metrics.csv, plr_audit.json, ledger.json, summary.json (and figure
// data when requested) into config.output_dir. Files are written atomically
// and removed again if the run fails partway. Returns the summary.
ExperimentSummary run_experiment(const ExperimentConfig& config);

struct SweepCell {
  double sigma = 0;
  double heterogeneity = 0;
  std::string status = "ok";
  MetricsRow metrics;  // final-round global metrics for the cell
};

// One federated run per (sigma, H) grid cell, rows ordered lexicographically.
// Cell failures are recorded in the status column and the sweep continues.
// Parallelism is capped by the FDRL_THREADS environment variable.
std::vector<SweepCell> run_sweep(const ExperimentConfig& config);
std::string sweep_to_csv(const std::vector<SweepCell>& cells);

// Loads two run directories' summary.json and tabulates both plus deltas.
nlohmann::json compare_runs(const std::string& fl_dir, const std::string& cl_dir);

}  // namespace fdrl
