#include "fdrl/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <sstream>
#include <thread>

namespace fdrl {

namespace fs = std::filesystem;

namespace {

constexpr const char* kArtifactVersion = "0.1.0";

constexpr uint64_t kTagCentralSeed = 0x61;
constexpr uint64_t kTagSummaryEval = 0x62;
constexpr uint64_t kTagPlrFl = 0x63;
constexpr uint64_t kTagPlrCl = 0x64;
constexpr uint64_t kTagSweepCell = 0x65;
constexpr uint64_t kTagProbeSummary = 0x66;
constexpr uint64_t kTagThresholdSummary = 0x67;

std::string fmt_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", x);
  return buf;
}

// Temp-file-plus-rename writer; failed runs must not leave partial artifacts.
class ArtifactWriter {
 public:
  explicit ArtifactWriter(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

  ~ArtifactWriter() {
    if (!committed_)
      for (const auto& p : written_) {
        std::error_code ec;
        fs::remove(p, ec);
      }
  }

  void write(const std::string& name, const std::string& content) {
    const fs::path target = dir_ / name;
    const fs::path tmp = dir_ / (name + ".tmp");
    {
      std::ofstream out(tmp, std::ios::binary);
      if (!out) throw std::runtime_error("cannot write " + tmp.string());
      out << content;
    }
    fs::rename(tmp, target);
    written_.push_back(target);
  }

  void commit() { committed_ = true; }

 private:
  fs::path dir_;
  std::vector<fs::path> written_;
  bool committed_ = false;
};

FederationContext plr_context(const FederationContext& base, uint64_t master_seed) {
  FederationContext ctx = base;
  ctx.config.master_seed = master_seed;
  // The estimator measures the learning process; backends agree within codec
  // tolerance, so the ensemble runs on the fast path.
  ctx.config.backend = AggregationBackend::plaintext;
  ctx.config.test_profile = true;
  ctx.keys.reset();
  return ctx;
}

// Federated training procedure for hospital `hospital`: swap in the resampled
// dataset, rerun the whole federation, return the global policy the hospital
// ends up deploying. The mutual information I(W; D_i) marginalizes over
// everything that is random from hospital i's perspective, which includes the
// other hospitals' datasets, so those are redrawn per training seed.
TrainingProcedure federated_procedure(const FederationContext& base, int hospital, int rounds) {
  return [&base, hospital, rounds](const Dataset& data, uint64_t seed) {
    FederationContext ctx = plr_context(base, seed);
    ctx.config.rounds = rounds;
    for (int j = 0; j < ctx.config.num_hospitals; ++j) {
      if (j == hospital) continue;
      ctx.datasets[static_cast<size_t>(j)] =
          generate_dataset(ctx.profiles[static_cast<size_t>(j)], ctx.env,
                           derive_seed(seed, {fnv1a64("plr-peer-data"), static_cast<uint64_t>(j)}),
                           ctx.config.behavior_epsilon);
    }
    ctx.datasets[static_cast<size_t>(hospital)] = data;
    return run_training(ctx, /*evaluate_metrics=*/false).state.global_params;
  };
}

TrainingProcedure centralized_procedure(const FederationConfig& config, const EnvParams& env,
                                        int epochs) {
  FederationConfig cfg = config;
  cfg.central_epochs = epochs;
  return [cfg, env](const Dataset& data, uint64_t seed) {
    return train_centralized(cfg, env, data, seed);
  };
}

struct PlrPair {
  double fl = 0.0;
  double cl = 0.0;
  std::vector<PlrResult> fl_details;
  PlrResult cl_detail;
};

PlrPair estimate_plr_pair(const FederationContext& ctx, const Dataset& pooled,
                          const ExperimentConfig& config, int fl_rounds, int cl_epochs) {
  PlrPair pair;
  double total = 0.0;
  for (int i = 0; i < ctx.config.num_hospitals; ++i) {
    const PlrResult res = estimate_plr(
        federated_procedure(ctx, i, fl_rounds), ctx.datasets[static_cast<size_t>(i)],
        config.plr.ensemble,
        derive_seed(ctx.config.master_seed, {kTagPlrFl, static_cast<uint64_t>(fl_rounds),
                                             static_cast<uint64_t>(i)}));
    total += res.plr;
    pair.fl_details.push_back(res);
  }
  pair.fl = total / ctx.config.num_hospitals;

  pair.cl_detail = estimate_plr(
      centralized_procedure(ctx.config, ctx.env, cl_epochs), pooled, config.plr.ensemble,
      derive_seed(ctx.config.master_seed, {kTagPlrCl, static_cast<uint64_t>(cl_epochs)}));
  pair.cl = pair.cl_detail.plr;
  return pair;
}

int scaled_central_epochs(const FederationConfig& cfg, int round) {
  if (cfg.rounds <= 0) return cfg.central_epochs;
  const double frac = static_cast<double>(round) / cfg.rounds;
  return std::max(1, static_cast<int>(std::lround(frac * cfg.central_epochs)));
}

double plr_federated_mean(const FederationContext& ctx, const PlrEnsembleConfig& ensemble) {
  double total = 0.0;
  for (int i = 0; i < ctx.config.num_hospitals; ++i)
    total += estimate_plr(federated_procedure(ctx, i, ctx.config.rounds),
                          ctx.datasets[static_cast<size_t>(i)], ensemble,
                          derive_seed(ctx.config.master_seed,
                                      {kTagPlrFl, static_cast<uint64_t>(ctx.config.rounds),
                                       static_cast<uint64_t>(i)}))
                 .plr;
  return total / ctx.config.num_hospitals;
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : std::runtime_error("invalid configuration (" + std::to_string(problems.size()) +
                         " problem(s))"),
      issues(std::move(problems)) {}

EnvParams ExperimentConfig::build_env() const {
  EnvParams env = make_default_env(env_seed, state_dim, action_count);
  env.episode_len = episode_len;
  env.discount = discount;
  env.transition_noise_std = transition_noise_std;
  env.critical_error_prob = critical_error_prob;
  env.risk_weights = risk_weights;
  env.validate();
  return env;
}

ExperimentConfig paper_iv_preset() {
  ExperimentConfig config;
  config.federation.num_hospitals = 3;
  config.federation.rounds = 50;
  config.federation.local_epochs = 5;
  config.federation.learning_rate = 0.05;
  config.federation.proximal_lambda = 0.1;
  config.federation.batch_size = 20;
  config.federation.backend = AggregationBackend::he;
  config.federation.privacy.sigma = 0.1;
  config.federation.privacy.clip_norm = 1.0;
  config.federation.privacy.alpha = 2.0;
  config.federation.privacy.mode = NoiseMode::gradient_noise;
  config.federation.heterogeneity = 0.8;
  config.federation.samples_per_hospital = 100;
  config.federation.key_bits = 512;
  config.federation.central_epochs = 15;
  config.federation.central_sigma = 0.1;
  config.federation.master_seed = 1;
  config.plr.sample_rounds = {10, 25, 50};
  config.emit = {"csv", "json", "figure-data"};
  return config;
}

namespace {

template <typename T>
void read_field(const nlohmann::json& j, const std::string& key, T& target,
                std::vector<std::string>& issues, const std::string& scope) {
  if (!j.contains(key)) return;
  try {
    target = j.at(key).get<T>();
  } catch (const std::exception&) {
    issues.push_back(scope + "." + key + ": wrong type");
  }
}

}  // namespace

ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
  std::vector<std::string> issues;
  ExperimentConfig config = paper_iv_preset();

  if (j.value("schema", "") != "fdrl-cfg-1")
    issues.push_back("schema: must be \"fdrl-cfg-1\"");

  if (j.contains("federation")) {
    const auto& f = j.at("federation");
    auto& fed = config.federation;
    read_field(f, "num_hospitals", fed.num_hospitals, issues, "federation");
    read_field(f, "rounds", fed.rounds, issues, "federation");
    read_field(f, "local_epochs", fed.local_epochs, issues, "federation");
    read_field(f, "learning_rate", fed.learning_rate, issues, "federation");
    read_field(f, "proximal_lambda", fed.proximal_lambda, issues, "federation");
    read_field(f, "batch_size", fed.batch_size, issues, "federation");
    read_field(f, "temperature", fed.temperature, issues, "federation");
    read_field(f, "heterogeneity", fed.heterogeneity, issues, "federation");
    read_field(f, "samples_per_hospital", fed.samples_per_hospital, issues, "federation");
    read_field(f, "behavior_epsilon", fed.behavior_epsilon, issues, "federation");
    read_field(f, "key_bits", fed.key_bits, issues, "federation");
    read_field(f, "eval_episodes", fed.eval_episodes, issues, "federation");
    read_field(f, "probe_count", fed.probe_count, issues, "federation");
    read_field(f, "test_profile", fed.test_profile, issues, "federation");
    if (f.contains("backend")) {
      try {
        fed.backend = backend_from_string(f.at("backend").get<std::string>());
      } catch (const std::exception& e) {
        issues.push_back(std::string("federation.backend: ") + e.what());
      }
    }
    if (f.contains("share")) {
      const std::string s = f.at("share").is_string() ? f.at("share").get<std::string>() : "";
      if (s == "params")
        fed.share = ShareMode::params;
      else if (s == "gradients")
        fed.share = ShareMode::gradients;
      else
        issues.push_back("federation.share: must be \"params\" or \"gradients\"");
    }
  }

  if (j.contains("privacy")) {
    const auto& p = j.at("privacy");
    auto& priv = config.federation.privacy;
    read_field(p, "sigma", priv.sigma, issues, "privacy");
    read_field(p, "clip_norm", priv.clip_norm, issues, "privacy");
    read_field(p, "alpha", priv.alpha, issues, "privacy");
    if (p.contains("mode")) {
      try {
        priv.mode = noise_mode_from_string(p.at("mode").get<std::string>());
      } catch (const std::exception& e) {
        issues.push_back(std::string("privacy.mode: ") + e.what());
      }
    }
  }

  if (j.contains("centralized")) {
    const auto& c = j.at("centralized");
    read_field(c, "epochs", config.federation.central_epochs, issues, "centralized");
    read_field(c, "sigma", config.federation.central_sigma, issues, "centralized");
  }

  if (j.contains("env")) {
    const auto& e = j.at("env");
    read_field(e, "env_seed", config.env_seed, issues, "env");
    read_field(e, "state_dim", config.state_dim, issues, "env");
    read_field(e, "action_count", config.action_count, issues, "env");
    read_field(e, "episode_len", config.episode_len, issues, "env");
    read_field(e, "discount", config.discount, issues, "env");
    read_field(e, "transition_noise_std", config.transition_noise_std, issues, "env");
    read_field(e, "critical_error_prob", config.critical_error_prob, issues, "env");
    if (e.contains("risk_weights")) {
      try {
        const auto w = e.at("risk_weights").get<std::vector<double>>();
        if (w.size() != 3) throw std::runtime_error("need 3 weights");
        config.risk_weights = {w[0], w[1], w[2]};
      } catch (const std::exception&) {
        issues.push_back("env.risk_weights: must be an array of 3 numbers");
      }
    }
  }

  if (j.contains("plr")) {
    const auto& p = j.at("plr");
    read_field(p, "replicates", config.plr.ensemble.replicates, issues, "plr");
    read_field(p, "seeds_per_replicate", config.plr.ensemble.seeds_per_replicate, issues, "plr");
    read_field(p, "bins", config.plr.ensemble.bins, issues, "plr");
    read_field(p, "permutations", config.plr.ensemble.permutations, issues, "plr");
    read_field(p, "enabled", config.plr.enabled, issues, "plr");
    read_field(p, "in_sweep", config.plr.in_sweep, issues, "plr");
    read_field(p, "sample_rounds", config.plr.sample_rounds, issues, "plr");
  }

  if (j.contains("ope_weights")) {
    try {
      const auto w = j.at("ope_weights").get<std::vector<double>>();
      if (w.size() != 3) throw std::runtime_error("need 3 weights");
      config.ope_weights = {w[0], w[1], w[2]};
    } catch (const std::exception&) {
      issues.push_back("ope_weights: must be an array of 3 numbers");
    }
  }

  if (j.contains("sweep")) {
    const auto& s = j.at("sweep");
    SweepGrid grid;
    read_field(s, "sigma", grid.sigmas, issues, "sweep");
    read_field(s, "heterogeneity", grid.heterogeneities, issues, "sweep");
    if (grid.sigmas.empty()) issues.push_back("sweep.sigma: must be a non-empty list");
    if (grid.heterogeneities.empty())
      issues.push_back("sweep.heterogeneity: must be a non-empty list");
    config.sweep = std::move(grid);
  }

  read_field(j, "master_seed", config.federation.master_seed, issues, "");
  read_field(j, "output_dir", config.output_dir, issues, "");
  read_field(j, "summary_eval_episodes", config.summary_eval_episodes, issues, "");
  if (j.contains("emit")) {
    try {
      const auto e = j.at("emit").get<std::vector<std::string>>();
      config.emit = std::set<std::string>(e.begin(), e.end());
      for (const auto& kind : config.emit)
        if (kind != "csv" && kind != "json" && kind != "figure-data")
          issues.push_back("emit: unknown kind \"" + kind + "\"");
    } catch (const std::exception&) {
      issues.push_back("emit: must be a list of strings");
    }
  }

  // Range validation on the assembled config.
  try {
    config.federation.validate();
  } catch (const std::exception& e) {
    issues.push_back(std::string("federation: ") + e.what());
  }
  try {
    config.build_env();
  } catch (const std::exception& e) {
    issues.push_back(std::string("env: ") + e.what());
  }

  if (!issues.empty()) throw ConfigError(std::move(issues));
  return config;
}

ExperimentConfig load_experiment_config(const std::string& path_or_preset) {
  if (path_or_preset == "paper-iv") return paper_iv_preset();
  std::ifstream in(path_or_preset);
  if (!in) throw std::runtime_error("cannot open config file: " + path_or_preset);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ConfigError({std::string("config is not valid JSON: ") + e.what()});
  }
  return parse_experiment_config(j);
}

nlohmann::json config_to_json(const ExperimentConfig& config) {
  nlohmann::json j;
  j["schema"] = "fdrl-cfg-1";
  j["federation"] = {{"num_hospitals", config.federation.num_hospitals},
                     {"rounds", config.federation.rounds},
                     {"local_epochs", config.federation.local_epochs},
                     {"learning_rate", config.federation.learning_rate},
                     {"proximal_lambda", config.federation.proximal_lambda},
                     {"batch_size", config.federation.batch_size},
                     {"temperature", config.federation.temperature},
                     {"backend", to_string(config.federation.backend)},
                     {"share", config.federation.share == ShareMode::params ? "params" : "gradients"},
                     {"heterogeneity", config.federation.heterogeneity},
                     {"samples_per_hospital", config.federation.samples_per_hospital},
                     {"behavior_epsilon", config.federation.behavior_epsilon},
                     {"key_bits", config.federation.key_bits},
                     {"eval_episodes", config.federation.eval_episodes},
                     {"probe_count", config.federation.probe_count},
                     {"test_profile", config.federation.test_profile}};
  j["privacy"] = {{"sigma", config.federation.privacy.sigma},
                  {"clip_norm", config.federation.privacy.clip_norm},
                  {"alpha", config.federation.privacy.alpha},
                  {"mode", to_string(config.federation.privacy.mode)}};
  j["centralized"] = {{"epochs", config.federation.central_epochs},
                      {"sigma", config.federation.central_sigma}};
  j["env"] = {{"env_seed", config.env_seed},
              {"state_dim", config.state_dim},
              {"action_count", config.action_count},
              {"episode_len", config.episode_len},
              {"discount", config.discount},
              {"transition_noise_std", config.transition_noise_std},
              {"critical_error_prob", config.critical_error_prob},
              {"risk_weights", config.risk_weights}};
  j["plr"] = {{"replicates", config.plr.ensemble.replicates},
              {"seeds_per_replicate", config.plr.ensemble.seeds_per_replicate},
              {"bins", config.plr.ensemble.bins},
              {"permutations", config.plr.ensemble.permutations},
              {"enabled", config.plr.enabled},
              {"in_sweep", config.plr.in_sweep},
              {"sample_rounds", config.plr.sample_rounds}};
  j["ope_weights"] = {config.ope_weights.lambda1, config.ope_weights.lambda2,
                      config.ope_weights.lambda3};
  if (config.sweep.has_value())
    j["sweep"] = {{"sigma", config.sweep->sigmas},
                  {"heterogeneity", config.sweep->heterogeneities}};
  j["master_seed"] = config.federation.master_seed;
  j["summary_eval_episodes"] = config.summary_eval_episodes;
  j["emit"] = config.emit;
  return j;
}

uint64_t config_hash(const ExperimentConfig& config) {
  const std::string s = config_to_json(config).dump();
  return fnv1a64(s.data(), s.size());
}

nlohmann::json ExperimentSummary::to_json(const ExperimentConfig& config) const {
  char hash_hex[32];
  std::snprintf(hash_hex, sizeof(hash_hex), "%016llx",
                static_cast<unsigned long long>(cfg_hash));
  nlohmann::json j;
  j["schema"] = "fdrl-summary-1";
  j["artifact_version"] = kArtifactVersion;
  j["master_seed"] = master_seed;
  j["config_hash"] = hash_hex;
  j["a_task_fl"] = a_task_fl;
  j["a_task_cl"] = a_task_cl;
  j["r_mit_fl"] = r_mit_fl;
  j["r_mit_cl"] = r_mit_cl;
  if (alpha_adapt_fl.has_value()) j["alpha_adapt_fl"] = *alpha_adapt_fl;
  else j["alpha_adapt_fl"] = nullptr;
  if (alpha_adapt_cl.has_value()) j["alpha_adapt_cl"] = *alpha_adapt_cl;
  else j["alpha_adapt_cl"] = nullptr;
  j["plr_fl"] = plr_fl;
  j["plr_cl"] = plr_cl;
  j["d_kl_fl"] = d_kl_fl;
  j["d_kl_cl"] = d_kl_cl;
  j["epsilon_fl"] = epsilon_fl;
  j["epsilon_cl"] = epsilon_cl;
  j["ope_fl"] = ope_fl;
  j["ope_cl"] = ope_cl;
  j["ope_weights"] = {config.ope_weights.lambda1, config.ope_weights.lambda2,
                      config.ope_weights.lambda3};
  j["r_mit_fl_minus_cl"] = r_mit_fl - r_mit_cl;
  j["selected_policy_id"] = selected_policy_id;
  return j;
}

ExperimentSummary run_experiment(const ExperimentConfig& config) {
  const EnvParams env = config.build_env();
  const FederationContext ctx = make_federation_context(config.federation, env);

  TrainingResult fl = run_training(ctx, /*evaluate_metrics=*/true);

  const Dataset pooled = pool_datasets(ctx.datasets);
  const uint64_t central_seed = derive_seed(config.federation.master_seed, {kTagCentralSeed});
  const PolicyParams central = train_centralized(config.federation, env, pooled, central_seed);

  // Centralized privacy ledger: one training pass of central_epochs.
  PrivacyConfig central_privacy = config.federation.privacy;
  central_privacy.sigma = config.federation.central_sigma;
  PrivacyLedger central_ledger;
  if (config.federation.central_epochs > 0)
    central_ledger =
        accountant_update(central_ledger, central_privacy, config.federation.central_epochs, 0);

  // Final-policy evaluation with common random numbers for FL and CL.
  const uint64_t eval_seed = derive_seed(config.federation.master_seed, {kTagSummaryEval});
  const std::vector<EvalEpisode> fl_eval =
      rollout_episodes(fl.state.global_params, env, ctx.profiles, config.summary_eval_episodes,
                       eval_seed, /*greedy=*/true);
  const std::vector<EvalEpisode> cl_eval = rollout_episodes(
      central, env, ctx.profiles, config.summary_eval_episodes, eval_seed, /*greedy=*/true);

  const ProbeSet probes = ProbeSet::make(
      env, config.federation.probe_count,
      derive_seed(config.federation.master_seed, {kTagProbeSummary}));
  const double threshold = calibrate_adaptation_threshold(
      env, derive_seed(config.federation.master_seed, {kTagThresholdSummary}));

  ExperimentSummary summary;
  summary.master_seed = config.federation.master_seed;
  summary.cfg_hash = config_hash(config);
  summary.a_task_fl = task_accuracy(fl_eval);
  summary.a_task_cl = task_accuracy(cl_eval);
  summary.r_mit_fl = risk_mitigation(fl_eval, env.risk_weights);
  summary.r_mit_cl = risk_mitigation(cl_eval, env.risk_weights);
  summary.alpha_adapt_fl = adaptation_rate(fl_eval, threshold).switch_rate;
  summary.alpha_adapt_cl = adaptation_rate(cl_eval, threshold).switch_rate;
  summary.d_kl_fl =
      ctx.config.rounds > 0
          ? average_policy_divergence(fl.state.local_params, fl.state.global_params, probes)
          : 0.0;
  summary.d_kl_cl = policy_kl(fl.state.global_params, central, probes);
  for (const auto& ledger : fl.state.ledgers)
    summary.epsilon_fl = std::max(summary.epsilon_fl, ledger.epsilon_total);
  summary.epsilon_cl = central_ledger.epsilon_total;
  summary.selected_policy_id =
      fl.selected_policy_per_round.empty() ? -1 : fl.selected_policy_per_round.back();

  nlohmann::json plr_audit;
  plr_audit["schema"] = "fdrl-plr-audit-1";
  plr_audit["ensemble"] = {{"replicates", config.plr.ensemble.replicates},
                           {"seeds_per_replicate", config.plr.ensemble.seeds_per_replicate},
                           {"bins", config.plr.ensemble.bins},
                           {"permutations", config.plr.ensemble.permutations}};

  std::vector<std::array<double, 7>> figure_rows;  // round, plr_fl, plr_cl, dkl_fl, dkl_cl, ope_fl, ope_cl

  if (config.plr.enabled) {
    const PlrPair final_pair = estimate_plr_pair(ctx, pooled, config, config.federation.rounds,
                                                 config.federation.central_epochs);
    summary.plr_fl = final_pair.fl;
    summary.plr_cl = final_pair.cl;

    nlohmann::json fl_detail = nlohmann::json::array();
    for (size_t i = 0; i < final_pair.fl_details.size(); ++i) {
      const auto& d = final_pair.fl_details[i];
      fl_detail.push_back({{"hospital", static_cast<int>(i)},
                           {"plr", d.plr},
                           {"I_hat", d.i_hat},
                           {"I_raw", d.i_raw},
                           {"I_null", d.i_null},
                           {"H_hat", d.h_hat}});
    }
    plr_audit["federated"] = fl_detail;
    plr_audit["federated_mean"] = final_pair.fl;
    plr_audit["centralized"] = {{"plr", final_pair.cl_detail.plr},
                                {"I_hat", final_pair.cl_detail.i_hat},
                                {"I_raw", final_pair.cl_detail.i_raw},
                                {"I_null", final_pair.cl_detail.i_null},
                                {"H_hat", final_pair.cl_detail.h_hat}};

    // Figure data: the privacy metrics sampled over the training horizon.
    if (config.emit.count("figure-data") > 0) {
      for (int round : config.plr.sample_rounds) {
        if (round <= 0 || round > config.federation.rounds) continue;
        double plr_fl_k = final_pair.fl;
        double plr_cl_k = final_pair.cl;
        const int cl_epochs_k = scaled_central_epochs(config.federation, round);
        if (round != config.federation.rounds) {
          const PlrPair pair = estimate_plr_pair(ctx, pooled, config, round, cl_epochs_k);
          plr_fl_k = pair.fl;
          plr_cl_k = pair.cl;
        }
        // Deterministic prefix property: a run truncated at `round` equals the
        // long run's state after `round` rounds.
        FederationContext trunc = ctx;
        trunc.config.rounds = round;
        const TrainingResult fl_k = run_training(trunc, /*evaluate_metrics=*/false);
        const double d_kl_fl_k = average_policy_divergence(fl_k.state.local_params,
                                                           fl_k.state.global_params, probes);
        FederationConfig central_cfg_k = config.federation;
        central_cfg_k.central_epochs = cl_epochs_k;
        const PolicyParams central_k =
            train_centralized(central_cfg_k, env, pooled, central_seed);
        const double d_kl_cl_k = policy_kl(fl_k.state.global_params, central_k, probes);
        double eps_fl_k = 0.0;
        for (const auto& ledger : fl_k.state.ledgers)
          eps_fl_k = std::max(eps_fl_k, ledger.epsilon_total);
        PrivacyLedger cl_ledger_k;
        cl_ledger_k = accountant_update(cl_ledger_k, central_privacy, cl_epochs_k, 0);
        const auto& w = config.ope_weights;
        figure_rows.push_back(
            {static_cast<double>(round), plr_fl_k, plr_cl_k, d_kl_fl_k, d_kl_cl_k,
             ope(plr_fl_k, d_kl_fl_k, eps_fl_k, w.lambda1, w.lambda2, w.lambda3),
             ope(plr_cl_k, d_kl_cl_k, cl_ledger_k.epsilon_total, w.lambda1, w.lambda2,
                 w.lambda3)});
      }
    }
  }

  const auto& w = config.ope_weights;
  summary.ope_fl =
      ope(summary.plr_fl, summary.d_kl_fl, summary.epsilon_fl, w.lambda1, w.lambda2, w.lambda3);
  summary.ope_cl =
      ope(summary.plr_cl, summary.d_kl_cl, summary.epsilon_cl, w.lambda1, w.lambda2, w.lambda3);

  // Patch the final-round global row with the summary-level privacy metrics.
  for (auto& row : fl.log.rows) {
    if (row.round == config.federation.rounds - 1 && row.scope == "global") {
      if (config.plr.enabled) row.plr = summary.plr_fl;
      row.ope = summary.ope_fl;
    }
  }

  ArtifactWriter writer(config.output_dir);
  if (config.emit.count("csv") > 0) writer.write("metrics.csv", metrics_log_to_csv(fl.log));
  if (config.emit.count("json") > 0) {
    writer.write("summary.json", summary.to_json(config).dump(2) + "\n");
    if (config.plr.enabled) writer.write("plr_audit.json", plr_audit.dump(2) + "\n");
    nlohmann::json ledgers;
    ledgers["schema"] = "fdrl-ledger-1";
    nlohmann::json per_hospital = nlohmann::json::array();
    for (const auto& ledger : fl.state.ledgers)
      per_hospital.push_back(nlohmann::json::parse(ledger_to_json(ledger)));
    ledgers["hospitals"] = per_hospital;
    ledgers["central"] = nlohmann::json::parse(ledger_to_json(central_ledger));
    writer.write("ledger.json", ledgers.dump(2) + "\n");
  }
  if (config.emit.count("figure-data") > 0 && !figure_rows.empty()) {
    std::ostringstream fig;
    fig << "# schema: fdrl-fig3-1\n";
    fig << "round,plr_fl,plr_cl,d_kl_fl,d_kl_cl,ope_fl,ope_cl\n";
    for (const auto& row : figure_rows) {
      fig << static_cast<int>(row[0]);
      for (size_t c = 1; c < row.size(); ++c) fig << "," << fmt_double(row[c]);
      fig << "\n";
    }
    writer.write("fig3_rounds.csv", fig.str());
  }
  writer.commit();
  return summary;
}

std::vector<SweepCell> run_sweep(const ExperimentConfig& config) {
  if (!config.sweep.has_value()) throw std::invalid_argument("run_sweep: no sweep grid in config");
  std::vector<double> sigmas = config.sweep->sigmas;
  std::vector<double> hets = config.sweep->heterogeneities;
  std::sort(sigmas.begin(), sigmas.end());
  std::sort(hets.begin(), hets.end());

  struct CellSpec {
    double sigma;
    double het;
    size_t index;
  };
  std::vector<CellSpec> specs;
  for (double s : sigmas)
    for (double h : hets) specs.push_back({s, h, specs.size()});

  const EnvParams env = config.build_env();
  std::vector<SweepCell> cells(specs.size());

  auto run_cell = [&](const CellSpec& spec) {
    SweepCell cell;
    cell.sigma = spec.sigma;
    cell.heterogeneity = spec.het;
    try {
      FederationConfig fed = config.federation;
      fed.privacy.sigma = spec.sigma;
      fed.heterogeneity = spec.het;
      fed.master_seed = derive_seed(config.federation.master_seed, {kTagSweepCell, spec.index});
      const FederationContext ctx = make_federation_context(fed, env);
      const TrainingResult result = run_training(ctx, /*evaluate_metrics=*/false);

      const uint64_t eval_seed = derive_seed(fed.master_seed, {kTagSummaryEval});
      const std::vector<EvalEpisode> eval = rollout_episodes(
          result.state.global_params, env, ctx.profiles, config.summary_eval_episodes, eval_seed,
          /*greedy=*/true);
      const ProbeSet probes =
          ProbeSet::make(env, fed.probe_count, derive_seed(fed.master_seed, {kTagProbeSummary}));
      const double threshold = calibrate_adaptation_threshold(
          env, derive_seed(fed.master_seed, {kTagThresholdSummary}));

      cell.metrics.round = fed.rounds - 1;
      cell.metrics.scope = "global";
      cell.metrics.a_task = task_accuracy(eval);
      cell.metrics.r_mit = risk_mitigation(eval, env.risk_weights);
      const AdaptationRate adapt = adaptation_rate(eval, threshold);
      cell.metrics.alpha_adapt = adapt.switch_rate;
      cell.metrics.alpha_adapt_simple = adapt.significant_change_rate;
      cell.metrics.d_kl = fed.rounds > 0
                              ? average_policy_divergence(result.state.local_params,
                                                          result.state.global_params, probes)
                              : 0.0;
      for (const auto& ledger : result.state.ledgers)
        cell.metrics.epsilon = std::max(cell.metrics.epsilon, ledger.epsilon_total);
      if (config.plr.enabled && config.plr.in_sweep) {
        cell.metrics.plr = plr_federated_mean(ctx, config.plr.ensemble);
        const auto& w = config.ope_weights;
        cell.metrics.ope = ope(*cell.metrics.plr, cell.metrics.d_kl, cell.metrics.epsilon,
                               w.lambda1, w.lambda2, w.lambda3);
      }
    } catch (const std::exception& e) {
      cell.status = std::string("error: ") + e.what();
    }
    return cell;
  };

  // FDRL_THREADS caps the cell-level parallelism (default: hardware).
  size_t max_threads = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env_threads = std::getenv("FDRL_THREADS")) {
    const long parsed = std::strtol(env_threads, nullptr, 10);
    if (parsed >= 1) max_threads = static_cast<size_t>(parsed);
  }
  max_threads = std::min(max_threads, specs.size());

  if (max_threads <= 1) {
    for (const auto& spec : specs) cells[spec.index] = run_cell(spec);
  } else {
    std::vector<std::future<void>> futures;
    std::atomic<size_t> next{0};
    for (size_t t = 0; t < max_threads; ++t)
      futures.push_back(std::async(std::launch::async, [&]() {
        while (true) {
          const size_t i = next.fetch_add(1);
          if (i >= specs.size()) break;
          cells[specs[i].index] = run_cell(specs[i]);
        }
      }));
    for (auto& f : futures) f.get();
  }
  return cells;
}

std::string sweep_to_csv(const std::vector<SweepCell>& cells) {
  std::ostringstream ss;
  ss << "# schema: fdrl-sweep-1\n";
  ss << "sigma,heterogeneity,status,a_task,r_mit,alpha_adapt,alpha_adapt_simple,plr,d_kl,"
        "epsilon,ope\n";
  for (const auto& cell : cells) {
    ss << fmt_double(cell.sigma) << "," << fmt_double(cell.heterogeneity) << "," << cell.status
       << ",";
    if (cell.status == "ok") {
      ss << fmt_double(cell.metrics.a_task) << "," << fmt_double(cell.metrics.r_mit) << ",";
      if (cell.metrics.alpha_adapt.has_value()) ss << fmt_double(*cell.metrics.alpha_adapt);
      ss << "," << fmt_double(cell.metrics.alpha_adapt_simple) << ",";
      if (cell.metrics.plr.has_value()) ss << fmt_double(*cell.metrics.plr);
      ss << "," << fmt_double(cell.metrics.d_kl) << "," << fmt_double(cell.metrics.epsilon)
         << ",";
      if (cell.metrics.ope.has_value()) ss << fmt_double(*cell.metrics.ope);
    } else {
      ss << ",,,,,,,";
    }
    ss << "\n";
  }
  return ss.str();
}

nlohmann::json compare_runs(const std::string& fl_dir, const std::string& cl_dir) {
  auto load = [](const std::string& dir) {
    std::ifstream in(fs::path(dir) / "summary.json");
    if (!in) throw std::runtime_error("cannot open " + dir + "/summary.json");
    nlohmann::json j;
    in >> j;
    return j;
  };
  const nlohmann::json a = load(fl_dir);
  const nlohmann::json b = load(cl_dir);
  nlohmann::json out;
  out["fl_dir"] = fl_dir;
  out["cl_dir"] = cl_dir;
  nlohmann::json fields;
  for (const auto& [key, value] : a.items()) {
    if (!value.is_number()) continue;
    if (!b.contains(key) || !b.at(key).is_number()) continue;
    fields[key] = {{"fl", value.get<double>()},
                   {"cl", b.at(key).get<double>()},
                   {"delta", value.get<double>() - b.at(key).get<double>()}};
  }
  out["fields"] = fields;
  return out;
}

}  // namespace fdrl
