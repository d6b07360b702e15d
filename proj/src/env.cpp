#include "fdrl/env.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>

#include <json.hpp>

namespace fdrl {

namespace {

constexpr uint64_t kTagDynamics = 0x11;
constexpr uint64_t kTagExpert = 0x12;
constexpr uint64_t kTagForce = 0x13;
constexpr uint64_t kTagInitial = 0x21;
constexpr uint64_t kTagSteps = 0x22;
constexpr uint64_t kTagBehavior = 0x23;

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Spectral norm by power iteration on A^T A; deterministic start vector.
double spectral_norm(const Matrix& a) {
  std::vector<double> v(static_cast<size_t>(a.cols), 1.0 / std::sqrt(a.cols));
  double sigma = 0.0;
  for (int it = 0; it < 100; ++it) {
    std::vector<double> av = matvec(a, v);
    std::vector<double> atav(static_cast<size_t>(a.cols), 0.0);
    for (int r = 0; r < a.rows; ++r)
      for (int c = 0; c < a.cols; ++c) atav[static_cast<size_t>(c)] += a.at(r, c) * av[static_cast<size_t>(r)];
    const double norm = l2_norm(atav);
    if (norm == 0.0) return 0.0;
    for (size_t i = 0; i < atav.size(); ++i) v[i] = atav[i] / norm;
    sigma = std::sqrt(norm);
  }
  return sigma;
}

Matrix random_matrix(int rows, int cols, Rng& rng) {
  Matrix m(rows, cols);
  for (auto& x : m.data) x = rng.normal();
  return m;
}

void normalize_rows(Matrix& m) {
  for (int r = 0; r < m.rows; ++r) {
    const double norm = l2_norm(m.row(r));
    if (norm > 0)
      for (int c = 0; c < m.cols; ++c) m.at(r, c) /= norm;
  }
}

}  // namespace

void EnvParams::validate() const {
  if (state_dim <= 0 || action_count <= 0 || episode_len <= 0)
    throw std::invalid_argument("EnvParams: dimensions must be positive");
  const double wsum = risk_weights[0] + risk_weights[1] + risk_weights[2];
  if (std::abs(wsum - 1.0) > 1e-9)
    throw std::invalid_argument("EnvParams: risk weights must sum to 1");
  for (double w : risk_weights)
    if (w < 0) throw std::invalid_argument("EnvParams: risk weights must be non-negative");
  if (critical_error_prob < 0 || critical_error_prob > 1)
    throw std::invalid_argument("EnvParams: critical_error_prob outside [0,1]");
  if (transition_noise_std < 0)
    throw std::invalid_argument("EnvParams: transition_noise_std must be >= 0");
  if (discount < 0 || discount > 1) throw std::invalid_argument("EnvParams: discount outside [0,1]");
  if (static_cast<int>(dynamics.size()) != action_count)
    throw std::invalid_argument("EnvParams: one dynamics matrix per action required");
  for (const auto& a : dynamics) {
    if (a.rows != state_dim || a.cols != state_dim)
      throw std::invalid_argument("EnvParams: dynamics matrix dimension mismatch");
    if (spectral_norm(a) > 1.0 + 1e-9)
      throw std::invalid_argument("EnvParams: dynamics spectral norm exceeds 1");
  }
  if (expert_matrix.rows != action_count || expert_matrix.cols != state_dim)
    throw std::invalid_argument("EnvParams: expert matrix dimension mismatch");
  if (force_rows.rows != action_count || force_rows.cols != state_dim)
    throw std::invalid_argument("EnvParams: force rows dimension mismatch");
}

namespace {

// Gram-Schmidt orthonormalization of the rows; the result is orthogonal, so
// the dynamics preserve state magnitude and trajectories neither collapse to
// the noise floor nor blow up within an episode.
void orthonormalize_rows(Matrix& m, Rng& rng) {
  for (int r = 0; r < m.rows; ++r) {
    for (int attempts = 0;; ++attempts) {
      for (int p = 0; p < r; ++p) {
        const double proj = dot(m.row(r), m.row(p));
        for (int c = 0; c < m.cols; ++c) m.at(r, c) -= proj * m.at(p, c);
      }
      const double norm = l2_norm(m.row(r));
      if (norm > 1e-8) {
        for (int c = 0; c < m.cols; ++c) m.at(r, c) /= norm;
        break;
      }
      if (attempts > 8) throw std::runtime_error("orthonormalize_rows: degenerate basis");
      for (int c = 0; c < m.cols; ++c) m.at(r, c) = rng.normal();
    }
  }
}

}  // namespace

EnvParams make_default_env(uint64_t env_seed) { return make_default_env(env_seed, 5, 3); }

EnvParams make_default_env(uint64_t env_seed, int state_dim, int action_count) {
  EnvParams env;
  env.state_dim = state_dim;
  env.action_count = action_count;
  Rng dyn_rng = derive_rng(env_seed, {kTagDynamics});
  env.dynamics.reserve(static_cast<size_t>(env.action_count));
  for (int a = 0; a < env.action_count; ++a) {
    Matrix m = random_matrix(env.state_dim, env.state_dim, dyn_rng);
    orthonormalize_rows(m, dyn_rng);
    for (auto& x : m.data) x *= 0.98;
    env.dynamics.push_back(std::move(m));
  }
  // Expert rows share a common component so the decision margins between
  // actions are moderate rather than near-orthogonal; the benchmark stays
  // linearly realizable but noise in a learned policy's direction costs
  // measurable accuracy.
  Rng expert_rng = derive_rng(env_seed, {kTagExpert});
  env.expert_matrix = random_matrix(env.action_count, env.state_dim, expert_rng);
  normalize_rows(env.expert_matrix);
  {
    std::vector<double> base(static_cast<size_t>(env.state_dim));
    for (auto& x : base) x = expert_rng.normal();
    const double base_norm = l2_norm(base);
    for (auto& x : base) x /= base_norm;
    const double mix = 0.5;
    for (int a = 0; a < env.action_count; ++a)
      for (int d = 0; d < env.state_dim; ++d)
        env.expert_matrix.at(a, d) =
            mix * base[static_cast<size_t>(d)] + (1.0 - mix) * env.expert_matrix.at(a, d);
    normalize_rows(env.expert_matrix);
  }
  Rng force_rng = derive_rng(env_seed, {kTagForce});
  env.force_rows = random_matrix(env.action_count, env.state_dim, force_rng);
  normalize_rows(env.force_rows);
  env.validate();
  return env;
}

std::vector<HospitalProfile> make_hospital_profiles(int count, int n_samples,
                                                    double heterogeneity, int state_dim) {
  std::vector<HospitalProfile> profiles;
  profiles.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    HospitalProfile p;
    p.hospital_id = i;
    p.n_samples = n_samples;
    p.heterogeneity = heterogeneity;
    p.mean_shift.assign(static_cast<size_t>(state_dim), 0.0);
    p.mean_shift[static_cast<size_t>(i % state_dim)] = 1.0;
    profiles.push_back(std::move(p));
  }
  return profiles;
}

int expert_action(std::span<const double> state, const EnvParams& env) {
  for (double x : state)
    if (!std::isfinite(x)) throw std::invalid_argument("expert_action: non-finite state");
  const std::vector<double> scores = matvec(env.expert_matrix, state);
  int best = 0;
  for (int a = 1; a < env.action_count; ++a)
    if (scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(best)]) best = a;
  return best;
}

double step_risk_value(double force, double tissue_damage, int critical_error,
                       const std::array<double, 3>& weights) {
  return weights[0] * force + weights[1] * tissue_damage + weights[2] * critical_error;
}

StepOutcome step(std::span<const double> state, int action, const EnvParams& env, Rng& rng) {
  if (action < 0 || action >= env.action_count)
    throw std::out_of_range("step: action out of range");
  for (double x : state)
    if (!std::isfinite(x)) throw std::invalid_argument("step: non-finite state");

  const int expert = expert_action(state, env);

  StepOutcome out;
  out.next_state = matvec(env.dynamics[static_cast<size_t>(action)], state);
  for (auto& x : out.next_state) x += rng.normal(0.0, env.transition_noise_std);

  out.force = std::min(1.0, std::abs(dot(env.force_rows.row(action), state)) / env.force_scale);

  // Damage grows with deviation of the realized next state from the expert's
  // nominal next state.
  const std::vector<double> expert_next =
      matvec(env.dynamics[static_cast<size_t>(expert)], state);
  out.tissue_damage = logistic(l2_distance(out.next_state, expert_next) - env.damage_margin);

  out.critical_error =
      (action != expert && rng.bernoulli(env.critical_error_prob)) ? 1 : 0;

  const double risk =
      step_risk_value(out.force, out.tissue_damage, out.critical_error, env.risk_weights);
  out.reward = (action == expert ? 1.0 : 0.0) - risk;
  return out;
}

std::vector<double> sample_initial_state(const HospitalProfile& profile, const EnvParams& env,
                                         Rng& rng) {
  std::vector<double> s(static_cast<size_t>(env.state_dim));
  for (int d = 0; d < env.state_dim; ++d) {
    double mean = 0.0;
    if (d < static_cast<int>(profile.mean_shift.size()))
      mean = profile.heterogeneity * profile.mean_shift[static_cast<size_t>(d)];
    s[static_cast<size_t>(d)] = rng.normal(mean, 1.0);
  }
  return s;
}

Dataset generate_dataset(const HospitalProfile& profile, const EnvParams& env, uint64_t seed,
                         double behavior_epsilon) {
  env.validate();
  if (profile.n_samples <= 0) throw std::invalid_argument("generate_dataset: n_samples must be > 0");
  if (profile.n_samples % env.episode_len != 0)
    throw std::invalid_argument("generate_dataset: n_samples must be a multiple of episode_len");
  if (behavior_epsilon < 0 || behavior_epsilon > 1)
    throw std::invalid_argument("generate_dataset: behavior_epsilon outside [0,1]");

  const uint64_t hid = static_cast<uint64_t>(profile.hospital_id);
  Rng init_rng = derive_rng(seed, {kTagInitial, hid});
  Rng step_rng = derive_rng(seed, {kTagSteps, hid});
  Rng behavior_rng = derive_rng(seed, {kTagBehavior, hid});

  Dataset ds;
  ds.hospital_id = profile.hospital_id;
  ds.behavior_epsilon = behavior_epsilon;
  ds.episode_len = env.episode_len;
  ds.transitions.reserve(static_cast<size_t>(profile.n_samples));

  const int episodes = profile.n_samples / env.episode_len;
  for (int e = 0; e < episodes; ++e) {
    std::vector<double> state = sample_initial_state(profile, env, init_rng);
    for (int t = 0; t < env.episode_len; ++t) {
      const int expert = expert_action(state, env);
      int action = expert;
      if (behavior_rng.bernoulli(behavior_epsilon))
        action = behavior_rng.uniform_int(env.action_count);
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
      ds.transitions.push_back(std::move(tr));
      state = ds.transitions.back().next_state;
    }
  }
  return ds;
}

void write_dataset_jsonl(const Dataset& ds, std::ostream& out) {
  nlohmann::json header;
  header["schema"] = "fdrl-ds-1";
  header["hospital_id"] = ds.hospital_id;
  header["behavior_epsilon"] = ds.behavior_epsilon;
  header["episode_len"] = ds.episode_len;
  out << header.dump() << "\n";
  for (const auto& tr : ds.transitions) {
    nlohmann::json j;
    j["s"] = tr.state;
    j["a"] = tr.action;
    j["r"] = tr.reward;
    j["s2"] = tr.next_state;
    j["f"] = tr.force;
    j["td"] = tr.tissue_damage;
    j["c"] = tr.critical_error;
    j["ax"] = tr.expert_action;
    out << j.dump() << "\n";
  }
}

Dataset read_dataset_jsonl(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("dataset: empty stream");
  nlohmann::json header = nlohmann::json::parse(line);
  if (header.value("schema", "") != "fdrl-ds-1")
    throw std::runtime_error("dataset: unexpected schema");
  Dataset ds;
  ds.hospital_id = header.at("hospital_id").get<int>();
  ds.behavior_epsilon = header.at("behavior_epsilon").get<double>();
  ds.episode_len = header.at("episode_len").get<int>();
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    Transition tr;
    tr.state = j.at("s").get<std::vector<double>>();
    tr.action = j.at("a").get<int>();
    tr.reward = j.at("r").get<double>();
    tr.next_state = j.at("s2").get<std::vector<double>>();
    tr.force = j.at("f").get<double>();
    tr.tissue_damage = j.at("td").get<double>();
    tr.critical_error = j.at("c").get<int>();
    tr.expert_action = j.at("ax").get<int>();
    ds.transitions.push_back(std::move(tr));
  }
  return ds;
}

}  // namespace fdrl
