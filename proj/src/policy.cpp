#include "fdrl/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace fdrl {

PolicyParams PolicyParams::zeros(int action_count, int state_dim) {
  PolicyParams p;
  p.weights = Matrix(action_count, state_dim);
  p.bias.assign(static_cast<size_t>(action_count), 0.0);
  return p;
}

std::vector<double> PolicyParams::flatten() const {
  std::vector<double> flat;
  flat.reserve(static_cast<size_t>(flat_size()));
  flat.insert(flat.end(), weights.data.begin(), weights.data.end());
  flat.insert(flat.end(), bias.begin(), bias.end());
  return flat;
}

PolicyParams PolicyParams::from_flat(std::span<const double> flat, int action_count,
                                     int state_dim) {
  const size_t expected = static_cast<size_t>(action_count) * (state_dim + 1);
  if (flat.size() != expected) throw std::invalid_argument("from_flat: length mismatch");
  PolicyParams p = zeros(action_count, state_dim);
  std::copy(flat.begin(), flat.begin() + static_cast<long>(p.weights.data.size()),
            p.weights.data.begin());
  std::copy(flat.begin() + static_cast<long>(p.weights.data.size()), flat.end(), p.bias.begin());
  return p;
}

bool PolicyParams::finite() const {
  return all_finite(weights.data) && all_finite(bias);
}

std::vector<double> action_distribution(const PolicyParams& params,
                                        std::span<const double> state) {
  std::vector<double> logits = matvec(params.weights, state);
  add_in_place(logits, params.bias);
  const double max_logit = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (auto& z : logits) {
    z = std::exp(z - max_logit);
    sum += z;
  }
  for (auto& z : logits) z /= sum;
  return logits;
}

int greedy_action(const PolicyParams& params, std::span<const double> state) {
  std::vector<double> logits = matvec(params.weights, state);
  add_in_place(logits, params.bias);
  int best = 0;
  for (int a = 1; a < params.action_count(); ++a)
    if (logits[static_cast<size_t>(a)] > logits[static_cast<size_t>(best)]) best = a;
  return best;
}

int sample_action(const PolicyParams& params, std::span<const double> state, Rng& rng) {
  const std::vector<double> probs = action_distribution(params, state);
  const double u = rng.uniform();
  double cum = 0.0;
  for (size_t a = 0; a + 1 < probs.size(); ++a) {
    cum += probs[a];
    if (u < cum) return static_cast<int>(a);
  }
  return static_cast<int>(probs.size()) - 1;
}

LossGradient loss_and_gradient(const PolicyParams& params, const TrainBatch& batch,
                               const PolicyParams& global_params, double lambda) {
  if (batch.transitions.empty()) throw std::invalid_argument("loss_and_gradient: empty batch");
  if (batch.temperature <= 0) throw std::invalid_argument("loss_and_gradient: temperature must be > 0");
  if (lambda < 0) throw std::invalid_argument("loss_and_gradient: lambda must be >= 0");

  const int actions = params.action_count();
  const int dim = params.state_dim();
  const size_t n = batch.transitions.size();

  // Advantage weights exp(r/tau), normalized to mean 1 within the batch.
  std::vector<double> omega(n);
  double max_r = batch.transitions[0]->reward;
  for (const auto* tr : batch.transitions) max_r = std::max(max_r, tr->reward);
  double omega_sum = 0.0;
  for (size_t b = 0; b < n; ++b) {
    omega[b] = std::exp((batch.transitions[b]->reward - max_r) / batch.temperature);
    omega_sum += omega[b];
  }
  for (auto& w : omega) w *= static_cast<double>(n) / omega_sum;

  LossGradient out;
  out.gradient.assign(static_cast<size_t>(params.flat_size()), 0.0);
  std::span<double> grad_w(out.gradient.data(), params.weights.data.size());
  std::span<double> grad_b(out.gradient.data() + params.weights.data.size(),
                           static_cast<size_t>(actions));

  for (size_t b = 0; b < n; ++b) {
    const Transition& tr = *batch.transitions[b];
    const std::vector<double> probs = action_distribution(params, tr.state);
    out.loss += -omega[b] * std::log(probs[static_cast<size_t>(tr.action)]);
    for (int a = 0; a < actions; ++a) {
      // d(-log pi(a_b|s))/dz_a = pi(a|s) - 1{a == a_b}
      const double dz = probs[static_cast<size_t>(a)] - (a == tr.action ? 1.0 : 0.0);
      const double coeff = omega[b] * dz;
      for (int d = 0; d < dim; ++d)
        grad_w[static_cast<size_t>(a) * dim + d] += coeff * tr.state[static_cast<size_t>(d)];
      grad_b[static_cast<size_t>(a)] += coeff;
    }
  }
  out.loss /= static_cast<double>(n);
  for (auto& g : out.gradient) g /= static_cast<double>(n);

  // Proximal term (lambda/2)||theta - theta_g||^2.
  const std::vector<double> theta = params.flatten();
  const std::vector<double> theta_g = global_params.flatten();
  if (theta.size() != theta_g.size())
    throw std::invalid_argument("loss_and_gradient: global parameter shape mismatch");
  double prox = 0.0;
  for (size_t i = 0; i < theta.size(); ++i) {
    const double d = theta[i] - theta_g[i];
    prox += d * d;
    out.gradient[i] += lambda * d;
  }
  out.loss += 0.5 * lambda * prox;
  return out;
}

PolicyParams local_update(const PolicyParams& params, std::span<const double> noisy_gradient,
                          double eta, double lambda, const PolicyParams& global_params) {
  if (eta <= 0) throw std::invalid_argument("local_update: eta must be > 0");
  if (static_cast<int>(noisy_gradient.size()) != params.flat_size())
    throw std::invalid_argument("local_update: gradient length mismatch");
  if (!all_finite(noisy_gradient)) throw std::domain_error("local_update: non-finite gradient");

  std::vector<double> theta = params.flatten();
  const std::vector<double> theta_g = global_params.flatten();
  for (size_t i = 0; i < theta.size(); ++i)
    theta[i] = theta[i] - eta * noisy_gradient[i] + lambda * (theta_g[i] - theta[i]);
  return PolicyParams::from_flat(theta, params.action_count(), params.state_dim());
}

namespace {

double rollout_return(const PolicyParams& params, const EnvParams& env,
                      const HospitalProfile& profile, double gamma, Rng& init_rng,
                      Rng& step_rng, Rng& action_rng) {
  std::vector<double> state = sample_initial_state(profile, env, init_rng);
  double ret = 0.0;
  double disc = 1.0;
  for (int t = 0; t < env.episode_len; ++t) {
    const int action = sample_action(params, state, action_rng);
    StepOutcome o = step(state, action, env, step_rng);
    ret += disc * o.reward;
    disc *= gamma;
    state = std::move(o.next_state);
  }
  return ret;
}

}  // namespace

double estimate_cumulative_reward(const PolicyParams& params, const EnvParams& env,
                                  const std::vector<HospitalProfile>& profiles, int episodes,
                                  double gamma, uint64_t seed) {
  if (episodes < 1) throw std::invalid_argument("estimate_cumulative_reward: episodes must be >= 1");
  if (profiles.empty())
    throw std::invalid_argument("estimate_cumulative_reward: profiles must be non-empty");
  Rng init_rng = derive_rng(seed, {0x31});
  Rng step_rng = derive_rng(seed, {0x32});
  Rng action_rng = derive_rng(seed, {0x33});
  double total = 0.0;
  for (int e = 0; e < episodes; ++e) {
    const auto& profile = profiles[static_cast<size_t>(e) % profiles.size()];
    total += rollout_return(params, env, profile, gamma, init_rng, step_rng, action_rng);
  }
  return total / episodes;
}

double estimate_cumulative_reward(const PolicyParams& params, const EnvParams& env, int episodes,
                                  double gamma, uint64_t seed) {
  HospitalProfile reference;
  reference.hospital_id = 0;
  reference.n_samples = episodes * env.episode_len;
  reference.mean_shift.assign(static_cast<size_t>(env.state_dim), 0.0);
  reference.heterogeneity = 0.0;
  return estimate_cumulative_reward(params, env, {reference}, episodes, gamma, seed);
}

std::vector<uint8_t> checkpoint_bytes(const PolicyParams& params) {
  nlohmann::json header;
  header["schema"] = "fdrl-ckpt-1";
  header["state_dim"] = params.state_dim();
  header["action_count"] = params.action_count();
  const std::string head = header.dump();
  const std::vector<double> flat = params.flatten();

  std::vector<uint8_t> bytes;
  bytes.reserve(head.size() + 1 + flat.size() * sizeof(double));
  bytes.insert(bytes.end(), head.begin(), head.end());
  bytes.push_back('\n');
  const auto* raw = reinterpret_cast<const uint8_t*>(flat.data());
  bytes.insert(bytes.end(), raw, raw + flat.size() * sizeof(double));
  return bytes;
}

PolicyParams checkpoint_from_bytes(std::span<const uint8_t> bytes) {
  const auto nl = std::find(bytes.begin(), bytes.end(), static_cast<uint8_t>('\n'));
  if (nl == bytes.end()) throw std::runtime_error("checkpoint: missing header");
  const std::string head(bytes.begin(), nl);
  nlohmann::json header = nlohmann::json::parse(head);
  if (header.value("schema", "") != "fdrl-ckpt-1")
    throw std::runtime_error("checkpoint: unexpected schema");
  const int dim = header.at("state_dim").get<int>();
  const int actions = header.at("action_count").get<int>();
  const size_t count = static_cast<size_t>(actions) * (dim + 1);
  const size_t offset = static_cast<size_t>(nl - bytes.begin()) + 1;
  if (bytes.size() - offset != count * sizeof(double))
    throw std::runtime_error("checkpoint: payload size mismatch");
  std::vector<double> flat(count);
  std::memcpy(flat.data(), bytes.data() + offset, count * sizeof(double));
  return PolicyParams::from_flat(flat, actions, dim);
}

void write_checkpoint(const PolicyParams& params, std::ostream& out) {
  const std::vector<uint8_t> bytes = checkpoint_bytes(params);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<long>(bytes.size()));
}

PolicyParams read_checkpoint(std::istream& in) {
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string s = ss.str();
  return checkpoint_from_bytes(
      std::span<const uint8_t>(reinterpret_cast<const uint8_t*>(s.data()), s.size()));
}

}  // namespace fdrl
