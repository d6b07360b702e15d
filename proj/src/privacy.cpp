#include "fdrl/privacy.hpp"

#include <cmath>
#include <stdexcept>

#include <json.hpp>

namespace fdrl {

std::string to_string(NoiseMode mode) {
  switch (mode) {
    case NoiseMode::gradient_noise: return "gradient-noise";
    case NoiseMode::parameter_noise: return "parameter-noise";
    case NoiseMode::off: return "off";
  }
  throw std::logic_error("unknown noise mode");
}

NoiseMode noise_mode_from_string(const std::string& s) {
  if (s == "gradient-noise") return NoiseMode::gradient_noise;
  if (s == "parameter-noise") return NoiseMode::parameter_noise;
  if (s == "off") return NoiseMode::off;
  throw std::invalid_argument("unknown noise mode: " + s);
}

std::vector<double> clip(std::span<const double> gradient, double clip_norm) {
  if (clip_norm <= 0) throw std::invalid_argument("clip: clip_norm must be > 0");
  double norm_sq = 0.0;
  for (double g : gradient) norm_sq += g * g;
  const double norm = std::sqrt(norm_sq);
  std::vector<double> out(gradient.begin(), gradient.end());
  if (norm > clip_norm) {
    const double factor = clip_norm / norm;
    for (auto& g : out) g *= factor;
  }
  return out;
}

std::vector<double> add_gaussian_noise(std::span<const double> v, double sigma, Rng& rng) {
  if (sigma < 0) throw std::invalid_argument("add_gaussian_noise: sigma must be >= 0");
  std::vector<double> out(v.begin(), v.end());
  if (sigma == 0.0) return out;
  for (auto& x : out) x += rng.normal(0.0, sigma);
  return out;
}

double epsilon_step(double alpha, double sigma) {
  if (alpha <= 1) throw std::invalid_argument("epsilon_step: alpha must be > 1");
  if (sigma < 0) throw std::invalid_argument("epsilon_step: sigma must be >= 0");
  if (sigma == 0.0) throw std::domain_error("epsilon_step: sigma = 0 gives an unbounded budget");
  return alpha / (2.0 * sigma * sigma);
}

PrivacyLedger accountant_update(const PrivacyLedger& ledger, const PrivacyConfig& config,
                                int local_epochs, int round) {
  if (local_epochs < 1) throw std::invalid_argument("accountant_update: local_epochs must be >= 1");
  PrivacyLedger next = ledger;
  double delta = 0.0;
  if (config.mode != NoiseMode::off)
    delta = local_epochs * epsilon_step(config.alpha, config.sigma);
  next.contributions.push_back({round, delta});
  next.epsilon_total += delta;
  return next;
}

std::string ledger_to_json(const PrivacyLedger& ledger) {
  nlohmann::json arr = nlohmann::json::array();
  double running = 0.0;
  for (const auto& entry : ledger.contributions) {
    running += entry.epsilon_delta;
    arr.push_back({{"round", entry.round},
                   {"epsilon_delta", entry.epsilon_delta},
                   {"epsilon_total", running}});
  }
  return arr.dump(2);
}

}  // namespace fdrl
