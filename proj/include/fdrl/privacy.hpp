#pragma once

#include <span>
#include <string>
#include <vector>

#include "fdrl/rng.hpp"

namespace fdrl {

enum class NoiseMode { gradient_noise, parameter_noise, off };

std::string to_string(NoiseMode mode);
NoiseMode noise_mode_from_string(const std::string& s);

struct PrivacyConfig {
  double sigma = 0.1;      // Gaussian noise standard deviation
  double clip_norm = 1.0;  // C, L2 clipping bound
  double alpha = 2.0;      // RDP-style order, > 1
  NoiseMode mode = NoiseMode::gradient_noise;
};

struct LedgerEntry {
  int round = 0;
  double epsilon_delta = 0.0;
};

struct PrivacyLedger {
  double epsilon_total = 0.0;
  std::vector<LedgerEntry> contributions;
};

// g * min(1, C / ||g||). Output norm never exceeds C.
std::vector<double> clip(std::span<const double> gradient, double clip_norm);

// Element-wise i.i.d. N(0, sigma^2). sigma = 0 returns the input unchanged.
std::vector<double> add_gaussian_noise(std::span<const double> v, double sigma, Rng& rng);

// Per-application privacy cost alpha / (2 sigma^2). Throws std::domain_error
// when sigma == 0 (infinite budget).
double epsilon_step(double alpha, double sigma);

// Adds one round's contribution, local_epochs * epsilon_step, to a copy of the
// ledger (additive composition over epochs and rounds; hospitals' disjoint
// datasets compose in parallel, so the hospital count does not enter).
// mode == off contributes zero.
PrivacyLedger accountant_update(const PrivacyLedger& ledger, const PrivacyConfig& config,
                                int local_epochs, int round);

// JSON array of {round, epsilon_delta, epsilon_total}.
std::string ledger_to_json(const PrivacyLedger& ledger);

}  // namespace fdrl
