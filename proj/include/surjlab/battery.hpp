#pragma once

// Per-architecture surjectivity battery: random parameters and targets,
// the matching inverter or witness, and a verdict per row.

#include <string>
#include <vector>

#include "surjlab/harness.hpp"

namespace surjlab {

enum class Verdict { Surjective, NotSurjective, EmpiricallySurjective };
std::string_view to_string(Verdict v);

struct BatteryRow {
  std::string architecture;
  std::size_t dim = 0;
  Verdict expected = Verdict::Surjective;
  Verdict verdict = Verdict::Surjective;
  double threshold = 0.99;  // required inversion success rate
  int attempts = 0;         // inversions attempted
  int successes = 0;
  int witness_attempts = 0;
  int witnesses_found = 0;
  double max_residual = 0.0;     // over converged inversions
  double median_residual = 0.0;  // over all inversions
  std::vector<InversionResult> results;
  std::vector<Witness> witnesses;
  std::string evidence;

  double success_rate() const { return attempts == 0 ? 0.0 : static_cast<double>(successes) / attempts; }
};

struct BatteryConfig {
  Seed seed{};
  std::vector<std::size_t> dims{4};
  int trials = 20;
  int targets_per_trial = 5;
  double tol = 1e-8;
};

struct VerdictReport {
  std::vector<BatteryRow> rows;
  BatteryConfig config;
  std::string config_digest;

  bool matches_expected() const;
};

/// Row order: MLP + LeakyReLU, MLP + ReLU, MLP + Pre-LN, Attention,
/// Attention + Pre-LN, Linear Attention (for each d in config.dims).
VerdictReport run_verdict_battery(const BatteryConfig& config);

/// FNV-1a digest, hex encoded.
std::string digest_hex(std::string_view text);

}  // namespace surjlab
