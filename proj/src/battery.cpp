#include "surjlab/battery.hpp"

#include <algorithm>
#include <cstdio>

#include "surjlab/error.hpp"
#include "surjlab/generate.hpp"

namespace surjlab {

std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::Surjective: return "Surjective";
    case Verdict::NotSurjective: return "NotSurjective";
    case Verdict::EmpiricallySurjective: return "EmpiricallySurjective";
  }
  return "Unknown";
}

bool VerdictReport::matches_expected() const {
  return std::all_of(rows.begin(), rows.end(), [](const BatteryRow& r) { return r.verdict == r.expected; });
}

std::string digest_hex(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

BatteryRow make_row(std::string name, std::size_t d, Verdict expected) {
  BatteryRow row;
  row.architecture = std::move(name);
  row.dim = d;
  row.expected = expected;
  return row;
}

void record(BatteryRow& row, InversionResult r) {
  ++row.attempts;
  if (r.converged) {
    ++row.successes;
    row.max_residual = std::max(row.max_residual, r.residual);
  }
  r.trace.clear();  // keep reports small
  row.results.push_back(std::move(r));
}

InversionResult from_error(std::size_t d, const Error& e) {
  InversionResult r;
  r.x = Vector(d);
  r.note = std::string(to_string(e.code())) + ": " + e.what();
  return r;
}

// A witness decides the row; otherwise the success rate does. Rows without
// a constructive inverter can at best be empirically surjective.
void decide(BatteryRow& row, bool constructive) {
  std::vector<double> res;
  for (const auto& r : row.results) res.push_back(r.residual);
  if (!res.empty()) {
    std::sort(res.begin(), res.end());
    row.median_residual = res[res.size() / 2];
  }
  char buf[256];
  if (row.witnesses_found > 0) {
    row.verdict = Verdict::NotSurjective;
    std::snprintf(buf, sizeof buf, "%d/%d checks produced a witness", row.witnesses_found, row.witness_attempts);
  } else if (row.attempts > 0 && row.success_rate() >= row.threshold) {
    row.verdict = constructive ? Verdict::Surjective : Verdict::EmpiricallySurjective;
    std::snprintf(buf, sizeof buf, "%d/%d inversions converged (threshold %.2f)", row.successes, row.attempts,
                  row.threshold);
  } else if (row.attempts == 0) {
    row.verdict = Verdict::EmpiricallySurjective;
    std::snprintf(buf, sizeof buf, "no witness in %d instances", row.witness_attempts);
  } else {
    row.verdict = Verdict::NotSurjective;
    std::snprintf(buf, sizeof buf, "%d/%d inversions converged, below threshold %.2f", row.successes, row.attempts,
                  row.threshold);
  }
  row.evidence = buf;
}

BatteryRow leaky_row(std::size_t d, const BatteryConfig& c, Seed seed) {
  BatteryRow row = make_row("MLP + LeakyReLU", d, Verdict::Surjective);
  CubicSolveConfig cfg;
  cfg.tol = c.tol;
  for (int t = 0; t < c.trials; ++t) {
    const Seed ts = derive_seed(seed, t);
    const MlpParams p = random_mlp({d, 2 * d, d}, Activation::leaky_relu(0.25), derive_seed(ts, "params"));
    for (int k = 0; k < c.targets_per_trial; ++k) {
      const Vector y = seeded_gaussian_vector(d, derive_seed(ts, "target", k)) * 2.0;
      bool converged = false;
      try {
        InversionResult r = leaky_mlp_invert_homotopy(p, y, cfg);
        converged = r.converged;
        record(row, std::move(r));
      } catch (const Error& e) {
        if (e.code() != ErrorCode::PathFailure && e.code() != ErrorCode::SingularMatrix) throw;
        record(row, from_error(d, e));
      }
      // A failed target is either a solver miss or truly unreachable; the
      // pattern enumeration decides which.
      if (!converged) {
        ++row.witness_attempts;
        if (auto w = leaky_mlp_unreachable_certificate(p, y)) {
          ++row.witnesses_found;
          row.witnesses.push_back(std::move(*w));
        }
      }
    }
  }
  decide(row, true);
  return row;
}

BatteryRow relu_row(std::size_t d, const BatteryConfig& c, Seed seed) {
  BatteryRow row = make_row("MLP + ReLU", d, Verdict::NotSurjective);
  for (int t = 0; t < c.trials; ++t) {
    const Seed ts = derive_seed(seed, t);
    const MlpParams p = random_mlp({d, d + 1, d}, Activation::relu(), derive_seed(ts, "params"));
    ++row.witness_attempts;
    try {
      row.witnesses.push_back(relu_mlp_unreachable_witness(p, derive_seed(ts, "witness")));
      ++row.witnesses_found;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::WitnessNotFound) throw;
    }
  }
  decide(row, false);
  return row;
}

BatteryRow preln_mlp_row(std::size_t d, const BatteryConfig& c, Seed seed) {
  BatteryRow row = make_row("MLP + Pre-LN", d, Verdict::Surjective);
  row.threshold = 1.0;
  SolveConfig cfg;
  cfg.tol = c.tol;
  for (int t = 0; t < c.trials; ++t) {
    const Seed ts = derive_seed(seed, t);
    const PreLnMlpBlock b = random_preln_mlp(d, 4 * d, derive_seed(ts, "params"));
    for (int k = 0; k < c.targets_per_trial; ++k) {
      cfg.seed = derive_seed(ts, "solve", k);
      record(row, invert_preln_block(b, random_in_ball(d, 100.0, derive_seed(ts, "target", k)), cfg));
    }
  }
  decide(row, true);
  return row;
}

BatteryRow attention_row(std::size_t d, const BatteryConfig& c, Seed seed) {
  BatteryRow row = make_row("Attention", d, Verdict::NotSurjective);
  SolveConfig cfg;
  cfg.tol = c.tol;
  cfg.restarts = 20;
  for (int t = 0; t < c.trials; ++t) {
    const Seed ts = derive_seed(seed, t);
    const AttentionParams p = random_attention(d, derive_seed(ts, "params"));
    cfg.seed = derive_seed(ts, "witness");
    ++row.witness_attempts;
    try {
      Witness w = attention_unreachable_witness(p, cfg);
      const auto& floor = std::get<EmpiricalFloor>(w.evidence);
      const bool established = floor.residual_floor > 0.1 * norm(w.target.back()) &&
                               floor.success_targets_total > 0 &&
                               floor.success_targets_checked == floor.success_targets_total;
      if (established) {
        ++row.witnesses_found;
        row.witnesses.push_back(std::move(w));
      }
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NoDeadDirection) throw;
    }
  }
  decide(row, false);
  return row;
}

BatteryRow preln_attention_row(std::size_t d, const BatteryConfig& c, Seed seed) {
  BatteryRow row = make_row("Attention + Pre-LN", d, Verdict::Surjective);
  row.threshold = 1.0;
  SolveConfig cfg;
  cfg.tol = c.tol;
  for (int t = 0; t < c.trials; ++t) {
    const Seed ts = derive_seed(seed, t);
    const AttentionParams p = random_attention(d, derive_seed(ts, "params"));
    Sequence targets;
    for (int k = 0; k < c.targets_per_trial; ++k) {
      targets.push_back(random_in_ball(d, 100.0, derive_seed(ts, "target", k)));
    }
    cfg.seed = derive_seed(ts, "solve");
    SequenceInversion inv = invert_preln_attention_sequence(p, LayerNormParams::standard(d), targets, cfg);
    for (auto& r : inv.tokens) record(row, std::move(r));
  }
  decide(row, true);
  return row;
}

BatteryRow retention_row(std::size_t d, const BatteryConfig& c, Seed seed) {
  BatteryRow row = make_row("Linear Attention", d, Verdict::Surjective);
  CubicSolveConfig cfg;
  cfg.tol = c.tol;
  for (int t = 0; t < c.trials; ++t) {
    const Seed ts = derive_seed(seed, t);
    const RetentionParams p = random_retention(d, GatingKind::None, derive_seed(ts, "params"));
    const Sequence targets =
        random_sequence(static_cast<std::size_t>(c.targets_per_trial), d, 1.0, derive_seed(ts, "target"));
    cfg.seed = derive_seed(ts, "solve");
    SequenceInversion inv = invert_retention_sequence(p, targets, cfg);
    for (auto& r : inv.tokens) record(row, std::move(r));
  }
  decide(row, true);
  return row;
}

}  // namespace

VerdictReport run_verdict_battery(const BatteryConfig& config) {
  if (config.trials < 1 || config.targets_per_trial < 1) throw Error(ErrorCode::InvalidArgument, "trials must be >= 1");
  if (config.dims.empty()) throw Error(ErrorCode::InvalidArgument, "no dimensions requested");
  VerdictReport report;
  report.config = config;
  std::string canon = "battery/v1 seed=" + std::to_string(config.seed.value) + " trials=" +
                      std::to_string(config.trials) + " targets=" + std::to_string(config.targets_per_trial) +
                      " tol=" + std::to_string(config.tol) + " dims=";
  for (std::size_t d : config.dims) {
    if (d < 2) throw Error(ErrorCode::InvalidArgument, "battery dimensions must be >= 2");
    canon += std::to_string(d) + ",";
    const Seed s = derive_seed(config.seed, "dim", d);
    report.rows.push_back(leaky_row(d, config, derive_seed(s, "leaky")));
    report.rows.push_back(relu_row(d, config, derive_seed(s, "relu")));
    report.rows.push_back(preln_mlp_row(d, config, derive_seed(s, "preln-mlp")));
    report.rows.push_back(attention_row(d, config, derive_seed(s, "attention")));
    report.rows.push_back(preln_attention_row(d, config, derive_seed(s, "preln-attention")));
    report.rows.push_back(retention_row(d, config, derive_seed(s, "retention")));
  }
  report.config_digest = digest_hex(canon);
  return report;
}

}  // namespace surjlab
