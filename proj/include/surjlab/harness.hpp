#pragma once

// End-to-end drivers: sequence inversion for stacks, retention, diffusion
// sampling and interleaved policies, plus non-surjectivity witnesses.
// Every driver replays its recovered input through the forward map.

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "surjlab/blocks.hpp"
#include "surjlab/solvers.hpp"

namespace surjlab {

/// g(x) = mlp(LN(x)) + x
struct PreLnMlpBlock {
  MlpParams mlp;
  LayerNormParams ln;

  void validate() const;
  friend bool operator==(const PreLnMlpBlock&, const PreLnMlpBlock&) = default;
};

Vector preln_mlp_forward(const PreLnMlpBlock& b, const Vector& x);
Matrix preln_mlp_jacobian(const PreLnMlpBlock& b, const Vector& x);

InversionResult invert_preln_block(const PreLnMlpBlock& b, const Vector& y, const SolveConfig& cfg);

/// Inverts one position of a GPT block with a frozen prefix of block inputs:
/// first the MLP residual stage, then the attention residual stage. Both are
/// Pre-LN maps of the last input.
InversionResult invert_preln_block(const TransformerBlockParams& b, const Sequence& prefix, const Vector& y,
                                   const SolveConfig& cfg);

/// Pre-LN attention layer g(a)_i = Attn(LN(a))_i + a_i at the position after
/// `prefix`.
Vector preln_attention_last(const AttentionParams& p, const LayerNormParams& ln, const Sequence& prefix,
                            const Vector& x);
Sequence preln_attention_forward(const AttentionParams& p, const LayerNormParams& ln, const Sequence& a);

struct SequenceInversion {
  Sequence inputs;
  std::vector<InversionResult> tokens;
  double replay_residual = 0.0;  // max over positions of the replayed output error
  bool all_converged = false;
};

SequenceInversion invert_preln_attention_sequence(const AttentionParams& p, const LayerNormParams& ln,
                                                  const Sequence& targets, const SolveConfig& cfg);

struct StackInversionOptions {
  GdConfig gd;
  SolveConfig solve;
  /// After GD + Newton, retry a failing token block by block with the Pre-LN
  /// fixed-point solver (top block first).
  bool staged_fallback = true;
};

/// One token of a stack with the prefix frozen: GD, Newton polish, then the
/// staged fallback.
InversionResult invert_stack_token(const StackParams& s, const Sequence& prefix, const Vector& target,
                                   const StackInversionOptions& opts);

SequenceInversion invert_transformer_sequence(const StackParams& s, const Sequence& targets,
                                              const StackInversionOptions& opts);

/// Token 1 in closed form, later tokens through the cubic solver on the
/// accumulated state. Works for every gating.
SequenceInversion invert_retention_sequence(const RetentionParams& p, const Sequence& targets,
                                            const CubicSolveConfig& cfg);

/// Closed-form first token a₁ = s·V⁻¹b₁, s = (wᵀKᵀQw)^(-1/3), w = V⁻¹b₁.
Vector retention_first_token(const RetentionParams& p, const Vector& b1);

// ---------------------------------------------------------------------------
// Diffusion: Euler steps x_{k+1} = x_k + Δ_k·v(x_k, z_k) with
// v(x, z) = velocity([LN(x); z]).

struct DiffusionSchedule {
  std::vector<double> knots;  // 0 = z_1 < ... < z_m = 1
  MlpParams velocity;         // input d + 1, output d
  LayerNormParams ln;

  static std::vector<double> uniform_knots(int steps);
  std::size_t dim() const { return ln.dim(); }
  void validate() const;
  friend bool operator==(const DiffusionSchedule&, const DiffusionSchedule&) = default;
};

Vector diffusion_velocity(const DiffusionSchedule& s, const Vector& x, double z);
/// Trajectory x(z_1) … x(z_m) starting from the noise.
Sequence diffusion_trajectory(const DiffusionSchedule& s, const Vector& noise);
Vector diffusion_sample(const DiffusionSchedule& s, const Vector& noise);

struct DiffusionInversion {
  Vector noise;
  std::vector<InversionResult> steps;  // last Euler step first
  double replay_error = 0.0;
  bool converged = false;
};

DiffusionInversion invert_diffusion(const DiffusionSchedule& s, const Vector& target, const SolveConfig& cfg);

// ---------------------------------------------------------------------------
// Interleaved policy: the stack reads a₁, b₁, a₂, b₂, … and emits the
// action b_t at the position of observation a_t.

Sequence policy_rollout(const StackParams& s, const Sequence& observations);

struct PolicyInversion {
  Sequence observations;
  std::vector<InversionResult> steps;
  double replay_error = 0.0;  // closed-loop, max over actions
  bool all_converged = false;
};

PolicyInversion invert_interleaved_policy(const StackParams& s, const Sequence& actions,
                                          const StackInversionOptions& opts);

// ---------------------------------------------------------------------------
// Witnesses

struct CertifiedGap {
  double gap = 0.0;
};

struct EmpiricalFloor {
  double residual_floor = 0.0;
  int restarts = 0;
  int success_targets_checked = 0;  // sanity targets that inverted to tol
  int success_targets_total = 0;
};

// Every activation pattern of a piecewise-linear map was solved and none
// produced a consistent pre-image.
struct ExhaustiveEnumeration {
  std::size_t patterns = 0;
};

struct Witness {
  Sequence target;
  std::variant<CertifiedGap, EmpiricalFloor, ExhaustiveEnumeration> evidence;
  std::string context;
};

/// Checks y against a two-layer LeakyReLU MLP by pattern enumeration;
/// returns a witness when y has no pre-image, nullopt otherwise.
std::optional<Witness> leaky_mlp_unreachable_certificate(const MlpParams& p, const Vector& y);

/// y = λ₂ + W₂v with v having a negative entry, normalized to ‖y - λ₂‖ = 1;
/// the NNLS residual of W₂z = y - λ₂ over z >= 0 bounds inf_x ‖f(x) - y‖.
Witness relu_mlp_unreachable_witness(const MlpParams& p, Seed seed, int draws = 64);

struct AttentionScan {
  Vector direction;     // u with uᵀKᵀQu < 0
  double curvature;     // uᵀKᵀQu
  double sup;           // sup over ρ > 0 of ‖σ(ρ²q)·ρ·Vu‖
  double argmax;        // ρ attaining it
};

/// Dead direction (most negative eigenvector of the symmetric part of KᵀQ)
/// and the reachable magnitude along Vu. Throws NoDeadDirection.
AttentionScan attention_dead_direction_scan(const AttentionParams& p);

/// Output at position 2 with a₁ = 0 and a₂ = x.
Vector attention_pinned_output(const AttentionParams& p, const Vector& x);

struct PairInversion {
  Vector x;
  double residual;
};

/// Multi-start least-squares inversion of attention_pinned_output.
PairInversion attention_pinned_invert(const AttentionParams& p, const Vector& target, int restarts, Seed seed,
                                      double tol);

/// Two-position witness: b₁ = 0 pins a₁ = 0, b₂ = 10·sup·Vu/‖Vu‖.
Witness attention_unreachable_witness(const AttentionParams& p, const SolveConfig& cfg);

/// Post-LN block LN(f(x) + x) with f a bias-free MLP: finds x with
/// LN(f(x) + x) = target by Newton from 0 on f(x) + x = μv, halving μ.
InversionResult postln_local_surjectivity_check(const MlpParams& f, const LayerNormParams& ln,
                                                const Vector& target_on_s, const SolveConfig& cfg);

}  // namespace surjlab
