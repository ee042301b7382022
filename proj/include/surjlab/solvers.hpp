#pragma once

// Pre-image solvers. Each returns an InversionResult whose residual was
// recomputed by an independent forward evaluation of the original map.

#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "surjlab/blocks.hpp"
#include "surjlab/numerics.hpp"

namespace surjlab {

struct SolveConfig {
  double tol = 1e-8;  // residual norm target
  int max_iters = 500;
  double damping = 1.0;  // Picard ω in (0, 1]
  int anderson_depth = 5;
  int restarts = 8;
  Seed seed{};

  void validate() const;
};

/// Defaults: lr 0.1, 200 steps,
/// all-zero initial token.
struct GdConfig {
  double learning_rate = 0.1;
  int steps = 200;
  std::optional<Vector> init;  // all-zero when empty
  double tol = 1e-8;           // early exit once the residual is this small
  bool backtracking = false;   // halve the step until the loss decreases

  void validate() const;
};

struct CubicSolveConfig {
  double delta = 1e-3;  // cone-exclusion threshold
  double t_step_init = 0.1;
  double t_step_min = 1e-4;
  int newton_iters_per_step = 20;
  double tol = 1e-8;
  int restarts = 256;  // seeded Newton restarts after the path fallbacks
  Seed seed{};

  void validate() const;
};

enum class Method { FixedPoint, Anderson, Newton, Homotopy, GradientDescent, Exact };
std::string_view to_string(Method m);

struct InversionResult {
  Vector x;
  double residual = std::numeric_limits<double>::infinity();
  int iters = 0;
  Method method = Method::Exact;
  bool converged = false;
  double ball_radius = 0.0;  // R = M̂ + ‖y‖ + 1 for Pre-LN solves, else 0
  std::vector<double> trace;  // residual per iteration
  std::string note;           // fallbacks taken, failure reason
};

/// Sampled estimate of sup ‖f(LN(x))‖ over the LN image, inflated ×1.5.
double estimate_preln_bound(const VectorMap& f, const LayerNormParams& ln, Seed seed, int samples = 1024);

/// Moves a (numerically) constant vector off the LN-degenerate line by a
/// tiny centered ramp; other vectors are returned unchanged.
Vector nudge_off_constant(const LayerNormParams& ln, const Vector& x);

/// g(x) = f(LN(x)) + x, target y. `f_jacobian` may be empty, in which case
/// the Newton fallback uses central differences.
struct PreLnProblem {
  VectorMap f;
  JacobianMap f_jacobian;
  LayerNormParams ln;
};

/// Damped Picard x ← (1-ω)x + ω(y - f(LN(x))) with Anderson mixing, then
/// Newton on the residual when Picard stagnates; multi-start inside the
/// ball of radius R = M̂ + ‖y‖ + 1. NotConverged is reported through the
/// result, never thrown.
InversionResult fixed_point_invert_preln(const PreLnProblem& problem, const Vector& y, const SolveConfig& cfg);

/// Damped Newton with backtracking on ‖map(x) - y‖². Throws
/// SingularJacobian on a pivot breakdown.
InversionResult newton_invert(const VectorMap& map, const JacobianMap& jac, const Vector& y, const Vector& x0,
                              const SolveConfig& cfg);

/// Gradient descent on ‖target - stack(prefix ⧺ x)_last‖²; returns the best
/// iterate seen.
InversionResult gd_invert_token(const StackParams& stack, const Sequence& prefix, const Vector& target,
                                const GdConfig& cfg);

/// Closed-form inverse of W₂ LeakyReLU(W₁x + λ₁) + λ₂ with square weights.
InversionResult leaky_mlp_invert_exact(const MlpParams& p, const Vector& y);

/// Continuation along W₂σ_t(W₁x + λ₁) + λ₂ from the linear t = 0 solution.
/// Throws PathFailure when no fallback reaches t = 1.
InversionResult leaky_mlp_invert_homotopy(const MlpParams& p, const Vector& y, const CubicSolveConfig& cfg);

/// Every pre-image of y, by solving the linear system of each activation
/// pattern and keeping the consistent ones. Exact but O(2^d1); d1 <= 20.
/// An empty result certifies that y is unreachable.
std::vector<Vector> leaky_mlp_preimages(const MlpParams& p, const Vector& y);

/// (vᵀNv)^(-1/3)·v, the unique solution of (xᵀNx)x = v.
Vector cubic_start_point(const Matrix& n, const Vector& v);

/// Linear part L of the map x ↦ L(x) + (xᵀNx)x.
struct CubicLinearPart {
  VectorMap value;
  JacobianMap jacobian;
};

/// Solves L(x) + (xᵀNx)x = v by continuation on t·L(x) + (xᵀNx)x.
/// Throws ConeDegenerate / PathFailure when every fallback fails.
InversionResult cubic_homotopy_solve(const CubicLinearPart& linear, const Matrix& n, const Vector& v,
                                     const CubicSolveConfig& cfg);

/// Mx + (xᵀNx)x = v. Continuation first; when the path is lost, every
/// root is of the form x = (M + σI)⁻¹v with σ a zero of the scalar
/// ψ(σ) = xᵀNx − σ, which is scanned and bisected; seeded restarts last.
/// When nothing reaches tol the closest root found is returned unconverged.
InversionResult cubic_map_solve(const Matrix& m, const Matrix& n, const Vector& v, const CubicSolveConfig& cfg);

/// Recovers the next retention input a given the prefix state and target b
/// (the solve is done in the coordinates a' = V a). Works for every gating.
InversionResult retention_token_invert(const RetentionParams& p, const Matrix& prev_state, const Vector& b,
                                       const CubicSolveConfig& cfg);

}  // namespace surjlab
