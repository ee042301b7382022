#pragma once

// Forward maps and analytic Jacobians for the network building blocks:
// MLPs, LayerNorm and its residual wrappers, causal softmax attention,
// retention (plain, Mamba-2 gated, RWKV-6 gated) and GPT-style blocks.

#include <functional>
#include <variant>
#include <vector>

#include "surjlab/linalg.hpp"

namespace surjlab {

using Sequence = std::vector<Vector>;
using VectorMap = std::function<Vector(const Vector&)>;
using JacobianMap = std::function<Matrix(const Vector&)>;

/// Throws DimensionMismatch unless every element has dimension `d`
/// (or a common dimension when d == 0). Returns that dimension.
std::size_t sequence_dim(const Sequence& s, std::size_t d = 0);

// ---------------------------------------------------------------------------
// Activations

struct Activation {
  enum class Kind { ReLU, LeakyReLU, GeLU, Identity, BlendedLeaky };

  Kind kind = Kind::Identity;
  double alpha = 0.0;  // LeakyReLU / BlendedLeaky negative slope
  double t = 0.0;      // BlendedLeaky homotopy parameter

  static Activation relu() { return {Kind::ReLU}; }
  static Activation leaky_relu(double alpha);
  static Activation gelu() { return {Kind::GeLU}; }
  static Activation identity() { return {Kind::Identity}; }
  /// σ_t(z) = max(z, (tα + 1 - t)z); Identity at t = 0, LeakyReLU(α) at t = 1.
  static Activation blended_leaky(double t, double alpha);

  /// Slope applied to negative inputs for the piecewise-linear kinds.
  double negative_slope() const;
  void validate() const;

  friend bool operator==(const Activation&, const Activation&) = default;
};

double gelu(double z);
double gelu_derivative(double z);

Vector activation_eval(const Activation& act, const Vector& z);
/// Entrywise derivative; kinks take the right limit (slope 1 at z = 0).
Vector activation_deriv(const Activation& act, const Vector& z);

// ---------------------------------------------------------------------------
// MLP

struct DenseLayer {
  Matrix weight;
  Vector bias;
  Activation activation;

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

struct MlpParams {
  std::vector<DenseLayer> layers;

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  void validate() const;

  friend bool operator==(const MlpParams&, const MlpParams&) = default;
};

Vector mlp_forward(const MlpParams& p, const Vector& x);
Matrix mlp_jacobian(const MlpParams& p, const Vector& x);

// ---------------------------------------------------------------------------
// LayerNorm: γ ⊙ (x - x̄)/‖x - x̄‖ + β, with the 2-norm of the centered vector.

struct LayerNormParams {
  Vector gamma;
  Vector beta;
  double eps = 0.0;  // relative degeneracy guard, see layer_norm()

  static LayerNormParams standard(std::size_t d);

  std::size_t dim() const { return gamma.size(); }
  void validate() const;

  friend bool operator==(const LayerNormParams&, const LayerNormParams&) = default;
};

/// Throws DegenerateInput when ‖x - x̄‖ <= eps·‖x‖ + 1e-300.
Vector layer_norm(const LayerNormParams& p, const Vector& x);
Matrix layer_norm_jacobian(const LayerNormParams& p, const Vector& x);
bool layer_norm_degenerate(const LayerNormParams& p, const Vector& x);

/// g(x) = f(LN(x)) + x
Vector preln_wrap(const VectorMap& f, const LayerNormParams& ln, const Vector& x);
/// Dg(x) = I + Df(LN(x))·DLN(x)
Matrix preln_wrap_jacobian(const JacobianMap& df, const LayerNormParams& ln, const Vector& x);

/// g(x) = LN(f(x) + x)
Vector postln_wrap(const VectorMap& f, const LayerNormParams& ln, const Vector& x);
Matrix postln_wrap_jacobian(const VectorMap& f, const JacobianMap& df, const LayerNormParams& ln,
                            const Vector& x);

// ---------------------------------------------------------------------------
// Causal softmax attention

struct AttentionParams {
  Matrix key;
  Matrix query;
  Matrix value;

  std::size_t dim() const { return value.rows(); }
  void validate() const;

  friend bool operator==(const AttentionParams&, const AttentionParams&) = default;
};

Sequence attention_forward(const AttentionParams& p, const Sequence& a);

/// Cached keys/values of a frozen prefix, for evaluating the output at one
/// new position as a function of that position's input.
struct AttentionPrefix {
  std::vector<Vector> keys;    // K a_j
  std::vector<Vector> values;  // V a_j

  static AttentionPrefix build(const AttentionParams& p, const Sequence& prefix);
};

/// Output at position |prefix|+1 with input x there.
Vector attention_last(const AttentionParams& p, const AttentionPrefix& prefix, const Vector& x);
/// Derivative of attention_last with respect to x.
Matrix attention_last_jacobian(const AttentionParams& p, const AttentionPrefix& prefix, const Vector& x);

// ---------------------------------------------------------------------------
// Retention / gated linear attention: S_i = G_i ⊙ S_{i-1} + V a_i a_iᵀ Kᵀ,
// b_i = S_i Q a_i.

struct Mamba2Gate {
  Matrix gamma;  // 1 x d
  double log_rate = 0.0;

  friend bool operator==(const Mamba2Gate&, const Mamba2Gate&) = default;
};

struct Rwkv6Gate {
  Matrix decay;  // d x d

  friend bool operator==(const Rwkv6Gate&, const Rwkv6Gate&) = default;
};

using RetentionGating = std::variant<std::monostate, Mamba2Gate, Rwkv6Gate>;

struct RetentionParams {
  Matrix key;
  Matrix query;
  Matrix value;
  RetentionGating gating;

  std::size_t dim() const { return value.rows(); }
  bool gated() const { return !std::holds_alternative<std::monostate>(gating); }
  void validate() const;

  friend bool operator==(const RetentionParams&, const RetentionParams&) = default;
};

enum class RetentionMode { Recurrent, Parallel };

/// γ_i = exp(-softplus(Γ a_i)·exp(a)), the Mamba-2 scalar decay.
double mamba2_decay(const Mamba2Gate& g, const Vector& a_i);
/// α_i = exp(-exp(A a_i)), the RWKV-6 per-column decay.
Vector rwkv6_decay(const Rwkv6Gate& g, const Vector& a_i);
/// Full gate matrix G_i (all ones when ungated).
Matrix retention_gate(const RetentionParams& p, const Vector& a_i);

Matrix retention_update(const RetentionParams& p, const Matrix& state, const Vector& a_i);
/// State after consuming the whole sequence (zero matrix for an empty one).
Matrix retention_state(const RetentionParams& p, const Sequence& a);
Sequence retention_forward(const RetentionParams& p, const Sequence& a,
                           RetentionMode mode = RetentionMode::Recurrent);

/// Output at the next position given the state of the prefix.
Vector retention_last(const RetentionParams& p, const Matrix& prev_state, const Vector& x);
Matrix retention_last_jacobian(const RetentionParams& p, const Matrix& prev_state, const Vector& x);

// ---------------------------------------------------------------------------
// GPT-style block: c_i = Attn(LN₁(a))_i + a_i,
//                  b_i = W₂ GeLU(W₁ LN₂(c_i) + λ₁) + λ₂ + c_i.

struct TransformerBlockParams {
  AttentionParams attn;
  LayerNormParams ln1;
  LayerNormParams ln2;
  Matrix w1;  // d' x d
  Matrix w2;  // d x d'
  Vector b1;  // d'
  Vector b2;  // d

  std::size_t dim() const { return w2.rows(); }
  std::size_t hidden_dim() const { return w1.rows(); }
  void validate() const;

  /// The block's MLP branch as a value: u ↦ W₂ GeLU(W₁u + λ₁) + λ₂.
  MlpParams mlp() const;

  friend bool operator==(const TransformerBlockParams&, const TransformerBlockParams&) = default;
};

struct StackParams {
  std::vector<TransformerBlockParams> blocks;

  std::size_t dim() const;
  void validate() const;

  friend bool operator==(const StackParams&, const StackParams&) = default;
};

Sequence transformer_block_forward(const TransformerBlockParams& p, const Sequence& a);
Sequence stack_forward(const StackParams& s, const Sequence& a);

/// A stack with its prefix frozen: evaluates the last-position output as a
/// function of the last input. Causality makes the prefix activations of
/// every block constant, so they are computed once.
class StackPrefix {
 public:
  StackPrefix(const StackParams& stack, const Sequence& prefix);

  Vector eval(const Vector& x) const;
  Matrix jacobian(const Vector& x) const;
  /// Output and Jacobian in one pass.
  std::pair<Vector, Matrix> eval_with_jacobian(const Vector& x) const;

  const StackParams& stack() const { return *stack_; }
  std::size_t prefix_length() const { return prefix_len_; }
  /// Normalized-input attention cache of block k.
  const AttentionPrefix& attention_prefix(std::size_t k) const { return caches_[k]; }

 private:
  const StackParams* stack_;
  std::size_t prefix_len_;
  std::vector<AttentionPrefix> caches_;
};

Vector last_position_map(const StackParams& s, const Sequence& prefix, const Vector& x);
Matrix last_position_jacobian(const StackParams& s, const Sequence& prefix, const Vector& x);

/// Central finite-difference Jacobian, used by tests and as a fallback.
Matrix finite_difference_jacobian(const VectorMap& f, const Vector& x, double h = 1e-5);

}  // namespace surjlab
