#include "surjlab/blocks.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "surjlab/error.hpp"

namespace surjlab {

namespace {

void require(bool ok, ErrorCode code, const std::string& what) {
  if (!ok) throw Error(code, what);
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

void require_square(const Matrix& m, std::size_t d, const char* name) {
  require(m.rows() == d && m.cols() == d, ErrorCode::DimensionMismatch,
          std::string(name) + " must be " + std::to_string(d) + "x" + std::to_string(d));
}

// Softmax weights over scores with the maximum subtracted first.
std::vector<double> softmax(const std::vector<double>& scores) {
  const double smax = *std::max_element(scores.begin(), scores.end());
  std::vector<double> w(scores.size());
  double z = 0.0;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    w[j] = std::exp(scores[j] - smax);
    z += w[j];
  }
  for (double& wj : w) wj /= z;
  return w;
}

}  // namespace

std::size_t sequence_dim(const Sequence& s, std::size_t d) {
  for (const Vector& v : s) {
    if (d == 0) d = v.size();
    require(v.size() == d, ErrorCode::DimensionMismatch, "sequence elements must share one dimension");
  }
  return d;
}

// ---------------------------------------------------------------------------

Activation Activation::leaky_relu(double alpha) {
  Activation a{Kind::LeakyReLU, alpha, 0.0};
  a.validate();
  return a;
}

Activation Activation::blended_leaky(double t, double alpha) {
  Activation a{Kind::BlendedLeaky, alpha, t};
  a.validate();
  return a;
}

double Activation::negative_slope() const {
  switch (kind) {
    case Kind::ReLU: return 0.0;
    case Kind::LeakyReLU: return alpha;
    case Kind::BlendedLeaky: return t * alpha + 1.0 - t;
    case Kind::Identity: return 1.0;
    case Kind::GeLU: break;
  }
  throw Error(ErrorCode::InvalidArgument, "GeLU is not piecewise linear");
}

void Activation::validate() const {
  if (kind == Kind::LeakyReLU) {
    require(alpha > 0.0 && alpha < 1.0, ErrorCode::InvalidArgument, "LeakyReLU needs 0 < alpha < 1");
  }
  if (kind == Kind::BlendedLeaky) {
    require(alpha > 0.0 && alpha <= 1.0, ErrorCode::InvalidArgument, "BlendedLeaky needs 0 < alpha <= 1");
    require(t >= 0.0 && t <= 1.0, ErrorCode::InvalidArgument, "BlendedLeaky needs t in [0, 1]");
  }
}

double gelu(double z) { return 0.5 * z * (1.0 + std::erf(z / std::numbers::sqrt2)); }

double gelu_derivative(double z) {
  const double cdf = 0.5 * (1.0 + std::erf(z / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + z * pdf;
}

Vector activation_eval(const Activation& act, const Vector& z) {
  Vector out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double v = z[i];
    switch (act.kind) {
      case Activation::Kind::GeLU: out[i] = gelu(v); break;
      case Activation::Kind::Identity: out[i] = v; break;
      default: out[i] = v >= 0.0 ? v : act.negative_slope() * v; break;
    }
  }
  return out;
}

Vector activation_deriv(const Activation& act, const Vector& z) {
  Vector out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double v = z[i];
    switch (act.kind) {
      case Activation::Kind::GeLU: out[i] = gelu_derivative(v); break;
      case Activation::Kind::Identity: out[i] = 1.0; break;
      default: out[i] = v >= 0.0 ? 1.0 : act.negative_slope(); break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

std::size_t MlpParams::input_dim() const { return layers.empty() ? 0 : layers.front().weight.cols(); }
std::size_t MlpParams::output_dim() const { return layers.empty() ? 0 : layers.back().weight.rows(); }

void MlpParams::validate() const {
  require(!layers.empty(), ErrorCode::InvalidArgument, "MLP needs at least one layer");
  std::size_t in = input_dim();
  require(in > 0, ErrorCode::DimensionMismatch, "MLP input dimension must be positive");
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const DenseLayer& l = layers[k];
    require(l.weight.cols() == in && l.weight.rows() > 0, ErrorCode::DimensionMismatch,
            "MLP layer " + std::to_string(k) + " does not chain");
    require(l.bias.size() == l.weight.rows(), ErrorCode::DimensionMismatch,
            "MLP layer " + std::to_string(k) + " bias size");
    l.activation.validate();
    in = l.weight.rows();
  }
}

Vector mlp_forward(const MlpParams& p, const Vector& x) {
  Vector h = x;
  for (const DenseLayer& l : p.layers) h = activation_eval(l.activation, l.weight * h + l.bias);
  return h;
}

Matrix mlp_jacobian(const MlpParams& p, const Vector& x) {
  Vector h = x;
  Matrix j = Matrix::identity(x.size());
  for (const DenseLayer& l : p.layers) {
    const Vector z = l.weight * h + l.bias;
    j = scale_rows(activation_deriv(l.activation, z), l.weight * j);
    h = activation_eval(l.activation, z);
  }
  return j;
}

// ---------------------------------------------------------------------------

LayerNormParams LayerNormParams::standard(std::size_t d) { return {Vector(d, 1.0), Vector(d, 0.0), 0.0}; }

void LayerNormParams::validate() const {
  require(gamma.size() >= 2, ErrorCode::DimensionMismatch, "LayerNorm needs d >= 2");
  require(beta.size() == gamma.size(), ErrorCode::DimensionMismatch, "LayerNorm gamma/beta sizes differ");
  require(eps >= 0.0, ErrorCode::InvalidArgument, "LayerNorm eps must be >= 0");
}

namespace {

struct Centered {
  Vector c;
  double n;
};

Centered center(const LayerNormParams& p, const Vector& x) {
  require(x.size() == p.dim(), ErrorCode::DimensionMismatch, "LayerNorm input dimension");
  const double m = mean(x);
  Vector c = x;
  for (double& ci : c) ci -= m;
  const double n = norm(c);
  if (!(n > p.eps * norm(x) + 1e-300)) {
    throw Error(ErrorCode::DegenerateInput, "LayerNorm input is (numerically) constant");
  }
  return {std::move(c), n};
}

}  // namespace

bool layer_norm_degenerate(const LayerNormParams& p, const Vector& x) {
  try {
    center(p, x);
    return false;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::DegenerateInput) throw;
    return true;
  }
}

Vector layer_norm(const LayerNormParams& p, const Vector& x) {
  const Centered cn = center(p, x);
  Vector out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = p.gamma[i] * cn.c[i] / cn.n + p.beta[i];
  return out;
}

Matrix layer_norm_jacobian(const LayerNormParams& p, const Vector& x) {
  const Centered cn = center(p, x);
  const std::size_t d = x.size();
  const double inv_d = 1.0 / static_cast<double>(d);
  // diag(γ)·(I - 11ᵀ/d - ĉĉᵀ)/‖c‖
  Matrix j(d, d);
  for (std::size_t i = 0; i < d; ++i) {
    const double ci = cn.c[i] / cn.n;
    for (std::size_t k = 0; k < d; ++k) {
      const double ck = cn.c[k] / cn.n;
      j(i, k) = p.gamma[i] * ((i == k ? 1.0 : 0.0) - inv_d - ci * ck) / cn.n;
    }
  }
  return j;
}

Vector preln_wrap(const VectorMap& f, const LayerNormParams& ln, const Vector& x) {
  return f(layer_norm(ln, x)) + x;
}

Matrix preln_wrap_jacobian(const JacobianMap& df, const LayerNormParams& ln, const Vector& x) {
  return Matrix::identity(x.size()) + df(layer_norm(ln, x)) * layer_norm_jacobian(ln, x);
}

Vector postln_wrap(const VectorMap& f, const LayerNormParams& ln, const Vector& x) {
  return layer_norm(ln, f(x) + x);
}

Matrix postln_wrap_jacobian(const VectorMap& f, const JacobianMap& df, const LayerNormParams& ln,
                            const Vector& x) {
  return layer_norm_jacobian(ln, f(x) + x) * (df(x) + Matrix::identity(x.size()));
}

// ---------------------------------------------------------------------------

void AttentionParams::validate() const {
  const std::size_t d = value.rows();
  require(d > 0, ErrorCode::DimensionMismatch, "attention dimension must be positive");
  require_square(key, d, "K");
  require_square(query, d, "Q");
  require_square(value, d, "V");
}

Sequence attention_forward(const AttentionParams& p, const Sequence& a) {
  require(!a.empty(), ErrorCode::InvalidArgument, "attention needs n >= 1");
  sequence_dim(a, p.dim());
  std::vector<Vector> keys, values;
  for (const Vector& aj : a) {
    keys.push_back(p.key * aj);
    values.push_back(p.value * aj);
  }
  Sequence out;
  out.reserve(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const Vector q = p.query * a[i];
    std::vector<double> scores(i + 1);
    for (std::size_t j = 0; j <= i; ++j) scores[j] = dot(keys[j], q);
    const std::vector<double> w = softmax(scores);
    Vector b(p.dim());
    for (std::size_t j = 0; j <= i; ++j) b += w[j] * values[j];
    out.push_back(std::move(b));
  }
  return out;
}

AttentionPrefix AttentionPrefix::build(const AttentionParams& p, const Sequence& prefix) {
  AttentionPrefix c;
  for (const Vector& aj : prefix) {
    c.keys.push_back(p.key * aj);
    c.values.push_back(p.value * aj);
  }
  return c;
}

namespace {

struct LastAttention {
  Vector out;
  std::vector<double> weights;  // prefix weights then the self weight
  Vector kx, qx, vx;
};

LastAttention attention_last_impl(const AttentionParams& p, const AttentionPrefix& prefix, const Vector& x) {
  require(x.size() == p.dim(), ErrorCode::DimensionMismatch, "attention input dimension");
  LastAttention r{Vector(p.dim()), {}, p.key * x, p.query * x, p.value * x};
  const std::size_t n = prefix.keys.size();
  std::vector<double> scores(n + 1);
  for (std::size_t j = 0; j < n; ++j) scores[j] = dot(prefix.keys[j], r.qx);
  scores[n] = dot(r.kx, r.qx);
  r.weights = softmax(scores);
  for (std::size_t j = 0; j < n; ++j) r.out += r.weights[j] * prefix.values[j];
  r.out += r.weights[n] * r.vx;
  return r;
}

}  // namespace

Vector attention_last(const AttentionParams& p, const AttentionPrefix& prefix, const Vector& x) {
  return attention_last_impl(p, prefix, x).out;
}

Matrix attention_last_jacobian(const AttentionParams& p, const AttentionPrefix& prefix, const Vector& x) {
  const LastAttention r = attention_last_impl(p, prefix, x);
  const std::size_t n = prefix.keys.size();
  // ∂b/∂x = Σ_j w_j (v_j - b)(∂s_j/∂x)ᵀ + w_self·V
  Matrix j = r.weights[n] * p.value;
  for (std::size_t k = 0; k < n; ++k) {
    const Vector ds = transpose_times(p.query, prefix.keys[k]);
    j += r.weights[k] * Matrix::outer(prefix.values[k] - r.out, ds);
  }
  const Vector ds_self = transpose_times(p.query, r.kx) + transpose_times(p.key, r.qx);
  j += r.weights[n] * Matrix::outer(r.vx - r.out, ds_self);
  return j;
}

// ---------------------------------------------------------------------------

void RetentionParams::validate() const {
  const std::size_t d = value.rows();
  require(d > 0, ErrorCode::DimensionMismatch, "retention dimension must be positive");
  require_square(key, d, "K");
  require_square(query, d, "Q");
  require_square(value, d, "V");
  if (const auto* m = std::get_if<Mamba2Gate>(&gating)) {
    require(m->gamma.rows() == 1 && m->gamma.cols() == d, ErrorCode::DimensionMismatch,
            "Mamba-2 gate row must be 1 x d");
  } else if (const auto* r = std::get_if<Rwkv6Gate>(&gating)) {
    require_square(r->decay, d, "RWKV-6 decay matrix");
  }
}

double mamba2_decay(const Mamba2Gate& g, const Vector& a_i) {
  const double z = dot(g.gamma.row(0), a_i);
  return std::exp(-softplus(z) * std::exp(g.log_rate));
}

Vector rwkv6_decay(const Rwkv6Gate& g, const Vector& a_i) {
  Vector z = g.decay * a_i;
  for (double& zi : z) zi = std::exp(-std::exp(zi));
  return z;
}

Matrix retention_gate(const RetentionParams& p, const Vector& a_i) {
  const std::size_t d = p.dim();
  if (const auto* m = std::get_if<Mamba2Gate>(&p.gating)) return Matrix(d, d, mamba2_decay(*m, a_i));
  if (const auto* r = std::get_if<Rwkv6Gate>(&p.gating)) {
    const Vector alpha = rwkv6_decay(*r, a_i);
    return Matrix::outer(Vector(d, 1.0), alpha);
  }
  return Matrix(d, d, 1.0);
}

namespace {

Matrix gate_state(const RetentionParams& p, const Matrix& state, const Vector& a_i) {
  if (const auto* m = std::get_if<Mamba2Gate>(&p.gating)) return mamba2_decay(*m, a_i) * state;
  if (const auto* r = std::get_if<Rwkv6Gate>(&p.gating)) return scale_cols(state, rwkv6_decay(*r, a_i));
  return state;
}

}  // namespace

Matrix retention_update(const RetentionParams& p, const Matrix& state, const Vector& a_i) {
  return gate_state(p, state, a_i) + Matrix::outer(p.value * a_i, p.key * a_i);
}

Matrix retention_state(const RetentionParams& p, const Sequence& a) {
  Matrix s(p.dim(), p.dim());
  for (const Vector& ai : a) s = retention_update(p, s, ai);
  return s;
}

Sequence retention_forward(const RetentionParams& p, const Sequence& a, RetentionMode mode) {
  require(!a.empty(), ErrorCode::InvalidArgument, "retention needs n >= 1");
  sequence_dim(a, p.dim());
  Sequence out;
  out.reserve(a.size());
  if (mode == RetentionMode::Recurrent) {
    Matrix s(p.dim(), p.dim());
    for (const Vector& ai : a) {
      s = retention_update(p, s, ai);
      out.push_back(s * (p.query * ai));
    }
    return out;
  }
  require(!p.gated(), ErrorCode::InvalidArgument, "parallel retention is only defined without gating");
  std::vector<Vector> keys, values;
  for (const Vector& aj : a) {
    keys.push_back(p.key * aj);
    values.push_back(p.value * aj);
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    const Vector q = p.query * a[i];
    Vector b(p.dim());
    for (std::size_t j = 0; j <= i; ++j) b += dot(keys[j], q) * values[j];
    out.push_back(std::move(b));
  }
  return out;
}

Vector retention_last(const RetentionParams& p, const Matrix& prev_state, const Vector& x) {
  const Vector kx = p.key * x, qx = p.query * x;
  return gate_state(p, prev_state, x) * qx + dot(kx, qx) * (p.value * x);
}

Matrix retention_last_jacobian(const RetentionParams& p, const Matrix& prev_state, const Vector& x) {
  const Vector kx = p.key * x, qx = p.query * x, vx = p.value * x;
  Matrix j = dot(kx, qx) * p.value +
             Matrix::outer(vx, transpose_times(p.key, qx) + transpose_times(p.query, kx));
  if (const auto* m = std::get_if<Mamba2Gate>(&p.gating)) {
    const double gamma = mamba2_decay(*m, x);
    const Vector grow = m->gamma.row(0);
    const double dz = -gamma * std::exp(m->log_rate) * sigmoid(dot(grow, x));
    j += gamma * (prev_state * p.query);
    j += Matrix::outer(prev_state * qx, dz * grow);
  } else if (const auto* r = std::get_if<Rwkv6Gate>(&p.gating)) {
    const Vector alpha = rwkv6_decay(*r, x);
    const Vector z = r->decay * x;
    Vector dalpha(alpha.size());
    for (std::size_t i = 0; i < alpha.size(); ++i) dalpha[i] = -alpha[i] * std::exp(z[i]) * qx[i];
    j += prev_state * (scale_rows(alpha, p.query) + scale_rows(dalpha, r->decay));
  } else {
    j += prev_state * p.query;
  }
  return j;
}

// ---------------------------------------------------------------------------

void TransformerBlockParams::validate() const {
  attn.validate();
  ln1.validate();
  ln2.validate();
  const std::size_t d = attn.dim();
  require(ln1.dim() == d && ln2.dim() == d, ErrorCode::DimensionMismatch, "block LayerNorm dimension");
  require(w1.cols() == d && w1.rows() > 0, ErrorCode::DimensionMismatch, "W1 must be d' x d");
  require(w2.rows() == d && w2.cols() == w1.rows(), ErrorCode::DimensionMismatch, "W2 must be d x d'");
  require(b1.size() == w1.rows() && b2.size() == d, ErrorCode::DimensionMismatch, "block bias sizes");
}

MlpParams TransformerBlockParams::mlp() const {
  return MlpParams{{DenseLayer{w1, b1, Activation::gelu()}, DenseLayer{w2, b2, Activation::identity()}}};
}

std::size_t StackParams::dim() const { return blocks.empty() ? 0 : blocks.front().dim(); }

void StackParams::validate() const {
  require(!blocks.empty(), ErrorCode::InvalidArgument, "stack needs at least one block");
  for (const auto& b : blocks) {
    b.validate();
    require(b.dim() == dim(), ErrorCode::DimensionMismatch, "stack blocks must share d");
  }
}

namespace {

Vector block_mlp_residual(const TransformerBlockParams& p, const Vector& c) {
  const Vector u = layer_norm(p.ln2, c);
  Vector h = p.w1 * u + p.b1;
  for (double& hi : h) hi = gelu(hi);
  return p.w2 * h + p.b2 + c;
}

Matrix block_mlp_residual_jacobian(const TransformerBlockParams& p, const Vector& c) {
  const Vector u = layer_norm(p.ln2, c);
  const Vector z = p.w1 * u + p.b1;
  Vector dz(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) dz[i] = gelu_derivative(z[i]);
  return Matrix::identity(c.size()) + p.w2 * scale_rows(dz, p.w1) * layer_norm_jacobian(p.ln2, c);
}

}  // namespace

Sequence transformer_block_forward(const TransformerBlockParams& p, const Sequence& a) {
  require(!a.empty(), ErrorCode::InvalidArgument, "transformer block needs n >= 1");
  sequence_dim(a, p.dim());
  Sequence normed;
  normed.reserve(a.size());
  for (const Vector& ai : a) normed.push_back(layer_norm(p.ln1, ai));
  const Sequence att = attention_forward(p.attn, normed);
  Sequence out;
  out.reserve(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out.push_back(block_mlp_residual(p, att[i] + a[i]));
  return out;
}

Sequence stack_forward(const StackParams& s, const Sequence& a) {
  Sequence h = a;
  for (const auto& b : s.blocks) h = transformer_block_forward(b, h);
  return h;
}

StackPrefix::StackPrefix(const StackParams& stack, const Sequence& prefix)
    : stack_(&stack), prefix_len_(prefix.size()) {
  sequence_dim(prefix, stack.dim());
  Sequence h = prefix;
  for (const auto& b : stack.blocks) {
    Sequence normed;
    normed.reserve(h.size());
    for (const Vector& hi : h) normed.push_back(layer_norm(b.ln1, hi));
    caches_.push_back(AttentionPrefix::build(b.attn, normed));
    if (!h.empty()) h = transformer_block_forward(b, h);
  }
}

Vector StackPrefix::eval(const Vector& x) const {
  Vector h = x;
  for (std::size_t k = 0; k < stack_->blocks.size(); ++k) {
    const auto& b = stack_->blocks[k];
    const Vector c = attention_last(b.attn, caches_[k], layer_norm(b.ln1, h)) + h;
    h = block_mlp_residual(b, c);
  }
  return h;
}

std::pair<Vector, Matrix> StackPrefix::eval_with_jacobian(const Vector& x) const {
  Vector h = x;
  Matrix j = Matrix::identity(x.size());
  for (std::size_t k = 0; k < stack_->blocks.size(); ++k) {
    const auto& b = stack_->blocks[k];
    const Vector u = layer_norm(b.ln1, h);
    const Vector c = attention_last(b.attn, caches_[k], u) + h;
    const Matrix jc =
        Matrix::identity(x.size()) + attention_last_jacobian(b.attn, caches_[k], u) * layer_norm_jacobian(b.ln1, h);
    j = block_mlp_residual_jacobian(b, c) * (jc * j);
    h = block_mlp_residual(b, c);
  }
  return {std::move(h), std::move(j)};
}

Matrix StackPrefix::jacobian(const Vector& x) const { return eval_with_jacobian(x).second; }

Vector last_position_map(const StackParams& s, const Sequence& prefix, const Vector& x) {
  return StackPrefix(s, prefix).eval(x);
}

Matrix last_position_jacobian(const StackParams& s, const Sequence& prefix, const Vector& x) {
  return StackPrefix(s, prefix).jacobian(x);
}

Matrix finite_difference_jacobian(const VectorMap& f, const Vector& x, double h) {
  const Vector f0 = f(x);
  Matrix j(f0.size(), x.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double step = h * std::max(1.0, std::abs(x[k]));
    Vector xp = x, xm = x;
    xp[k] += step;
    xm[k] -= step;
    j.set_col(k, (f(xp) - f(xm)) * (0.5 / step));
  }
  return j;
}

}  // namespace surjlab
