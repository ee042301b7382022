#include "surjlab/harness.hpp"

#include <algorithm>
#include <cmath>

#include "surjlab/error.hpp"

namespace surjlab {

namespace {

double max_error(const Sequence& got, const Sequence& want) {
  double worst = 0.0;
  for (std::size_t i = 0; i < want.size(); ++i) {
    const double e = norm(got[i] - want[i]);
    worst = std::isfinite(e) ? std::max(worst, e) : std::numeric_limits<double>::infinity();
  }
  return worst;
}

InversionResult failed_result(std::size_t d, const Error& e) {
  InversionResult r;
  r.x = Vector(d);
  r.note = std::string(to_string(e.code())) + ": " + e.what();
  return r;
}

void append_note(InversionResult& r, const std::string& note) {
  r.note += (r.note.empty() ? "" : "; ") + note;
}

}  // namespace

// ---------------------------------------------------------------------------
// Pre-LN blocks

void PreLnMlpBlock::validate() const {
  mlp.validate();
  ln.validate();
  if (mlp.input_dim() != ln.dim() || mlp.output_dim() != ln.dim()) {
    throw Error(ErrorCode::DimensionMismatch, "Pre-LN MLP must map R^d to R^d");
  }
}

Vector preln_mlp_forward(const PreLnMlpBlock& b, const Vector& x) {
  return preln_wrap([&](const Vector& u) { return mlp_forward(b.mlp, u); }, b.ln, x);
}

Matrix preln_mlp_jacobian(const PreLnMlpBlock& b, const Vector& x) {
  return preln_wrap_jacobian([&](const Vector& u) { return mlp_jacobian(b.mlp, u); }, b.ln, x);
}

InversionResult invert_preln_block(const PreLnMlpBlock& b, const Vector& y, const SolveConfig& cfg) {
  b.validate();
  const PreLnProblem problem{[&](const Vector& u) { return mlp_forward(b.mlp, u); },
                             [&](const Vector& u) { return mlp_jacobian(b.mlp, u); }, b.ln};
  return fixed_point_invert_preln(problem, y, cfg);
}

InversionResult invert_preln_block(const TransformerBlockParams& b, const Sequence& prefix, const Vector& y,
                                   const SolveConfig& cfg) {
  b.validate();
  sequence_dim(prefix, b.dim());
  const MlpParams mlp = b.mlp();
  const PreLnProblem mlp_stage{[&](const Vector& u) { return mlp_forward(mlp, u); },
                               [&](const Vector& u) { return mlp_jacobian(mlp, u); }, b.ln2};
  // The attention stage amplifies the MLP stage error by its Jacobian, so both
  // stages aim below tol; only the composed residual decides convergence.
  SolveConfig inner = cfg;
  inner.tol = std::max(cfg.tol * 1e-2, 1e-15 * (1.0 + norm(y)));
  const InversionResult c = fixed_point_invert_preln(mlp_stage, y, inner);

  Sequence normed;
  for (const Vector& a : prefix) normed.push_back(layer_norm(b.ln1, a));
  const AttentionPrefix cache = AttentionPrefix::build(b.attn, normed);
  const PreLnProblem attn_stage{[&](const Vector& u) { return attention_last(b.attn, cache, u); },
                                [&](const Vector& u) { return attention_last_jacobian(b.attn, cache, u); }, b.ln1};
  InversionResult r = fixed_point_invert_preln(attn_stage, c.x, inner);
  r.iters += c.iters;
  r.ball_radius = std::max(r.ball_radius, c.ball_radius);
  if (!c.note.empty()) append_note(r, "mlp stage: " + c.note);

  const StackParams single{{b}};
  r.residual = norm(last_position_map(single, prefix, r.x) - y);
  r.converged = r.residual <= cfg.tol;
  return r;
}

Vector preln_attention_last(const AttentionParams& p, const LayerNormParams& ln, const Sequence& prefix,
                            const Vector& x) {
  Sequence normed;
  for (const Vector& a : prefix) normed.push_back(layer_norm(ln, a));
  return attention_last(p, AttentionPrefix::build(p, normed), layer_norm(ln, x)) + x;
}

Sequence preln_attention_forward(const AttentionParams& p, const LayerNormParams& ln, const Sequence& a) {
  Sequence normed;
  for (const Vector& ai : a) normed.push_back(layer_norm(ln, ai));
  Sequence out = attention_forward(p, normed);
  for (std::size_t i = 0; i < a.size(); ++i) out[i] += a[i];
  return out;
}

SequenceInversion invert_preln_attention_sequence(const AttentionParams& p, const LayerNormParams& ln,
                                                  const Sequence& targets, const SolveConfig& cfg) {
  p.validate();
  ln.validate();
  sequence_dim(targets, p.dim());
  SequenceInversion out;
  Sequence normed;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const AttentionPrefix cache = AttentionPrefix::build(p, normed);
    const PreLnProblem problem{[&](const Vector& u) { return attention_last(p, cache, u); },
                               [&](const Vector& u) { return attention_last_jacobian(p, cache, u); }, ln};
    SolveConfig token_cfg = cfg;
    token_cfg.seed = derive_seed(cfg.seed, "token", i);
    InversionResult r = fixed_point_invert_preln(problem, targets[i], token_cfg);
    out.inputs.push_back(r.x);
    normed.push_back(layer_norm(ln, r.x));
    out.tokens.push_back(std::move(r));
  }
  out.replay_residual = max_error(preln_attention_forward(p, ln, out.inputs), targets);
  out.all_converged = std::all_of(out.tokens.begin(), out.tokens.end(), [](const auto& r) { return r.converged; });
  return out;
}

// ---------------------------------------------------------------------------
// Stacks

InversionResult invert_stack_token(const StackParams& s, const Sequence& prefix, const Vector& target,
                                   const StackInversionOptions& opts) {
  const StackPrefix sp(s, prefix);
  auto map = [&](const Vector& x) { return sp.eval(x); };
  auto jac = [&](const Vector& x) { return sp.jacobian(x); };

  InversionResult r = gd_invert_token(s, prefix, target, opts.gd);
  const int gd_steps = r.iters;
  if (r.residual > opts.solve.tol) {
    try {
      InversionResult polished = newton_invert(map, jac, target, r.x, opts.solve);
      if (polished.residual < r.residual) {
        polished.iters += gd_steps;
        polished.note = "GD " + std::to_string(gd_steps) + " steps + Newton polish";
        r = std::move(polished);
      }
    } catch (const Error& e) {
      if (e.code() != ErrorCode::SingularJacobian && e.code() != ErrorCode::DegenerateInput) throw;
      append_note(r, std::string("Newton polish: ") + e.what());
    }
  }
  if (r.converged || !opts.staged_fallback) return r;

  // Block by block from the top, each block a Pre-LN map of its last input.
  std::vector<Sequence> block_inputs{prefix};
  for (std::size_t k = 0; k + 1 < s.blocks.size(); ++k) {
    block_inputs.push_back(prefix.empty() ? Sequence{} : transformer_block_forward(s.blocks[k], block_inputs.back()));
  }
  Vector y = target;
  int iters = 0;
  for (std::size_t k = s.blocks.size(); k-- > 0;) {
    const InversionResult stage = invert_preln_block(s.blocks[k], block_inputs[k], y, opts.solve);
    iters += stage.iters;
    y = stage.x;
  }
  InversionResult staged;
  try {
    staged = newton_invert(map, jac, target, y, opts.solve);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::SingularJacobian && e.code() != ErrorCode::DegenerateInput) throw;
    staged.x = y;
    staged.residual = norm(map(y) - target);
    staged.converged = staged.residual <= opts.solve.tol;
  }
  staged.iters += iters + r.iters;
  staged.method = Method::FixedPoint;
  staged.note = "staged per-block fallback";
  return staged.residual < r.residual ? staged : r;
}

SequenceInversion invert_transformer_sequence(const StackParams& s, const Sequence& targets,
                                              const StackInversionOptions& opts) {
  s.validate();
  sequence_dim(targets, s.dim());
  SequenceInversion out;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    StackInversionOptions token_opts = opts;
    token_opts.solve.seed = derive_seed(opts.solve.seed, "token", i);
    InversionResult r = invert_stack_token(s, out.inputs, targets[i], token_opts);
    out.inputs.push_back(r.x);
    out.tokens.push_back(std::move(r));
  }
  out.replay_residual = max_error(stack_forward(s, out.inputs), targets);
  out.all_converged = std::all_of(out.tokens.begin(), out.tokens.end(), [](const auto& r) { return r.converged; });
  return out;
}

// ---------------------------------------------------------------------------
// Retention

Vector retention_first_token(const RetentionParams& p, const Vector& b1) {
  p.validate();
  const Vector w = solve_linear(p.value, b1);
  const double q = dot(p.key * w, p.query * w);
  if (q == 0.0) throw Error(ErrorCode::ConeDegenerate, "first target lies on the cone wᵀKᵀQw = 0");
  return w * (1.0 / real_cbrt(q));
}

SequenceInversion invert_retention_sequence(const RetentionParams& p, const Sequence& targets,
                                            const CubicSolveConfig& cfg) {
  p.validate();
  const std::size_t d = p.dim();
  sequence_dim(targets, d);
  SequenceInversion out;
  Matrix state(d, d);
  for (std::size_t i = 0; i < targets.size(); ++i) {
    InversionResult r;
    bool done = false;
    if (i == 0) {
      // The gate multiplies the zero state, so the closed form holds for every gating.
      try {
        r.x = retention_first_token(p, targets[0]);
        r.method = Method::Exact;
        r.iters = 1;
        r.residual = norm(retention_last(p, state, r.x) - targets[0]);
        r.converged = r.residual <= cfg.tol;
        done = r.converged;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::ConeDegenerate) throw;
      }
    }
    if (!done) {
      CubicSolveConfig token_cfg = cfg;
      token_cfg.seed = derive_seed(cfg.seed, "token", i);
      try {
        r = retention_token_invert(p, state, targets[i], token_cfg);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::ConeDegenerate && e.code() != ErrorCode::PathFailure) throw;
        r = failed_result(d, e);
        // Keep a nonzero placeholder so the state still gains rank.
        try {
          r.x = retention_first_token(p, targets[i]);
        } catch (const Error&) {
        }
        r.residual = norm(retention_last(p, state, r.x) - targets[i]);
      }
    }
    state = retention_update(p, state, r.x);
    out.inputs.push_back(r.x);
    out.tokens.push_back(std::move(r));
  }
  out.replay_residual = max_error(retention_forward(p, out.inputs), targets);
  out.all_converged = std::all_of(out.tokens.begin(), out.tokens.end(), [](const auto& r) { return r.converged; });
  return out;
}

// ---------------------------------------------------------------------------
// Diffusion

std::vector<double> DiffusionSchedule::uniform_knots(int steps) {
  if (steps < 1) throw Error(ErrorCode::InvalidArgument, "need at least one step");
  std::vector<double> z(static_cast<std::size_t>(steps) + 1);
  for (int k = 0; k <= steps; ++k) z[static_cast<std::size_t>(k)] = static_cast<double>(k) / steps;
  return z;
}

void DiffusionSchedule::validate() const {
  if (knots.size() < 2) throw Error(ErrorCode::InvalidArgument, "schedule needs at least two knots");
  if (knots.front() != 0.0 || knots.back() != 1.0) throw Error(ErrorCode::InvalidArgument, "knots must span [0, 1]");
  for (std::size_t k = 1; k < knots.size(); ++k) {
    if (!(knots[k] > knots[k - 1])) throw Error(ErrorCode::InvalidArgument, "knots must increase strictly");
  }
  ln.validate();
  velocity.validate();
  if (velocity.input_dim() != dim() + 1 || velocity.output_dim() != dim()) {
    throw Error(ErrorCode::DimensionMismatch, "velocity net must map R^(d+1) to R^d");
  }
}

Vector diffusion_velocity(const DiffusionSchedule& s, const Vector& x, double z) {
  return mlp_forward(s.velocity, concat(layer_norm(s.ln, x), Vector{z}));
}

Sequence diffusion_trajectory(const DiffusionSchedule& s, const Vector& noise) {
  s.validate();
  Sequence path{noise};
  for (std::size_t k = 0; k + 1 < s.knots.size(); ++k) {
    const double dz = s.knots[k + 1] - s.knots[k];
    path.push_back(path.back() + dz * diffusion_velocity(s, path.back(), s.knots[k]));
  }
  return path;
}

Vector diffusion_sample(const DiffusionSchedule& s, const Vector& noise) { return diffusion_trajectory(s, noise).back(); }

DiffusionInversion invert_diffusion(const DiffusionSchedule& s, const Vector& target, const SolveConfig& cfg) {
  s.validate();
  const std::size_t d = s.dim();
  if (target.size() != d) throw Error(ErrorCode::DimensionMismatch, "target dimension");
  DiffusionInversion out;
  Vector y = target;
  for (std::size_t k = s.knots.size() - 1; k-- > 0;) {
    const double z = s.knots[k];
    const double dz = s.knots[k + 1] - z;
    const PreLnProblem step{[&](const Vector& u) { return dz * mlp_forward(s.velocity, concat(u, Vector{z})); },
                            [&](const Vector& u) {
                              const Matrix j = mlp_jacobian(s.velocity, concat(u, Vector{z}));
                              Matrix ju(d, d);
                              for (std::size_t r = 0; r < d; ++r) {
                                for (std::size_t c = 0; c < d; ++c) ju(r, c) = dz * j(r, c);
                              }
                              return ju;
                            },
                            s.ln};
    SolveConfig step_cfg = cfg;
    step_cfg.seed = derive_seed(cfg.seed, "step", k);
    InversionResult r = fixed_point_invert_preln(step, y, step_cfg);
    y = r.x;
    const bool ok = r.converged;
    out.steps.push_back(std::move(r));
    if (!ok) {
      out.noise = y;
      out.replay_error = norm(diffusion_sample(s, y) - target);
      out.converged = false;
      return out;
    }
  }
  out.noise = y;
  out.replay_error = norm(diffusion_sample(s, y) - target);
  out.converged = true;
  return out;
}

// ---------------------------------------------------------------------------
// Interleaved policy

Sequence policy_rollout(const StackParams& s, const Sequence& observations) {
  s.validate();
  sequence_dim(observations, s.dim());
  Sequence seq;
  Sequence actions;
  for (const Vector& a : observations) {
    const Vector b = last_position_map(s, seq, a);
    seq.push_back(a);
    seq.push_back(b);
    actions.push_back(b);
  }
  return actions;
}

PolicyInversion invert_interleaved_policy(const StackParams& s, const Sequence& actions,
                                          const StackInversionOptions& opts) {
  s.validate();
  sequence_dim(actions, s.dim());
  PolicyInversion out;
  Sequence prefix;
  for (std::size_t t = 0; t < actions.size(); ++t) {
    StackInversionOptions step_opts = opts;
    step_opts.solve.seed = derive_seed(opts.solve.seed, "step", t);
    InversionResult r = invert_stack_token(s, prefix, actions[t], step_opts);
    prefix.push_back(r.x);
    prefix.push_back(actions[t]);
    out.observations.push_back(r.x);
    out.steps.push_back(std::move(r));
  }
  out.replay_error = max_error(policy_rollout(s, out.observations), actions);
  out.all_converged = std::all_of(out.steps.begin(), out.steps.end(), [](const auto& r) { return r.converged; });
  return out;
}

// ---------------------------------------------------------------------------
// Witnesses

std::optional<Witness> leaky_mlp_unreachable_certificate(const MlpParams& p, const Vector& y) {
  if (!leaky_mlp_preimages(p, y).empty()) return std::nullopt;
  Witness w;
  w.target = {y};
  w.evidence = ExhaustiveEnumeration{std::size_t{1} << p.layers.at(0).weight.rows()};
  w.context = "LeakyReLU MLP: no activation pattern yields a pre-image";
  return w;
}

Witness relu_mlp_unreachable_witness(const MlpParams& p, Seed seed, int draws) {
  p.validate();
  if (p.layers.size() != 2 || p.layers[0].activation.kind != Activation::Kind::ReLU ||
      p.layers[1].activation.kind != Activation::Kind::Identity) {
    throw Error(ErrorCode::InvalidArgument, "expected W₂ ReLU(W₁x + λ₁) + λ₂");
  }
  const Matrix& w2 = p.layers[1].weight;
  const Vector& b2 = p.layers[1].bias;
  const std::size_t hidden = w2.cols();
  for (int k = 0; k < draws; ++k) {
    Vector v = seeded_gaussian_vector(hidden, derive_seed(seed, "relu-witness", static_cast<std::uint64_t>(k)));
    // At least one negative coordinate, otherwise y is trivially reachable.
    const std::size_t neg = static_cast<std::size_t>(k) % hidden;
    v[neg] = -std::abs(v[neg]);
    const Vector dir = w2 * v;
    if (norm(dir) == 0.0) continue;
    const Vector shift = unit(dir);
    const NnlsResult cert = nnls(w2, shift);
    if (cert.residual > 1e-9) {
      return {{shift + b2}, CertifiedGap{cert.residual},
              "y = λ₂ + W₂v/‖W₂v‖ (draw " + std::to_string(k) + "); gap = min over z >= 0 of ‖W₂z - (y - λ₂)‖"};
    }
  }
  throw Error(ErrorCode::WitnessNotFound, "W₂ maps the nonnegative orthant onto all of R^d for every draw");
}

AttentionScan attention_dead_direction_scan(const AttentionParams& p) {
  p.validate();
  const Matrix ktq = p.key.transpose() * p.query;
  const SymmetricEigen eig = symmetric_eigen(ktq);
  if (!(eig.values[0] < 0.0)) throw Error(ErrorCode::NoDeadDirection, "KᵀQ has a positive semidefinite symmetric part");
  AttentionScan scan{eig.vectors[0], eig.values[0], 0.0, 0.0};
  const double vu = norm(p.value * scan.direction);
  // ρσ(qρ²) peaks near ρ ~ 1/sqrt(|q|); scan well past it, then refine.
  const double span = 6.0 / std::sqrt(-scan.curvature);
  auto magnitude = [&](double rho) {
    const double s = scan.curvature * rho * rho;
    return rho * vu / (1.0 + std::exp(-s));
  };
  const int n = 20000;
  for (int k = 1; k <= n; ++k) {
    const double rho = span * k / n;
    const double m = magnitude(rho);
    if (m > scan.sup) {
      scan.sup = m;
      scan.argmax = rho;
    }
  }
  double lo = std::max(0.0, scan.argmax - span / n), hi = scan.argmax + span / n;
  for (int it = 0; it < 200; ++it) {  // golden-section refinement
    const double a = hi - 0.6180339887498949 * (hi - lo);
    const double b = lo + 0.6180339887498949 * (hi - lo);
    if (magnitude(a) < magnitude(b)) lo = a;
    else hi = b;
  }
  scan.argmax = 0.5 * (lo + hi);
  scan.sup = std::max(scan.sup, magnitude(scan.argmax));
  return scan;
}

Vector attention_pinned_output(const AttentionParams& p, const Vector& x) {
  const AttentionPrefix cache = AttentionPrefix::build(p, {Vector(p.dim())});
  return attention_last(p, cache, x);
}

PairInversion attention_pinned_invert(const AttentionParams& p, const Vector& target, int restarts, Seed seed,
                                      double tol) {
  const std::size_t d = p.dim();
  const AttentionPrefix cache = AttentionPrefix::build(p, {Vector(d)});
  auto residual = [&](const Vector& x) { return attention_last(p, cache, x) - target; };

  PairInversion best{Vector(d), std::numeric_limits<double>::infinity()};
  for (int k = 0; k < restarts; ++k) {
    const Seed s = derive_seed(seed, "pinned-start", static_cast<std::uint64_t>(k));
    const double scale = 0.5 * (1.0 + k % 4);
    Vector x = seeded_gaussian_vector(d, s) * scale;
    Vector r = residual(x);
    double rn = norm(r);
    double mu = 1e-3;
    // Levenberg-Marquardt; near a regular root it reduces to Newton.
    for (int it = 0; it < 400 && rn > 1e-3 * tol; ++it) {
      const Matrix j = attention_last_jacobian(p, cache, x);
      Matrix a = j.transpose() * j;
      for (std::size_t i = 0; i < d; ++i) a(i, i) += mu * (1.0 + a(i, i));
      Vector step;
      try {
        step = solve_linear(a, -transpose_times(j, r));
      } catch (const Error& e) {
        if (e.code() != ErrorCode::SingularMatrix) throw;
        mu *= 10.0;
        continue;
      }
      const Vector xn = x + step;
      const Vector rn_vec = residual(xn);
      const double cand = norm(rn_vec);
      if (std::isfinite(cand) && cand < rn) {
        x = xn;
        r = rn_vec;
        const bool stalled = rn - cand < 1e-15 * (1.0 + rn);
        rn = cand;
        mu = std::max(mu * 0.3, 1e-12);
        if (stalled) break;
      } else {
        mu *= 10.0;
        if (mu > 1e12) break;
      }
    }
    if (rn < best.residual) best = {x, rn};
  }
  return best;
}

Witness attention_unreachable_witness(const AttentionParams& p, const SolveConfig& cfg) {
  cfg.validate();
  const AttentionScan scan = attention_dead_direction_scan(p);
  const Vector vu = unit(p.value * scan.direction);
  const std::size_t d = p.dim();
  const Vector target = vu * (10.0 * scan.sup);
  const PairInversion far = attention_pinned_invert(p, target, cfg.restarts, derive_seed(cfg.seed, "far"), cfg.tol);

  EmpiricalFloor floor{far.residual, cfg.restarts, 0, 0};
  for (double frac : {0.25, 0.5}) {
    const PairInversion near =
        attention_pinned_invert(p, vu * (frac * scan.sup), cfg.restarts, derive_seed(cfg.seed, "near"), cfg.tol);
    ++floor.success_targets_total;
    if (near.residual <= cfg.tol) ++floor.success_targets_checked;
  }
  return {{Vector(d), target}, floor,
          "b₁ = 0 pins a₁ = 0; b₂ = 10·sup·Vu/‖Vu‖ with u the most negative eigenvector of sym(KᵀQ), "
          "uᵀKᵀQu = " + std::to_string(scan.curvature) + ", scanned sup = " + std::to_string(scan.sup)};
}

InversionResult postln_local_surjectivity_check(const MlpParams& f, const LayerNormParams& ln,
                                                const Vector& target_on_s, const SolveConfig& cfg) {
  f.validate();
  ln.validate();
  cfg.validate();
  const std::size_t d = ln.dim();
  if (f.input_dim() != d || f.output_dim() != d || target_on_s.size() != d) {
    throw Error(ErrorCode::DimensionMismatch, "Post-LN check needs f: R^d -> R^d");
  }
  Vector u(d);
  for (std::size_t i = 0; i < d; ++i) {
    if (ln.gamma[i] == 0.0) throw Error(ErrorCode::InvalidArgument, "γ must have nonzero entries");
    u[i] = (target_on_s[i] - ln.beta[i]) / ln.gamma[i];
  }
  if (std::abs(mean(u)) > 1e-8 || std::abs(norm(u) - 1.0) > 1e-8) {
    throw Error(ErrorCode::InvalidArgument, "target is not on the LayerNorm image set");
  }
  auto h = [&](const Vector& x) { return mlp_forward(f, x) + x; };
  auto dh = [&](const Vector& x) { return mlp_jacobian(f, x) + Matrix::identity(d); };
  if (det_sign(dh(Vector(d))) == 0) throw Error(ErrorCode::DegenerateJacobian, "Dg(0) is singular");

  InversionResult best;
  best.x = Vector(d);
  double mu = 1.0;
  for (int k = 0; k < 40; ++k, mu *= 0.5) {
    InversionResult r;
    try {
      r = newton_invert(h, dh, u * mu, Vector(d), cfg);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::SingularJacobian) throw;
      continue;
    }
    if (!r.converged) continue;
    r.residual = norm(postln_wrap([&](const Vector& x) { return mlp_forward(f, x); }, ln, r.x) - target_on_s);
    r.converged = r.residual <= cfg.tol;
    r.note = "mu = " + std::to_string(mu);
    if (r.converged) return r;
    if (r.residual < best.residual) best = std::move(r);
  }
  best.converged = false;
  append_note(best, "no μ in {1, 1/2, ...} converged");
  return best;
}

}  // namespace surjlab
