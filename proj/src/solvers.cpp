#include "surjlab/solvers.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <optional>

#include "surjlab/continuation.hpp"
#include "surjlab/error.hpp"

namespace surjlab {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::InvalidArgument, what);
}

// Core damped Newton shared by every solver. `residual` is map(x) - y.
struct NewtonOutcome {
  Vector x;
  double residual;
  int iters;
  bool converged;
};

NewtonOutcome damped_newton(const VectorMap& residual, const JacobianMap& jac, Vector x, double tol, int max_iters,
                            const std::function<Vector(Vector)>& project, std::vector<double>* trace) {
  Vector r = residual(x);
  double rn = norm(r);
  int it = 0;
  for (; it < max_iters && rn > tol; ++it) {
    Vector step;
    try {
      step = solve_linear(jac(x), -r);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::SingularMatrix) {
        throw Error(ErrorCode::SingularJacobian, "Newton iterate has a singular Jacobian");
      }
      throw;
    }
    double lambda = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 40; ++ls, lambda *= 0.5) {
      Vector xn = x + lambda * step;
      if (project) xn = project(std::move(xn));
      Vector rn_vec;
      try {
        rn_vec = residual(xn);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::DegenerateInput) throw;
        continue;
      }
      const double cand = norm(rn_vec);
      if (std::isfinite(cand) && cand * cand <= (1.0 - 1e-4 * lambda) * rn * rn) {
        x = std::move(xn);
        r = std::move(rn_vec);
        rn = cand;
        accepted = true;
        break;
      }
    }
    if (trace) trace->push_back(rn);
    if (!accepted) {
      ++it;
      break;
    }
  }
  return {std::move(x), rn, it, rn <= tol};
}

Vector project_to_ball(Vector x, double radius) {
  const double n = norm(x);
  if (n > radius) x *= radius / n;
  return x;
}

}  // namespace

void SolveConfig::validate() const {
  require(tol > 0.0, "tol must be > 0");
  require(max_iters >= 1, "max_iters must be >= 1");
  require(damping > 0.0 && damping <= 1.0, "damping must be in (0, 1]");
  require(anderson_depth >= 0, "anderson_depth must be >= 0");
  require(restarts >= 1, "restarts must be >= 1");
}

void GdConfig::validate() const {
  require(learning_rate > 0.0, "learning_rate must be > 0");
  require(steps >= 1, "steps must be >= 1");
  require(tol > 0.0, "tol must be > 0");
}

void CubicSolveConfig::validate() const {
  require(delta > 0.0, "delta must be > 0");
  require(t_step_init > 0.0 && t_step_min > 0.0, "step sizes must be positive");
  require(newton_iters_per_step >= 1, "newton_iters_per_step must be >= 1");
  require(tol > 0.0, "tol must be > 0");
  require(restarts >= 0, "restarts must be >= 0");
}

std::string_view to_string(Method m) {
  switch (m) {
    case Method::FixedPoint: return "FixedPoint";
    case Method::Anderson: return "Anderson";
    case Method::Newton: return "Newton";
    case Method::Homotopy: return "Homotopy";
    case Method::GradientDescent: return "GradientDescent";
    case Method::Exact: return "Exact";
  }
  return "Unknown";
}

// ---------------------------------------------------------------------------
// Pre-LN fixed point

double estimate_preln_bound(const VectorMap& f, const LayerNormParams& ln, Seed seed, int samples) {
  const std::size_t d = ln.dim();
  double best = 0.0;
  for (int k = 0; k < samples; ++k) {
    Vector x = seeded_gaussian_vector(d, derive_seed(seed, static_cast<std::uint64_t>(k)));
    if (layer_norm_degenerate(ln, x)) continue;
    best = std::max(best, norm(f(layer_norm(ln, x))));
  }
  return 1.5 * best;
}

Vector nudge_off_constant(const LayerNormParams& ln, const Vector& x) {
  if (!layer_norm_degenerate(ln, x)) return x;
  const std::size_t d = x.size();
  Vector ramp(d);
  for (std::size_t i = 0; i < d; ++i) ramp[i] = static_cast<double>(i) - 0.5 * static_cast<double>(d - 1);
  const double eta = 1e-6 * std::max(1.0, norm(x));
  return x + unit(ramp) * eta;
}

InversionResult fixed_point_invert_preln(const PreLnProblem& problem, const Vector& y, const SolveConfig& cfg) {
  cfg.validate();
  problem.ln.validate();
  const LayerNormParams& ln = problem.ln;
  const std::size_t d = ln.dim();
  if (y.size() != d) throw Error(ErrorCode::DimensionMismatch, "target dimension");

  double m_hat = estimate_preln_bound(problem.f, ln, derive_seed(cfg.seed, "preln-bound"));
  double radius = m_hat + norm(y) + 1.0;

  // F(x) = y - f(LN(x)); the residual of g at x is x - F(x).
  auto picard_map = [&](const Vector& x) {
    const Vector fx = problem.f(layer_norm(ln, x));
    // Keep the ball sound if sampling underestimated the supremum.
    const double fn = norm(fx);
    if (1.5 * fn > m_hat) {
      m_hat = 1.5 * fn;
      radius = m_hat + norm(y) + 1.0;
    }
    return y - fx;
  };
  auto residual = [&](const Vector& x) { return problem.f(layer_norm(ln, x)) + x - y; };
  auto jacobian = [&](const Vector& x) {
    if (problem.f_jacobian) return preln_wrap_jacobian(problem.f_jacobian, ln, x);
    return finite_difference_jacobian([&](const Vector& z) { return residual(z); }, x);
  };
  auto project = [&](Vector x) { return nudge_off_constant(ln, project_to_ball(std::move(x), radius)); };

  InversionResult best;
  best.x = y;
  int total_iters = 0;

  for (int restart = 0; restart < cfg.restarts; ++restart) {
    Vector x = restart == 0 ? y : random_in_ball(d, radius, derive_seed(cfg.seed, "restart", restart));
    x = project(std::move(x));

    // Anderson-mixed Picard phase.
    std::deque<Vector> dx_hist, dg_hist;
    Vector x_prev, g_prev;
    double phase_best = std::numeric_limits<double>::infinity();
    Vector phase_best_x = x;
    int since_improvement = 0;
    bool mixed = false;
    bool converged = false;
    std::vector<double> trace;
    for (int it = 0; it < cfg.max_iters; ++it) {
      Vector fx;
      try {
        fx = picard_map(x);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::DegenerateInput) throw;
        x = nudge_off_constant(ln, x);
        continue;
      }
      const Vector g = fx - x;
      const double res = norm(g);
      trace.push_back(res);
      if (res < phase_best) {
        if (res < 0.5 * phase_best) since_improvement = 0;
        phase_best = res;
        phase_best_x = x;
      }
      if (res <= cfg.tol) {
        converged = true;
        break;
      }
      if (++since_improvement > 25 || res > 1e6 * phase_best) break;

      if (it > 0) {
        dx_hist.push_back(x - x_prev);
        dg_hist.push_back(g - g_prev);
        const std::size_t cap = std::min<std::size_t>(static_cast<std::size_t>(cfg.anderson_depth), d);
        while (dx_hist.size() > cap) {
          dx_hist.pop_front();
          dg_hist.pop_front();
        }
      }
      x_prev = x;
      g_prev = g;

      Vector next = x + cfg.damping * g;
      if (!dg_hist.empty()) {
        try {
          const Matrix dg = Matrix::from_columns({dg_hist.begin(), dg_hist.end()});
          const Vector gamma = least_squares(dg, g);
          for (std::size_t k = 0; k < gamma.size(); ++k) {
            next -= gamma[k] * (dx_hist[k] + cfg.damping * dg_hist[k]);
          }
          mixed = true;
        } catch (const Error& e) {
          if (e.code() != ErrorCode::SingularMatrix) throw;
          dx_hist.clear();
          dg_hist.clear();
        }
      }
      x = project(std::move(next));
      ++total_iters;
    }

    InversionResult r;
    r.ball_radius = radius;
    r.trace = std::move(trace);
    if (converged) {
      r.x = x;
      r.method = mixed ? Method::Anderson : Method::FixedPoint;
    } else {
      // Newton on g(x) - y from the best Picard iterate.
      try {
        NewtonOutcome n = damped_newton(residual, jacobian, phase_best_x, cfg.tol * 1e-2, 100, project, &r.trace);
        total_iters += n.iters;
        r.x = std::move(n.x);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::SingularJacobian) throw;
        r.x = phase_best_x;
        r.note = "singular Jacobian in Newton fallback";
      }
      r.method = Method::Newton;
    }
    r.iters = std::max(total_iters, 1);
    try {
      r.residual = norm(preln_wrap(problem.f, ln, r.x) - y);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::DegenerateInput) throw;
    }
    r.converged = r.residual <= cfg.tol;
    if (restart > 0) r.note += (r.note.empty() ? "" : "; ") + std::string("restart ") + std::to_string(restart);
    if (r.converged) return r;
    if (r.residual < best.residual) best = std::move(r);
  }
  best.iters = total_iters;
  best.ball_radius = radius;
  best.converged = false;
  best.note += (best.note.empty() ? "" : "; ") + std::string("not converged after all restarts");
  return best;
}

// ---------------------------------------------------------------------------

InversionResult newton_invert(const VectorMap& map, const JacobianMap& jac, const Vector& y, const Vector& x0,
                              const SolveConfig& cfg) {
  cfg.validate();
  InversionResult r;
  r.method = Method::Newton;
  auto residual = [&](const Vector& x) { return map(x) - y; };
  NewtonOutcome n = damped_newton(residual, jac, x0, cfg.tol, cfg.max_iters, {}, &r.trace);
  r.x = std::move(n.x);
  r.iters = n.iters;
  r.residual = norm(map(r.x) - y);
  r.converged = r.residual <= cfg.tol;
  return r;
}

// ---------------------------------------------------------------------------

InversionResult gd_invert_token(const StackParams& stack, const Sequence& prefix, const Vector& target,
                                const GdConfig& cfg) {
  cfg.validate();
  stack.validate();
  const std::size_t d = stack.dim();
  if (target.size() != d) throw Error(ErrorCode::DimensionMismatch, "target dimension");
  const StackPrefix sp(stack, prefix);
  const LayerNormParams& ln = stack.blocks.front().ln1;

  Vector x = cfg.init ? *cfg.init : Vector(d);
  if (x.size() != d) throw Error(ErrorCode::DimensionMismatch, "init dimension");
  x = nudge_off_constant(ln, x);

  InversionResult r;
  r.method = Method::GradientDescent;
  double best_loss = std::numeric_limits<double>::infinity();
  Vector best_x = x;

  auto loss_at = [&](const Vector& z) {
    const Vector res = sp.eval(z) - target;
    return dot(res, res);
  };

  int step = 0;
  for (; step <= cfg.steps; ++step) {
    auto [val, jac] = sp.eval_with_jacobian(x);
    const Vector res = val - target;
    const double loss = dot(res, res);
    r.trace.push_back(std::sqrt(loss));
    if (loss < best_loss) {
      best_loss = loss;
      best_x = x;
    }
    if (std::sqrt(loss) <= cfg.tol || step == cfg.steps) break;
    const Vector grad = 2.0 * transpose_times(jac, res);
    double lr = cfg.learning_rate;
    Vector next = nudge_off_constant(ln, x - lr * grad);
    if (cfg.backtracking) {
      for (int ls = 0; ls < 40 && loss_at(next) > loss; ++ls) {
        lr *= 0.5;
        next = nudge_off_constant(ln, x - lr * grad);
      }
    }
    if (!next.all_finite()) break;
    x = std::move(next);
  }
  r.x = best_x;
  r.iters = step;
  r.residual = norm(last_position_map(stack, prefix, r.x) - target);
  r.converged = r.residual <= cfg.tol;
  return r;
}

// ---------------------------------------------------------------------------
// LeakyReLU MLPs

namespace {

struct TwoLayerLeaky {
  const Matrix& w1;
  const Vector& b1;
  const Matrix& w2;
  const Vector& b2;
  double alpha;
};

TwoLayerLeaky as_two_layer_leaky(const MlpParams& p) {
  p.validate();
  if (p.layers.size() != 2) throw Error(ErrorCode::InvalidArgument, "expected a two-layer MLP");
  const DenseLayer& l1 = p.layers[0];
  const DenseLayer& l2 = p.layers[1];
  if (l1.activation.kind != Activation::Kind::LeakyReLU) {
    throw Error(ErrorCode::InvalidArgument, "first layer must use LeakyReLU");
  }
  if (l2.activation.kind != Activation::Kind::Identity) {
    throw Error(ErrorCode::InvalidArgument, "second layer must be linear");
  }
  if (p.output_dim() != p.input_dim()) throw Error(ErrorCode::DimensionMismatch, "MLP must map R^d to R^d");
  return {l1.weight, l1.bias, l2.weight, l2.bias, l1.activation.alpha};
}

}  // namespace

InversionResult leaky_mlp_invert_exact(const MlpParams& p, const Vector& y) {
  const TwoLayerLeaky m = as_two_layer_leaky(p);
  if (!m.w1.square() || !m.w2.square()) throw Error(ErrorCode::InvalidArgument, "exact inverse needs d1 = d");
  if (y.size() != m.w2.rows()) throw Error(ErrorCode::DimensionMismatch, "target dimension");
  Vector z = solve_linear(m.w2, y - m.b2);
  for (double& zi : z) zi = zi >= 0.0 ? zi : zi / m.alpha;
  InversionResult r;
  r.x = solve_linear(m.w1, z - m.b1);
  r.method = Method::Exact;
  r.iters = 1;
  r.residual = norm(mlp_forward(p, r.x) - y);
  r.converged = r.residual <= 1e-10 * (1.0 + norm(y));
  return r;
}

InversionResult leaky_mlp_invert_homotopy(const MlpParams& p, const Vector& y, const CubicSolveConfig& cfg) {
  cfg.validate();
  const TwoLayerLeaky m = as_two_layer_leaky(p);
  if (m.w1.rows() < m.w1.cols()) throw Error(ErrorCode::InvalidArgument, "homotopy inverse needs d1 >= d");
  if (y.size() != m.w2.rows()) throw Error(ErrorCode::DimensionMismatch, "target dimension");

  auto slope = [&](double t) { return t * m.alpha + 1.0 - t; };
  PathProblem path;
  path.residual = [&](const Vector& x, double t) {
    Vector z = m.w1 * x + m.b1;
    for (double& zi : z) zi = zi >= 0.0 ? zi : slope(t) * zi;
    return m.w2 * z + m.b2 - y;
  };
  path.jacobian_x = [&](const Vector& x, double t) {
    const Vector z = m.w1 * x + m.b1;
    Vector dz(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) dz[i] = z[i] >= 0.0 ? 1.0 : slope(t);
    return m.w2 * scale_rows(dz, m.w1);
  };
  path.jacobian_t = [&](const Vector& x, double) {
    Vector z = m.w1 * x + m.b1;
    for (double& zi : z) zi = zi >= 0.0 ? 0.0 : (m.alpha - 1.0) * zi;
    return m.w2 * z;
  };

  // t = 0: identity activation, x* = (W₂W₁)⁻¹(y - λ₂ - W₂λ₁).
  const Vector x_start = solve_linear(m.w2 * m.w1, y - m.b2 - m.w2 * m.b1);
  const double scale = 1.0 + norm(x_start);
  PathOptions opts;
  opts.step_init = cfg.t_step_init * scale;
  opts.step_min = cfg.t_step_min * scale;
  opts.step_max = scale;
  opts.corrector_iters = cfg.newton_iters_per_step;
  opts.corrector_tol = 1e-3 * cfg.tol;
  opts.x_max = 1e6 * scale;
  const PathResult pr = track_path(path, x_start, opts);

  InversionResult r;
  r.method = Method::Homotopy;
  r.iters = pr.steps;
  auto residual = [&](const Vector& x) { return path.residual(x, 1.0); };
  auto jacobian = [&](const Vector& x) { return path.jacobian_x(x, 1.0); };

  std::vector<Vector> starts;
  if (pr.reached) starts.push_back(pr.x);
  else {
    r.note = "path: " + pr.failure + "; Newton fallback";
    starts.push_back(pr.x);
    starts.push_back(x_start);
  }
  for (int k = 0; !pr.reached && k < cfg.restarts; ++k) {
    starts.push_back(x_start + random_in_ball(x_start.size(), scale, derive_seed(cfg.seed, "leaky-restart", k)));
  }
  for (const Vector& s : starts) {
    try {
      NewtonOutcome n = damped_newton(residual, jacobian, s, 1e-3 * cfg.tol, 50, {}, &r.trace);
      r.iters += n.iters;
      r.x = std::move(n.x);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::SingularJacobian) throw;
      r.x = s;
    }
    r.residual = norm(mlp_forward(p, r.x) - y);
    r.converged = r.residual <= cfg.tol;
    if (r.converged) return r;
  }
  throw Error(ErrorCode::PathFailure, "LeakyReLU homotopy did not reach t = 1 (" + pr.failure + ")");
}

std::vector<Vector> leaky_mlp_preimages(const MlpParams& p, const Vector& y) {
  const TwoLayerLeaky m = as_two_layer_leaky(p);
  if (y.size() != m.w2.rows()) throw Error(ErrorCode::DimensionMismatch, "target dimension");
  const std::size_t d1 = m.w1.rows();
  if (d1 > 20) throw Error(ErrorCode::InvalidArgument, "pattern enumeration limited to d1 <= 20");
  const double tol = 1e-10 * (1.0 + norm(y));
  std::vector<Vector> out;
  for (std::uint32_t mask = 0; mask < (1u << d1); ++mask) {
    Vector slopes(d1);
    for (std::size_t i = 0; i < d1; ++i) slopes[i] = (mask >> i & 1u) ? 1.0 : m.alpha;
    Vector x;
    try {
      x = solve_linear(m.w2 * scale_rows(slopes, m.w1), y - m.b2 - m.w2 * hadamard(slopes, m.b1));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::SingularMatrix) throw;
      continue;
    }
    const Vector z = m.w1 * x + m.b1;
    bool consistent = true;
    for (std::size_t i = 0; i < d1 && consistent; ++i) {
      consistent = (mask >> i & 1u) ? z[i] >= -tol : z[i] <= tol;
    }
    if (!consistent || norm(mlp_forward(p, x) - y) > 1e-8 * (1.0 + norm(y))) continue;
    const bool seen = std::any_of(out.begin(), out.end(), [&](const Vector& o) { return norm(o - x) <= 1e-9 * (1.0 + norm(x)); });
    if (!seen) out.push_back(std::move(x));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cubic maps L(x) + (xᵀNx)x

Vector cubic_start_point(const Matrix& n, const Vector& v) {
  const double q = dot(v, n * v);
  if (q == 0.0) throw Error(ErrorCode::ConeDegenerate, "v lies on the cone vᵀNv = 0");
  return v * real_cbrt(1.0 / q);
}

namespace {

Matrix cubic_term_jacobian(const Matrix& n, const Vector& x) {
  const Vector nx = n * x;
  const Vector ntx = transpose_times(n, x);
  return dot(x, nx) * Matrix::identity(x.size()) + Matrix::outer(x, nx + ntx);
}

}  // namespace

InversionResult cubic_homotopy_solve(const CubicLinearPart& linear, const Matrix& n, const Vector& v,
                                     const CubicSolveConfig& cfg) {
  cfg.validate();
  const std::size_t d = v.size();
  if (!n.square() || n.rows() != d) throw Error(ErrorCode::DimensionMismatch, "N must be d x d");
  const double n_norm = frobenius_norm(n);
  if (n_norm == 0.0) throw Error(ErrorCode::InvalidArgument, "N must be nonzero");

  auto full = [&](const Vector& x) { return linear.value(x) + dot(x, n * x) * x; };
  auto full_jac = [&](const Vector& x) { return linear.jacobian(x) + cubic_term_jacobian(n, x); };

  InversionResult r;
  r.method = Method::Homotopy;
  auto finish = [&](Vector x) {
    r.x = std::move(x);
    r.residual = norm(full(r.x) - v);
    r.converged = r.residual <= cfg.tol;
    return r.converged;
  };

  if (norm(v) == 0.0) {
    r.method = Method::Exact;
    if (finish(Vector(d))) return r;
  }

  auto polish = [&](const Vector& start) -> bool {
    try {
      NewtonOutcome o = damped_newton([&](const Vector& x) { return full(x) - v; }, full_jac, start,
                                      1e-3 * cfg.tol, 50, {}, &r.trace);
      r.iters += o.iters;
      return finish(std::move(o.x));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::SingularJacobian) throw;
      return false;
    }
  };

  auto attempt = [&](const Vector& target) -> bool {
    const double q = dot(target, n * target);
    if (q == 0.0) return false;
    const Vector x0 = cubic_start_point(n, target);
    PathProblem path;
    path.residual = [&](const Vector& x, double t) { return t * linear.value(x) + dot(x, n * x) * x - target; };
    path.jacobian_x = [&](const Vector& x, double t) {
      return t * linear.jacobian(x) + cubic_term_jacobian(n, x);
    };
    path.jacobian_t = [&](const Vector& x, double) { return linear.value(x); };
    const double scale = 1.0 + norm(x0);
    PathOptions opts;
    opts.step_init = cfg.t_step_init * scale;
    opts.step_min = cfg.t_step_min * scale;
    opts.step_max = scale;
    opts.corrector_iters = cfg.newton_iters_per_step;
    opts.corrector_tol = 1e-3 * cfg.tol * (1.0 + norm(target));
    opts.max_steps = 2000;
    opts.x_max = 1e6 * scale;
    const PathResult pr = track_path(path, x0, opts);
    r.iters += pr.steps;
    if (!pr.reached) {
      r.note += (r.note.empty() ? "" : "; ") + std::string("path: ") + pr.failure;
      return false;
    }
    return polish(pr.x);
  };

  const double vnorm = norm(v);
  const bool in_cone = std::abs(dot(v, n * v)) < cfg.delta * vnorm * vnorm * n_norm;
  if (!in_cone && attempt(v)) return r;

  // Perturb toward the dominant eigenvector of the symmetric part of N and
  // polish the perturbed root on the original system.
  r.note += (r.note.empty() ? "" : "; ") + std::string(in_cone ? "cone fallback" : "path fallback");
  const SymmetricEigen eig = symmetric_eigen(n);
  const std::size_t dom = std::abs(eig.values[0]) > std::abs(eig.values[d - 1]) ? 0 : d - 1;
  const Vector e = eig.vectors[dom];
  const double eta = 1e-6 * vnorm;
  const double sign = dot(v, n * e) * eig.values[dom] >= 0.0 ? 1.0 : -1.0;
  for (double s : {sign, -sign}) {
    if (attempt(v + (s * eta) * e)) return r;
  }

  // When L dominates, the root sits near the linear solution.
  try {
    if (polish(solve_linear(linear.jacobian(Vector(d)), v - linear.value(Vector(d))))) {
      r.note += "; linear start";
      r.method = Method::Newton;
      return r;
    }
  } catch (const Error& e) {
    if (e.code() != ErrorCode::SingularMatrix) throw;
  }

  // Some targets only have roots far out near the cone xᵀNx = 0; those are
  // born at infinity along the path, so sweep radii from r0/10 to 1000·r0.
  const double r0 = std::cbrt(vnorm / n_norm);
  for (int k = 0; k < cfg.restarts; ++k) {
    const Seed seed = derive_seed(cfg.seed, "cubic-restart", static_cast<std::uint64_t>(k));
    const double radius = r0 * std::pow(10.0, -1.0 + 4.0 * static_cast<double>(k % 32) / 31.0);
    const Vector start = unit(seeded_gaussian_vector(d, seed)) * radius;
    if (polish(start)) {
      r.note += "; restart " + std::to_string(k);
      r.method = Method::Newton;
      return r;
    }
  }
  throw Error(in_cone ? ErrorCode::ConeDegenerate : ErrorCode::PathFailure,
              "cubic solve failed after fallbacks (" + r.note + ")");
}

namespace {

// Scalar-gated retention in a' coordinates: γ(x)·Mx + (xᵀNx)x = b. With
// w = (M + σI)⁻¹b every root has the form x = w/γ where γ = gate(w/γ) and
// wᵀNw = σγ³. Two scalar residuals in σ are scanned for sign changes and
// bisected: γ from the gate fixed point, and γ = cbrt(wᵀNw/σ). Ungated is
// γ ≡ 1, where both reduce to wᵀNw − σ.
struct SecularSample {
  double value;
  Vector x;
};
using SecularResidual = std::function<std::optional<SecularSample>(double)>;

std::vector<Vector> scan_sign_changes(const SecularResidual& eval, double bound) {
  std::vector<double> grid;
  for (int k = 0; k <= 20000; ++k) grid.push_back(bound * (-1.0 + 2.0 * k / 20000.0));
  for (int k = 0; k <= 1000; ++k) {
    const double mag = bound * std::pow(10.0, -12.0 + 18.0 * k / 1000.0);
    grid.push_back(mag);
    grid.push_back(-mag);
  }
  std::sort(grid.begin(), grid.end());

  std::vector<Vector> out;
  std::optional<SecularSample> prev;
  double prev_sigma = 0.0;
  for (double sigma : grid) {
    if (sigma == 0.0) continue;
    auto cur = eval(sigma);
    if (prev && cur && (prev->value < 0.0) != (cur->value < 0.0)) {
      double lo = prev_sigma, hi = sigma;
      const bool lo_negative = prev->value < 0.0;
      Vector best = cur->x;
      bool ok = true;
      for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (mid == lo || mid == hi) break;
        auto sm = eval(mid);
        if (!sm) {
          ok = false;
          break;
        }
        best = sm->x;
        ((sm->value < 0.0) == lo_negative ? lo : hi) = mid;
      }
      if (ok) out.push_back(std::move(best));
    }
    prev = std::move(cur);
    prev_sigma = sigma;
  }
  return out;
}

std::vector<Vector> secular_candidates(const Matrix& m, const Matrix& n, const Vector& b,
                                       const std::function<double(const Vector&)>& gate) {
  const std::size_t d = b.size();
  auto solve_shifted = [&](double sigma) -> std::optional<Vector> {
    try {
      const Matrix a = m + sigma * Matrix::identity(d);
      const LuFactorization f = lu_factor(a);
      Vector w = lu_solve_unchecked(f, b);
      w += lu_solve_unchecked(f, b - a * w);
      if (!w.all_finite()) return std::nullopt;
      return w;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::SingularMatrix) throw;
      return std::nullopt;
    }
  };
  const double bound = frobenius_norm(m) + std::cbrt(frobenius_norm(n) * dot(b, b)) + 1.0;

  if (!gate) {
    return scan_sign_changes(
        [&](double sigma) -> std::optional<SecularSample> {
          auto w = solve_shifted(sigma);
          if (!w) return std::nullopt;
          const double psi = dot(*w, n * *w) - sigma;
          if (!std::isfinite(psi)) return std::nullopt;
          return SecularSample{psi, std::move(*w)};
        },
        bound);
  }

  auto gate_fixed_point = [&](double sigma) -> std::optional<SecularSample> {
    auto w = solve_shifted(sigma);
    if (!w) return std::nullopt;
    auto phi = [&](double g) { return gate(*w * (1.0 / g)) - g; };
    double lo = 1e-12, hi = 1.0;
    const bool lo_negative = phi(lo) < 0.0;
    if (lo_negative == (phi(hi) < 0.0)) return std::nullopt;
    for (int it = 0; it < 80; ++it) {
      const double mid = 0.5 * (lo + hi);
      ((phi(mid) < 0.0) == lo_negative ? lo : hi) = mid;
    }
    const double g = 0.5 * (lo + hi);
    const double psi = dot(*w, n * *w) - sigma * g * g * g;
    if (!std::isfinite(psi)) return std::nullopt;
    return SecularSample{psi, *w * (1.0 / g)};
  };
  auto cube_root_gate = [&](double sigma) -> std::optional<SecularSample> {
    auto w = solve_shifted(sigma);
    if (!w) return std::nullopt;
    const double ratio = dot(*w, n * *w) / sigma;
    if (!(ratio > 0.0) || !std::isfinite(ratio)) return std::nullopt;
    const double g = std::cbrt(ratio);
    Vector x = *w * (1.0 / g);
    const double h = gate(x) - g;
    if (!std::isfinite(h)) return std::nullopt;
    return SecularSample{h, std::move(x)};
  };
  std::vector<Vector> out = scan_sign_changes(gate_fixed_point, bound);
  for (Vector& x : scan_sign_changes(cube_root_gate, bound)) out.push_back(std::move(x));
  return out;
}

}  // namespace

InversionResult cubic_map_solve(const Matrix& m, const Matrix& n, const Vector& v, const CubicSolveConfig& cfg) {
  if (!m.square() || m.rows() != v.size()) throw Error(ErrorCode::DimensionMismatch, "M must be d x d");
  cfg.validate();
  const CubicLinearPart linear{[&](const Vector& x) { return m * x; }, [&](const Vector&) { return m; }};

  // Path first, then the scalar reduction, then the seeded restarts.
  std::string path_note;
  CubicSolveConfig quick = cfg;
  quick.restarts = 0;
  try {
    InversionResult r = cubic_homotopy_solve(linear, n, v, quick);
    if (r.converged) return r;
    path_note = r.note;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::ConeDegenerate && e.code() != ErrorCode::PathFailure) throw;
    path_note = e.what();
  }

  auto residual = [&](const Vector& x) { return m * x + dot(x, n * x) * x - v; };
  auto jacobian = [&](const Vector& x) { return m + cubic_term_jacobian(n, x); };
  std::optional<InversionResult> best;
  for (const Vector& x : secular_candidates(m, n, v, {})) {
    InversionResult r;
    r.method = Method::Newton;
    r.x = x;
    try {
      NewtonOutcome o = damped_newton(residual, jacobian, x, 1e-3 * cfg.tol, 30, {}, nullptr);
      if (norm(residual(o.x)) < norm(residual(x))) {
        r.x = std::move(o.x);
        r.iters = o.iters;
      }
    } catch (const Error& e) {
      if (e.code() != ErrorCode::SingularJacobian) throw;
    }
    r.residual = norm(residual(r.x));
    r.converged = r.residual <= cfg.tol;
    r.note = "scalar reduction after " + path_note;
    if (r.converged) return r;
    if (std::isfinite(r.residual) && (!best || r.residual < best->residual)) best = std::move(r);
  }
  try {
    return cubic_homotopy_solve(linear, n, v, cfg);
  } catch (const Error& e) {
    if (!best || (e.code() != ErrorCode::ConeDegenerate && e.code() != ErrorCode::PathFailure)) throw;
    best->note += "; restarts failed";
    return *best;
  }
}

InversionResult retention_token_invert(const RetentionParams& p, const Matrix& prev_state, const Vector& b,
                                       const CubicSolveConfig& cfg) {
  p.validate();
  const std::size_t d = p.dim();
  if (b.size() != d) throw Error(ErrorCode::DimensionMismatch, "target dimension");
  const Matrix v_inv = inverse(p.value);
  // In a' = V a the cubic term is (a'ᵀNa')a' with N = V⁻ᵀKᵀQV⁻¹.
  const Matrix n = v_inv.transpose() * p.key.transpose() * p.query * v_inv;
  const Matrix m = prev_state * p.query * v_inv;

  auto forward = [&](const Vector& a) { return retention_last(p, prev_state, a) - b; };
  auto jacobian = [&](const Vector& a) { return retention_last_jacobian(p, prev_state, a); };
  auto polish = [&](InversionResult& r) {
    if (r.converged) return;
    // Rounding in a' = Va can leave the original coordinates just above tol.
    try {
      NewtonOutcome o = damped_newton(forward, jacobian, r.x, 1e-3 * cfg.tol, 30, {}, nullptr);
      const double res = norm(forward(o.x));
      if (res < r.residual) {
        r.x = std::move(o.x);
        r.residual = res;
        r.iters += o.iters;
        r.converged = r.residual <= cfg.tol;
      }
    } catch (const Error& e) {
      if (e.code() != ErrorCode::SingularJacobian) throw;
    }
  };

  const CubicLinearPart ungated_linear{[&](const Vector& x) { return m * x; }, [&](const Vector&) { return m; }};
  const CubicLinearPart gated_linear{
      [&](const Vector& x) { return retention_last(p, prev_state, v_inv * x) - dot(x, n * x) * x; },
      [&](const Vector& x) { return retention_last_jacobian(p, prev_state, v_inv * x) * v_inv - cubic_term_jacobian(n, x); }};
  auto solve = [&](const CubicSolveConfig& c) {
    InversionResult r = cubic_homotopy_solve(p.gated() ? gated_linear : ungated_linear, n, b, c);
    r.x = v_inv * r.x;
    r.residual = norm(forward(r.x));
    r.converged = r.residual <= cfg.tol;
    polish(r);
    return r;
  };

  // Path first, then the scalar reduction (exact for scalar gates), then
  // the seeded restarts.
  std::string path_note;
  CubicSolveConfig quick = cfg;
  quick.restarts = 0;
  try {
    InversionResult r = solve(quick);
    if (r.converged) return r;
    path_note = r.note;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::ConeDegenerate && e.code() != ErrorCode::PathFailure) throw;
    path_note = e.what();
  }

  std::function<double(const Vector&)> gate;
  if (const auto* g = std::get_if<Mamba2Gate>(&p.gating)) {
    gate = [&, g](const Vector& x) { return mamba2_decay(*g, v_inv * x); };
  }
  std::optional<InversionResult> best;
  if (!p.gated() || gate) {
    for (const Vector& x : secular_candidates(m, n, b, gate)) {
      InversionResult r;
      r.method = Method::Newton;
      r.x = v_inv * x;
      r.residual = norm(forward(r.x));
      r.converged = r.residual <= cfg.tol;
      polish(r);
      r.note = "scalar reduction after " + path_note;
      if (r.converged) return r;
      if (std::isfinite(r.residual) && (!best || r.residual < best->residual)) best = std::move(r);
    }
  }
  try {
    return solve(cfg);
  } catch (const Error& e) {
    if (!best || (e.code() != ErrorCode::ConeDegenerate && e.code() != ErrorCode::PathFailure)) throw;
    // Nothing reached tol; report the closest root instead of nothing.
    best->note += "; " + std::string(e.what());
    return *best;
  }
}

}  // namespace surjlab
