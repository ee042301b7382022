#include "surjlab/continuation.hpp"

#include <cmath>
#include <optional>

#include "surjlab/error.hpp"
#include "surjlab/numerics.hpp"

namespace surjlab {

namespace {

// [Hx | Ht] bordered with the row `border`.
Matrix bordered(const PathProblem& p, const Vector& x, double t, const Vector& border) {
  const std::size_t d = x.size();
  const Matrix hx = p.jacobian_x(x, t);
  const Vector ht = p.jacobian_t(x, t);
  Matrix b(d + 1, d + 1);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) b(i, j) = hx(i, j);
    b(i, d) = ht[i];
  }
  for (std::size_t j = 0; j <= d; ++j) b(d, j) = border[j];
  return b;
}

// Oriented so that sign det [DH; τᵀ] stays fixed along the path. Unlike
// dot(τ, prev) > 0 this survives the corners of piecewise-smooth paths.
std::optional<Vector> tangent(const PathProblem& p, const Vector& x, double t, const Vector& prev, int& orientation) {
  const std::size_t d = x.size();
  try {
    Vector tau = solve_linear(bordered(p, x, t, prev), basis(d + 1, d));
    if (!tau.all_finite() || norm(tau) == 0.0) return std::nullopt;
    tau = unit(tau);
    const int s = det_sign(bordered(p, x, t, tau));
    if (orientation == 0) {
      if (tau[d] < 0) tau *= -1.0;
      orientation = det_sign(bordered(p, x, t, tau));
    } else if (s != 0) {
      if (s != orientation) tau *= -1.0;
    } else if (dot(tau, prev) < 0) {
      tau *= -1.0;
    }
    return tau;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::SingularMatrix) throw;
    return std::nullopt;
  }
}

// Newton on x alone at fixed t.
std::optional<Vector> correct_fixed_t(const PathProblem& p, Vector x, double t, const PathOptions& o) {
  for (int it = 0; it <= o.corrector_iters; ++it) {
    const Vector r = p.residual(x, t);
    if (!r.all_finite()) return std::nullopt;
    if (norm(r) <= o.corrector_tol) return x;
    if (it == o.corrector_iters) break;
    try {
      x -= solve_linear(p.jacobian_x(x, t), r);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::SingularMatrix) throw;
      return std::nullopt;
    }
  }
  return std::nullopt;
}

// Newton on [H(z); τᵀ(z - z_pred)] = 0.
std::optional<Vector> correct_arclength(const PathProblem& p, const Vector& z_pred, const Vector& tau, double h,
                                        const PathOptions& o) {
  const std::size_t d = z_pred.size() - 1;
  Vector z = z_pred;
  for (int it = 0; it < o.corrector_iters; ++it) {
    const Vector x = slice(z, 0, d);
    const double t = z[d];
    const Vector r = p.residual(x, t);
    if (!r.all_finite()) return std::nullopt;
    const double along = dot(tau, z - z_pred);
    if (norm(r) <= o.corrector_tol && std::abs(along) <= 1e-12 * (1.0 + h)) return z;
    Vector rhs(d + 1);
    for (std::size_t i = 0; i < d; ++i) rhs[i] = -r[i];
    rhs[d] = -along;
    Vector dz;
    try {
      dz = solve_linear(bordered(p, x, t, tau), rhs);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::SingularMatrix) throw;
      return std::nullopt;
    }
    z += dz;
    if (norm(z - z_pred) > 2.0 * h + 1e-12) return std::nullopt;  // jumped off the local branch
  }
  const Vector r = p.residual(slice(z, 0, d), z[d]);
  if (r.all_finite() && norm(r) <= o.corrector_tol) return z;
  return std::nullopt;
}

}  // namespace

PathResult track_path(const PathProblem& problem, const Vector& x0, const PathOptions& options) {
  const std::size_t d = x0.size();
  PathResult result{x0, 0.0, 0, false, {}};

  Vector z = concat(x0, Vector{0.0});
  Vector prev = basis(d + 1, d);
  double h = options.step_init;
  int orientation = 0;

  while (result.steps < options.max_steps) {
    ++result.steps;
    const Vector x = slice(z, 0, d);
    const double t = z[d];
    const auto tau = tangent(problem, x, t, prev, orientation);
    if (!tau) {
      result.failure = "singular bordered Jacobian at t=" + std::to_string(t);
      return result;
    }

    // Endgame: land exactly on t = 1 when the predictor would cross it.
    if ((*tau)[d] > 0 && t + h * (*tau)[d] >= 1.0) {
      const double h_end = (1.0 - t) / (*tau)[d];
      const Vector x_pred = x + h_end * slice(*tau, 0, d);
      if (auto x_end = correct_fixed_t(problem, x_pred, 1.0, options)) {
        result.x = *x_end;
        result.t = 1.0;
        result.reached = true;
        return result;
      }
      h = 0.5 * std::min(h, h_end);
      if (h < options.step_min) {
        result.failure = "step underflow in endgame";
        return result;
      }
      continue;
    }

    const Vector z_pred = z + h * (*tau);
    if (auto z_new = correct_arclength(problem, z_pred, *tau, h, options)) {
      z = *z_new;
      prev = *tau;
      result.x = slice(z, 0, d);
      result.t = z[d];
      h = std::min(1.5 * h, options.step_max);
      if (z[d] < -1.0 || !z.all_finite()) {
        result.failure = "path left the parameter window";
        return result;
      }
      if (norm(result.x) > options.x_max) {
        result.failure = "path diverged at t=" + std::to_string(z[d]);
        return result;
      }
    } else {
      h *= 0.5;
      if (h < options.step_min) {
        result.failure = "step underflow at t=" + std::to_string(t);
        return result;
      }
    }
  }
  result.failure = "maximum number of path steps";
  return result;
}

}  // namespace surjlab
