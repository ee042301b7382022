#pragma once

// Pseudo-arclength predictor-corrector tracking of H(x, t) = 0 from t = 0
// to t = 1. Folds in t are followed through, so a path that turns back
// still reaches t = 1 whenever it is bounded.

#include <functional>
#include <string>

#include "surjlab/linalg.hpp"

namespace surjlab {

struct PathProblem {
  std::function<Vector(const Vector&, double)> residual;    // H(x, t)
  std::function<Matrix(const Vector&, double)> jacobian_x;  // ∂H/∂x
  std::function<Vector(const Vector&, double)> jacobian_t;  // ∂H/∂t
};

struct PathOptions {
  double step_init = 0.1;   // initial arclength step
  double step_min = 1e-4;   // PathFailure below this
  double step_max = 1.0;
  int corrector_iters = 20;
  double corrector_tol = 1e-10;  // absolute ‖H‖ target at each accepted point
  int max_steps = 20000;
  double x_max = 1e300;  // ‖x‖ beyond this counts as divergence to infinity
};

struct PathResult {
  Vector x;
  double t = 0.0;
  int steps = 0;
  bool reached = false;
  std::string failure;
};

PathResult track_path(const PathProblem& problem, const Vector& x0, const PathOptions& options);

}  // namespace surjlab
