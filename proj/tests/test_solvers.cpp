#include <doctest.h>

#include <cmath>

#include "support.hpp"
#include "surjlab/generate.hpp"
#include "surjlab/harness.hpp"
#include "surjlab/solvers.hpp"

using namespace surjlab;
using surjlab::test::error_code_of;

namespace {

PreLnProblem mlp_problem(const MlpParams& m, std::size_t d) {
  return {[m](const Vector& u) { return mlp_forward(m, u); }, [m](const Vector& u) { return mlp_jacobian(m, u); },
          LayerNormParams::standard(d)};
}

Vector preln_eval(const PreLnProblem& p, const Vector& x) { return preln_wrap(p.f, p.ln, x); }

MlpParams leaky_two_layer(const Matrix& w1, const Vector& b1, const Matrix& w2, const Vector& b2, double alpha) {
  return {{DenseLayer{w1, b1, Activation::leaky_relu(alpha)}, DenseLayer{w2, b2, Activation::identity()}}};
}

Vector cubic_eval(const Matrix& m, const Matrix& n, const Vector& x) { return m * x + dot(x, n * x) * x; }

}  // namespace

TEST_CASE("config validation") {
  SolveConfig s;
  s.tol = 0.0;
  CHECK(error_code_of([&] { s.validate(); }) == ErrorCode::InvalidArgument);
  GdConfig g;
  CHECK(g.learning_rate == 0.1);
  CHECK(g.steps == 200);
  CHECK_FALSE(g.init.has_value());
  g.steps = 0;
  CHECK(error_code_of([&] { g.validate(); }) == ErrorCode::InvalidArgument);
  CubicSolveConfig c;
  c.delta = -1;
  CHECK(error_code_of([&] { c.validate(); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("fixed-point inversion of Pre-LN maps") {
  const LayerNormParams ln = LayerNormParams::standard(3);
  SolveConfig cfg;
  const Vector y{1.0, -2.0, 0.5};

  SUBCASE("f = 0 is the identity") {
    PreLnProblem p{[](const Vector& u) { return Vector(u.size()); }, {}, ln};
    const InversionResult r = fixed_point_invert_preln(p, y, cfg);
    CHECK(r.converged);
    CHECK(r.iters == 1);
    CHECK(norm(r.x - y) <= 1e-12);
  }
  SUBCASE("f = c shifts the target") {
    const Vector c{0.3, 0.3, -1.0};
    PreLnProblem p{[&](const Vector&) { return c; }, {}, ln};
    const InversionResult r = fixed_point_invert_preln(p, y, cfg);
    CHECK(r.converged);
    CHECK(r.iters == 1);
    CHECK(norm(r.x - (y - c)) <= 1e-12);
  }
  SUBCASE("random GeLU MLP, 100 targets with norm up to 100") {
    const MlpParams m = random_mlp({8, 32, 8}, Activation::gelu(), Seed{3});
    const PreLnProblem p = mlp_problem(m, 8);
    for (std::uint64_t k = 0; k < 100; ++k) {
      const Vector t = random_in_ball(8, 100.0, Seed{k});
      cfg.seed = Seed{k};
      const InversionResult r = fixed_point_invert_preln(p, t, cfg);
      CHECK(r.converged);
      CHECK(r.residual <= 1e-8);
      CHECK(norm(preln_eval(p, r.x) - t) == r.residual);  // recomputed by the same forward map
      CHECK(norm(r.x) <= r.ball_radius);
      CHECK(r.ball_radius >= norm(t) + 1.0);
    }
  }
}

TEST_CASE("newton_invert") {
  SolveConfig cfg;
  SUBCASE("identity in one step") {
    const VectorMap id = [](const Vector& x) { return x; };
    const JacobianMap jid = [](const Vector& x) { return Matrix::identity(x.size()); };
    const InversionResult r = newton_invert(id, jid, Vector{4, -7}, Vector(2), cfg);
    CHECK(r.converged);
    CHECK(r.iters == 1);
    CHECK(r.x == Vector{4, -7});
  }
  SUBCASE("scalar cube") {
    const InversionResult r = newton_invert([](const Vector& x) { return Vector{x[0] * x[0] * x[0]}; },
                                            [](const Vector& x) { return Matrix{{3 * x[0] * x[0]}}; }, Vector{8},
                                            Vector{1}, cfg);
    CHECK(r.converged);
    CHECK(std::abs(r.x[0] - 2.0) <= 1e-10);
    CHECK(r.method == Method::Newton);
  }
  SUBCASE("singular Jacobian at the start") {
    CHECK(error_code_of([&] {
            newton_invert([](const Vector& x) { return Vector{x[0] * x[0]}; },
                          [](const Vector& x) { return Matrix{{2 * x[0]}}; }, Vector{1}, Vector{0.0}, cfg);
          }) == ErrorCode::SingularJacobian);
  }
  SUBCASE("agrees with the fixed-point solver on a Pre-LN block") {
    const MlpParams m = random_mlp({4, 16, 4}, Activation::gelu(), Seed{8});
    const PreLnProblem p = mlp_problem(m, 4);
    for (std::uint64_t k = 0; k < 20; ++k) {
      const Vector t = random_in_ball(4, 20.0, Seed{k});
      const InversionResult a = fixed_point_invert_preln(p, t, cfg);
      const InversionResult b = newton_invert([&](const Vector& x) { return preln_eval(p, x); },
                                              [&](const Vector& x) { return preln_wrap_jacobian(p.f_jacobian, p.ln, x); },
                                              t, a.x + Vector(4, 0.01), cfg);
      CHECK(a.converged);
      CHECK(b.converged);
      CHECK(a.residual <= cfg.tol);
      CHECK(b.residual <= cfg.tol);
    }
  }
}

TEST_CASE("gradient-descent token inversion") {
  SUBCASE("zero-weight block is a shifted identity") {
    TransformerBlockParams b = random_block(3, 6, Seed{1});
    b.attn = {Matrix(3, 3), Matrix(3, 3), Matrix(3, 3)};
    b.w1 = Matrix(6, 3);
    b.w2 = Matrix(3, 6);
    const StackParams s{{b}};
    const Vector target{0.5, -1.0, 2.0};
    GdConfig cfg;
    const InversionResult r = gd_invert_token(s, {}, target, cfg);
    CHECK(r.method == Method::GradientDescent);
    CHECK(r.converged);
    CHECK(r.iters <= 200);
    CHECK(norm(last_position_map(s, {}, r.x) - target) <= 1e-8);
  }
  SUBCASE("backtracking makes the trace monotone") {
    const StackParams s = random_stack(1, 4, 8, Seed{2});
    GdConfig cfg;
    cfg.backtracking = true;
    cfg.learning_rate = 1.0;
    const InversionResult r = gd_invert_token(s, random_sequence(2, 4, 1.0, Seed{3}), Vector{1, 2, -1, 0}, cfg);
    for (std::size_t i = 1; i < r.trace.size(); ++i) CHECK(r.trace[i] <= r.trace[i - 1]);
  }
  SUBCASE("two-block stack at d = 16 with the Newton polish") {
    const StackParams s = random_stack(2, 16, 32, Seed{4});
    StackInversionOptions opts;
    const Sequence prefix = random_sequence(3, 16, 1.0, Seed{5});
    const Vector target = seeded_gaussian_vector(16, Seed{6});
    const InversionResult r = invert_stack_token(s, prefix, target, opts);
    CHECK(r.converged);
    CHECK(norm(last_position_map(s, prefix, r.x) - target) <= 1e-4);
  }
}

TEST_CASE("LeakyReLU MLP, square weights") {
  SUBCASE("scalar") {
    const MlpParams p = leaky_two_layer(Matrix{{1}}, Vector(1), Matrix{{1}}, Vector(1), 0.5);
    const InversionResult r = leaky_mlp_invert_exact(p, Vector{-1});
    CHECK(r.x[0] == -2.0);
    CHECK(r.method == Method::Exact);
  }
  SUBCASE("identity weights") {
    const MlpParams p = leaky_two_layer(Matrix::identity(2), Vector(2), Matrix::identity(2), Vector(2), 0.25);
    CHECK(leaky_mlp_invert_exact(p, Vector{-1, 2}).x == Vector{-4, 2});
  }
  SUBCASE("random d = 3 and agreement with the homotopy") {
    for (std::uint64_t s = 0; s < 50; ++s) {
      const MlpParams p = random_mlp({3, 3, 3}, Activation::leaky_relu(0.25), Seed{s});
      const Vector y = seeded_gaussian_vector(3, Seed{100 + s}) * 2.0;
      const InversionResult e = leaky_mlp_invert_exact(p, y);
      CHECK(e.residual <= 1e-10);
      CHECK(norm(mlp_forward(p, e.x) - y) <= 1e-10);
      CubicSolveConfig cfg;
      const InversionResult h = leaky_mlp_invert_homotopy(p, y, cfg);
      CHECK(h.converged);
      CHECK(norm(h.x - e.x) <= 1e-8);
      // square LeakyReLU maps are bijections: exactly one activation pattern fits
      const auto all = leaky_mlp_preimages(p, y);
      REQUIRE(all.size() == 1);
      CHECK(norm(all[0] - e.x) <= 1e-8);
    }
  }
  SUBCASE("singular weights") {
    const MlpParams p = leaky_two_layer(Matrix{{1, 2}, {2, 4}}, Vector(2), Matrix::identity(2), Vector(2), 0.25);
    CHECK(error_code_of([&] { leaky_mlp_invert_exact(p, Vector{1, 1}); }) == ErrorCode::SingularMatrix);
  }
}

TEST_CASE("LeakyReLU MLP, wide hidden layer") {
  SUBCASE("slope close to 1 keeps the linear solution") {
    const MlpParams p = random_mlp({2, 4, 2}, Activation::leaky_relu(1.0 - 1e-9), Seed{1});
    const Vector y{0.7, -1.3};
    const Matrix w = p.layers[1].weight * p.layers[0].weight;
    const Vector lin = solve_linear(w, y - p.layers[1].bias - p.layers[1].weight * p.layers[0].bias);
    const InversionResult r = leaky_mlp_invert_homotopy(p, y, CubicSolveConfig{});
    CHECK(r.converged);
    CHECK(norm(r.x - lin) <= 1e-6);
  }

  SUBCASE("every reachable target is inverted; the rest are certified unreachable") {
    int reachable = 0, unreachable = 0;
    for (std::size_t d1 : {3u, 4u, 8u}) {
      for (std::uint64_t s = 0; s < 5; ++s) {
        const MlpParams p = random_mlp({2, d1, 2}, Activation::leaky_relu(0.25), Seed{s * 10 + d1});
        for (std::uint64_t k = 0; k < 50; ++k) {
          const Vector y = seeded_gaussian_vector(2, Seed{1000 * s + k}) * 2.0;
          const auto pre = leaky_mlp_preimages(p, y);
          bool ok = false;
          try {
            const InversionResult r = leaky_mlp_invert_homotopy(p, y, CubicSolveConfig{});
            ok = r.converged && norm(mlp_forward(p, r.x) - y) <= 1e-8;
          } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::PathFailure);
          }
          CHECK(ok == !pre.empty());
          (pre.empty() ? unreachable : reachable) += 1;
        }
      }
    }
    MESSAGE("reachable " << reachable << ", certified unreachable " << unreachable);
    CHECK(reachable > 0);
  }

  SUBCASE("a wide LeakyReLU MLP that is not surjective") {
    // f(x) = max(x, x/4) + 0.9·max(-x, -x/4) >= 0, while W₂W₁ = 0.1 ≠ 0
    const MlpParams p = leaky_two_layer(Matrix{{1}, {-1}}, Vector(2), Matrix{{1, 0.9}}, Vector(1), 0.25);
    for (int k = -2000; k <= 2000; ++k) CHECK(mlp_forward(p, Vector{k * 0.01})[0] >= 0.0);
    CHECK(leaky_mlp_preimages(p, Vector{-1}).empty());
    CHECK(leaky_mlp_preimages(p, Vector{1}).size() == 2);
    CHECK(error_code_of([&] { leaky_mlp_invert_homotopy(p, Vector{-1}, CubicSolveConfig{}); }) == ErrorCode::PathFailure);
  }
}

TEST_CASE("cubic map solver") {
  CubicSolveConfig cfg;
  SUBCASE("scalar examples") {
    CHECK(cubic_map_solve(Matrix{{0}}, Matrix{{1}}, Vector{8}, cfg).x[0] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(cubic_map_solve(Matrix{{1}}, Matrix{{1}}, Vector{2}, cfg).x[0] == doctest::Approx(1.0).epsilon(1e-10));
  }
  SUBCASE("start point solves the pure cubic") {
    for (std::uint64_t s = 0; s < 200; ++s) {
      const Matrix n = seeded_gaussian(3, 3, Seed{s});
      const Vector v = seeded_gaussian_vector(3, Seed{500 + s});
      if (std::abs(dot(v, n * v)) < cfg.delta * dot(v, v) * frobenius_norm(n)) continue;
      const Vector x0 = cubic_start_point(n, v);
      CHECK(norm(dot(x0, n * x0) * x0 - v) <= 1e-10 * (1 + norm(v)));
    }
  }
  SUBCASE("random d = 3 with a rank-2 linear part") {
    int solved = 0;
    for (std::uint64_t k = 0; k < 100; ++k) {
      Matrix m = seeded_gaussian(3, 3, Seed{k});
      m.set_col(2, m.col(0) + 0.5 * m.col(1));
      const Matrix n = seeded_gaussian(3, 3, Seed{1000 + k});
      const Vector v = seeded_gaussian_vector(3, Seed{2000 + k});
      cfg.seed = Seed{k};
      const InversionResult r = cubic_map_solve(m, n, v, cfg);
      const double res = norm(cubic_eval(m, n, r.x) - v);
      CHECK(res == r.residual);
      // Roots close to the cone xᵀNx = 0 have large norm; there the forward
      // map itself is only accurate to about eps·‖N‖·‖x‖³.
      const double xn = norm(r.x);
      const double floor = 64 * 2.2e-16 * (frobenius_norm(m) * xn + frobenius_norm(n) * xn * xn * xn);
      CHECK((r.converged || res <= floor));
      solved += r.converged;
    }
    CHECK(solved >= 99);
  }
}

TEST_CASE("retention token inversion") {
  CubicSolveConfig cfg;
  SUBCASE("scalar first token") {
    RetentionParams p{Matrix{{1}}, Matrix{{1}}, Matrix{{1}}, {}};
    CHECK(retention_first_token(p, Vector{8})[0] == doctest::Approx(2.0).epsilon(1e-15));
    const InversionResult r = retention_token_invert(p, Matrix(1, 1), Vector{8}, cfg);
    CHECK(r.x[0] == doctest::Approx(2.0).epsilon(1e-12));
  }
  SUBCASE("closed-form first token in general dimension") {
    for (std::uint64_t s = 0; s < 50; ++s) {
      const RetentionParams p = random_retention(4, GatingKind::None, Seed{s});
      const Vector b = seeded_gaussian_vector(4, Seed{100 + s});
      const Vector a = retention_first_token(p, b);
      CHECK(norm(retention_forward(p, {a})[0] - b) <= 1e-10 * (1 + norm(b)));
    }
  }
  SUBCASE("later tokens on an accumulated state") {
    for (GatingKind g : {GatingKind::None, GatingKind::Rwkv6}) {
      int ok = 0;
      for (std::uint64_t s = 0; s < 20; ++s) {
        const RetentionParams p = random_retention(3, g, Seed{s});
        const Matrix state = retention_state(p, random_sequence(4, 3, 1.0, Seed{200 + s}));
        const Vector b = seeded_gaussian_vector(3, Seed{300 + s});
        cfg.seed = Seed{s};
        const InversionResult r = retention_token_invert(p, state, b, cfg);
        if (r.converged) {
          ++ok;
          CHECK(norm(retention_last(p, state, r.x) - b) <= 1e-8 * (1 + norm(b)));
        }
      }
      CHECK(ok >= 19);
    }
  }
  SUBCASE("singular value matrix") {
    RetentionParams p{Matrix::identity(2), Matrix::identity(2), Matrix{{1, 1}, {1, 1}}, {}};
    CHECK(error_code_of([&] { retention_token_invert(p, Matrix(2, 2), Vector{1, 2}, cfg); }) == ErrorCode::SingularMatrix);
  }
}

TEST_CASE("converged iff the recomputed residual meets tol") {
  const MlpParams m = random_mlp({3, 9, 3}, Activation::gelu(), Seed{21});
  const PreLnProblem p = mlp_problem(m, 3);
  for (double tol : {1e-2, 1e-8, 1e-14}) {
    SolveConfig cfg;
    cfg.tol = tol;
    cfg.max_iters = 5;
    cfg.restarts = 1;
    const InversionResult r = fixed_point_invert_preln(p, Vector{30, -10, 5}, cfg);
    CHECK(r.converged == (r.residual <= tol));
  }
}
