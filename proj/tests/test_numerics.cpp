#include <doctest.h>

#include <cmath>

#include "support.hpp"

using namespace surjlab;
using surjlab::test::error_code_of;

TEST_CASE("solve_linear on identity and diagonal systems") {
  CHECK(solve_linear(Matrix::identity(2), Vector{3, -1}) == Vector{3, -1});
  const Vector x = solve_linear(Matrix{{2, 0}, {0, 4}}, Vector{2, 4});
  CHECK(x[0] == doctest::Approx(1.0));
  CHECK(x[1] == doctest::Approx(1.0));
}

TEST_CASE("solve_linear recovers a planted solution") {
  for (std::uint64_t s = 0; s < 20; ++s) {
    Matrix a = seeded_gaussian(8, 8, Seed{s}) + 4.0 * Matrix::identity(8);
    const Vector xs = seeded_gaussian_vector(8, Seed{100 + s});
    const Vector b = a * xs;
    const Vector x = solve_linear(a, b);
    CHECK(norm(x - xs) <= 1e-10 * (1 + norm(xs)));
    CHECK(norm(a * x - b) <= 1e-10 * (1 + norm(b)));
  }
}

TEST_CASE("solve_linear reproduces b up to condition number 1e6") {
  // A = U diag(σ) Uᵀ with σ spanning six decades.
  const std::size_t n = 6;
  const Matrix g = seeded_gaussian(n, n, Seed{42});
  const SymmetricEigen e = symmetric_eigen(g + g.transpose());
  const Matrix u = Matrix::from_columns(e.vectors);
  Vector sigma(n);
  for (std::size_t i = 0; i < n; ++i) sigma[i] = std::pow(10.0, -6.0 * static_cast<double>(i) / (n - 1));
  const Matrix a = u * Matrix::diagonal(sigma) * u.transpose();
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Vector b = seeded_gaussian_vector(n, Seed{s});
    CHECK(norm(a * solve_linear(a, b) - b) <= 1e-10 * norm(b));
  }
}

TEST_CASE("singular systems are rejected") {
  CHECK(error_code_of([] { solve_linear(Matrix{{1, 2}, {2, 4}}, Vector{1, 1}); }) == ErrorCode::SingularMatrix);
  CHECK(error_code_of([] { solve_linear(Matrix(2, 3), Vector{1, 1}); }) == ErrorCode::DimensionMismatch);
}

TEST_CASE("det_sign") {
  CHECK(det_sign(Matrix::identity(3)) == 1);
  CHECK(det_sign(Matrix{{1, 0}, {0, -1}}) == -1);
  CHECK(det_sign(Matrix{{1, 2}, {2, 4}}) == 0);

  SUBCASE("agrees with cofactor expansion at d = 4") {
    auto minor = [](const Matrix& a, std::size_t col) {
      Matrix m(3, 3);
      for (std::size_t i = 1; i < 4; ++i) {
        std::size_t k = 0;
        for (std::size_t j = 0; j < 4; ++j) {
          if (j != col) m(i - 1, k++) = a(i, j);
        }
      }
      return m;
    };
    auto det3 = [](const Matrix& m) {
      return m(0, 0) * (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1)) - m(0, 1) * (m(1, 0) * m(2, 2) - m(1, 2) * m(2, 0)) +
             m(0, 2) * (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0));
    };
    for (std::uint64_t s = 0; s < 50; ++s) {
      const Matrix a = seeded_gaussian(4, 4, Seed{s});
      double det = 0.0;
      for (std::size_t j = 0; j < 4; ++j) det += (j % 2 == 0 ? 1.0 : -1.0) * a(0, j) * det3(minor(a, j));
      CHECK(det_sign(a) == (det > 0 ? 1 : -1));
      CHECK(determinant(a) == doctest::Approx(det).epsilon(1e-10));
    }
  }

  SUBCASE("multiplicative on random 3x3 pairs") {
    for (std::uint64_t s = 0; s < 100; ++s) {
      const Matrix a = seeded_gaussian(3, 3, Seed{2 * s});
      const Matrix b = seeded_gaussian(3, 3, Seed{2 * s + 1});
      const int sa = det_sign(a), sb = det_sign(b);
      if (sa != 0 && sb != 0) CHECK(det_sign(a * b) == sa * sb);
    }
  }
}

TEST_CASE("nnls") {
  SUBCASE("scalar cannot reach a negative value") {
    const NnlsResult r = nnls(Matrix{{1}}, Vector{-1});
    CHECK(r.x[0] == 0.0);
    CHECK(r.residual == doctest::Approx(1.0));
  }
  SUBCASE("target already in the cone") {
    const NnlsResult r = nnls(Matrix::identity(2), Vector{1, 2});
    CHECK(r.x[0] == doctest::Approx(1.0));
    CHECK(r.x[1] == doctest::Approx(2.0));
    CHECK(r.residual <= 1e-12);
  }
  SUBCASE("planted nonnegative solutions give zero residual") {
    for (std::uint64_t s = 0; s < 50; ++s) {
      const Matrix a = seeded_gaussian(3, 5, Seed{s});
      Vector xs = seeded_uniform_vector(5, Seed{1000 + s});
      xs[s % 5] = 0.0;
      const NnlsResult r = nnls(a, a * xs);
      CHECK(r.residual <= 1e-9);
      for (double v : r.x) CHECK(v >= 0.0);
    }
  }
  SUBCASE("KKT conditions on arbitrary targets") {
    for (std::uint64_t s = 0; s < 50; ++s) {
      const Matrix a = seeded_gaussian(4, 3, Seed{s});
      const Vector b = seeded_gaussian_vector(4, Seed{500 + s});
      const NnlsResult r = nnls(a, b);
      const Vector grad = transpose_times(a, a * r.x - b);  // gradient of ½‖Ax - b‖²
      for (std::size_t j = 0; j < 3; ++j) {
        CHECK(r.x[j] >= 0.0);
        CHECK(grad[j] >= -1e-9);
        if (r.x[j] > 0) CHECK(std::abs(grad[j]) <= 1e-9);
      }
      CHECK(r.residual == doctest::Approx(norm(a * r.x - b)).epsilon(1e-12));
    }
  }
}

TEST_CASE("real_cbrt") {
  CHECK(real_cbrt(8) == doctest::Approx(2.0));
  CHECK(real_cbrt(-27) == doctest::Approx(-3.0));
  CHECK(1.0 / real_cbrt(64) == doctest::Approx(0.25));
  for (int k = 0; k <= 120; ++k) {
    const double s = std::pow(10.0, -6.0 + 0.1 * k);
    for (double v : {s, -s}) {
      const double r = real_cbrt(v);
      CHECK(std::abs(r * r * r - v) <= 1e-12 * std::abs(v));
      CHECK(std::signbit(r) == std::signbit(v));
    }
  }
}

TEST_CASE("seeded_gaussian is deterministic and well distributed") {
  CHECK(seeded_gaussian(2, 2, Seed{7}) == seeded_gaussian(2, 2, Seed{7}));
  CHECK_FALSE(seeded_gaussian(2, 2, Seed{7}) == seeded_gaussian(2, 2, Seed{8}));

  const Matrix m = seeded_gaussian(1, 10000, Seed{1});
  double mu = 0.0, var = 0.0;
  for (double v : m.entries()) mu += v;
  mu /= 1e4;
  for (double v : m.entries()) var += (v - mu) * (v - mu);
  var /= 1e4 - 1;
  CHECK(std::abs(mu) < 0.05);
  CHECK(std::abs(var - 1.0) < 0.1);

  // Entry k depends only on (seed, k), so a wider draw extends a narrower one.
  const Vector a = seeded_gaussian_vector(5, Seed{3});
  const Vector b = seeded_gaussian_vector(9, Seed{3});
  for (std::size_t i = 0; i < 5; ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("derived seeds are distinct streams") {
  CHECK_FALSE(derive_seed(Seed{1}, 0) == derive_seed(Seed{1}, 1));
  CHECK_FALSE(derive_seed(Seed{1}, "a") == derive_seed(Seed{1}, "b"));
  CHECK(derive_seed(Seed{1}, "a", 3) == derive_seed(Seed{1}, "a", 3));
}

TEST_CASE("random_in_ball stays inside") {
  for (std::uint64_t s = 0; s < 200; ++s) CHECK(norm(random_in_ball(5, 3.0, Seed{s})) <= 3.0);
}

TEST_CASE("non-finite entries are rejected on construction") {
  CHECK(error_code_of([] { Vector(std::vector<double>{1.0, NAN}); }) == ErrorCode::NonFinite);
  CHECK(error_code_of([] { Matrix(1, 2, std::vector<double>{INFINITY, 0.0}); }) == ErrorCode::NonFinite);
  CHECK(error_code_of([] { Matrix(2, 2, std::vector<double>{1.0}); }) == ErrorCode::DimensionMismatch);
}

TEST_CASE("symmetric_eigen reconstructs the symmetric part") {
  const Matrix a = seeded_gaussian(5, 5, Seed{9});
  const SymmetricEigen e = symmetric_eigen(a);
  const Matrix u = Matrix::from_columns(e.vectors);
  const Matrix back = u * Matrix::diagonal(e.values) * u.transpose();
  CHECK(surjlab::test::max_abs_diff(back, symmetric_part(a)) < 1e-10);
  for (std::size_t i = 1; i < 5; ++i) CHECK(e.values[i - 1] <= e.values[i]);
}

TEST_CASE("least_squares matches the normal equations") {
  const Matrix a = seeded_gaussian(6, 3, Seed{5});
  const Vector b = seeded_gaussian_vector(6, Seed{6});
  const Vector x = least_squares(a, b);
  CHECK(norm(transpose_times(a, a * x - b)) < 1e-10);
}
