#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "surjlab/linalg.hpp"

namespace surjlab {

/// Relative pivot / determinant tolerance used for degeneracy decisions.
inline constexpr double kSingularityTol = 1e-12;

struct Seed {
  std::uint64_t value = 0;
  friend bool operator==(const Seed&, const Seed&) = default;
};

/// Derives an independent stream seed, e.g. per restart or per trial.
Seed derive_seed(Seed base, std::uint64_t stream);
Seed derive_seed(Seed base, std::string_view tag, std::uint64_t stream = 0);

/// Uniform double in [0, 1) at position `counter` of the stream.
double counter_uniform(Seed seed, std::uint64_t counter);

/// i.i.d. N(0,1) entries; entry k (row-major) depends only on (seed, k).
Matrix seeded_gaussian(std::size_t rows, std::size_t cols, Seed seed);
Vector seeded_gaussian_vector(std::size_t n, Seed seed);
Vector seeded_uniform_vector(std::size_t n, Seed seed);
/// Uniform sample from the ball of radius `radius`.
Vector random_in_ball(std::size_t d, double radius, Seed seed);

struct LuFactorization {
  Matrix lu;
  std::vector<std::size_t> perm;
  int parity = 1;
  double scale = 0.0;  // Frobenius norm of the factored matrix
  bool singular = false;
};

/// Partial-pivoting LU. `singular` is set when a pivot falls below
/// kSingularityTol·‖A‖; the factors are still returned.
LuFactorization lu_factor(const Matrix& a);
Vector lu_solve(const LuFactorization& f, const Vector& b);
/// As lu_solve but only exact zero pivots are rejected; for scans that
/// must sample close to singular matrices.
Vector lu_solve_unchecked(const LuFactorization& f, const Vector& b);

/// Throws SingularMatrix on a pivot breakdown.
Vector solve_linear(const Matrix& a, const Vector& b);
Matrix solve_linear(const Matrix& a, const Matrix& b);
Matrix inverse(const Matrix& a);

/// Sign of det(A); 0 when |det| < kSingularityTol·‖A‖_F^d.
int det_sign(const Matrix& a);
double determinant(const Matrix& a);

/// Minimum-norm-residual solution of an overdetermined (or square) system
/// by Householder QR. Throws SingularMatrix on rank deficiency.
Vector least_squares(const Matrix& a, const Vector& b);

struct NnlsResult {
  Vector x;         // entrywise >= 0, exactly
  double residual;  // ‖Ax - b‖
  int iterations;
};

/// Lawson-Hanson active-set solve of min ‖Ax - b‖ s.t. x >= 0.
/// Throws MaxIterations after 10·(rows + cols) outer/inner steps.
NnlsResult nnls(const Matrix& a, const Vector& b);

/// Real cube root, sign preserving.
double real_cbrt(double s);

struct SymmetricEigen {
  Vector values;                // ascending
  std::vector<Vector> vectors;  // unit eigenvectors, matching order
};

/// Cyclic Jacobi eigen-decomposition of the symmetric part of `a`.
SymmetricEigen symmetric_eigen(const Matrix& a);

}  // namespace surjlab
