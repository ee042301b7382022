#include "surjlab/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "surjlab/error.hpp"

namespace surjlab {

namespace {

std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t hash_tag(std::string_view tag) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

double gaussian_at(Seed seed, std::uint64_t k) {
  // Box-Muller over two counter draws; u1 is kept away from zero.
  const double u1 = 1.0 - counter_uniform(seed, 2 * k);
  const double u2 = counter_uniform(seed, 2 * k + 1);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace

Seed derive_seed(Seed base, std::uint64_t stream) {
  return Seed{splitmix64(base.value ^ splitmix64(stream + 0x632BE59BD9B4E019ULL))};
}

Seed derive_seed(Seed base, std::string_view tag, std::uint64_t stream) {
  return derive_seed(Seed{base.value ^ hash_tag(tag)}, stream);
}

double counter_uniform(Seed seed, std::uint64_t counter) {
  const std::uint64_t bits = splitmix64(splitmix64(seed.value) ^ splitmix64(counter ^ 0xD1B54A32D192ED03ULL));
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

Matrix seeded_gaussian(std::size_t rows, std::size_t cols, Seed seed) {
  if (rows == 0 || cols == 0) throw Error(ErrorCode::InvalidArgument, "seeded_gaussian needs rows, cols >= 1");
  Matrix m(rows, cols);
  for (std::size_t k = 0; k < rows * cols; ++k) m.data()[k] = gaussian_at(seed, k);
  return m;
}

Vector seeded_gaussian_vector(std::size_t n, Seed seed) {
  Vector v(n);
  for (std::size_t k = 0; k < n; ++k) v[k] = gaussian_at(seed, k);
  return v;
}

Vector seeded_uniform_vector(std::size_t n, Seed seed) {
  Vector v(n);
  for (std::size_t k = 0; k < n; ++k) v[k] = counter_uniform(seed, k);
  return v;
}

LuFactorization lu_factor(const Matrix& a) {
  if (!a.square()) throw Error(ErrorCode::DimensionMismatch, "LU needs a square matrix");
  const std::size_t n = a.rows();
  LuFactorization f{a, std::vector<std::size_t>(n), 1, frobenius_norm(a), false};
  std::iota(f.perm.begin(), f.perm.end(), 0);
  const double tol = kSingularityTol * f.scale;
  Matrix& lu = f.lu;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t p = k;
    double best = std::abs(lu(k, k));
    for (std::size_t i = k + 1; i < n; ++i) {
      if (std::abs(lu(i, k)) > best) {
        best = std::abs(lu(i, k));
        p = i;
      }
    }
    if (p != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(lu(k, j), lu(p, j));
      std::swap(f.perm[k], f.perm[p]);
      f.parity = -f.parity;
    }
    if (best <= tol) f.singular = true;
    if (best == 0.0) continue;
    for (std::size_t i = k + 1; i < n; ++i) {
      const double m = lu(i, k) / lu(k, k);
      lu(i, k) = m;
      if (m == 0.0) continue;
      for (std::size_t j = k + 1; j < n; ++j) lu(i, j) -= m * lu(k, j);
    }
  }
  return f;
}

Vector lu_solve(const LuFactorization& f, const Vector& b) {
  if (f.singular) throw Error(ErrorCode::SingularMatrix, "pivot below tolerance");
  return lu_solve_unchecked(f, b);
}

Vector lu_solve_unchecked(const LuFactorization& f, const Vector& b) {
  const std::size_t n = f.lu.rows();
  if (b.size() != n) throw Error(ErrorCode::DimensionMismatch, "lu_solve right-hand side size");
  for (std::size_t i = 0; i < n; ++i) {
    if (f.lu(i, i) == 0.0) throw Error(ErrorCode::SingularMatrix, "zero pivot");
  }
  Vector x(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[f.perm[i]];
    for (std::size_t j = 0; j < i; ++j) s -= f.lu(i, j) * x[j];
    x[i] = s;
  }
  for (std::size_t i = n; i-- > 0;) {
    double s = x[i];
    for (std::size_t j = i + 1; j < n; ++j) s -= f.lu(i, j) * x[j];
    x[i] = s / f.lu(i, i);
  }
  return x;
}

Vector solve_linear(const Matrix& a, const Vector& b) {
  if (b.size() != a.rows()) throw Error(ErrorCode::DimensionMismatch, "solve_linear right-hand side size");
  const LuFactorization f = lu_factor(a);
  Vector x = lu_solve(f, b);
  // One step of iterative refinement tightens ill-conditioned solves.
  const Vector r = b - a * x;
  x += lu_solve(f, r);
  return x;
}

Matrix solve_linear(const Matrix& a, const Matrix& b) {
  const LuFactorization f = lu_factor(a);
  Matrix x(b.rows(), b.cols());
  for (std::size_t j = 0; j < b.cols(); ++j) x.set_col(j, lu_solve(f, b.col(j)));
  return x;
}

Matrix inverse(const Matrix& a) { return solve_linear(a, Matrix::identity(a.rows())); }

int det_sign(const Matrix& a) {
  if (!a.square()) throw Error(ErrorCode::DimensionMismatch, "det_sign needs a square matrix");
  const std::size_t n = a.rows();
  if (n == 0) return 1;
  const LuFactorization f = lu_factor(a);
  if (f.scale == 0.0) return 0;
  int sign = f.parity;
  double log_abs = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = f.lu(i, i);
    if (p == 0.0) return 0;
    if (p < 0.0) sign = -sign;
    log_abs += std::log(std::abs(p));
  }
  const double log_tol = std::log(kSingularityTol) + static_cast<double>(n) * std::log(f.scale);
  if (log_abs < log_tol) return 0;
  return sign;
}

double determinant(const Matrix& a) {
  const LuFactorization f = lu_factor(a);
  double det = f.parity;
  for (std::size_t i = 0; i < a.rows(); ++i) det *= f.lu(i, i);
  return det;
}

Vector least_squares(const Matrix& a, const Vector& b) {
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  if (b.size() != m) throw Error(ErrorCode::DimensionMismatch, "least_squares right-hand side size");
  if (n > m) throw Error(ErrorCode::DimensionMismatch, "least_squares needs rows >= cols");
  Matrix r = a;
  Vector qtb = b;
  const double tol = kSingularityTol * std::max(frobenius_norm(a), std::numeric_limits<double>::min());
  for (std::size_t k = 0; k < n; ++k) {
    double alpha = 0.0;
    for (std::size_t i = k; i < m; ++i) alpha += r(i, k) * r(i, k);
    alpha = std::sqrt(alpha);
    if (alpha <= tol) throw Error(ErrorCode::SingularMatrix, "rank-deficient least-squares system");
    if (r(k, k) > 0) alpha = -alpha;
    Vector v(m);
    for (std::size_t i = k; i < m; ++i) v[i] = r(i, k);
    v[k] -= alpha;
    double vnorm2 = 0.0;
    for (std::size_t i = k; i < m; ++i) vnorm2 += v[i] * v[i];
    if (vnorm2 == 0.0) continue;
    for (std::size_t j = k; j < n; ++j) {
      double s = 0.0;
      for (std::size_t i = k; i < m; ++i) s += v[i] * r(i, j);
      s = 2.0 * s / vnorm2;
      for (std::size_t i = k; i < m; ++i) r(i, j) -= s * v[i];
    }
    double s = 0.0;
    for (std::size_t i = k; i < m; ++i) s += v[i] * qtb[i];
    s = 2.0 * s / vnorm2;
    for (std::size_t i = k; i < m; ++i) qtb[i] -= s * v[i];
  }
  Vector x(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = qtb[i];
    for (std::size_t j = i + 1; j < n; ++j) s -= r(i, j) * x[j];
    x[i] = s / r(i, i);
  }
  return x;
}

NnlsResult nnls(const Matrix& a, const Vector& b) {
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  if (n == 0 || m == 0) throw Error(ErrorCode::InvalidArgument, "nnls needs a non-empty matrix");
  if (b.size() != m) throw Error(ErrorCode::DimensionMismatch, "nnls right-hand side size");

  const int max_iters = static_cast<int>(10 * (m + n));
  const double tol = 1e-13 * std::max(1.0, frobenius_norm(a)) * std::max(1.0, norm(b));

  Vector x(n);
  std::vector<bool> passive(n, false);
  std::vector<bool> blocked(n, false);
  int iters = 0;

  auto gradient = [&] { return transpose_times(a, b - a * x); };
  auto passive_set = [&] {
    std::vector<std::size_t> idx;
    for (std::size_t j = 0; j < n; ++j)
      if (passive[j]) idx.push_back(j);
    return idx;
  };

  Vector w = gradient();
  while (true) {
    std::size_t enter = n;
    double wmax = tol;
    for (std::size_t j = 0; j < n; ++j) {
      if (!passive[j] && !blocked[j] && w[j] > wmax) {
        wmax = w[j];
        enter = j;
      }
    }
    if (enter == n) break;
    if (++iters > max_iters) throw Error(ErrorCode::MaxIterations, "nnls active-set cycling");
    passive[enter] = true;

    bool entered = true;
    while (true) {
      const std::vector<std::size_t> p = passive_set();
      Vector z;
      try {
        if (p.size() > m) throw Error(ErrorCode::SingularMatrix, "more passive columns than rows");
        z = least_squares(a.columns(p), b);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::SingularMatrix || !entered) throw;
        // The entering column is numerically dependent on the passive set.
        passive[enter] = false;
        blocked[enter] = true;
        break;
      }
      entered = false;
      bool feasible = true;
      for (double zi : z) feasible = feasible && zi > 0.0;
      if (feasible) {
        for (std::size_t k = 0; k < p.size(); ++k) x[p[k]] = z[k];
        std::fill(blocked.begin(), blocked.end(), false);
        break;
      }
      if (++iters > max_iters) throw Error(ErrorCode::MaxIterations, "nnls active-set cycling");
      double alpha = std::numeric_limits<double>::infinity();
      std::size_t leave = n;
      for (std::size_t k = 0; k < p.size(); ++k) {
        if (z[k] <= 0.0) {
          const double denom = x[p[k]] - z[k];
          const double ratio = denom > 0.0 ? x[p[k]] / denom : 0.0;
          if (ratio < alpha) {
            alpha = ratio;
            leave = p[k];
          }
        }
      }
      for (std::size_t k = 0; k < p.size(); ++k) x[p[k]] += alpha * (z[k] - x[p[k]]);
      for (std::size_t k = 0; k < p.size(); ++k) {
        const std::size_t j = p[k];
        if (j == leave || x[j] <= tol * 1e-3) {
          x[j] = 0.0;
          passive[j] = false;
        }
      }
    }
    w = gradient();
  }

  for (double& xi : x) xi = std::max(xi, 0.0);
  return NnlsResult{x, norm(a * x - b), iters};
}

double real_cbrt(double s) { return std::cbrt(s); }

SymmetricEigen symmetric_eigen(const Matrix& a) {
  if (!a.square()) throw Error(ErrorCode::DimensionMismatch, "symmetric_eigen needs a square matrix");
  const std::size_t n = a.rows();
  Matrix s = symmetric_part(a);
  Matrix v = Matrix::identity(n);
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += s(i, j) * s(i, j);
    if (off <= 1e-30 * std::max(1.0, frobenius_norm(s))) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (s(p, q) == 0.0) continue;
        const double theta = (s(q, q) - s(p, p)) / (2.0 * s(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double sn = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double skp = s(k, p), skq = s(k, q);
          s(k, p) = c * skp - sn * skq;
          s(k, q) = sn * skp + c * skq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double spk = s(p, k), sqk = s(q, k);
          s(p, k) = c * spk - sn * sqk;
          s(q, k) = sn * spk + c * sqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - sn * vkq;
          v(k, q) = sn * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return s(i, i) < s(j, j); });
  SymmetricEigen out{Vector(n), {}};
  for (std::size_t k = 0; k < n; ++k) {
    out.values[k] = s(order[k], order[k]);
    out.vectors.push_back(v.col(order[k]));
  }
  return out;
}

Vector random_in_ball(std::size_t d, double radius, Seed seed) {
  const Vector dir = unit(seeded_gaussian_vector(d, derive_seed(seed, "direction")));
  const double u = counter_uniform(derive_seed(seed, "radius"), 0);
  return dir * (radius * std::pow(u, 1.0 / static_cast<double>(d)));
}

}  // namespace surjlab
