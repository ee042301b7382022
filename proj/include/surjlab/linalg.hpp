#pragma once

// Small dense vector/matrix types. Everything is double precision and
// row-major; sizes in this project stay below a few hundred.

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace surjlab {

class Vector {
 public:
  Vector() = default;
  explicit Vector(std::size_t n, double fill = 0.0) : v_(n, fill) {}
  Vector(std::initializer_list<double> values);
  /// Checked construction: throws NonFinite on NaN/Inf entries.
  explicit Vector(std::vector<double> values);

  std::size_t size() const noexcept { return v_.size(); }
  bool empty() const noexcept { return v_.empty(); }

  double& operator[](std::size_t i) { return v_[i]; }
  double operator[](std::size_t i) const { return v_[i]; }

  double* data() noexcept { return v_.data(); }
  const double* data() const noexcept { return v_.data(); }
  auto begin() noexcept { return v_.begin(); }
  auto end() noexcept { return v_.end(); }
  auto begin() const noexcept { return v_.begin(); }
  auto end() const noexcept { return v_.end(); }

  std::span<const double> span() const noexcept { return v_; }
  const std::vector<double>& values() const noexcept { return v_; }

  bool all_finite() const noexcept;

  Vector& operator+=(const Vector& o);
  Vector& operator-=(const Vector& o);
  Vector& operator*=(double s);

  friend bool operator==(const Vector&, const Vector&) = default;

 private:
  std::vector<double> v_;
};

Vector operator+(Vector a, const Vector& b);
Vector operator-(Vector a, const Vector& b);
Vector operator-(Vector a);
Vector operator*(double s, Vector a);
Vector operator*(Vector a, double s);

double dot(const Vector& a, const Vector& b);
double norm(const Vector& a);
double norm_inf(const Vector& a);
double mean(const Vector& a);
double sum(const Vector& a);
Vector hadamard(const Vector& a, const Vector& b);
Vector concat(const Vector& a, const Vector& b);
Vector slice(const Vector& a, std::size_t offset, std::size_t count);
Vector unit(const Vector& a);
Vector basis(std::size_t n, std::size_t i);

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  /// Row-major entries; checked for shape and finiteness.
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> entries);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);
  static Matrix diagonal(const Vector& d);
  static Matrix outer(const Vector& u, const Vector& v);
  static Matrix from_columns(const std::vector<Vector>& cols);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool square() const noexcept { return rows_ == cols_; }
  bool empty() const noexcept { return a_.empty(); }

  double& operator()(std::size_t i, std::size_t j) { return a_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return a_[i * cols_ + j]; }

  const std::vector<double>& entries() const noexcept { return a_; }
  double* data() noexcept { return a_.data(); }
  const double* data() const noexcept { return a_.data(); }

  Vector row(std::size_t i) const;
  Vector col(std::size_t j) const;
  void set_col(std::size_t j, const Vector& v);
  Matrix transpose() const;
  Matrix columns(const std::vector<std::size_t>& idx) const;

  bool all_finite() const noexcept;

  Matrix& operator+=(const Matrix& o);
  Matrix& operator-=(const Matrix& o);
  Matrix& operator*=(double s);

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> a_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(double s, Matrix a);
Matrix operator*(const Matrix& a, const Matrix& b);
Vector operator*(const Matrix& a, const Vector& x);
/// Aᵀx without forming the transpose.
Vector transpose_times(const Matrix& a, const Vector& x);
/// diag(d)·A
Matrix scale_rows(const Vector& d, Matrix a);
/// A·diag(d)
Matrix scale_cols(Matrix a, const Vector& d);
/// Entrywise product.
Matrix hadamard(const Matrix& a, const Matrix& b);
double frobenius_norm(const Matrix& a);
Matrix symmetric_part(const Matrix& a);

}  // namespace surjlab
