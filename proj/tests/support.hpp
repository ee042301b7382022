#pragma once

#include <algorithm>
#include <cmath>

#include "surjlab/error.hpp"
#include "surjlab/numerics.hpp"

namespace surjlab::test {

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.entries().size(); ++i) m = std::max(m, std::abs(a.entries()[i] - b.entries()[i]));
  return m;
}

// Entrywise max error relative to the larger of the two matrices.
inline double rel_error(const Matrix& a, const Matrix& b) {
  double scale = 1.0;
  for (double v : a.entries()) scale = std::max(scale, std::abs(v));
  return max_abs_diff(a, b) / scale;
}

template <typename F>
ErrorCode error_code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  throw std::runtime_error("expected an Error");
}

}  // namespace surjlab::test
