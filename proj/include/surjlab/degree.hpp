#pragma once

// Grid-enumeration Brouwer degree for d <= 3: Newton from every cell center,
// dedupe the converged roots, sum the Jacobian determinant signs.

#include <functional>
#include <vector>

#include "surjlab/blocks.hpp"

namespace surjlab {

struct DomainBox {
  Vector lo;
  Vector hi;
  double boundary_margin = 1e-6;

  std::size_t dim() const { return lo.size(); }
  double diameter() const { return norm(hi - lo); }
  bool contains(const Vector& x) const;
  /// Distance from x to the box surface (negative outside).
  double boundary_distance(const Vector& x) const;
  void validate() const;
};

struct DegreeRoot {
  Vector x;
  int sign = 0;
};

struct DegreeResult {
  int degree = 0;
  std::vector<DegreeRoot> roots;
  int rejected = 0;            // grid starts that diverged or left the box
  double boundary_min = 0.0;   // sampled min ‖f - y‖ over the box surface
};

/// Throws BoundaryValueTooClose, BoundaryRoot or DegenerateRoot when the
/// degree is not well defined numerically.
DegreeResult brouwer_degree(const VectorMap& map, const JacobianMap& jac, const DomainBox& box, const Vector& y,
                            int grid_per_axis);

using HomotopyMap = std::function<Vector(const Vector&, double)>;
using HomotopyJacobian = std::function<Matrix(const Vector&, double)>;

struct InvarianceReport {
  bool invariant = false;
  std::vector<double> t_values;
  std::vector<int> degrees;
};

/// Degree at t_samples evenly spaced t in [0, 1]; invariant when all agree.
InvarianceReport homotopy_degrees(const HomotopyMap& h, const HomotopyJacobian& jac, const DomainBox& box,
                                  const Vector& y, int t_samples, int grid_per_axis = 24);

bool homotopy_invariance_check(const HomotopyMap& h, const HomotopyJacobian& jac, const DomainBox& box,
                               const Vector& y, int t_samples, int grid_per_axis = 24);

}  // namespace surjlab
