#include "surjlab/degree.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

#include "surjlab/error.hpp"
#include "surjlab/numerics.hpp"

namespace surjlab {

bool DomainBox::contains(const Vector& x) const {
  for (std::size_t i = 0; i < dim(); ++i) {
    if (x[i] <= lo[i] || x[i] >= hi[i]) return false;
  }
  return true;
}

double DomainBox::boundary_distance(const Vector& x) const {
  double dist = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < dim(); ++i) dist = std::min({dist, x[i] - lo[i], hi[i] - x[i]});
  return dist;
}

void DomainBox::validate() const {
  if (lo.size() != hi.size()) throw Error(ErrorCode::DimensionMismatch, "box corners differ in dimension");
  if (lo.empty() || lo.size() > 3) throw Error(ErrorCode::InvalidArgument, "degree oracle supports 1 <= d <= 3");
  double shortest = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < dim(); ++i) {
    if (!(lo[i] < hi[i])) throw Error(ErrorCode::InvalidArgument, "box needs lo < hi");
    shortest = std::min(shortest, hi[i] - lo[i]);
  }
  if (!(boundary_margin > 0.0) || boundary_margin >= 0.5 * shortest) {
    throw Error(ErrorCode::InvalidArgument, "boundary margin must be in (0, shortest side / 2)");
  }
}

namespace {

// Calls visit(point) for every point of a grid with `per_axis` points per
// free axis on each face of the box.
template <class Visit>
void for_each_boundary_point(const DomainBox& box, int per_axis, Visit visit) {
  const std::size_t d = box.dim();
  for (std::size_t fixed = 0; fixed < d; ++fixed) {
    for (double side : {box.lo[fixed], box.hi[fixed]}) {
      const std::size_t free_axes = d - 1;
      std::size_t count = 1;
      for (std::size_t k = 0; k < free_axes; ++k) count *= static_cast<std::size_t>(per_axis);
      for (std::size_t idx = 0; idx < count; ++idx) {
        Vector p(d);
        p[fixed] = side;
        std::size_t rest = idx;
        for (std::size_t i = 0; i < d; ++i) {
          if (i == fixed) continue;
          const std::size_t k = rest % static_cast<std::size_t>(per_axis);
          rest /= static_cast<std::size_t>(per_axis);
          const double s = per_axis == 1 ? 0.5 : static_cast<double>(k) / (per_axis - 1);
          p[i] = box.lo[i] + s * (box.hi[i] - box.lo[i]);
        }
        visit(p);
      }
    }
  }
}

std::optional<Vector> newton_root(const VectorMap& map, const JacobianMap& jac, Vector x, const Vector& y,
                                  const DomainBox& box) {
  const double tol = 1e-12 * (1.0 + norm(y));
  const double escape = 2.0 * box.diameter();
  const Vector center = 0.5 * (box.lo + box.hi);
  Vector r = map(x) - y;
  double rn = norm(r);
  for (int it = 0; it < 100; ++it) {
    if (rn <= tol) return x;
    Vector step;
    try {
      step = solve_linear(jac(x), -r);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::SingularMatrix) return std::nullopt;
      throw;
    }
    double lambda = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 30; ++ls, lambda *= 0.5) {
      const Vector xn = x + lambda * step;
      const Vector rn_vec = map(xn) - y;
      const double cand = norm(rn_vec);
      if (cand < rn) {
        x = xn;
        r = rn_vec;
        rn = cand;
        accepted = true;
        break;
      }
    }
    if (!accepted || norm(x - center) > escape) return std::nullopt;
  }
  return rn <= tol ? std::optional<Vector>(x) : std::nullopt;
}

}  // namespace

DegreeResult brouwer_degree(const VectorMap& map, const JacobianMap& jac, const DomainBox& box, const Vector& y,
                            int grid_per_axis) {
  box.validate();
  if (grid_per_axis < 1) throw Error(ErrorCode::InvalidArgument, "grid_per_axis must be >= 1");
  const std::size_t d = box.dim();
  if (y.size() != d) throw Error(ErrorCode::DimensionMismatch, "target dimension");
  const double dedupe = 1e-6 * box.diameter();

  DegreeResult result;
  result.boundary_min = std::numeric_limits<double>::infinity();
  for_each_boundary_point(box, 4 * grid_per_axis,
                          [&](const Vector& p) { result.boundary_min = std::min(result.boundary_min, norm(map(p) - y)); });
  if (!(result.boundary_min > 10.0 * dedupe)) {
    throw Error(ErrorCode::BoundaryValueTooClose,
                "target is within " + std::to_string(result.boundary_min) + " of the boundary image");
  }

  std::size_t cells = 1;
  for (std::size_t i = 0; i < d; ++i) cells *= static_cast<std::size_t>(grid_per_axis);
  for (std::size_t idx = 0; idx < cells; ++idx) {
    Vector start(d);
    std::size_t rest = idx;
    for (std::size_t i = 0; i < d; ++i) {
      const std::size_t k = rest % static_cast<std::size_t>(grid_per_axis);
      rest /= static_cast<std::size_t>(grid_per_axis);
      start[i] = box.lo[i] + (static_cast<double>(k) + 0.5) / grid_per_axis * (box.hi[i] - box.lo[i]);
    }
    const auto root = newton_root(map, jac, start, y, box);
    // A root on the surface (either side of it) makes the degree undefined.
    if (root && std::abs(box.boundary_distance(*root)) < box.boundary_margin) {
      throw Error(ErrorCode::BoundaryRoot, "root within the boundary margin");
    }
    if (!root || !box.contains(*root)) {
      ++result.rejected;
      continue;
    }
    const bool seen = std::any_of(result.roots.begin(), result.roots.end(),
                                  [&](const DegreeRoot& r) { return norm(r.x - *root) <= dedupe; });
    if (seen) continue;
    const int sign = det_sign(jac(*root));
    if (sign == 0) throw Error(ErrorCode::DegenerateRoot, "root with a degenerate Jacobian");
    result.roots.push_back({*root, sign});
    result.degree += sign;
  }
  return result;
}

InvarianceReport homotopy_degrees(const HomotopyMap& h, const HomotopyJacobian& jac, const DomainBox& box,
                                  const Vector& y, int t_samples, int grid_per_axis) {
  if (box.dim() > 2) throw Error(ErrorCode::InvalidArgument, "homotopy check supports d <= 2");
  if (t_samples < 2) throw Error(ErrorCode::InvalidArgument, "t_samples must be >= 2");
  InvarianceReport report;
  for (int k = 0; k < t_samples; ++k) {
    const double t = static_cast<double>(k) / (t_samples - 1);
    const DegreeResult r = brouwer_degree([&](const Vector& x) { return h(x, t); },
                                          [&](const Vector& x) { return jac(x, t); }, box, y, grid_per_axis);
    report.t_values.push_back(t);
    report.degrees.push_back(r.degree);
  }
  report.invariant = std::all_of(report.degrees.begin(), report.degrees.end(),
                                 [&](int deg) { return deg == report.degrees.front(); });
  return report;
}

bool homotopy_invariance_check(const HomotopyMap& h, const HomotopyJacobian& jac, const DomainBox& box,
                               const Vector& y, int t_samples, int grid_per_axis) {
  return homotopy_degrees(h, jac, box, y, t_samples, grid_per_axis).invariant;
}

}  // namespace surjlab
