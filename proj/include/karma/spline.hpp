#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "karma/tensor.hpp"

namespace karma {

/// Uniform B-spline knot vector extended by `order` knots past each end of
/// [lo, hi]. Holds grid_size + 2 * order + 1 knots and spans
/// grid_size + order basis functions.
struct SplineGrid {
  std::size_t grid_size = 5;
  std::size_t order = 3;
  double lo = -1.0;
  double hi = 1.0;
  double noise_scale = 0.0;
  std::vector<double> knots;

  std::size_t num_basis() const { return grid_size + order; }
  double spacing() const { return (hi - lo) / static_cast<double>(grid_size); }
};

SplineGrid make_grid(std::size_t grid_size, std::size_t order, double lo, double hi,
                     double noise_scale = 0.0);

/// Jitters the interior knots by U(-1, 1) * noise_scale * spacing, clamped to
/// keep the vector non-decreasing. The end knots of [lo, hi] stay put.
SplineGrid grid_noise(const SplineGrid& grid, std::uint64_t seed);

/// Cox-de Boor evaluation at one point. `values` gets num_basis() entries;
/// `derivs`, when non-empty, gets d/dx of each.
void bspline_eval(const SplineGrid& grid, double x, std::span<double> values,
                  std::span<double> derivs = {});

/// Basis expansion of every element: shape x.shape() + [num_basis()].
/// Differentiable with respect to x.
Tensor bspline_basis(const Tensor& x, const SplineGrid& grid);

}  // namespace karma
