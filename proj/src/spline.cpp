#include "karma/spline.hpp"

#include <algorithm>
#include <memory>

#include "karma/error.hpp"
#include "karma/rng.hpp"

namespace karma {

SplineGrid make_grid(std::size_t grid_size, std::size_t order, double lo, double hi,
                     double noise_scale) {
  if (grid_size < 1) throw ArgumentError("spline grid_size must be >= 1");
  if (!(lo < hi)) throw ArgumentError("spline range requires lo < hi");
  if (noise_scale < 0.0) throw ArgumentError("spline noise_scale must be >= 0");
  SplineGrid g;
  g.grid_size = grid_size;
  g.order = order;
  g.lo = lo;
  g.hi = hi;
  g.noise_scale = noise_scale;
  const double h = g.spacing();
  const std::size_t n = grid_size + 2 * order + 1;
  g.knots.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    g.knots[j] = lo + (static_cast<double>(j) - static_cast<double>(order)) * h;
  }
  g.knots[order] = lo;
  g.knots[order + grid_size] = hi;
  return g;
}

SplineGrid grid_noise(const SplineGrid& grid, std::uint64_t seed) {
  SplineGrid out = grid;
  if (grid.noise_scale == 0.0 || grid.grid_size < 2) return out;
  Rng rng(seed);
  const double amp = grid.noise_scale * grid.spacing();
  const std::size_t first = grid.order + 1, last = grid.order + grid.grid_size - 1;
  for (std::size_t j = first; j <= last; ++j) {
    const double v = grid.knots[j] + rng.uniform(-amp, amp);
    out.knots[j] = std::clamp(v, out.knots[j - 1], grid.knots[j + 1]);
  }
  return out;
}

void bspline_eval(const SplineGrid& grid, double x, std::span<double> values,
                  std::span<double> derivs) {
  const auto& t = grid.knots;
  const std::size_t order = grid.order;
  const std::size_t n0 = t.size() - 1;  // order-0 functions
  std::vector<double> b(n0, 0.0);
  for (std::size_t j = 0; j < n0; ++j) b[j] = (t[j] <= x && x < t[j + 1]) ? 1.0 : 0.0;
  std::vector<double> prev;
  for (std::size_t p = 1; p <= order; ++p) {
    if (p == order) prev = b;
    const std::size_t n = n0 - p;
    for (std::size_t j = 0; j < n; ++j) {
      double v = 0.0;
      const double d1 = t[j + p] - t[j];
      const double d2 = t[j + p + 1] - t[j + 1];
      if (d1 > 0.0) v += (x - t[j]) / d1 * b[j];
      if (d2 > 0.0) v += (t[j + p + 1] - x) / d2 * b[j + 1];
      b[j] = v;
    }
    b.resize(n);
  }
  std::copy(b.begin(), b.end(), values.begin());
  if (derivs.empty()) return;
  if (order == 0) {
    std::fill(derivs.begin(), derivs.end(), 0.0);
    return;
  }
  const double p = static_cast<double>(order);
  for (std::size_t j = 0; j < b.size(); ++j) {
    double d = 0.0;
    const double d1 = t[j + order] - t[j];
    const double d2 = t[j + order + 1] - t[j + 1];
    if (d1 > 0.0) d += p / d1 * prev[j];
    if (d2 > 0.0) d -= p / d2 * prev[j + 1];
    derivs[j] = d;
  }
}

Tensor bspline_basis(const Tensor& x, const SplineGrid& grid) {
  const std::size_t nb = grid.num_basis();
  const auto xs = x.data();
  Shape shape = x.shape();
  shape.push_back(nb);
  std::vector<double> out(xs.size() * nb);
  auto deriv = std::make_shared<std::vector<double>>();
  const bool need_grad = grad_enabled() && x.requires_grad();
  if (need_grad) deriv->resize(out.size());
  const long long n = static_cast<long long>(xs.size());
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < n; ++i) {
    const std::size_t off = static_cast<std::size_t>(i) * nb;
    bspline_eval(grid, xs[static_cast<std::size_t>(i)], std::span<double>(out).subspan(off, nb),
                 need_grad ? std::span<double>(*deriv).subspan(off, nb) : std::span<double>());
  }
  return detail::make_result(
      "bspline_basis", shape, std::move(out), {x},
      [deriv, nb](std::span<const double> g, std::span<const detail::NodePtr> in) {
        if (!in[0]->requires_grad) return;
        auto& gx = in[0]->ensure_grad();
        for (std::size_t i = 0; i < gx.size(); ++i) {
          double acc = 0.0;
          for (std::size_t j = 0; j < nb; ++j) acc += g[i * nb + j] * (*deriv)[i * nb + j];
          gx[i] += acc;
        }
      });
}

}  // namespace karma
