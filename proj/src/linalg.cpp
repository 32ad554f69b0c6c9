#include "karma/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "karma/error.hpp"

namespace karma::linalg {

namespace {

// Orthogonalises the columns of w (rows x cols, column-major) in place and
// accumulates the rotations into vt (cols x cols, column-major).
void jacobi_columns(std::vector<double>& w, std::size_t rows, std::size_t cols,
                    std::vector<double>& vt, double tol, int max_sweeps) {
  vt.assign(cols * cols, 0.0);
  for (std::size_t i = 0; i < cols; ++i) vt[i * cols + i] = 1.0;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < cols; ++p) {
      for (std::size_t q = p + 1; q < cols; ++q) {
        double* cp = &w[p * rows];
        double* cq = &w[q * rows];
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < rows; ++i) {
          alpha += cp[i] * cp[i];
          beta += cq[i] * cq[i];
          gamma += cp[i] * cq[i];
        }
        if (gamma == 0.0 || std::fabs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::fabs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < rows; ++i) {
          const double a = cp[i], b = cq[i];
          cp[i] = c * a - s * b;
          cq[i] = s * a + c * b;
        }
        double* vp = &vt[p * cols];
        double* vq = &vt[q * cols];
        for (std::size_t i = 0; i < cols; ++i) {
          const double a = vp[i], b = vq[i];
          vp[i] = c * a - s * b;
          vq[i] = s * a + c * b;
        }
      }
    }
    if (!rotated) return;
  }
}

}  // namespace

Svd svd(const std::vector<double>& a, std::size_t m, std::size_t n, double tol, int max_sweeps) {
  if (m == 0 || n == 0 || a.size() != m * n) throw DimensionError("svd: bad matrix extents");
  // Work on the orientation with fewer columns.
  const bool flip = m < n;
  const std::size_t rows = flip ? n : m, cols = flip ? m : n;
  std::vector<double> w(rows * cols);  // column-major rows x cols
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (flip) w[i * rows + j] = a[i * n + j];  // column i of A^T
      else w[j * rows + i] = a[i * n + j];
    }
  std::vector<double> rot;
  jacobi_columns(w, rows, cols, rot, tol, max_sweeps);

  const std::size_t k = cols;
  std::vector<double> sig(k);
  for (std::size_t j = 0; j < k; ++j) {
    double ss = 0.0;
    for (std::size_t i = 0; i < rows; ++i) ss += w[j * rows + i] * w[j * rows + i];
    sig[j] = std::sqrt(ss);
  }
  std::vector<std::size_t> idx(k);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) { return sig[x] > sig[y]; });

  // left vectors of the worked matrix are w / sigma; right vectors are rot.
  std::vector<double> left(rows * k, 0.0), right(cols * k, 0.0);
  Svd out;
  out.m = m;
  out.n = n;
  out.k = k;
  out.s.resize(k);
  for (std::size_t r = 0; r < k; ++r) {
    const std::size_t j = idx[r];
    out.s[r] = sig[j];
    if (sig[j] > 0.0)
      for (std::size_t i = 0; i < rows; ++i) left[i * k + r] = w[j * rows + i] / sig[j];
    for (std::size_t i = 0; i < cols; ++i) right[i * k + r] = rot[j * cols + i];
  }
  if (flip) {
    out.u = std::move(right);
    out.v = std::move(left);
  } else {
    out.u = std::move(left);
    out.v = std::move(right);
  }
  return out;
}

}  // namespace karma::linalg
