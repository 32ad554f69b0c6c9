#pragma once

#include <cstddef>
#include <vector>

namespace karma::linalg {

/// Thin SVD of a row-major m x n matrix: A = U diag(s) V^T with k = min(m, n),
/// U [m x k], V [n x k], s descending. Columns of U for zero singular values
/// are left at zero.
struct Svd {
  std::size_t m = 0, n = 0, k = 0;
  std::vector<double> u, s, v;
};

/// One-sided (Hestenes) Jacobi iteration.
Svd svd(const std::vector<double>& a, std::size_t m, std::size_t n, double tol = 1e-15,
        int max_sweeps = 80);

}  // namespace karma::linalg
