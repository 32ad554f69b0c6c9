#include <algorithm>
#include <cstdint>

#include "karma/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace karma::kernels {

namespace {
bool g_tally_on = false;
std::uint64_t g_tally = 0;

// [lo, hi) of output columns whose tap `kx` lands inside the input row.
struct Span {
  std::size_t lo, hi;
};
inline Span valid_outputs(std::size_t t, std::size_t pad, std::size_t stride, std::size_t extent,
                          std::size_t out_extent) {
  const long long p = static_cast<long long>(pad) - static_cast<long long>(t);
  const long long s = static_cast<long long>(stride);
  long long lo = p > 0 ? (p + s - 1) / s : 0;
  long long hi = (static_cast<long long>(extent) - 1 + p) / s + 1;
  if (static_cast<long long>(extent) - 1 + p < 0) hi = 0;
  hi = std::min<long long>(hi, static_cast<long long>(out_extent));
  if (hi < lo) hi = lo;
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}
}  // namespace

MacTally::MacTally() : start_(g_tally), previous_(g_tally_on) { g_tally_on = true; }
MacTally::~MacTally() { g_tally_on = previous_; }
std::uint64_t MacTally::count() const { return g_tally - start_; }

void record_macs(std::uint64_t macs) {
  if (g_tally_on) g_tally += macs;
}

void set_num_threads(int threads) {
#ifdef _OPENMP
  if (threads > 0) omp_set_num_threads(threads);
#else
  (void)threads;
#endif
}

int num_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace par {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> out,
            std::size_t m, std::size_t k, std::size_t n) {
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    std::fill(row, row + n, 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      const double* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
}

void matmul_backward(std::span<const double> a, std::span<const double> b,
                     std::span<const double> g, std::span<double> grad_a,
                     std::span<double> grad_b, std::size_t m, std::size_t k, std::size_t n) {
  if (!grad_a.empty()) {
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < m; ++i) {
      const double* grow = g.data() + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const double* brow = b.data() + p * n;
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
        grad_a[i * k + p] += acc;
      }
    }
  }
  if (!grad_b.empty()) {
#pragma omp parallel for schedule(static)
    for (std::size_t p = 0; p < k; ++p) {
      double* out = grad_b.data() + p * n;
      for (std::size_t i = 0; i < m; ++i) {
        const double av = a[i * k + p];
        const double* grow = g.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) out[j] += av * grow[j];
      }
    }
  }
}

void conv2d(const ConvGeometry& geo, std::span<const double> x, std::span<const double> w,
            std::span<const double> bias, std::span<double> out) {
  const std::size_t oh = geo.out_h(), ow = geo.out_w(), k = geo.kernel, s = geo.stride;
  const std::size_t in_plane = geo.in_h * geo.in_w, out_plane = oh * ow;
  const bool pointwise = k == 1 && s == 1 && geo.padding == 0;
  const long long planes = static_cast<long long>(geo.batch * geo.out_channels);
#pragma omp parallel for schedule(static)
  for (long long plane = 0; plane < planes; ++plane) {
    const std::size_t b = static_cast<std::size_t>(plane) / geo.out_channels;
    const std::size_t co = static_cast<std::size_t>(plane) % geo.out_channels;
    double* dst = out.data() + static_cast<std::size_t>(plane) * out_plane;
    std::fill(dst, dst + out_plane, bias.empty() ? 0.0 : bias[co]);
    const std::size_t ci_begin = geo.depthwise ? co : 0;
    const std::size_t ci_end = geo.depthwise ? co + 1 : geo.in_channels;
    for (std::size_t ci = ci_begin; ci < ci_end; ++ci) {
      const double* src = x.data() + (b * geo.in_channels + ci) * in_plane;
      const double* wk = w.data() + (geo.depthwise ? co * k * k : (co * geo.in_channels + ci) * k * k);
      if (pointwise) {
        const double wv = wk[0];
        for (std::size_t i = 0; i < out_plane; ++i) dst[i] += wv * src[i];
        continue;
      }
      for (std::size_t ky = 0; ky < k; ++ky) {
        const Span rows = valid_outputs(ky, geo.padding, s, geo.in_h, oh);
        for (std::size_t kx = 0; kx < k; ++kx) {
          const double wv = wk[ky * k + kx];
          const Span cols = valid_outputs(kx, geo.padding, s, geo.in_w, ow);
          for (std::size_t oy = rows.lo; oy < rows.hi; ++oy) {
            const double* in_row = src + (oy * s + ky - geo.padding) * geo.in_w;
            double* out_row = dst + oy * ow;
            if (s == 1) {
              for (std::size_t ox = cols.lo; ox < cols.hi; ++ox)
                out_row[ox] += wv * in_row[ox + kx - geo.padding];
            } else {
              for (std::size_t ox = cols.lo; ox < cols.hi; ++ox)
                out_row[ox] += wv * in_row[ox * s + kx - geo.padding];
            }
          }
        }
      }
    }
  }
}

void conv2d_backward_input(const ConvGeometry& geo, std::span<const double> w,
                           std::span<const double> g, std::span<double> grad_x) {
  const std::size_t oh = geo.out_h(), ow = geo.out_w(), k = geo.kernel, s = geo.stride;
  const std::size_t in_plane = geo.in_h * geo.in_w, out_plane = oh * ow;
  const bool pointwise = k == 1 && s == 1 && geo.padding == 0;
  const long long planes = static_cast<long long>(geo.batch * geo.in_channels);
#pragma omp parallel for schedule(static)
  for (long long plane = 0; plane < planes; ++plane) {
    const std::size_t b = static_cast<std::size_t>(plane) / geo.in_channels;
    const std::size_t ci = static_cast<std::size_t>(plane) % geo.in_channels;
    double* dst = grad_x.data() + static_cast<std::size_t>(plane) * in_plane;
    const std::size_t co_begin = geo.depthwise ? ci : 0;
    const std::size_t co_end = geo.depthwise ? ci + 1 : geo.out_channels;
    for (std::size_t co = co_begin; co < co_end; ++co) {
      const double* go = g.data() + (b * geo.out_channels + co) * out_plane;
      const double* wk = w.data() + (geo.depthwise ? co * k * k : (co * geo.in_channels + ci) * k * k);
      if (pointwise) {
        const double wv = wk[0];
        for (std::size_t i = 0; i < in_plane; ++i) dst[i] += wv * go[i];
        continue;
      }
      for (std::size_t ky = 0; ky < k; ++ky) {
        const Span rows = valid_outputs(ky, geo.padding, s, geo.in_h, oh);
        for (std::size_t kx = 0; kx < k; ++kx) {
          const double wv = wk[ky * k + kx];
          const Span cols = valid_outputs(kx, geo.padding, s, geo.in_w, ow);
          for (std::size_t oy = rows.lo; oy < rows.hi; ++oy) {
            double* in_row = dst + (oy * s + ky - geo.padding) * geo.in_w;
            const double* g_row = go + oy * ow;
            for (std::size_t ox = cols.lo; ox < cols.hi; ++ox)
              in_row[ox * s + kx - geo.padding] += wv * g_row[ox];
          }
        }
      }
    }
  }
}

void conv2d_backward_weight(const ConvGeometry& geo, std::span<const double> x,
                            std::span<const double> g, std::span<double> grad_w) {
  const std::size_t oh = geo.out_h(), ow = geo.out_w(), k = geo.kernel, s = geo.stride;
  const std::size_t in_plane = geo.in_h * geo.in_w, out_plane = oh * ow;
  const long long outs = static_cast<long long>(geo.out_channels);
#pragma omp parallel for schedule(static)
  for (long long co_l = 0; co_l < outs; ++co_l) {
    const std::size_t co = static_cast<std::size_t>(co_l);
    const std::size_t ci_begin = geo.depthwise ? co : 0;
    const std::size_t ci_end = geo.depthwise ? co + 1 : geo.in_channels;
    for (std::size_t ci = ci_begin; ci < ci_end; ++ci) {
      double* wk = grad_w.data() + (geo.depthwise ? co * k * k : (co * geo.in_channels + ci) * k * k);
      for (std::size_t ky = 0; ky < k; ++ky) {
        const Span rows = valid_outputs(ky, geo.padding, s, geo.in_h, oh);
        for (std::size_t kx = 0; kx < k; ++kx) {
          const Span cols = valid_outputs(kx, geo.padding, s, geo.in_w, ow);
          double acc = 0.0;
          for (std::size_t b = 0; b < geo.batch; ++b) {
            const double* src = x.data() + (b * geo.in_channels + ci) * in_plane;
            const double* go = g.data() + (b * geo.out_channels + co) * out_plane;
            for (std::size_t oy = rows.lo; oy < rows.hi; ++oy) {
              const double* in_row = src + (oy * s + ky - geo.padding) * geo.in_w;
              const double* g_row = go + oy * ow;
              for (std::size_t ox = cols.lo; ox < cols.hi; ++ox)
                acc += g_row[ox] * in_row[ox * s + kx - geo.padding];
            }
          }
          wk[ky * k + kx] += acc;
        }
      }
    }
  }
}

}  // namespace par
}  // namespace karma::kernels
