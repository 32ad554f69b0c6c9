#include "karma/kernels.hpp"

namespace karma::kernels::ref {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> out,
            std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      out[i * n + j] = acc;
    }
  }
}

void matmul_backward(std::span<const double> a, std::span<const double> b,
                     std::span<const double> g, std::span<double> grad_a,
                     std::span<double> grad_b, std::size_t m, std::size_t k, std::size_t n) {
  if (!grad_a.empty()) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * b[p * n + j];
        grad_a[i * k + p] += acc;
      }
  }
  if (!grad_b.empty()) {
    for (std::size_t p = 0; p < k; ++p)
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < m; ++i) acc += a[i * k + p] * g[i * n + j];
        grad_b[p * n + j] += acc;
      }
  }
}

namespace {

// Input index for output coordinate o and kernel tap t, or -1 when it falls in
// the zero padding.
inline long long tap(std::size_t o, std::size_t t, const ConvGeometry& geo, std::size_t extent) {
  const long long pos = static_cast<long long>(o * geo.stride + t) -
                        static_cast<long long>(geo.padding);
  return (pos < 0 || pos >= static_cast<long long>(extent)) ? -1 : pos;
}

}  // namespace

void conv2d(const ConvGeometry& geo, std::span<const double> x, std::span<const double> w,
            std::span<const double> bias, std::span<double> out) {
  const std::size_t oh = geo.out_h(), ow = geo.out_w(), k = geo.kernel;
  for (std::size_t b = 0; b < geo.batch; ++b)
    for (std::size_t co = 0; co < geo.out_channels; ++co)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          double acc = bias.empty() ? 0.0 : bias[co];
          const std::size_t ci_begin = geo.depthwise ? co : 0;
          const std::size_t ci_end = geo.depthwise ? co + 1 : geo.in_channels;
          for (std::size_t ci = ci_begin; ci < ci_end; ++ci)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                const long long iy = tap(oy, ky, geo, geo.in_h);
                const long long ix = tap(ox, kx, geo, geo.in_w);
                if (iy < 0 || ix < 0) continue;
                const std::size_t widx = geo.depthwise
                                             ? (co * k + ky) * k + kx
                                             : ((co * geo.in_channels + ci) * k + ky) * k + kx;
                acc += w[widx] *
                       x[((b * geo.in_channels + ci) * geo.in_h + iy) * geo.in_w + ix];
              }
          out[((b * geo.out_channels + co) * oh + oy) * ow + ox] = acc;
        }
}

void conv2d_backward_input(const ConvGeometry& geo, std::span<const double> w,
                           std::span<const double> g, std::span<double> grad_x) {
  const std::size_t oh = geo.out_h(), ow = geo.out_w(), k = geo.kernel;
  for (std::size_t b = 0; b < geo.batch; ++b)
    for (std::size_t co = 0; co < geo.out_channels; ++co)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const double go = g[((b * geo.out_channels + co) * oh + oy) * ow + ox];
          const std::size_t ci_begin = geo.depthwise ? co : 0;
          const std::size_t ci_end = geo.depthwise ? co + 1 : geo.in_channels;
          for (std::size_t ci = ci_begin; ci < ci_end; ++ci)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                const long long iy = tap(oy, ky, geo, geo.in_h);
                const long long ix = tap(ox, kx, geo, geo.in_w);
                if (iy < 0 || ix < 0) continue;
                const std::size_t widx = geo.depthwise
                                             ? (co * k + ky) * k + kx
                                             : ((co * geo.in_channels + ci) * k + ky) * k + kx;
                grad_x[((b * geo.in_channels + ci) * geo.in_h + iy) * geo.in_w + ix] +=
                    w[widx] * go;
              }
        }
}

void conv2d_backward_weight(const ConvGeometry& geo, std::span<const double> x,
                            std::span<const double> g, std::span<double> grad_w) {
  const std::size_t oh = geo.out_h(), ow = geo.out_w(), k = geo.kernel;
  for (std::size_t b = 0; b < geo.batch; ++b)
    for (std::size_t co = 0; co < geo.out_channels; ++co)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const double go = g[((b * geo.out_channels + co) * oh + oy) * ow + ox];
          const std::size_t ci_begin = geo.depthwise ? co : 0;
          const std::size_t ci_end = geo.depthwise ? co + 1 : geo.in_channels;
          for (std::size_t ci = ci_begin; ci < ci_end; ++ci)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                const long long iy = tap(oy, ky, geo, geo.in_h);
                const long long ix = tap(ox, kx, geo, geo.in_w);
                if (iy < 0 || ix < 0) continue;
                const std::size_t widx = geo.depthwise
                                             ? (co * k + ky) * k + kx
                                             : ((co * geo.in_channels + ci) * k + ky) * k + kx;
                grad_w[widx] +=
                    go * x[((b * geo.in_channels + ci) * geo.in_h + iy) * geo.in_w + ix];
              }
        }
}

}  // namespace karma::kernels::ref
