#include "karma/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "karma/error.hpp"
#include "karma/kernels.hpp"

namespace karma {

using detail::make_result;
using detail::NodePtr;

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

std::vector<double>* grad_of(const NodePtr& n) {
  return n->requires_grad ? &n->ensure_grad() : nullptr;
}

struct AxisSplit {
  std::size_t outer, len, inner;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  if (axis >= s.size()) throw DimensionError("axis out of range for " + shape_str(s));
  AxisSplit r{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

template <typename Fwd, typename Deriv>
Tensor unary(const char* op, const Tensor& x, Fwd f, Deriv df) {
  const auto xs = x.data();
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = f(xs[i]);
  return make_result(op, x.shape(), std::move(out), {x},
                     [df](std::span<const double> g, std::span<const NodePtr> in) {
                       auto* gx = grad_of(in[0]);
                       if (!gx) return;
                       const auto& xv = in[0]->data;
                       for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * df(xv[i]);
                     });
}

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

// ---- linear algebra -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw DimensionError("matmul expects 2-D operands, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul inner dimension mismatch: " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(m * n);
  kernels::par::matmul(a.data(), b.data(), out, m, k, n);
  kernels::record_macs(m * k * n);
  return make_result("matmul", {m, n}, std::move(out), {a, b},
                     [m, k, n](std::span<const double> g, std::span<const NodePtr> in) {
                       auto* ga = grad_of(in[0]);
                       auto* gb = grad_of(in[1]);
                       kernels::par::matmul_backward(
                           in[0]->data, in[1]->data, g,
                           ga ? std::span<double>(*ga) : std::span<double>(),
                           gb ? std::span<double>(*gb) : std::span<double>(), m, k, n);
                     });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("transpose expects a 2-D tensor");
  return permute(a, {1, 0});
}

// ---- convolution & resampling ---------------------------------------------

Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias, const ConvOptions& opt) {
  if (x.rank() != 4) throw DimensionError("conv2d expects NCHW input, got " + shape_str(x.shape()));
  if (kernel.rank() != 4 || kernel.dim(2) != kernel.dim(3)) {
    throw DimensionError("conv2d expects a square [O, I, k, k] kernel, got " +
                         shape_str(kernel.shape()));
  }
  if (opt.stride == 0) throw ArgumentError("conv2d stride must be positive");
  kernels::ConvGeometry geo;
  geo.batch = x.dim(0);
  geo.in_channels = x.dim(1);
  geo.in_h = x.dim(2);
  geo.in_w = x.dim(3);
  geo.kernel = kernel.dim(2);
  geo.stride = opt.stride;
  geo.padding = opt.padding.value_or((geo.kernel - 1) / 2);
  geo.out_channels = kernel.dim(0);
  switch (opt.mode) {
    case ConvMode::depthwise:
      geo.depthwise = true;
      if (kernel.dim(1) != 1 || kernel.dim(0) != geo.in_channels) {
        throw DimensionError("depthwise kernel " + shape_str(kernel.shape()) +
                             " does not match input channels " + std::to_string(geo.in_channels));
      }
      break;
    case ConvMode::pointwise:
      if (geo.kernel != 1) throw DimensionError("pointwise conv requires a 1x1 kernel");
      [[fallthrough]];
    case ConvMode::standard:
      if (kernel.dim(1) != geo.in_channels) {
        throw DimensionError("conv kernel " + shape_str(kernel.shape()) +
                             " does not match input channels " + std::to_string(geo.in_channels));
      }
      break;
  }
  if (geo.in_h + 2 * geo.padding < geo.kernel || geo.in_w + 2 * geo.padding < geo.kernel) {
    throw DimensionError("conv2d kernel larger than padded input");
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != geo.out_channels)) {
    throw DimensionError("conv2d bias must have shape [" + std::to_string(geo.out_channels) + "]");
  }
  const Shape out_shape{geo.batch, geo.out_channels, geo.out_h(), geo.out_w()};
  std::vector<double> out(numel(out_shape));
  kernels::par::conv2d(geo, x.data(), kernel.data(),
                       bias.defined() ? bias.data() : std::span<const double>(), out);
  kernels::record_macs(geo.macs());

  std::vector<Tensor> inputs{x, kernel};
  if (bias.defined()) inputs.push_back(bias);
  return make_result(
      "conv2d", out_shape, std::move(out), inputs,
      [geo](std::span<const double> g, std::span<const NodePtr> in) {
        if (auto* gx = grad_of(in[0])) kernels::par::conv2d_backward_input(geo, in[1]->data, g, *gx);
        if (auto* gw = grad_of(in[1])) kernels::par::conv2d_backward_weight(geo, in[0]->data, g, *gw);
        if (in.size() > 2) {
          if (auto* gb = grad_of(in[2])) {
            const std::size_t plane = geo.out_h() * geo.out_w();
            for (std::size_t b = 0; b < geo.batch; ++b)
              for (std::size_t c = 0; c < geo.out_channels; ++c) {
                const double* gp = g.data() + (b * geo.out_channels + c) * plane;
                (*gb)[c] += std::accumulate(gp, gp + plane, 0.0);
              }
          }
        }
      });
}

Tensor maxpool2d(const Tensor& x, std::size_t window, std::size_t stride, std::size_t padding) {
  if (x.rank() != 4) throw DimensionError("maxpool2d expects NCHW input");
  if (window == 0 || stride == 0) throw ArgumentError("maxpool2d window and stride must be positive");
  if (padding >= window) throw ArgumentError("maxpool2d padding must be smaller than the window");
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H + 2 * padding < window || W + 2 * padding < window) {
    throw DimensionError("maxpool2d window larger than padded input");
  }
  const std::size_t oh = (H + 2 * padding - window + stride - 1) / stride + 1;
  const std::size_t ow = (W + 2 * padding - window + stride - 1) / stride + 1;
  std::vector<double> out(B * C * oh * ow);
  std::vector<std::size_t> argmax(out.size());
  const auto xs = x.data();
  const long long planes = static_cast<long long>(B * C);
#pragma omp parallel for schedule(static)
  for (long long p = 0; p < planes; ++p) {
    const std::size_t base = static_cast<std::size_t>(p) * H * W;
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_idx = base;
        bool found = false;
        for (std::size_t ky = 0; ky < window; ++ky) {
          const long long iy = static_cast<long long>(oy * stride + ky) - static_cast<long long>(padding);
          if (iy < 0 || iy >= static_cast<long long>(H)) continue;
          for (std::size_t kx = 0; kx < window; ++kx) {
            const long long ix = static_cast<long long>(ox * stride + kx) - static_cast<long long>(padding);
            if (ix < 0 || ix >= static_cast<long long>(W)) continue;
            const std::size_t idx = base + static_cast<std::size_t>(iy) * W + static_cast<std::size_t>(ix);
            if (!found || xs[idx] > best) {
              best = xs[idx];
              best_idx = idx;
              found = true;
            }
          }
        }
        const std::size_t o = (static_cast<std::size_t>(p) * oh + oy) * ow + ox;
        out[o] = best;
        argmax[o] = best_idx;
      }
  }
  return make_result("maxpool2d", {B, C, oh, ow}, std::move(out), {x},
                     [argmax = std::move(argmax)](std::span<const double> g,
                                                  std::span<const NodePtr> in) {
                       auto* gx = grad_of(in[0]);
                       if (!gx) return;
                       for (std::size_t i = 0; i < g.size(); ++i) (*gx)[argmax[i]] += g[i];
                     });
}

Tensor upsample2d(const Tensor& x, std::size_t factor) {
  if (factor < 1) throw ArgumentError("upsample2d factor must be >= 1");
  if (x.rank() != 4) throw DimensionError("upsample2d expects NCHW input");
  if (factor == 1) return x;
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t OH = H * factor, OW = W * factor;
  std::vector<double> out(B * C * OH * OW);
  const auto xs = x.data();
  const long long planes = static_cast<long long>(B * C);
#pragma omp parallel for schedule(static)
  for (long long p = 0; p < planes; ++p) {
    const double* src = xs.data() + static_cast<std::size_t>(p) * H * W;
    double* dst = out.data() + static_cast<std::size_t>(p) * OH * OW;
    for (std::size_t oy = 0; oy < OH; ++oy)
      for (std::size_t ox = 0; ox < OW; ++ox) dst[oy * OW + ox] = src[(oy / factor) * W + ox / factor];
  }
  return make_result("upsample2d", {B, C, OH, OW}, std::move(out), {x},
                     [=](std::span<const double> g, std::span<const NodePtr> in) {
                       auto* gx = grad_of(in[0]);
                       if (!gx) return;
#pragma omp parallel for schedule(static)
                       for (long long p = 0; p < planes; ++p) {
                         double* dst = gx->data() + static_cast<std::size_t>(p) * H * W;
                         const double* src = g.data() + static_cast<std::size_t>(p) * OH * OW;
                         for (std::size_t oy = 0; oy < OH; ++oy)
                           for (std::size_t ox = 0; ox < OW; ++ox)
                             dst[(oy / factor) * W + ox / factor] += src[oy * OW + ox];
                       }
                     });
}

// ---- normalisation ----------------------------------------------------------

Tensor softmax(const Tensor& x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis);
  const auto xs = x.data();
  std::vector<double> out(xs.size());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.len * s.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < s.len; ++k) mx = std::max(mx, xs[base + k * s.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < s.len; ++k) {
        const double e = std::exp(xs[base + k * s.inner] - mx);
        out[base + k * s.inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < s.len; ++k) out[base + k * s.inner] /= z;
    }
  auto y = std::make_shared<std::vector<double>>(out);
  return make_result("softmax", x.shape(), std::move(out), {x},
                     [s, y](std::span<const double> g, std::span<const NodePtr> in) {
                       auto* gx = grad_of(in[0]);
                       if (!gx) return;
                       for (std::size_t o = 0; o < s.outer; ++o)
                         for (std::size_t i = 0; i < s.inner; ++i) {
                           const std::size_t base = o * s.len * s.inner + i;
                           double dot = 0.0;
                           for (std::size_t k = 0; k < s.len; ++k)
                             dot += g[base + k * s.inner] * (*y)[base + k * s.inner];
                           for (std::size_t k = 0; k < s.len; ++k) {
                             const std::size_t idx = base + k * s.inner;
                             (*gx)[idx] += (*y)[idx] * (g[idx] - dot);
                           }
                         }
                     });
}

Tensor log_softmax(const Tensor& x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis);
  const auto xs = x.data();
  std::vector<double> out(xs.size());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.len * s.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < s.len; ++k) mx = std::max(mx, xs[base + k * s.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < s.len; ++k) z += std::exp(xs[base + k * s.inner] - mx);
      const double lse = mx + std::log(z);
      for (std::size_t k = 0; k < s.len; ++k) out[base + k * s.inner] = xs[base + k * s.inner] - lse;
    }
  auto y = std::make_shared<std::vector<double>>(out);
  return make_result("log_softmax", x.shape(), std::move(out), {x},
                     [s, y](std::span<const double> g, std::span<const NodePtr> in) {
                       auto* gx = grad_of(in[0]);
                       if (!gx) return;
                       for (std::size_t o = 0; o < s.outer; ++o)
                         for (std::size_t i = 0; i < s.inner; ++i) {
                           const std::size_t base = o * s.len * s.inner + i;
                           double gsum = 0.0;
                           for (std::size_t k = 0; k < s.len; ++k) gsum += g[base + k * s.inner];
                           for (std::size_t k = 0; k < s.len; ++k) {
                             const std::size_t idx = base + k * s.inner;
                             (*gx)[idx] += g[idx] - std::exp((*y)[idx]) * gsum;
                           }
                         }
                     });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.rank() < 1) throw DimensionError("layer_norm needs at least one axis");
  const std::size_t D = x.shape().back();
  const std::size_t rows = x.numel() / D;
  for (const Tensor* p : {&gamma, &beta}) {
    if (p->defined() && (p->rank() != 1 || p->dim(0) != D)) {
      throw DimensionError("layer_norm affine parameters must have shape [" + std::to_string(D) + "]");
    }
  }
  const auto xs = x.data();
  auto xhat = std::make_shared<std::vector<double>>(xs.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(xs.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xs.data() + r * D;
    double mu = 0.0;
    for (std::size_t j = 0; j < D; ++j) mu += row[j];
    mu /= static_cast<double>(D);
    double var = 0.0;
    for (std::size_t j = 0; j < D; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(D);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < D; ++j) {
      const double h = (row[j] - mu) * is;
      (*xhat)[r * D + j] = h;
      double v = h;
      if (gamma.defined()) v *= gamma.data()[j];
      if (beta.defined()) v += beta.data()[j];
      out[r * D + j] = v;
    }
  }
  const bool has_gamma = gamma.defined(), has_beta = beta.defined();
  std::vector<Tensor> inputs{x};
  if (has_gamma) inputs.push_back(gamma);
  if (has_beta) inputs.push_back(beta);
  return make_result(
      "layer_norm", x.shape(), std::move(out), inputs,
      [=](std::span<const double> g, std::span<const NodePtr> in) {
        std::size_t slot = 1;
        const NodePtr gamma_node = has_gamma ? in[slot++] : nullptr;
        const NodePtr beta_node = has_beta ? in[slot++] : nullptr;
        if (auto* gx = grad_of(in[0])) {
          std::vector<double> gh(D);
          for (std::size_t r = 0; r < rows; ++r) {
            double s1 = 0.0, s2 = 0.0;
            for (std::size_t j = 0; j < D; ++j) {
              gh[j] = g[r * D + j] * (gamma_node ? gamma_node->data[j] : 1.0);
              s1 += gh[j];
              s2 += gh[j] * (*xhat)[r * D + j];
            }
            const double is = (*inv_std)[r];
            for (std::size_t j = 0; j < D; ++j) {
              (*gx)[r * D + j] += is / static_cast<double>(D) *
                                  (static_cast<double>(D) * gh[j] - s1 - (*xhat)[r * D + j] * s2);
            }
          }
        }
        if (gamma_node) {
          if (auto* gg = grad_of(gamma_node))
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t j = 0; j < D; ++j) (*gg)[j] += g[r * D + j] * (*xhat)[r * D + j];
        }
        if (beta_node) {
          if (auto* gb = grad_of(beta_node))
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t j = 0; j < D; ++j) (*gb)[j] += g[r * D + j];
        }
      });
}

Tensor batch_norm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                    BatchNormState& state, bool training) {
  if (x.rank() != 4) throw DimensionError("batch_norm2d expects NCHW input");
  const std::size_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (gamma.numel() != C || beta.numel() != C || state.running_mean.size() != C ||
      state.running_var.size() != C) {
    throw DimensionError("batch_norm2d parameters do not match " + std::to_string(C) + " channels");
  }
  const std::size_t M = B * HW;
  const auto xs = x.data();
  const auto gs = gamma.data();
  const auto bs = beta.data();
  auto xhat = std::make_shared<std::vector<double>>(xs.size());
  auto inv_std = std::make_shared<std::vector<double>>(C);
  std::vector<double> out(xs.size());
  const long long channels = static_cast<long long>(C);
#pragma omp parallel for schedule(static)
  for (long long cl = 0; cl < channels; ++cl) {
    const std::size_t c = static_cast<std::size_t>(cl);
    double mu, var;
    if (training) {
      mu = 0.0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < HW; ++i) mu += xs[(b * C + c) * HW + i];
      mu /= static_cast<double>(M);
      var = 0.0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < HW; ++i) {
          const double d = xs[(b * C + c) * HW + i] - mu;
          var += d * d;
        }
      var /= static_cast<double>(M);
      const double unbiased = M > 1 ? var * static_cast<double>(M) / static_cast<double>(M - 1) : var;
      state.running_mean[c] = (1.0 - state.momentum) * state.running_mean[c] + state.momentum * mu;
      state.running_var[c] = (1.0 - state.momentum) * state.running_var[c] + state.momentum * unbiased;
    } else {
      mu = state.running_mean[c];
      var = state.running_var[c];
    }
    const double is = 1.0 / std::sqrt(var + state.eps);
    (*inv_std)[c] = is;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < HW; ++i) {
        const std::size_t idx = (b * C + c) * HW + i;
        const double h = (xs[idx] - mu) * is;
        (*xhat)[idx] = h;
        out[idx] = gs[c] * h + bs[c];
      }
  }
  return make_result(
      "batch_norm2d", x.shape(), std::move(out), {x, gamma, beta},
      [=](std::span<const double> g, std::span<const NodePtr> in) {
        auto* gx = grad_of(in[0]);
        auto* gg = grad_of(in[1]);
        auto* gb = grad_of(in[2]);
        const auto& gam = in[1]->data;
#pragma omp parallel for schedule(static)
        for (long long cl = 0; cl < channels; ++cl) {
          const std::size_t c = static_cast<std::size_t>(cl);
          double s1 = 0.0, s2 = 0.0;
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t i = 0; i < HW; ++i) {
              const std::size_t idx = (b * C + c) * HW + i;
              s1 += g[idx];
              s2 += g[idx] * (*xhat)[idx];
            }
          if (gg) (*gg)[c] += s2;
          if (gb) (*gb)[c] += s1;
          if (!gx) continue;
          const double is = (*inv_std)[c];
          const double scale_c = gam[c] * is;
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t i = 0; i < HW; ++i) {
              const std::size_t idx = (b * C + c) * HW + i;
              if (training) {
                (*gx)[idx] += scale_c / static_cast<double>(M) *
                              (static_cast<double>(M) * g[idx] - s1 - (*xhat)[idx] * s2);
              } else {
                (*gx)[idx] += scale_c * g[idx];
              }
            }
        }
      });
}

// ---- elementwise ------------------------------------------------------------

Tensor silu(const Tensor& x) {
  return unary(
      "silu", x, [](double v) { return v * sigmoid(v); },
      [](double v) {
        const double s = sigmoid(v);
        return s * (1.0 + v * (1.0 - s));
      });
}

Tensor relu(const Tensor& x) {
  return unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor activation(const Tensor& x, Activation kind) {
  return kind == Activation::silu ? silu(x) : relu(x);
}

Tensor exp(const Tensor& x) {
  return unary(
      "exp", x, [](double v) { return std::exp(v); }, [](double v) { return std::exp(v); });
}

Tensor abs(const Tensor& x) {
  return unary(
      "abs", x, [](double v) { return std::fabs(v); },
      [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor square(const Tensor& x) {
  return unary(
      "square", x, [](double v) { return v * v; }, [](double v) { return 2.0 * v; });
}

Tensor pow(const Tensor& x, double exponent) {
  return unary(
      "pow", x, [exponent](double v) { return std::pow(v, exponent); },
      [exponent](double v) {
        return exponent == 0.0 ? 0.0 : exponent * std::pow(v, exponent - 1.0);
      });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const auto as = a.data(), bs = b.data();
  std::vector<double> out(as.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = as[i] + bs[i];
  return make_result("add", a.shape(), std::move(out), {a, b},
                     [](std::span<const double> g, std::span<const NodePtr> in) {
                       for (int k = 0; k < 2; ++k)
                         if (auto* gi = grad_of(in[k]))
                           for (std::size_t i = 0; i < g.size(); ++i) (*gi)[i] += g[i];
                     });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  const auto as = a.data(), bs = b.data();
  std::vector<double> out(as.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = as[i] - bs[i];
  return make_result("sub", a.shape(), std::move(out), {a, b},
                     [](std::span<const double> g, std::span<const NodePtr> in) {
                       if (auto* ga = grad_of(in[0]))
                         for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
                       if (auto* gb = grad_of(in[1]))
                         for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
                     });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const auto as = a.data(), bs = b.data();
  std::vector<double> out(as.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = as[i] * bs[i];
  return make_result("mul", a.shape(), std::move(out), {a, b},
                     [](std::span<const double> g, std::span<const NodePtr> in) {
                       if (auto* ga = grad_of(in[0]))
                         for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * in[1]->data[i];
                       if (auto* gb = grad_of(in[1]))
                         for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * in[0]->data[i];
                     });
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "div");
  const auto as = a.data(), bs = b.data();
  std::vector<double> out(as.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = as[i] / bs[i];
  return make_result("div", a.shape(), std::move(out), {a, b},
                     [](std::span<const double> g, std::span<const NodePtr> in) {
                       const auto& av = in[0]->data;
                       const auto& bv = in[1]->data;
                       if (auto* ga = grad_of(in[0]))
                         for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] / bv[i];
                       if (auto* gb = grad_of(in[1]))
                         for (std::size_t i = 0; i < g.size(); ++i)
                           (*gb)[i] -= g[i] * av[i] / (bv[i] * bv[i]);
                     });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(
      "add_scalar", a, [s](double v) { return v + s; }, [](double) { return 1.0; });
}

Tensor scale(const Tensor& a, double s) {
  return unary(
      "scale", a, [s](double v) { return v * s; }, [s](double) { return s; });
}

Tensor scale_by(const Tensor& a, const Tensor& s) {
  if (s.numel() != 1) throw DimensionError("scale_by expects a single-element factor");
  const double f = s.item();
  const auto as = a.data();
  std::vector<double> out(as.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = as[i] * f;
  return make_result("scale_by", a.shape(), std::move(out), {a, s},
                     [](std::span<const double> g, std::span<const NodePtr> in) {
                       const double fv = in[1]->data[0];
                       if (auto* ga = grad_of(in[0]))
                         for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * fv;
                       if (auto* gs = grad_of(in[1])) {
                         double acc = 0.0;
                         for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * in[0]->data[i];
                         (*gs)[0] += acc;
                       }
                     });
}

Tensor mul_lastdim(const Tensor& x, const Tensor& v) {
  if (x.rank() < 1 || v.rank() != 1 || v.dim(0) != x.shape().back()) {
    throw DimensionError("mul_lastdim: " + shape_str(x.shape()) + " vs " + shape_str(v.shape()));
  }
  const std::size_t C = v.dim(0);
  const auto xs = x.data(), vs = v.data();
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xs[i] * vs[i % C];
  return make_result("mul_lastdim", x.shape(), std::move(out), {x, v},
                     [C](std::span<const double> g, std::span<const NodePtr> in) {
                       if (auto* gx = grad_of(in[0]))
                         for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * in[1]->data[i % C];
                       if (auto* gv = grad_of(in[1]))
                         for (std::size_t i = 0; i < g.size(); ++i) (*gv)[i % C] += g[i] * in[0]->data[i];
                     });
}

Tensor add_lastdim(const Tensor& x, const Tensor& v) {
  if (x.rank() < 1 || v.rank() != 1 || v.dim(0) != x.shape().back()) {
    throw DimensionError("add_lastdim: " + shape_str(x.shape()) + " vs " + shape_str(v.shape()));
  }
  const std::size_t C = v.dim(0);
  const auto xs = x.data(), vs = v.data();
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xs[i] + vs[i % C];
  return make_result("add_lastdim", x.shape(), std::move(out), {x, v},
                     [C](std::span<const double> g, std::span<const NodePtr> in) {
                       if (auto* gx = grad_of(in[0]))
                         for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
                       if (auto* gv = grad_of(in[1]))
                         for (std::size_t i = 0; i < g.size(); ++i) (*gv)[i % C] += g[i];
                     });
}

// ---- reductions & layout ----------------------------------------------------

Tensor sum(const Tensor& x) {
  const auto xs = x.data();
  const double total = std::accumulate(xs.begin(), xs.end(), 0.0);
  return make_result("sum", {}, {total}, {x},
                     [](std::span<const double> g, std::span<const NodePtr> in) {
                       if (auto* gx = grad_of(in[0]))
                         for (auto& v : *gx) v += g[0];
                     });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor sum_axis(const Tensor& x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis);
  Shape out_shape;
  for (std::size_t i = 0; i < x.rank(); ++i)
    if (i != axis) out_shape.push_back(x.dim(i));
  const auto xs = x.data();
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t k = 0; k < s.len; ++k)
      for (std::size_t i = 0; i < s.inner; ++i)
        out[o * s.inner + i] += xs[(o * s.len + k) * s.inner + i];
  return make_result("sum_axis", out_shape, std::move(out), {x},
                     [s](std::span<const double> g, std::span<const NodePtr> in) {
                       auto* gx = grad_of(in[0]);
                       if (!gx) return;
                       for (std::size_t o = 0; o < s.outer; ++o)
                         for (std::size_t k = 0; k < s.len; ++k)
                           for (std::size_t i = 0; i < s.inner; ++i)
                             (*gx)[(o * s.len + k) * s.inner + i] += g[o * s.inner + i];
                     });
}

Tensor reshape(const Tensor& x, const Shape& shape) {
  if (numel(shape) != x.numel()) {
    throw DimensionError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result("reshape", shape, std::move(out), {x},
                     [](std::span<const double> g, std::span<const NodePtr> in) {
                       if (auto* gx = grad_of(in[0]))
                         for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
                     });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& order) {
  const Shape& in_shape = x.shape();
  const std::size_t r = in_shape.size();
  if (order.size() != r) throw DimensionError("permute order rank mismatch");
  std::vector<bool> used(r, false);
  for (auto a : order) {
    if (a >= r || used[a]) throw ArgumentError("permute order is not a permutation");
    used[a] = true;
  }
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = in_shape[order[i]];
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * in_shape[i];
  // source offset for each output element
  const std::size_t n = x.numel();
  auto src = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < r; ++i) off += idx[i] * in_stride[order[i]];
    (*src)[flat] = off;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  const auto xs = x.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = xs[(*src)[i]];
  return make_result("permute", out_shape, std::move(out), {x},
                     [src](std::span<const double> g, std::span<const NodePtr> in) {
                       if (auto* gx = grad_of(in[0]))
                         for (std::size_t i = 0; i < g.size(); ++i) (*gx)[(*src)[i]] += g[i];
                     });
}

Tensor concat(const std::vector<Tensor>& xs, std::size_t axis) {
  if (xs.empty()) throw ArgumentError("concat of no tensors");
  const Shape& first = xs.front().shape();
  if (axis >= first.size()) throw DimensionError("concat axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> lens;
  for (const auto& t : xs) {
    if (t.rank() != first.size()) throw DimensionError("concat rank mismatch");
    for (std::size_t i = 0; i < first.size(); ++i)
      if (i != axis && t.dim(i) != first[i]) {
        throw DimensionError("concat extent mismatch: " + shape_str(t.shape()) + " vs " +
                             shape_str(first));
      }
    lens.push_back(t.dim(axis));
    out_shape[axis] += t.dim(axis);
  }
  const AxisSplit s = split_axis(out_shape, axis);
  std::vector<double> out(numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t t = 0; t < xs.size(); ++t) {
    const auto d = xs[t].data();
    for (std::size_t o = 0; o < s.outer; ++o)
      std::copy_n(d.data() + o * lens[t] * s.inner, lens[t] * s.inner,
                  out.data() + (o * s.len + offset) * s.inner);
    offset += lens[t];
  }
  return make_result("concat", out_shape, std::move(out), xs,
                     [s, lens](std::span<const double> g, std::span<const NodePtr> in) {
                       std::size_t off = 0;
                       for (std::size_t t = 0; t < in.size(); ++t) {
                         if (auto* gt = grad_of(in[t])) {
                           for (std::size_t o = 0; o < s.outer; ++o)
                             for (std::size_t j = 0; j < lens[t] * s.inner; ++j)
                               (*gt)[o * lens[t] * s.inner + j] += g[(o * s.len + off) * s.inner + j];
                         }
                         off += lens[t];
                       }
                     });
}

}  // namespace karma
