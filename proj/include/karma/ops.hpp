#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "karma/tensor.hpp"

namespace karma {

// ---- linear algebra -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);  // [m x k] * [k x n]
Tensor transpose(const Tensor& a);                // 2-D only

// ---- convolution & resampling (NCHW) --------------------------------------

enum class ConvMode { standard, depthwise, pointwise };

struct ConvOptions {
  ConvMode mode = ConvMode::standard;
  std::size_t stride = 1;
  std::optional<std::size_t> padding;  // unset: "same" padding (k - 1) / 2
};

/// kernel: [Cout, Cin, k, k] (standard), [C, 1, k, k] (depthwise),
/// [Cout, Cin, 1, 1] (pointwise). bias may be undefined.
Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias, const ConvOptions& opt);

/// Window maximum with -inf padding; the output extent rounds up so a
/// trailing partial window is kept.
Tensor maxpool2d(const Tensor& x, std::size_t window = 2, std::size_t stride = 2,
                 std::size_t padding = 0);

/// Nearest-neighbour upsampling by an integer factor.
Tensor upsample2d(const Tensor& x, std::size_t factor);

// ---- normalisation ----------------------------------------------------------

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor log_softmax(const Tensor& x, std::size_t axis);

/// Normalises over the last axis; gamma/beta ([D]) may be undefined.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  explicit BatchNormState(std::size_t channels = 0)
      : running_mean(channels, 0.0), running_var(channels, 1.0) {}
};

/// Training mode normalises with batch statistics over (B, H, W) and folds
/// them into the running estimates; eval mode uses the running estimates.
Tensor batch_norm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                    BatchNormState& state, bool training);

// ---- elementwise ------------------------------------------------------------

enum class Activation { silu, relu };

Tensor activation(const Tensor& x, Activation kind);
Tensor silu(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor square(const Tensor& x);
Tensor pow(const Tensor& x, double exponent);  // x >= 0 where exponent is fractional

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor scale(const Tensor& a, double s);
/// a * s where s holds a single (possibly learnable) value.
Tensor scale_by(const Tensor& a, const Tensor& s);

/// Broadcast a [..., C] tensor against v [C] along the last axis.
Tensor mul_lastdim(const Tensor& x, const Tensor& v);
Tensor add_lastdim(const Tensor& x, const Tensor& v);

// ---- reductions & layout ----------------------------------------------------

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum_axis(const Tensor& x, std::size_t axis);

Tensor reshape(const Tensor& x, const Shape& shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& order);
Tensor concat(const std::vector<Tensor>& xs, std::size_t axis);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

}  // namespace karma
