#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>

#include "karma/nn.hpp"
#include "karma/spline.hpp"

namespace karma {

struct RankConfig {
  std::size_t rank = 8;         // base path
  std::size_t spline_rank = 4;  // spline path
  double energy_threshold = 0.95;
  double prune_threshold = 1e-4;
};

enum class KanInit { random, svd };

struct GridConfig {
  std::size_t grid_size = 5;
  std::size_t order = 3;
  double lo = -1.0;
  double hi = 1.0;
  double noise_scale = 0.0;
};

struct KanLinearOptions {
  std::size_t in = 1;
  std::size_t out = 1;
  std::size_t rank = 1;
  std::size_t spline_rank = 1;
  bool share_splines = true;
  GridConfig grid;
  KanInit init = KanInit::random;
};

/// Low-rank KAN linear map on row vectors [N x in] -> [N x out]:
///
///   base   = silu(x * base_u * base_v + base_bias)
///   spline = B(x) * spline_v^T * spline_u^T
///   out    = scale_base (.) base + scale_spline (.) spline
///
/// With shared splines B(x) is the basis summed over input channels
/// ([N x nb]); otherwise it is the flattened per-channel basis [N x in*nb].
class KanLinear : public Module {
 public:
  KanLinear() = default;
  KanLinear(const KanLinearOptions& opt, Rng& rng);

  Tensor forward(const Tensor& x, const RunContext& ctx) const;
  Tensor base(const Tensor& x) const;
  Tensor spline(const Tensor& x, const SplineGrid& grid) const;
  Tensor spline(const Tensor& x) const { return spline(x, grid); }

  /// spline_u * spline_v: [out x nb] shared, [out x in*nb] unshared.
  Tensor spline_coefficients() const;

  /// Zeroes entries with |w| <= tau in every weight factor; returns the
  /// number of entries that are zero afterwards.
  std::size_t prune(double tau);

  void collect(const std::string& prefix, std::vector<ParamRef>& params,
               std::vector<BufferRef>& buffers) override;

  KanLinearOptions options;
  SplineGrid grid;
  std::uint64_t noise_salt = 0;
  Tensor base_u;        // [in x r]
  Tensor base_v;        // [r x out]
  Tensor base_bias;     // [out]
  Tensor spline_u;      // [out x r_f]
  Tensor spline_v;      // [r_f x nb] or [r_f x in*nb]
  Tensor scale_base;    // [out]
  Tensor scale_spline;  // [out]
};

/// Two KanLinear maps, each followed by depthwise 3x3 + BatchNorm + ReLU on
/// the token grid.
class KanLayer : public Module {
 public:
  KanLayer() = default;
  KanLayer(std::size_t dim, std::size_t hidden, const RankConfig& ranks, bool share_splines,
           const GridConfig& grid, KanInit init, Rng& rng);

  /// tokens: [B x N x D] with N == h * w.
  Tensor forward(const Tensor& tokens, std::size_t h, std::size_t w, const RunContext& ctx);
  void collect(const std::string& prefix, std::vector<ParamRef>& params,
               std::vector<BufferRef>& buffers) override;

  KanLinear fc1, fc2;
  Conv2d dw1, dw2;
  BatchNorm2d bn1, bn2;

 private:
  Tensor dw_bn_relu(const Tensor& rows, std::size_t b, std::size_t h, std::size_t w,
                    const Conv2d& dw, BatchNorm2d& bn, const RunContext& ctx);
};

/// tokens + layer(layernorm(tokens))
class KanBlock : public Module {
 public:
  KanBlock() = default;
  KanBlock(std::size_t dim, std::size_t hidden, const RankConfig& ranks, bool share_splines,
           const GridConfig& grid, KanInit init, Rng& rng);

  Tensor forward(const Tensor& tokens, std::size_t h, std::size_t w, const RunContext& ctx);
  void collect(const std::string& prefix, std::vector<ParamRef>& params,
               std::vector<BufferRef>& buffers) override;

  LayerNorm norm;
  KanLayer layer;
};

/// W (.) 1(|W| > tau). Returns a leaf with no graph.
Tensor prune_weights(const Tensor& w, double tau);

/// Smallest r whose leading squared singular values reach `energy` of the
/// total. An all-zero matrix gives 1.
std::size_t select_rank(const Tensor& w, double energy);

/// Best rank-r factors of w [m x n]: U_r sqrt(S_r) and sqrt(S_r) V_r^T.
std::pair<Tensor, Tensor> svd_init(const Tensor& w, std::size_t r);

}  // namespace karma
