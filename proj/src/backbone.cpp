#include "karma/backbone.hpp"

#include <cmath>

#include "karma/error.hpp"

namespace karma {

std::array<std::size_t, 3> branch_widths(std::size_t out_channels) {
  const auto w = static_cast<std::size_t>(std::lround(static_cast<double>(out_channels) * 3.0 / 8.0));
  if (out_channels < 3 || 2 * w >= out_channels) {
    throw ArgumentError("InceptionSepConv needs at least 3 output channels, got " +
                        std::to_string(out_channels));
  }
  return {w, w, out_channels - 2 * w};
}

InceptionSepConv::InceptionSepConv(std::size_t in, std::size_t out, std::size_t s, Rng& rng)
    : in_channels(in), out_channels(out), stride(s), widths(branch_widths(out)) {
  b1a = DwSepConv(in, widths[0], 3, rng, stride);
  n1a = BatchNorm2d(widths[0]);
  b1b = DwSepConv(widths[0], widths[0], 3, rng);
  n1b = BatchNorm2d(widths[0]);
  b2a = DwSepConv(in, widths[1], 5, rng, stride);
  n2a = BatchNorm2d(widths[1]);
  b2b = DwSepConv(widths[1], widths[1], 5, rng);
  n2b = BatchNorm2d(widths[1]);
  b3 = Conv2d(in, widths[2], 1, ConvMode::pointwise, true, rng, stride);
  n3 = BatchNorm2d(widths[2]);
}

Tensor InceptionSepConv::forward(const Tensor& x, const RunContext& ctx) {
  if (x.rank() != 4 || x.dim(1) != in_channels) {
    throw DimensionError("InceptionSepConv expects " + std::to_string(in_channels) +
                         " input channels, got " + shape_str(x.shape()));
  }
  const Tensor y1 = silu(n1b.forward(b1b.forward(silu(n1a.forward(b1a.forward(x), ctx))), ctx));
  const Tensor y2 = silu(n2b.forward(b2b.forward(silu(n2a.forward(b2a.forward(x), ctx))), ctx));
  const Tensor y3 = silu(n3.forward(b3.forward(maxpool2d(x, 3, 1, 1)), ctx));
  return concat({y1, y2, y3}, 1);
}

void InceptionSepConv::collect(const std::string& prefix, std::vector<ParamRef>& params,
                               std::vector<BufferRef>& buffers) {
  b1a.collect(join_name(prefix, "b1a"), params, buffers);
  n1a.collect(join_name(prefix, "n1a"), params, buffers);
  b1b.collect(join_name(prefix, "b1b"), params, buffers);
  n1b.collect(join_name(prefix, "n1b"), params, buffers);
  b2a.collect(join_name(prefix, "b2a"), params, buffers);
  n2a.collect(join_name(prefix, "n2a"), params, buffers);
  b2b.collect(join_name(prefix, "b2b"), params, buffers);
  n2b.collect(join_name(prefix, "n2b"), params, buffers);
  b3.collect(join_name(prefix, "b3"), params, buffers);
  n3.collect(join_name(prefix, "n3"), params, buffers);
}

BottomUp::BottomUp(std::size_t in_channels, const std::array<std::size_t, 5>& channels, Rng& rng) {
  std::size_t c = in_channels;
  for (std::size_t i = 0; i < 5; ++i) {
    stages.emplace_back(c, channels[i], i == 0 ? 2 : 1, rng);
    c = channels[i];
  }
}

std::array<Tensor, 5> BottomUp::forward(const Tensor& x, const RunContext& ctx) {
  if (x.rank() != 4 || x.dim(2) % 32 != 0 || x.dim(3) % 32 != 0) {
    throw ArgumentError("input resolution must be a multiple of 32, got " + shape_str(x.shape()));
  }
  std::array<Tensor, 5> c;
  c[0] = stages[0].forward(x, ctx);
  for (std::size_t i = 1; i < 5; ++i) c[i] = stages[i].forward(maxpool2d(c[i - 1]), ctx);
  return c;
}

void BottomUp::collect(const std::string& prefix, std::vector<ParamRef>& params,
                       std::vector<BufferRef>& buffers) {
  for (std::size_t i = 0; i < stages.size(); ++i)
    stages[i].collect(join_name(prefix, "stage" + std::to_string(i + 1)), params, buffers);
}

}  // namespace karma
