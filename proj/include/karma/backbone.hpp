#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "karma/nn.hpp"

namespace karma {

/// Output widths of the three branches: round(3/8), round(3/8), remainder.
std::array<std::size_t, 3> branch_widths(std::size_t out_channels);

/// Three parallel branches concatenated on channels:
///   1. dwsep 3x3 -> BN -> SiLU -> dwsep 3x3 -> BN -> SiLU
///   2. the same with 5x5 kernels
///   3. maxpool 3x3 (stride 1, same) -> 1x1 conv -> BN -> SiLU
/// With stride 2 the first conv of branches 1-2 and the 1x1 conv of branch 3
/// subsample.
class InceptionSepConv : public Module {
 public:
  InceptionSepConv() = default;
  InceptionSepConv(std::size_t in, std::size_t out, std::size_t stride, Rng& rng);

  Tensor forward(const Tensor& x, const RunContext& ctx);
  void collect(const std::string& prefix, std::vector<ParamRef>& params,
               std::vector<BufferRef>& buffers) override;

  std::size_t in_channels = 0, out_channels = 0, stride = 1;
  std::array<std::size_t, 3> widths{};
  DwSepConv b1a, b1b, b2a, b2b;
  Conv2d b3;
  BatchNorm2d n1a, n1b, n2a, n2b, n3;
};

/// Five stages; stage 1 runs at stride 2, stages 2-5 start with a 2x2
/// max-pool. Stage i output is at H / 2^i.
class BottomUp : public Module {
 public:
  BottomUp() = default;
  BottomUp(std::size_t in_channels, const std::array<std::size_t, 5>& channels, Rng& rng);

  /// Returns c1..c5. H and W must be multiples of 32.
  std::array<Tensor, 5> forward(const Tensor& x, const RunContext& ctx);
  void collect(const std::string& prefix, std::vector<ParamRef>& params,
               std::vector<BufferRef>& buffers) override;

  std::vector<InceptionSepConv> stages;
};

}  // namespace karma
