#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "karma/ops.hpp"
#include "karma/rng.hpp"
#include "karma/tensor.hpp"

namespace karma {

enum class ParamKind { weight, bias, norm, scale };

const char* param_kind_name(ParamKind kind);

struct ParamRef {
  std::string name;
  Tensor value;  // shares storage with the owning module
  ParamKind kind;
};

struct BufferRef {
  std::string name;
  std::vector<double>* values;
};

struct RunContext {
  bool training = false;
  std::uint64_t step = 0;  // seeds per-step randomness such as knot jitter
};

class Module {
 public:
  virtual ~Module() = default;
  virtual void collect(const std::string& prefix, std::vector<ParamRef>& params,
                       std::vector<BufferRef>& buffers) = 0;

  std::vector<ParamRef> parameters();
  std::vector<BufferRef> buffers();
  std::size_t num_parameters();
};

inline std::string join_name(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

/// Leaf tensor with U(-bound, bound) entries.
Tensor uniform_param(const Shape& shape, double bound, Rng& rng);

class Conv2d : public Module {
 public:
  Conv2d() = default;
  /// Default init is U(+-1/sqrt(fan_in)) for weight and bias.
  Conv2d(std::size_t in, std::size_t out, std::size_t kernel, ConvMode mode, bool bias, Rng& rng,
         std::size_t stride = 1);

  Tensor forward(const Tensor& x) const { return conv2d(x, weight, bias, opt); }
  void collect(const std::string& prefix, std::vector<ParamRef>& params,
               std::vector<BufferRef>& buffers) override;

  Tensor weight, bias;
  ConvOptions opt;
};

/// Depthwise k x k (no bias) followed by a pointwise 1 x 1 with bias.
class DwSepConv : public Module {
 public:
  DwSepConv() = default;
  DwSepConv(std::size_t in, std::size_t out, std::size_t kernel, Rng& rng, std::size_t stride = 1);

  Tensor forward(const Tensor& x) const { return pointwise.forward(depthwise.forward(x)); }
  void collect(const std::string& prefix, std::vector<ParamRef>& params,
               std::vector<BufferRef>& buffers) override;

  Conv2d depthwise, pointwise;
};

class BatchNorm2d : public Module {
 public:
  BatchNorm2d() = default;
  explicit BatchNorm2d(std::size_t channels);

  Tensor forward(const Tensor& x, const RunContext& ctx) {
    return batch_norm2d(x, gamma, beta, state, ctx.training);
  }
  void collect(const std::string& prefix, std::vector<ParamRef>& params,
               std::vector<BufferRef>& buffers) override;

  Tensor gamma, beta;
  BatchNormState state;
};

class LayerNorm : public Module {
 public:
  LayerNorm() = default;
  explicit LayerNorm(std::size_t dim);

  Tensor forward(const Tensor& x) const { return layer_norm(x, gamma, beta); }
  void collect(const std::string& prefix, std::vector<ParamRef>& params,
               std::vector<BufferRef>& buffers) override;

  Tensor gamma, beta;
};

}  // namespace karma
