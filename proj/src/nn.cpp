#include "karma/nn.hpp"

#include <cmath>

namespace karma {

const char* param_kind_name(ParamKind kind) {
  switch (kind) {
    case ParamKind::weight: return "weight";
    case ParamKind::bias: return "bias";
    case ParamKind::norm: return "norm";
    case ParamKind::scale: return "scale";
  }
  return "?";
}

std::vector<ParamRef> Module::parameters() {
  std::vector<ParamRef> p;
  std::vector<BufferRef> b;
  collect("", p, b);
  return p;
}

std::vector<BufferRef> Module::buffers() {
  std::vector<ParamRef> p;
  std::vector<BufferRef> b;
  collect("", p, b);
  return b;
}

std::size_t Module::num_parameters() {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.value.numel();
  return n;
}

Tensor uniform_param(const Shape& shape, double bound, Rng& rng) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor(shape, std::move(v), true);
}

Conv2d::Conv2d(std::size_t in, std::size_t out, std::size_t kernel, ConvMode mode, bool with_bias,
               Rng& rng, std::size_t stride) {
  opt.mode = mode;
  opt.stride = stride;
  const std::size_t per_filter = mode == ConvMode::depthwise ? 1 : in;
  const std::size_t fan_in = per_filter * kernel * kernel;
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  weight = uniform_param({mode == ConvMode::depthwise ? in : out, per_filter, kernel, kernel}, bound, rng);
  if (with_bias) bias = uniform_param({mode == ConvMode::depthwise ? in : out}, bound, rng);
}

void Conv2d::collect(const std::string& prefix, std::vector<ParamRef>& params,
                     std::vector<BufferRef>&) {
  params.push_back({join_name(prefix, "weight"), weight, ParamKind::weight});
  if (bias.defined()) params.push_back({join_name(prefix, "bias"), bias, ParamKind::bias});
}

DwSepConv::DwSepConv(std::size_t in, std::size_t out, std::size_t kernel, Rng& rng,
                     std::size_t stride)
    : depthwise(in, in, kernel, ConvMode::depthwise, false, rng, stride),
      pointwise(in, out, 1, ConvMode::pointwise, true, rng) {}

void DwSepConv::collect(const std::string& prefix, std::vector<ParamRef>& params,
                        std::vector<BufferRef>& buffers) {
  depthwise.collect(join_name(prefix, "dw"), params, buffers);
  pointwise.collect(join_name(prefix, "pw"), params, buffers);
}

BatchNorm2d::BatchNorm2d(std::size_t channels)
    : gamma(Tensor::full({channels}, 1.0, true)),
      beta(Tensor::zeros({channels}, true)),
      state(channels) {}

void BatchNorm2d::collect(const std::string& prefix, std::vector<ParamRef>& params,
                          std::vector<BufferRef>& buffers) {
  params.push_back({join_name(prefix, "gamma"), gamma, ParamKind::norm});
  params.push_back({join_name(prefix, "beta"), beta, ParamKind::norm});
  buffers.push_back({join_name(prefix, "running_mean"), &state.running_mean});
  buffers.push_back({join_name(prefix, "running_var"), &state.running_var});
}

LayerNorm::LayerNorm(std::size_t dim)
    : gamma(Tensor::full({dim}, 1.0, true)), beta(Tensor::zeros({dim}, true)) {}

void LayerNorm::collect(const std::string& prefix, std::vector<ParamRef>& params,
                        std::vector<BufferRef>&) {
  params.push_back({join_name(prefix, "gamma"), gamma, ParamKind::norm});
  params.push_back({join_name(prefix, "beta"), beta, ParamKind::norm});
}

}  // namespace karma
