#pragma once

// Raw compute kernels behind the differentiable ops. Every kernel exists
// twice: `ref` is a direct serial transcription of the definition, kept as
// the test oracle; `par` is the OpenMP version the ops dispatch to. Each
// `par` kernel partitions work by output element, so results do not depend on
// the thread count.

#include <cstddef>
#include <cstdint>
#include <span>

namespace karma::kernels {

struct ConvGeometry {
  std::size_t batch = 1;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t in_h = 1, in_w = 1;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  bool depthwise = false;  // one k x k filter per channel, in == out

  std::size_t out_h() const { return (in_h + 2 * padding - kernel) / stride + 1; }
  std::size_t out_w() const { return (in_w + 2 * padding - kernel) / stride + 1; }
  std::size_t weight_size() const {
    return depthwise ? out_channels * kernel * kernel
                     : out_channels * in_channels * kernel * kernel;
  }
  std::size_t macs() const {
    const std::size_t per_out = depthwise ? kernel * kernel : in_channels * kernel * kernel;
    return batch * out_channels * out_h() * out_w() * per_out;
  }
};

namespace ref {

// out[m x n] = a[m x k] * b[k x n]
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> out,
            std::size_t m, std::size_t k, std::size_t n);
// grad_a += g * b^T ; grad_b += a^T * g (either span may be empty to skip)
void matmul_backward(std::span<const double> a, std::span<const double> b,
                     std::span<const double> g, std::span<double> grad_a,
                     std::span<double> grad_b, std::size_t m, std::size_t k, std::size_t n);

// bias may be empty.
void conv2d(const ConvGeometry& geo, std::span<const double> x, std::span<const double> w,
            std::span<const double> bias, std::span<double> out);
void conv2d_backward_input(const ConvGeometry& geo, std::span<const double> w,
                           std::span<const double> g, std::span<double> grad_x);
void conv2d_backward_weight(const ConvGeometry& geo, std::span<const double> x,
                            std::span<const double> g, std::span<double> grad_w);

}  // namespace ref

namespace par {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> out,
            std::size_t m, std::size_t k, std::size_t n);
void matmul_backward(std::span<const double> a, std::span<const double> b,
                     std::span<const double> g, std::span<double> grad_a,
                     std::span<double> grad_b, std::size_t m, std::size_t k, std::size_t n);

void conv2d(const ConvGeometry& geo, std::span<const double> x, std::span<const double> w,
            std::span<const double> bias, std::span<double> out);
void conv2d_backward_input(const ConvGeometry& geo, std::span<const double> w,
                           std::span<const double> g, std::span<double> grad_x);
void conv2d_backward_weight(const ConvGeometry& geo, std::span<const double> x,
                            std::span<const double> g, std::span<double> grad_w);

}  // namespace par

/// Multiply-accumulate tally of forward conv/matmul calls made through the
/// ops layer while a MacTally is alive. Not thread-safe; meant for audits.
class MacTally {
 public:
  MacTally();
  ~MacTally();
  MacTally(const MacTally&) = delete;
  MacTally& operator=(const MacTally&) = delete;
  std::uint64_t count() const;

 private:
  std::uint64_t start_;
  bool previous_;
};

void record_macs(std::uint64_t macs);

void set_num_threads(int threads);
int num_threads();

}  // namespace karma::kernels
