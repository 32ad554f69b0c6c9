#include <benchmark/benchmark.h>

#include <vector>

#include "karma/kernels.hpp"
#include "karma/rng.hpp"
#include "karma/spline.hpp"
#include "karma/gradcheck.hpp"

using namespace karma;
namespace kn = karma::kernels;

namespace {

std::vector<double> filled(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-1, 1);
  return v;
}

template <bool Par>
void BM_matmul(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  const auto a = filled(n * n, 1), b = filled(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : st) {
    if constexpr (Par) kn::par::matmul(a, b, c, n, n, n);
    else kn::ref::matmul(a, b, c, n, n, n);
    benchmark::DoNotOptimize(c.data());
  }
  st.SetItemsProcessed(static_cast<std::int64_t>(st.iterations() * n * n * n));
}

kn::ConvGeometry geometry(std::size_t channels, std::size_t size, std::size_t k, bool depthwise) {
  kn::ConvGeometry g;
  g.batch = 2;
  g.in_channels = g.out_channels = channels;
  g.in_h = g.in_w = size;
  g.kernel = k;
  g.padding = (k - 1) / 2;
  g.depthwise = depthwise;
  return g;
}

template <bool Par, bool Depthwise>
void BM_conv_forward(benchmark::State& st) {
  const auto g = geometry(static_cast<std::size_t>(st.range(0)), 32, 3, Depthwise);
  const auto x = filled(g.batch * g.in_channels * g.in_h * g.in_w, 3), w = filled(g.weight_size(), 4);
  const auto bias = filled(g.out_channels, 5);
  std::vector<double> out(g.batch * g.out_channels * g.out_h() * g.out_w());
  for (auto _ : st) {
    if constexpr (Par) kn::par::conv2d(g, x, w, bias, out);
    else kn::ref::conv2d(g, x, w, bias, out);
    benchmark::DoNotOptimize(out.data());
  }
  st.SetItemsProcessed(static_cast<std::int64_t>(st.iterations() * g.macs()));
}

template <bool Par>
void BM_conv_backward(benchmark::State& st) {
  const auto g = geometry(static_cast<std::size_t>(st.range(0)), 32, 3, false);
  const auto x = filled(g.batch * g.in_channels * g.in_h * g.in_w, 6), w = filled(g.weight_size(), 7);
  const auto grad = filled(g.batch * g.out_channels * g.out_h() * g.out_w(), 8);
  std::vector<double> gx(x.size()), gw(w.size());
  for (auto _ : st) {
    if constexpr (Par) {
      kn::par::conv2d_backward_input(g, w, grad, gx);
      kn::par::conv2d_backward_weight(g, x, grad, gw);
    } else {
      kn::ref::conv2d_backward_input(g, w, grad, gx);
      kn::ref::conv2d_backward_weight(g, x, grad, gw);
    }
    benchmark::DoNotOptimize(gx.data());
    benchmark::DoNotOptimize(gw.data());
  }
  st.SetItemsProcessed(static_cast<std::int64_t>(st.iterations() * 2 * g.macs()));
}

void BM_bspline_basis(benchmark::State& st) {
  const SplineGrid grid = make_grid(5, 3, -1.0, 1.0);
  const Tensor x = random_tensor({static_cast<std::size_t>(st.range(0)), 64}, 9, -0.99, 0.99);
  for (auto _ : st) benchmark::DoNotOptimize(bspline_basis(x, grid));
  st.SetItemsProcessed(static_cast<std::int64_t>(st.iterations() * x.numel()));
}

}  // namespace

BENCHMARK(BM_matmul<false>)->Name("matmul/ref")->Arg(64)->Arg(256);
BENCHMARK(BM_matmul<true>)->Name("matmul/par")->Arg(64)->Arg(256);
BENCHMARK(BM_conv_forward<false, false>)->Name("conv3x3/ref")->Arg(16)->Arg(64);
BENCHMARK(BM_conv_forward<true, false>)->Name("conv3x3/par")->Arg(16)->Arg(64);
BENCHMARK(BM_conv_forward<false, true>)->Name("depthwise3x3/ref")->Arg(64);
BENCHMARK(BM_conv_forward<true, true>)->Name("depthwise3x3/par")->Arg(64);
BENCHMARK(BM_conv_backward<false>)->Name("conv3x3_backward/ref")->Arg(32);
BENCHMARK(BM_conv_backward<true>)->Name("conv3x3_backward/par")->Arg(32);
BENCHMARK(BM_bspline_basis)->Arg(256)->Arg(4096);

BENCHMARK_MAIN();
