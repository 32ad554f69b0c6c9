#include <cmath>
#include <limits>

#include "doctest.h"
#include "karma/error.hpp"
#include "karma/gradcheck.hpp"
#include "karma/kernels.hpp"
#include "karma/ops.hpp"
#include "karma/rng.hpp"

using namespace karma;

namespace {

Tensor t2(std::size_t r, std::size_t c, std::vector<double> v) { return Tensor({r, c}, std::move(v)); }

void check_grad(const std::function<Tensor(const std::vector<Tensor>&)>& fn,
                std::vector<Tensor> inputs, double tol = 1e-5) {
  const auto res = gradcheck(fn, std::move(inputs));
  INFO(res.worst);
  CHECK(res.probes > 0);
  CHECK(res.max_rel_error < tol);
}

}  // namespace

TEST_CASE("tensor construction rejects bad shapes") {
  CHECK_THROWS_AS(Tensor({2, 2}, {1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(Tensor({0, 2}, {}), DimensionError);
  CHECK(Tensor::scalar(3.0).item() == 3.0);
}

TEST_CASE("non-finite results are errors") {
  const Tensor a({1}, {0.0});
  CHECK_THROWS_AS(div(Tensor({1}, {1.0}), a), NumericError);
}

TEST_CASE("matmul") {
  const Tensor eye = t2(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const Tensor a = random_tensor({3, 4}, 1);
  const Tensor p = matmul(eye, a);
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(p[i] == a[i]);

  const Tensor r = matmul(t2(2, 2, {1, 2, 3, 4}), t2(2, 1, {5, 6}));
  CHECK(r.shape() == Shape{2, 1});
  CHECK(r[0] == 17.0);
  CHECK(r[1] == 39.0);

  CHECK_THROWS_AS(matmul(random_tensor({2, 3}, 1), random_tensor({2, 3}, 2)), DimensionError);
}

TEST_CASE("backward basics") {
  Tensor x({2}, {1.0, 2.0}, true);
  backward(sum(x));
  CHECK(x.grad()[0] == 1.0);
  CHECK(x.grad()[1] == 1.0);
  x.zero_grad();
  backward(sum(square(x)));
  CHECK(x.grad()[0] == 2.0);
  CHECK(x.grad()[1] == 4.0);
  CHECK_THROWS_AS(backward(square(x)), ArgumentError);
}

TEST_CASE("conv2d") {
  SUBCASE("pointwise identity") {
    const Tensor x = random_tensor({1, 3, 4, 4}, 3);
    Tensor k({3, 3, 1, 1}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    const Tensor y = conv2d(x, k, {}, {ConvMode::pointwise});
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);
  }
  SUBCASE("depthwise ones kernel sums neighbourhood") {
    const Tensor x = random_tensor({1, 1, 3, 3}, 4);
    const Tensor k = Tensor::full({1, 1, 3, 3}, 1.0);
    const Tensor y = conv2d(x, k, {}, {ConvMode::depthwise});
    double total = 0.0;
    for (double v : x.data()) total += v;
    CHECK(y[4] == doctest::Approx(total).epsilon(1e-14));
  }
  SUBCASE("stride 2 shape") {
    const Tensor x = random_tensor({1, 1, 8, 8}, 5);
    const Tensor y = conv2d(x, Tensor::full({1, 1, 3, 3}, 1.0), {}, {ConvMode::depthwise, 2});
    CHECK(y.shape() == Shape{1, 1, 4, 4});
  }
  SUBCASE("channel mismatch") {
    CHECK_THROWS_AS(conv2d(random_tensor({1, 2, 4, 4}, 1), random_tensor({3, 3, 1, 1}, 2), {},
                           {ConvMode::pointwise}),
                    DimensionError);
    CHECK_THROWS_AS(conv2d(random_tensor({1, 2, 4, 4}, 1), random_tensor({3, 1, 3, 3}, 2), {},
                           {ConvMode::depthwise}),
                    DimensionError);
  }
  SUBCASE("pointwise equals matmul over channels") {
    const Tensor x = random_tensor({1, 4, 3, 5}, 6);
    const Tensor k = random_tensor({2, 4, 1, 1}, 7);
    const Tensor y = conv2d(x, k, {}, {ConvMode::pointwise});
    const Tensor m = matmul(reshape(k, {2, 4}), reshape(x, {4, 15}));
    for (std::size_t i = 0; i < m.numel(); ++i) CHECK(y[i] == doctest::Approx(m[i]).epsilon(1e-14));
  }
}

TEST_CASE("maxpool2d") {
  const Tensor c = Tensor::full({1, 2, 4, 4}, 3.5);
  const Tensor pc = maxpool2d(c);
  CHECK(pc.shape() == Shape{1, 2, 2, 2});
  for (double v : pc.data()) CHECK(v == 3.5);

  CHECK(maxpool2d(Tensor({1, 1, 2, 2}, {1, 2, 3, 4}))[0] == 4.0);

  // all 3^16 inputs over {0,1,2} are too many for a unit test; sweep a
  // deterministic subset plus random draws against a brute-force scan.
  Rng rng(11);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<double> v(16);
    for (auto& e : v) e = static_cast<double>(rng.below(3));
    const Tensor x({1, 1, 4, 4}, v);
    const Tensor y = maxpool2d(x);
    for (std::size_t oy = 0; oy < 2; ++oy)
      for (std::size_t ox = 0; ox < 2; ++ox) {
        double best = -1;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) best = std::max(best, v[(2 * oy + dy) * 4 + 2 * ox + dx]);
        REQUIRE(y[oy * 2 + ox] == best);
      }
  }

  const Tensor odd = maxpool2d(random_tensor({1, 1, 5, 5}, 2));
  CHECK(odd.shape() == Shape{1, 1, 3, 3});
  const Tensor same = maxpool2d(random_tensor({1, 1, 5, 5}, 2), 3, 1, 1);
  CHECK(same.shape() == Shape{1, 1, 5, 5});
}

TEST_CASE("upsample2d") {
  const Tensor x = random_tensor({1, 1, 3, 3}, 8);
  const Tensor same = upsample2d(x, 1);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(same[i] == x[i]);

  const Tensor b = upsample2d(Tensor({1, 1, 2, 2}, {1, 2, 3, 4}), 2);
  const std::vector<double> want{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(b[i] == want[i]);

  const Tensor u22 = upsample2d(upsample2d(x, 2), 2);
  const Tensor u4 = upsample2d(x, 4);
  REQUIRE(u22.shape() == u4.shape());
  for (std::size_t i = 0; i < u4.numel(); ++i) CHECK(u22[i] == u4[i]);

  CHECK_THROWS_AS(upsample2d(x, 0), ArgumentError);
}

TEST_CASE("softmax") {
  const Tensor eq = softmax(Tensor({1, 4}, {2, 2, 2, 2}), 1);
  for (double v : eq.data()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));

  const Tensor two = softmax(Tensor({2}, {0.0, std::log(3.0)}), 0);
  CHECK(std::fabs(two[0] - 0.25) < 1e-15);
  CHECK(std::fabs(two[1] - 0.75) < 1e-15);

  const Tensor x = random_tensor({3, 5}, 9, -4, 4);
  const Tensor s = softmax(x, 1);
  const Tensor s2 = softmax(add_scalar(x, 17.25), 1);
  for (std::size_t r = 0; r < 3; ++r) {
    double row = 0.0;
    for (std::size_t c = 0; c < 5; ++c) row += s[r * 5 + c];
    CHECK(std::fabs(row - 1.0) < 1e-12);
  }
  for (std::size_t i = 0; i < s.numel(); ++i) CHECK(std::fabs(s[i] - s2[i]) < 1e-14);
}

TEST_CASE("activations") {
  CHECK(silu(Tensor::scalar(0.0)).item() == 0.0);
  CHECK(relu(Tensor::scalar(-2.0)).item() == 0.0);
  CHECK(relu(Tensor::scalar(2.0)).item() == 2.0);
  CHECK(silu(Tensor::scalar(1.0)).item() == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-15));
  CHECK(activation(Tensor::scalar(-1.0), Activation::relu).item() == 0.0);
}

TEST_CASE("normalisation") {
  SUBCASE("layernorm of standardized row is unchanged") {
    const double a = std::sqrt(1.5);
    const Tensor x({1, 3}, {-a, 0.0, a});
    const Tensor y = layer_norm(x, {}, {}, 0.0);
    for (std::size_t i = 0; i < 3; ++i) CHECK(std::fabs(y[i] - x[i]) < 1e-9);
  }
  SUBCASE("layernorm output moments") {
    const Tensor y = layer_norm(Tensor({1, 3}, {1, 2, 3}), {}, {});
    const double m = (y[0] + y[1] + y[2]) / 3.0;
    const double v = (y[0] * y[0] + y[1] * y[1] + y[2] * y[2]) / 3.0 - m * m;
    CHECK(std::fabs(m) < 1e-12);
    CHECK(std::fabs(v - 1.0) < 1e-4);
  }
  SUBCASE("constant input normalises to zero") {
    const Tensor y = layer_norm(Tensor::full({2, 4}, 5.0), {}, {});
    for (double v : y.data()) CHECK(v == 0.0);
    BatchNormState st(2);
    const Tensor b = batch_norm2d(Tensor::full({2, 2, 3, 3}, -1.0), Tensor::full({2}, 1.0),
                                  Tensor::zeros({2}), st, true);
    for (double v : b.data()) CHECK(v == 0.0);
  }
  SUBCASE("batchnorm train vs eval statistics") {
    const Tensor x = random_tensor({3, 2, 4, 4}, 12, -2, 3);
    BatchNormState st(2);
    st.momentum = 1.0;
    const Tensor g = Tensor::full({2}, 1.0), b = Tensor::zeros({2});
    const Tensor yt = batch_norm2d(x, g, b, st, true);
    for (std::size_t c = 0; c < 2; ++c) {
      double m = 0, v = 0;
      for (std::size_t n = 0; n < 3; ++n)
        for (std::size_t i = 0; i < 16; ++i) m += yt[(n * 2 + c) * 16 + i];
      m /= 48;
      for (std::size_t n = 0; n < 3; ++n)
        for (std::size_t i = 0; i < 16; ++i) v += std::pow(yt[(n * 2 + c) * 16 + i] - m, 2);
      v /= 48;
      CHECK(std::fabs(m) < 1e-12);
      CHECK(std::fabs(v - 1.0) < 1e-4);
    }
    // running var holds the unbiased estimate; eval output differs by sqrt(47/48)
    const Tensor ye = batch_norm2d(x, g, b, st, false);
    CHECK(ye[5] == doctest::Approx(yt[5] * std::sqrt(47.0 / 48.0)).epsilon(1e-6));
  }
}

TEST_CASE("permute, reshape, concat") {
  const Tensor x = random_tensor({2, 3, 4}, 13);
  const Tensor p = permute(x, {2, 0, 1});
  CHECK(p.shape() == Shape{4, 2, 3});
  for (std::size_t a = 0; a < 2; ++a)
    for (std::size_t b = 0; b < 3; ++b)
      for (std::size_t c = 0; c < 4; ++c) CHECK(p[(c * 2 + a) * 3 + b] == x[(a * 3 + b) * 4 + c]);
  CHECK_THROWS_AS(reshape(x, {5, 5}), DimensionError);
  const Tensor c = concat({x, random_tensor({2, 1, 4}, 14)}, 1);
  CHECK(c.shape() == Shape{2, 4, 4});
  CHECK(c[(1 * 4 + 2) * 4 + 3] == x[(1 * 3 + 2) * 4 + 3]);
}

TEST_CASE("gradients match finite differences") {
  using V = std::vector<Tensor>;
  SUBCASE("matmul") {
    check_grad([](const V& in) { return matmul(in[0], in[1]); },
               {random_tensor({3, 4}, 1), random_tensor({4, 2}, 2)});
  }
  SUBCASE("conv standard stride 2 with bias") {
    check_grad(
        [](const V& in) { return conv2d(in[0], in[1], in[2], {ConvMode::standard, 2}); },
        {random_tensor({2, 2, 5, 5}, 3), random_tensor({3, 2, 3, 3}, 4), random_tensor({3}, 5)});
  }
  SUBCASE("conv depthwise 5x5") {
    check_grad([](const V& in) { return conv2d(in[0], in[1], {}, {ConvMode::depthwise}); },
               {random_tensor({1, 2, 4, 4}, 6), random_tensor({2, 1, 5, 5}, 7)});
  }
  SUBCASE("conv pointwise") {
    check_grad([](const V& in) { return conv2d(in[0], in[1], in[2], {ConvMode::pointwise}); },
               {random_tensor({2, 3, 3, 3}, 8), random_tensor({2, 3, 1, 1}, 9), random_tensor({2}, 10)});
  }
  SUBCASE("maxpool") {
    check_grad([](const V& in) { return maxpool2d(in[0]); }, {random_tensor({1, 2, 4, 4}, 11)});
    check_grad([](const V& in) { return maxpool2d(in[0], 3, 1, 1); }, {random_tensor({1, 1, 4, 4}, 12)});
  }
  SUBCASE("upsample") {
    check_grad([](const V& in) { return upsample2d(in[0], 2); }, {random_tensor({1, 2, 2, 3}, 13)});
  }
  SUBCASE("softmax and log_softmax") {
    check_grad([](const V& in) { return softmax(in[0], 1); }, {random_tensor({2, 3, 2}, 14, -2, 2)});
    check_grad([](const V& in) { return log_softmax(in[0], 0); }, {random_tensor({4, 3}, 15, -2, 2)});
  }
  SUBCASE("layer_norm") {
    check_grad([](const V& in) { return layer_norm(in[0], in[1], in[2]); },
               {random_tensor({3, 5}, 16), random_tensor({5}, 17), random_tensor({5}, 18)});
  }
  SUBCASE("batch_norm train and eval") {
    check_grad(
        [](const V& in) {
          BatchNormState st(2);
          return batch_norm2d(in[0], in[1], in[2], st, true);
        },
        {random_tensor({2, 2, 3, 3}, 19), random_tensor({2}, 20), random_tensor({2}, 21)});
    check_grad(
        [](const V& in) {
          BatchNormState st(2);
          st.running_mean = {0.1, -0.2};
          st.running_var = {0.5, 2.0};
          return batch_norm2d(in[0], in[1], in[2], st, false);
        },
        {random_tensor({2, 2, 2, 2}, 22), random_tensor({2}, 23), random_tensor({2}, 24)});
  }
  SUBCASE("elementwise") {
    check_grad([](const V& in) { return silu(in[0]); }, {random_tensor({8}, 25, -3, 3)});
    check_grad([](const V& in) { return relu(in[0]); }, {random_tensor({8}, 26, -3, 3)});
    check_grad([](const V& in) { return exp(in[0]); }, {random_tensor({8}, 27)});
    check_grad([](const V& in) { return abs(in[0]); }, {random_tensor({8}, 28)});
    check_grad([](const V& in) { return square(in[0]); }, {random_tensor({8}, 29)});
    check_grad([](const V& in) { return pow(in[0], 1.7); }, {random_tensor({8}, 30, 0.5, 2)});
    check_grad([](const V& in) { return add(in[0], in[1]); }, {random_tensor({6}, 31), random_tensor({6}, 32)});
    check_grad([](const V& in) { return sub(in[0], in[1]); }, {random_tensor({6}, 33), random_tensor({6}, 34)});
    check_grad([](const V& in) { return mul(in[0], in[1]); }, {random_tensor({6}, 35), random_tensor({6}, 36)});
    check_grad([](const V& in) { return div(in[0], in[1]); },
               {random_tensor({6}, 37), random_tensor({6}, 38, 0.5, 2)});
    check_grad([](const V& in) { return scale(add_scalar(in[0], 0.3), -2.5); }, {random_tensor({6}, 39)});
    check_grad([](const V& in) { return scale_by(in[0], in[1]); }, {random_tensor({6}, 40), random_tensor({1}, 41)});
    check_grad([](const V& in) { return mul_lastdim(in[0], in[1]); },
               {random_tensor({3, 4}, 42), random_tensor({4}, 43)});
    check_grad([](const V& in) { return add_lastdim(in[0], in[1]); },
               {random_tensor({3, 4}, 44), random_tensor({4}, 45)});
  }
  SUBCASE("reductions and layout") {
    check_grad([](const V& in) { return mean(square(in[0])); }, {random_tensor({3, 4}, 46)});
    check_grad([](const V& in) { return sum_axis(in[0], 1); }, {random_tensor({2, 3, 4}, 47)});
    check_grad([](const V& in) { return permute(in[0], {1, 2, 0}); }, {random_tensor({2, 3, 4}, 48)});
    check_grad([](const V& in) { return transpose(in[0]); }, {random_tensor({2, 5}, 49)});
    check_grad([](const V& in) { return concat({in[0], in[1]}, 1); },
               {random_tensor({2, 2, 3}, 50), random_tensor({2, 1, 3}, 51)});
    check_grad([](const V& in) { return reshape(in[0], {6, 2}); }, {random_tensor({3, 4}, 52)});
  }
  SUBCASE("composite chain") {
    check_grad(
        [](const V& in) {
          const Tensor h = silu(conv2d(in[0], in[1], {}, {ConvMode::depthwise}));
          return log_softmax(upsample2d(maxpool2d(h), 2), 1);
        },
        {random_tensor({1, 3, 4, 4}, 53), random_tensor({3, 1, 3, 3}, 54)});
  }
}

TEST_CASE("parallel kernels agree with the serial reference") {
  using namespace kernels;
  Rng rng(99);
  for (int trial = 0; trial < 40; ++trial) {
    ConvGeometry geo;
    geo.batch = 1 + rng.below(2);
    geo.depthwise = rng.below(3) == 0;
    geo.in_channels = 1 + rng.below(4);
    geo.out_channels = geo.depthwise ? geo.in_channels : 1 + rng.below(4);
    geo.kernel = 1 + 2 * rng.below(3);
    geo.stride = 1 + rng.below(2);
    geo.padding = rng.below(geo.kernel / 2 + 2);
    geo.in_h = geo.kernel + rng.below(6);
    geo.in_w = geo.kernel + rng.below(6);
    const auto xs = random_tensor({geo.batch * geo.in_channels * geo.in_h * geo.in_w}, 100 + trial);
    const auto ws = random_tensor({geo.weight_size()}, 200 + trial);
    const auto bs = random_tensor({geo.out_channels}, 300 + trial);
    const std::size_t n_out = geo.batch * geo.out_channels * geo.out_h() * geo.out_w();
    std::vector<double> o_ref(n_out), o_par(n_out);
    ref::conv2d(geo, xs.data(), ws.data(), bs.data(), o_ref);
    par::conv2d(geo, xs.data(), ws.data(), bs.data(), o_par);
    for (std::size_t i = 0; i < n_out; ++i) REQUIRE(o_par[i] == doctest::Approx(o_ref[i]).epsilon(1e-13));

    const auto g = random_tensor({n_out}, 400 + trial);
    std::vector<double> gx_ref(xs.numel()), gx_par(xs.numel()), gw_ref(ws.numel()), gw_par(ws.numel());
    ref::conv2d_backward_input(geo, ws.data(), g.data(), gx_ref);
    par::conv2d_backward_input(geo, ws.data(), g.data(), gx_par);
    ref::conv2d_backward_weight(geo, xs.data(), g.data(), gw_ref);
    par::conv2d_backward_weight(geo, xs.data(), g.data(), gw_par);
    for (std::size_t i = 0; i < gx_ref.size(); ++i) REQUIRE(gx_par[i] == doctest::Approx(gx_ref[i]).epsilon(1e-13));
    for (std::size_t i = 0; i < gw_ref.size(); ++i) REQUIRE(gw_par[i] == doctest::Approx(gw_ref[i]).epsilon(1e-13));
  }
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t m = 1 + rng.below(7), k = 1 + rng.below(7), n = 1 + rng.below(7);
    const auto a = random_tensor({m * k}, 500 + trial), b = random_tensor({k * n}, 600 + trial);
    const auto g = random_tensor({m * n}, 700 + trial);
    std::vector<double> o1(m * n), o2(m * n), ga1(m * k), ga2(m * k), gb1(k * n), gb2(k * n);
    ref::matmul(a.data(), b.data(), o1, m, k, n);
    par::matmul(a.data(), b.data(), o2, m, k, n);
    ref::matmul_backward(a.data(), b.data(), g.data(), ga1, gb1, m, k, n);
    par::matmul_backward(a.data(), b.data(), g.data(), ga2, gb2, m, k, n);
    for (std::size_t i = 0; i < o1.size(); ++i) CHECK(o2[i] == doctest::Approx(o1[i]).epsilon(1e-13));
    for (std::size_t i = 0; i < ga1.size(); ++i) CHECK(ga2[i] == doctest::Approx(ga1[i]).epsilon(1e-13));
    for (std::size_t i = 0; i < gb1.size(); ++i) CHECK(gb2[i] == doctest::Approx(gb1[i]).epsilon(1e-13));
  }
}

TEST_CASE("mac tally counts conv work") {
  kernels::MacTally tally;
  conv2d(random_tensor({1, 4, 1, 1}, 1), random_tensor({5, 4, 1, 1}, 2), {}, {ConvMode::pointwise});
  CHECK(tally.count() == 20);
}
