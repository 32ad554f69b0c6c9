#include <cmath>

#include "doctest.h"
#include "karma/error.hpp"
#include "karma/gradcheck.hpp"
#include "karma/kan.hpp"

using namespace karma;

namespace {

KanLinearOptions opts(std::size_t in, std::size_t out, std::size_t r, std::size_t rf, bool share = true) {
  KanLinearOptions o;
  o.in = in;
  o.out = out;
  o.rank = r;
  o.spline_rank = rf;
  o.share_splines = share;
  return o;
}

double silu_d(double v) { return v / (1.0 + std::exp(-v)); }

void fill(Tensor& t, double v) {
  for (auto& x : t.mutable_data()) x = v;
}

Tensor matmul_plain(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> o(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) o[i * n + j] += a[i * k + p] * b[p * n + j];
  return Tensor({m, n}, o);
}

double frob_diff(const Tensor& w, const Tensor& approx) {
  double s = 0.0;
  for (std::size_t i = 0; i < w.numel(); ++i) s += std::pow(w[i] - approx[i], 2);
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("base transform") {
  Rng rng(1);
  KanLinear k(opts(4, 6, 4, 2), rng);
  const Tensor x = random_tensor({5, 4}, 2);

  SUBCASE("zero factors give zero output") {
    fill(k.base_u, 0.0);
    fill(k.base_v, 0.0);
    const Tensor y = k.base(x);
    for (double v : y.data()) CHECK(v == 0.0);
  }
  SUBCASE("full rank reproduces a dense layer") {
    const Tensor w = random_tensor({4, 6}, 3);
    const Tensor b = random_tensor({6}, 4);
    auto u = k.base_u.mutable_data();
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) u[i * 4 + j] = i == j ? 1.0 : 0.0;
    std::copy(w.data().begin(), w.data().end(), k.base_v.mutable_data().begin());
    std::copy(b.data().begin(), b.data().end(), k.base_bias.mutable_data().begin());
    const Tensor y = k.base(x);
    const Tensor lin = matmul_plain(x, w);
    for (std::size_t n = 0; n < 5; ++n)
      for (std::size_t o = 0; o < 6; ++o)
        CHECK(std::fabs(y[n * 6 + o] - silu_d(lin[n * 6 + o] + b[o])) < 1e-12);
  }
  SUBCASE("gradient with respect to the factors") {
    const auto res = gradcheck(
        [&](const std::vector<Tensor>& in) {
          KanLinear c = k;
          c.base_u = in[0];
          c.base_v = in[1];
          return c.base(x);
        },
        {k.base_u.detach(), k.base_v.detach()});
    INFO(res.worst);
    CHECK(res.max_rel_error < 1e-5);
  }
}

TEST_CASE("base path parameter budget") {
  for (std::size_t c : {16, 64, 576, 1024}) {
    for (std::size_t r : {c / 16, c / 8, c / 4}) {
      const std::size_t low = c * r + r * c;
      CHECK(low < c * c);
      Rng rng(0);
      KanLinear k(opts(c > 64 ? 64 : c, c > 64 ? 64 : c, std::max<std::size_t>(1, (c > 64 ? 64 : c) / 4), 2), rng);
      CHECK(k.base_u.numel() + k.base_v.numel() < k.options.in * k.options.out);
    }
  }
}

TEST_CASE("spline transform") {
  Rng rng(5);
  SUBCASE("zero weights give zero output") {
    KanLinear k(opts(3, 2, 2, 2), rng);
    fill(k.spline_v, 0.0);
    const Tensor y = k.spline(random_tensor({4, 3}, 6));
    for (double v : y.data()) CHECK(v == 0.0);
  }
  SUBCASE("order-0 single-cell contraction by hand") {
    KanLinearOptions o = opts(2, 2, 2, 1);
    o.grid.grid_size = 1;
    o.grid.order = 0;
    o.grid.lo = 0.0;
    o.grid.hi = 1.0;
    KanLinear k(o, rng);
    k.spline_u = Tensor({2, 1}, {2.0, -3.0}, true);
    k.spline_v = Tensor({1, 1}, {0.5}, true);
    // each input channel contributes basis value 1, so out_o = 2 * u_o * v
    const Tensor y = k.spline(Tensor({1, 2}, {0.3, 0.8}));
    CHECK(std::fabs(y[0] - 2.0) < 1e-15);
    CHECK(std::fabs(y[1] + 3.0) < 1e-15);
    // one channel outside the cell contributes nothing
    const Tensor z = k.spline(Tensor({1, 2}, {0.3, 1.5}));
    CHECK(std::fabs(z[0] - 1.0) < 1e-15);
  }
  SUBCASE("quadratic pieces between knots") {
    KanLinearOptions o = opts(1, 1, 1, 1);
    o.grid.grid_size = 4;
    o.grid.order = 2;
    KanLinear k(o, rng);
    const double h = 0.01;
    // span [0, 0.5): sample 6 points, second differences must agree
    std::vector<double> f;
    for (int i = 0; i < 6; ++i) f.push_back(k.spline(Tensor({1, 1}, {0.05 + i * h}))[0]);
    const double d0 = f[2] - 2 * f[1] + f[0];
    for (int i = 1; i < 4; ++i) CHECK(std::fabs((f[i + 2] - 2 * f[i + 1] + f[i]) - d0) < 1e-12);
    CHECK(std::fabs(d0) > 1e-9);
  }
  SUBCASE("unshared coefficients") {
    KanLinear k(opts(3, 4, 2, 3, false), rng);
    CHECK(k.spline_v.shape() == Shape{3, 3 * 8});
    CHECK(k.spline_coefficients().shape() == Shape{4, 24});
    const auto res = gradcheck(
        [&](const std::vector<Tensor>& in) {
          KanLinear c = k;
          c.spline_u = in[1];
          c.spline_v = in[2];
          return c.spline(in[0]);
        },
        {random_tensor({2, 3}, 7), k.spline_u.detach(), k.spline_v.detach()});
    INFO(res.worst);
    CHECK(res.max_rel_error < 1e-5);
  }
}

TEST_CASE("kanlinear combination") {
  Rng rng(8);
  KanLinear k(opts(5, 3, 3, 2), rng);
  const Tensor x = random_tensor({4, 5}, 9, -1.2, 1.2);
  const Tensor base = k.base(x), spl = k.spline(x);
  RunContext ctx;

  KanLinear only_base = k;
  only_base.scale_spline = Tensor::zeros({3}, true);
  KanLinear only_spline = k;
  only_spline.scale_base = Tensor::zeros({3}, true);
  const Tensor yb = only_base.forward(x, ctx), ys = only_spline.forward(x, ctx), y = k.forward(x, ctx);
  for (std::size_t i = 0; i < y.numel(); ++i) {
    CHECK(yb[i] == base[i]);
    CHECK(ys[i] == spl[i]);
    CHECK(std::fabs(y[i] - (base[i] + spl[i])) < 1e-15);
  }

  const auto res = gradcheck(
      [&](const std::vector<Tensor>& in) {
        KanLinear c = k;
        c.base_u = in[1];
        c.base_v = in[2];
        c.base_bias = in[3];
        c.spline_u = in[4];
        c.spline_v = in[5];
        c.scale_base = in[6];
        c.scale_spline = in[7];
        return c.forward(in[0], RunContext{});
      },
      {x.detach(), k.base_u.detach(), k.base_v.detach(), random_tensor({3}, 10), k.spline_u.detach(),
       k.spline_v.detach(), random_tensor({3}, 11), random_tensor({3}, 12)});
  INFO(res.worst);
  CHECK(res.max_rel_error < 1e-5);

  CHECK_THROWS_AS(k.forward(random_tensor({4, 4}, 1), ctx), DimensionError);
  CHECK_THROWS_AS(KanLinear(opts(4, 4, 5, 2), rng), ArgumentError);
}

TEST_CASE("kan layer and block") {
  Rng rng(13);
  RankConfig ranks{4, 2};
  const GridConfig grid;
  RunContext train{true, 0};

  SUBCASE("shapes and hidden width") {
    KanLayer layer(8, 4, ranks, true, grid, KanInit::random, rng);
    CHECK(layer.fc1.options.out == 4);
    CHECK(layer.fc2.options.in == 4);
    const Tensor y = layer.forward(random_tensor({2, 6, 8}, 14), 2, 3, train);
    CHECK(y.shape() == Shape{2, 6, 8});
    CHECK_THROWS_AS(layer.forward(random_tensor({2, 5, 8}, 14), 2, 3, train), DimensionError);
  }
  SUBCASE("every parameter receives gradient") {
    KanBlock block(8, 8, ranks, true, grid, KanInit::random, rng);
    const Tensor y = block.forward(random_tensor({2, 4, 8}, 15), 2, 2, train);
    backward(sum(mul(y, random_tensor(y.shape(), 16))));
    for (auto& p : block.parameters()) {
      INFO(p.name);
      REQUIRE(p.value.has_grad());
      double n = 0.0;
      for (double g : p.value.grad()) n += std::fabs(g);
      CHECK(n > 0.0);
    }
  }
  SUBCASE("zeroed inner weights give the identity") {
    KanBlock block(8, 8, ranks, true, grid, KanInit::random, rng);
    for (KanLinear* k : {&block.layer.fc1, &block.layer.fc2}) {
      fill(k->base_u, 0.0);
      fill(k->base_v, 0.0);
      fill(k->spline_u, 0.0);
    }
    const Tensor x = random_tensor({1, 4, 8}, 17);
    const Tensor y = block.forward(x, 2, 2, train);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);
  }
  SUBCASE("residual matters") {
    KanBlock block(8, 8, ranks, true, grid, KanInit::random, rng);
    const Tensor x = random_tensor({1, 4, 8}, 18);
    const Tensor with = block.forward(x, 2, 2, train);
    const Tensor without = block.layer.forward(block.norm.forward(x), 2, 2, train);
    double diff = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) diff += std::fabs(with[i] - without[i]);
    CHECK(diff > 1e-3);
  }
  SUBCASE("gradient check through the block") {
    KanBlock block(4, 2, RankConfig{2, 2}, true, grid, KanInit::random, rng);
    const auto res = gradcheck(
        [&](const std::vector<Tensor>& in) {
          block.layer.fc1.base_u = in[1];
          block.layer.fc2.spline_v = in[2];
          return block.forward(in[0], 2, 2, train);
        },
        {random_tensor({2, 4, 4}, 19), block.layer.fc1.base_u.detach(), block.layer.fc2.spline_v.detach()});
    INFO(res.worst);
    CHECK(res.max_rel_error < 1e-5);
  }
}

TEST_CASE("pruning") {
  const Tensor w({3}, {0.5, -0.01, 0.2});
  const Tensor p = prune_weights(w, 0.1);
  CHECK(p[0] == 0.5);
  CHECK(p[1] == 0.0);
  CHECK(p[2] == 0.2);
  const Tensor pp = prune_weights(p, 0.1);
  for (std::size_t i = 0; i < 3; ++i) CHECK(pp[i] == p[i]);
  const Tensor z = prune_weights(w, 0.0);
  for (std::size_t i = 0; i < 3; ++i) CHECK(z[i] == w[i]);
  const Tensor with_zero = prune_weights(Tensor({2}, {0.0, 1.0}), 0.0);
  CHECK(with_zero[0] == 0.0);

  const Tensor r = random_tensor({50}, 3);
  for (double tau : {0.0, 0.1, 0.5}) {
    const Tensor q = prune_weights(r, tau);
    std::size_t nz_r = 0, nz_q = 0;
    for (std::size_t i = 0; i < 50; ++i) {
      nz_r += r[i] != 0.0;
      nz_q += q[i] != 0.0;
    }
    CHECK(nz_q <= nz_r);
  }
  CHECK_THROWS_AS(prune_weights(w, -1.0), ArgumentError);
}

TEST_CASE("select_rank") {
  CHECK(select_rank(Tensor({2, 3}, {1, 2, 3, 2, 4, 6}), 0.95) == 1);
  const Tensor d({2, 2}, {3, 0, 0, 1});
  CHECK(select_rank(d, 0.9) == 1);
  CHECK(select_rank(d, 0.95) == 2);
  const Tensor eye({4, 4}, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1});
  CHECK(select_rank(eye, 0.95) == 4);
  CHECK(select_rank(Tensor::zeros({3, 3}), 0.95) == 1);
  // diag(4,3,2,1): energies 16/30, 25/30, 29/30, 1
  const Tensor d4({4, 4}, {4, 0, 0, 0, 0, 3, 0, 0, 0, 0, 2, 0, 0, 0, 0, 1});
  CHECK(select_rank(d4, 16.0 / 30.0) == 1);
  CHECK(select_rank(d4, 0.6) == 2);
  CHECK(select_rank(d4, 25.0 / 30.0) == 2);
  CHECK(select_rank(d4, 0.9) == 3);
  CHECK(select_rank(d4, 1.0) == 4);
}

TEST_CASE("svd_init") {
  SUBCASE("full rank is exact") {
    for (auto [m, n] : {std::pair<std::size_t, std::size_t>{5, 5}, {4, 7}, {7, 3}}) {
      const Tensor w = random_tensor({m, n}, m * 10 + n);
      auto [u, v] = svd_init(w, std::min(m, n));
      CHECK(frob_diff(w, matmul_plain(u, v)) < 1e-10);
    }
  }
  SUBCASE("rank-2 matrix recovered at r = 2") {
    const Tensor a = random_tensor({6, 2}, 1), b = random_tensor({2, 5}, 2);
    const Tensor w = matmul_plain(a, b);
    auto [u, v] = svd_init(w, 2);
    CHECK(frob_diff(w, matmul_plain(u, v)) < 1e-10);
  }
  SUBCASE("beats random rank-3 competitors") {
    const Tensor w = random_tensor({8, 8}, 3);
    auto [u, v] = svd_init(w, 3);
    const double best = frob_diff(w, matmul_plain(u, v));
    for (int i = 0; i < 1000; ++i) {
      const double e = frob_diff(w, matmul_plain(random_tensor({8, 3}, 1000 + i), random_tensor({3, 8}, 5000 + i)));
      REQUIRE(best <= e);
    }
  }
  CHECK_THROWS_AS(svd_init(random_tensor({3, 4}, 1), 0), ArgumentError);
  CHECK_THROWS_AS(svd_init(random_tensor({3, 4}, 1), 4), ArgumentError);
}
