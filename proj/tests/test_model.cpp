#include <chrono>
#include <cmath>

#include "doctest.h"
#include "karma/error.hpp"
#include "karma/gradcheck.hpp"
#include "karma/model.hpp"

using namespace karma;

namespace {

std::size_t dwsep_count(std::size_t in, std::size_t out, std::size_t k) { return in * k * k + in * out + out; }
std::size_t std_count(std::size_t in, std::size_t out, std::size_t k) { return in * out * k * k + out; }

void zero(Tensor& t) {
  for (auto& v : t.mutable_data()) v = 0.0;
}

ModelConfig tiny(std::size_t k = 3) {
  ModelConfig c;
  c.variant = "tiny";
  c.stage_channels = {8, 8, 16, 16, 32};
  c.fpn_width = 8;
  c.ranks = RankConfig{8, 4};
  c.num_classes = k;
  return c;
}

}  // namespace

TEST_CASE("depthwise-separable conv") {
  Rng rng(1);
  DwSepConv d(6, 10, 3, rng);
  CHECK(d.num_parameters() == dwsep_count(6, 10, 3));
  for (std::size_t k : {2, 3, 5})
    for (std::size_t in : {8, 16, 64})
      for (std::size_t out : {8, 32}) CHECK(dwsep_count(in, out, k) < std_count(in, out, k));

  SUBCASE("identity kernels") {
    DwSepConv id(3, 3, 3, rng);
    auto dw = id.depthwise.weight.mutable_data();
    std::fill(dw.begin(), dw.end(), 0.0);
    for (std::size_t c = 0; c < 3; ++c) dw[c * 9 + 4] = 1.0;
    auto pw = id.pointwise.weight.mutable_data();
    for (std::size_t i = 0; i < 9; ++i) pw[i] = i % 4 == 0 ? 1.0 : 0.0;
    zero(id.pointwise.bias);
    const Tensor x = random_tensor({1, 3, 5, 5}, 2);
    const Tensor y = id.forward(x);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);
  }
  SUBCASE("composition of the two convs") {
    const Tensor x = random_tensor({2, 6, 4, 4}, 3);
    const Tensor y = d.forward(x);
    const Tensor z = conv2d(conv2d(x, d.depthwise.weight, {}, {ConvMode::depthwise}), d.pointwise.weight,
                            d.pointwise.bias, {ConvMode::pointwise});
    for (std::size_t i = 0; i < y.numel(); ++i) CHECK(y[i] == z[i]);
  }
}

TEST_CASE("inception block") {
  Rng rng(4);
  InceptionSepConv blk(5, 16, 1, rng);
  CHECK(blk.widths == std::array<std::size_t, 3>{6, 6, 4});
  CHECK(branch_widths(48) == std::array<std::size_t, 3>{18, 18, 12});
  RunContext eval;
  const Tensor y = blk.forward(random_tensor({1, 5, 8, 8}, 5), eval);
  CHECK(y.shape() == Shape{1, 16, 8, 8});

  SUBCASE("zero input is driven by biases only") {
    InceptionSepConv b(5, 16, 1, rng);
    const Tensor a = b.forward(Tensor::zeros({1, 5, 16, 16}), eval);
    // away from the zero-padded border every pixel sees the same bias-only input
    for (std::size_t c = 0; c < 16; ++c)
      for (std::size_t y = 4; y < 12; ++y)
        for (std::size_t x = 4; x < 12; ++x)
          CHECK(a[(c * 16 + y) * 16 + x] == doctest::Approx(a[(c * 16 + 4) * 16 + 4]).epsilon(1e-14));
    for (auto& p : b.parameters())
      if (p.kind == ParamKind::bias) zero(p.value);
    const Tensor z = b.forward(Tensor::zeros({1, 5, 16, 16}), eval);
    for (double v : z.data()) CHECK(v == 0.0);
  }
  SUBCASE("receptive field is bounded by 9x9") {
    const std::size_t n = 21, mid = 10;
    Tensor base = Tensor::zeros({1, 5, n, n});
    const Tensor y0 = blk.forward(base, eval);
    for (std::size_t off : {5, 6, 8}) {
      std::vector<double> v(5 * n * n, 0.0);
      v[(2 * n + mid) * n + mid + off] = 3.0;
      const Tensor y1 = blk.forward(Tensor({1, 5, n, n}, v), eval);
      double diff = 0.0;
      for (std::size_t c = 0; c < 16; ++c) diff += std::fabs(y1[(c * n + mid) * n + mid] - y0[(c * n + mid) * n + mid]);
      if (off <= 4) CHECK(diff > 0.0);
      else CHECK(diff == 0.0);
    }
    std::vector<double> v(5 * n * n, 0.0);
    v[(2 * n + mid) * n + mid + 4] = 3.0;
    const Tensor y1 = blk.forward(Tensor({1, 5, n, n}, v), eval);
    double diff = 0.0;
    for (std::size_t c = 0; c < 16; ++c) diff += std::fabs(y1[(c * n + mid) * n + mid] - y0[(c * n + mid) * n + mid]);
    CHECK(diff > 0.0);
  }
  CHECK_THROWS_AS(blk.forward(random_tensor({1, 4, 8, 8}, 1), eval), DimensionError);
}

TEST_CASE("bottom-up pathway") {
  Rng rng(6);
  const std::array<std::size_t, 5> ch{48, 96, 192, 384, 576};
  BottomUp bu(3, ch, rng);
  RunContext eval;
  for (std::size_t hw : {32, 64}) {
    const auto c = bu.forward(random_tensor({1, 3, hw, hw}, 7), eval);
    for (std::size_t i = 0; i < 5; ++i) {
      CHECK(c[i].dim(1) == ch[i]);
      CHECK(c[i].dim(2) == hw >> (i + 1));
      CHECK(c[i].dim(3) == hw >> (i + 1));
    }
  }
  CHECK_THROWS_AS(bu.forward(random_tensor({1, 3, 48, 48}, 7), eval), ArgumentError);

  ModelConfig tc = tiny();
  BottomUp small(3, tc.stage_channels, rng);
  const auto c = small.forward(random_tensor({2, 3, 32, 32}, 8), RunContext{true, 0});
  backward(sum(mul(c[4], random_tensor(c[4].shape(), 9))));
  double g = 0.0;
  for (double v : small.stages[0].b1a.depthwise.weight.grad()) g += std::fabs(v);
  CHECK(g > 0.0);
}

TEST_CASE("patch embedding") {
  const Tensor m({1, 2, 2, 2}, {1, 2, 3, 4, 10, 20, 30, 40});
  const Tensor t = patch_embed(m);
  CHECK(t.shape() == Shape{1, 4, 2});
  const std::vector<double> want{1, 10, 2, 20, 3, 30, 4, 40};
  for (std::size_t i = 0; i < 8; ++i) CHECK(t[i] == want[i]);
  const Tensor x = random_tensor({2, 5, 3, 4}, 1);
  const Tensor back = unpatchify(patch_embed(x), 3, 4);
  CHECK(back.shape() == x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(back[i] == x[i]);
}

TEST_CASE("variants") {
  const ModelConfig k = ModelConfig::preset("karma"), f = ModelConfig::preset("flash"),
                    h = ModelConfig::preset("high");
  CHECK(k.stage_channels[4] == 576);
  CHECK(k.fpn_width == 64);
  CHECK(k.fpn_conv == FpnConv::dwsep);
  CHECK(f.stage_channels[4] == 384);
  CHECK(f.kan_channels() == 256);
  CHECK(f.kan_hidden() == 128);
  CHECK(f.fpn_width == 32);
  CHECK(h.stage_channels[4] == 1024);
  CHECK(h.fpn_width == 128);
  CHECK(h.fpn_conv == FpnConv::standard);
  CHECK_THROWS_AS(ModelConfig::preset("huge"), ArgumentError);

  KarmaNet km(k), fm(f), hm(h);
  const auto pk = km.num_parameters(), pf = fm.num_parameters(), ph = hm.num_parameters();
  MESSAGE("params karma=" << pk << " flash=" << pf << " high=" << ph);
  CHECK(pf < pk);
  CHECK(pk < ph);
}

TEST_CASE("model forward contracts") {
  KarmaNet net(tiny());
  RunContext eval;
  const Features f = net.forward_features(random_tensor({2, 3, 64, 64}, 10), eval);
  CHECK(f.fused.shape() == Shape{2, 3, 64, 64});
  for (std::size_t l = 0; l < 4; ++l) {
    CHECK(f.p[l].dim(1) == 8);
    CHECK(f.p[l].dim(2) == 64 >> (l + 2));
  }
  for (double v : f.fused.data()) CHECK(std::isfinite(v));

  SUBCASE("zero laterals pass the upsampled deeper map") {
    for (auto& l : net.lateral_dwsep) {
      zero(l.pointwise.weight);
      zero(l.pointwise.bias);
    }
    const auto p = net.top_down(f.c, f.p[3]);
    for (std::size_t l = 0; l < 3; ++l) {
      const Tensor up = upsample2d(p[l + 1], 2);
      for (std::size_t i = 0; i < up.numel(); ++i) REQUIRE(p[l][i] == up[i]);
    }
  }
  SUBCASE("fusion with deeper heads zeroed") {
    for (std::size_t l = 1; l < 4; ++l) {
      zero(net.heads[l].weight);
      zero(net.heads[l].bias);
    }
    const Features g = net.forward_features(random_tensor({1, 3, 32, 32}, 11), eval);
    const Tensor want = upsample2d(g.o[0], 4);
    for (std::size_t i = 0; i < want.numel(); ++i) REQUIRE(g.fused[i] == want[i]);
  }
  SUBCASE("zero KAN weights reduce enhancement to projecting the input") {
    for (KanLinear* k : net.kan_linears()) {
      zero(k->base_u);
      zero(k->spline_u);
    }
    const Tensor c5 = f.c[4];
    const Tensor got = net.tikan_enhance(c5, RunContext{true, 0});
    const Tensor want = net.p5_proj.forward(c5);
    for (std::size_t i = 0; i < want.numel(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-14));
  }
}

TEST_CASE("nine-class head and flash projection") {
  ModelConfig c = tiny(9);
  c.pre_kan_projection = 16;
  c.kan_hidden_ratio = 0.5;
  KarmaNet net(c);
  CHECK(net.pre_kan->weight.shape() == Shape{16, 32, 1, 1});
  CHECK(net.kan.layer.fc1.options.out == 8);
  const Tensor y = net.forward(random_tensor({1, 3, 32, 32}, 12), RunContext{});
  CHECK(y.shape() == Shape{1, 9, 32, 32});
}

TEST_CASE("gradient reaches every parameter") {
  ModelConfig c = tiny();
  c.learnable_fusion = true;
  KarmaNet net(c);
  const Tensor y = net.forward(random_tensor({2, 3, 64, 64}, 13), RunContext{true, 0});
  backward(sum(mul(y, random_tensor(y.shape(), 14))));
  for (auto& p : net.parameters()) {
    INFO(p.name);
    REQUIRE(p.value.has_grad());
    double g = 0.0;
    for (double v : p.value.grad()) g += std::fabs(v);
    CHECK(g > 0.0);
  }
}

TEST_CASE("karma forward cost at 64x64") {
  KarmaNet net(ModelConfig::preset("karma", 3));
  const auto t0 = std::chrono::steady_clock::now();
  const Tensor y = net.forward(random_tensor({2, 3, 64, 64}, 15), RunContext{true, 0});
  backward(sum(y));
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  MESSAGE("karma fwd+bwd 2x64x64: " << s << " s");
  CHECK(y.shape() == Shape{2, 3, 64, 64});
}
