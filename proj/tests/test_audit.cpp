#include "doctest.h"
#include "karma/audit.hpp"
#include "karma/error.hpp"
#include "karma/gradcheck.hpp"
#include "karma/kernels.hpp"

using namespace karma;

namespace {

ModelConfig tiny() {
  ModelConfig c;
  c.variant = "tiny";
  c.stage_channels = {8, 8, 16, 16, 32};
  c.fpn_width = 8;
  c.ranks = RankConfig{8, 4};
  c.num_classes = 3;
  return c;
}

std::vector<ModelConfig> configs() {
  ModelConfig fused = tiny();
  fused.learnable_fusion = true;
  fused.fpn_conv = FpnConv::standard;
  ModelConfig proj = tiny();
  proj.pre_kan_projection = 12;
  proj.kan_hidden_ratio = 0.5;
  proj.share_splines = false;
  proj.ranks = RankConfig{4, 3};
  return {tiny(), fused, proj, ModelConfig::preset("karma"), ModelConfig::preset("flash"),
          ModelConfig::preset("high")};
}

}  // namespace

TEST_CASE("layer counts match tensor enumeration") {
  Rng rng(1);
  Conv2d dense(7, 5, 1, ConvMode::pointwise, true, rng);
  CHECK(dense.num_parameters() == 7 * 5 + 5);
  for (std::size_t k : {1, 3, 5}) {
    DwSepConv d(6, 10, k, rng);
    CHECK(d.num_parameters() == 6 * k * k + 6 * 10 + 10);
  }
}

TEST_CASE("analytic parameter counts equal enumeration per module") {
  for (const auto& cfg : configs()) {
    KarmaNet net(cfg);
    const auto counted = count_params(net);
    const CostReport r = audit(cfg, 64, 64);
    std::uint64_t sum = 0;
    for (const auto& m : r.modules) {
      INFO(cfg.variant << " " << m.name);
      const auto it = counted.find(m.name);
      CHECK((it == counted.end() ? 0 : it->second) == m.params);
      sum += m.params;
    }
    CHECK(sum == r.params_total);
    CHECK(r.params_total == net.num_parameters());
  }
}

TEST_CASE("analytic MACs equal the instrumented forward") {
  for (const auto& cfg : configs()) {
    if (cfg.variant == "high") continue;
    KarmaNet net(cfg);
    AuditOptions opt;
    opt.batch = 2;
    const CostReport r = audit(cfg, 64, 64, opt);
    const Tensor x = random_tensor({2, 3, 64, 64}, 5);
    kernels::MacTally tally;
    net.forward(x, RunContext{});
    INFO(cfg.variant);
    CHECK(tally.count() == r.macs_total);
  }
}

TEST_CASE("conv MACs on a single pixel") {
  Rng rng(2);
  for (std::size_t k : {1, 3}) {
    Conv2d c(4, 6, k, k == 1 ? ConvMode::pointwise : ConvMode::standard, true, rng);
    kernels::MacTally tally;
    c.forward(random_tensor({1, 4, 1, 1}, 3));
    CHECK(tally.count() == 4 * 6 * k * k);
  }
}

TEST_CASE("scaling and additivity") {
  const ModelConfig cfg = ModelConfig::preset("karma");
  AuditOptions two;
  two.batch = 2;
  const CostReport a = audit(cfg, 128, 128), b = audit(cfg, 256, 256), c = audit(cfg, 128, 128, two);
  for (std::size_t i = 0; i < a.modules.size(); ++i) {
    if (a.modules[i].name.rfind("backbone", 0) == 0) CHECK(b.flops(b.modules[i]) == 4 * a.flops(a.modules[i]));
    CHECK(c.flops(c.modules[i]) == 2 * a.flops(a.modules[i]));
  }
  CHECK(c.flops_total == 2 * a.flops_total);
  CHECK(b.flops_total == 4 * a.flops_total);
  std::uint64_t sum = 0;
  for (const auto& m : a.modules) sum += a.flops(m);
  CHECK(sum == a.flops_total);

  AuditOptions mac2;
  mac2.flops_per_mac = 2;
  const CostReport d = audit(cfg, 128, 128, mac2);
  CHECK(d.flops_total - a.flops_total == a.macs_total);
  CHECK_THROWS_AS(audit(cfg, 100, 128), ArgumentError);
}

TEST_CASE("variant ordering") {
  for (std::size_t res : {64, 256, 512, 1024}) {
    const auto f = audit(ModelConfig::preset("flash"), res, res);
    const auto k = audit(ModelConfig::preset("karma"), res, res);
    const auto h = audit(ModelConfig::preset("high"), res, res);
    CHECK(f.params_total < k.params_total);
    CHECK(k.params_total < h.params_total);
    CHECK(f.flops_total < k.flops_total);
    CHECK(k.flops_total < h.flops_total);
  }
}

TEST_CASE("reproduces reported magnitudes") {
  CHECK(audit(ModelConfig::preset("karma"), 256, 256).mparams() == doctest::Approx(0.959).epsilon(0.10));
  CHECK(audit(ModelConfig::preset("flash"), 256, 256).mparams() == doctest::Approx(0.505).epsilon(0.10));
  CHECK(audit(ModelConfig::preset("high"), 256, 256).mparams() == doctest::Approx(9.58).epsilon(0.10));
  const auto k256 = audit(ModelConfig::preset("karma"), 256, 256);
  const auto k512 = audit(ModelConfig::preset("karma"), 512, 512);
  CHECK(k256.gflops() == doctest::Approx(0.264).epsilon(0.15));
  const double ratio = static_cast<double>(k512.flops_total) / static_cast<double>(k256.flops_total);
  CHECK(ratio >= 3.6);
  CHECK(ratio <= 4.2);
}

TEST_CASE("activation trace") {
  ActivationTrace one;
  one.add(4 * 6 * 6, {-1});
  CHECK(one.peak_elems() == 144);

  ActivationTrace chain;
  int a = chain.add(10, {-1});
  int b = chain.add(20, {a});
  chain.add(5, {b});
  CHECK(chain.peak_elems() == 30);

  ActivationTrace kept;
  a = kept.add(10, {-1}, true);
  b = kept.add(20, {a});
  kept.add(5, {b});
  kept.add(1, {});
  CHECK(kept.peak_elems() == 35);

  const ModelConfig cfg = ModelConfig::preset("karma");
  CHECK(estimate_activation_memory(cfg, 512, 512) == 4 * estimate_activation_memory(cfg, 256, 256));
  CHECK(estimate_activation_memory(cfg, 256, 256, 8) == 2 * estimate_activation_memory(cfg, 256, 256, 4));
}

TEST_CASE("report output") {
  const auto r = audit(ModelConfig::preset("karma"), 256, 256);
  const std::string kv = r.key_values();
  CHECK(kv.find("params_total=" + std::to_string(r.params_total)) != std::string::npos);
  CHECK(kv.find("params.kan=") != std::string::npos);
  const std::string t = r.text();
  CHECK(t.find("1 MAC = 1 FLOP") != std::string::npos);
  CHECK(t.find("backbone.stage5") != std::string::npos);
}
