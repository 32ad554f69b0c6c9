#include "karma/gradsuite.hpp"

#include <functional>

#include "karma/backbone.hpp"
#include "karma/error.hpp"
#include "karma/losses.hpp"
#include "karma/model.hpp"
#include "karma/ops.hpp"
#include "karma/spline.hpp"

namespace karma {

namespace {

using Fn = std::function<Tensor(const std::vector<Tensor>&)>;

class Suite {
 public:
  explicit Suite(std::string module) : module_(std::move(module)) {}

  void check(const std::string& name, const Fn& fn, std::vector<Tensor> inputs, double tol = 1e-5,
             const GradCheckOptions& opt = {}) {
    out.push_back({module_, name, tol, gradcheck(fn, std::move(inputs), opt)});
  }

  std::vector<GradSuiteEntry> out;

 private:
  std::string module_;
};

Tensor rnd(const Shape& s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  return random_tensor(s, seed, lo, hi);
}

std::vector<std::uint8_t> labels(std::size_t n, std::size_t k, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::uint8_t> l(n);
  for (auto& v : l) v = static_cast<std::uint8_t>(rng.below(k));
  return l;
}

void tensor_suite(Suite& s) {
  s.check("matmul", [](const auto& in) { return matmul(in[0], in[1]); }, {rnd({3, 4}, 1), rnd({4, 2}, 2)});
  s.check("transpose", [](const auto& in) { return transpose(in[0]); }, {rnd({3, 4}, 3)});
  s.check("conv2d standard",
          [](const auto& in) { return conv2d(in[0], in[1], in[2], {ConvMode::standard, 1, {}}); },
          {rnd({2, 3, 5, 5}, 4), rnd({4, 3, 3, 3}, 5), rnd({4}, 6)});
  s.check("conv2d stride 2",
          [](const auto& in) { return conv2d(in[0], in[1], in[2], {ConvMode::standard, 2, {}}); },
          {rnd({1, 2, 6, 6}, 7), rnd({3, 2, 5, 5}, 8), rnd({3}, 9)});
  s.check("conv2d depthwise",
          [](const auto& in) { return conv2d(in[0], in[1], in[2], {ConvMode::depthwise, 1, {}}); },
          {rnd({2, 3, 5, 5}, 10), rnd({3, 1, 3, 3}, 11), rnd({3}, 12)});
  s.check("conv2d depthwise stride 2",
          [](const auto& in) { return conv2d(in[0], in[1], Tensor(), {ConvMode::depthwise, 2, {}}); },
          {rnd({1, 2, 6, 6}, 13), rnd({2, 1, 5, 5}, 14)});
  s.check("conv2d pointwise",
          [](const auto& in) { return conv2d(in[0], in[1], in[2], {ConvMode::pointwise, 1, {}}); },
          {rnd({2, 3, 4, 4}, 15), rnd({5, 3, 1, 1}, 16), rnd({5}, 17)});
  s.check("maxpool2d 2x2", [](const auto& in) { return maxpool2d(in[0]); }, {rnd({2, 2, 4, 6}, 18)});
  s.check("maxpool2d 3x3 same", [](const auto& in) { return maxpool2d(in[0], 3, 1, 1); }, {rnd({1, 2, 5, 5}, 19)});
  s.check("upsample2d", [](const auto& in) { return upsample2d(in[0], 4); }, {rnd({1, 2, 2, 3}, 20)});
  s.check("softmax", [](const auto& in) { return softmax(in[0], 1); }, {rnd({2, 4, 3}, 21, -3, 3)});
  s.check("log_softmax", [](const auto& in) { return log_softmax(in[0], 1); }, {rnd({2, 4, 3}, 22, -3, 3)});
  s.check("layer_norm", [](const auto& in) { return layer_norm(in[0], in[1], in[2]); },
          {rnd({3, 5}, 23), rnd({5}, 24, 0.5, 1.5), rnd({5}, 25)});
  s.check("batch_norm2d train",
          [](const auto& in) {
            BatchNormState st(3);
            return batch_norm2d(in[0], in[1], in[2], st, true);
          },
          {rnd({2, 3, 3, 3}, 26), rnd({3}, 27, 0.5, 1.5), rnd({3}, 28)});
  s.check("batch_norm2d eval",
          [](const auto& in) {
            BatchNormState st(3);
            st.running_mean = {0.1, -0.2, 0.3};
            st.running_var = {0.5, 1.5, 2.0};
            return batch_norm2d(in[0], in[1], in[2], st, false);
          },
          {rnd({2, 3, 2, 2}, 29), rnd({3}, 30), rnd({3}, 31)});
  s.check("silu", [](const auto& in) { return silu(in[0]); }, {rnd({10}, 32, -4, 4)});
  s.check("relu", [](const auto& in) { return relu(in[0]); }, {rnd({10}, 33, -4, 4)});
  s.check("exp", [](const auto& in) { return exp(in[0]); }, {rnd({6}, 34)});
  s.check("abs", [](const auto& in) { return abs(in[0]); }, {rnd({6}, 35)});
  s.check("square", [](const auto& in) { return square(in[0]); }, {rnd({6}, 36)});
  s.check("pow", [](const auto& in) { return pow(in[0], 1.7); }, {rnd({6}, 37, 0.2, 2.0)});
  s.check("add", [](const auto& in) { return add(in[0], in[1]); }, {rnd({2, 3}, 38), rnd({2, 3}, 39)});
  s.check("sub", [](const auto& in) { return sub(in[0], in[1]); }, {rnd({2, 3}, 40), rnd({2, 3}, 41)});
  s.check("mul", [](const auto& in) { return mul(in[0], in[1]); }, {rnd({2, 3}, 42), rnd({2, 3}, 43)});
  s.check("div", [](const auto& in) { return div(in[0], in[1]); }, {rnd({2, 3}, 44), rnd({2, 3}, 45, 0.5, 2)});
  s.check("add_scalar", [](const auto& in) { return add_scalar(in[0], 0.3); }, {rnd({4}, 46)});
  s.check("scale", [](const auto& in) { return scale(in[0], -1.7); }, {rnd({4}, 47)});
  s.check("scale_by", [](const auto& in) { return scale_by(in[0], in[1]); }, {rnd({2, 3}, 48), rnd({1}, 49)});
  s.check("mul_lastdim", [](const auto& in) { return mul_lastdim(in[0], in[1]); }, {rnd({3, 4}, 50), rnd({4}, 51)});
  s.check("add_lastdim", [](const auto& in) { return add_lastdim(in[0], in[1]); }, {rnd({3, 4}, 52), rnd({4}, 53)});
  s.check("sum", [](const auto& in) { return sum(in[0]); }, {rnd({3, 4}, 54)});
  s.check("mean", [](const auto& in) { return mean(in[0]); }, {rnd({3, 4}, 55)});
  s.check("sum_axis", [](const auto& in) { return sum_axis(in[0], 1); }, {rnd({2, 3, 4}, 56)});
  s.check("reshape", [](const auto& in) { return reshape(in[0], {4, 6}); }, {rnd({2, 3, 4}, 57)});
  s.check("permute", [](const auto& in) { return permute(in[0], {2, 0, 1}); }, {rnd({2, 3, 4}, 58)});
  s.check("concat", [](const auto& in) { return concat({in[0], in[1]}, 1); }, {rnd({2, 2, 3}, 59), rnd({2, 1, 3}, 60)});
}

void spline_suite(Suite& s) {
  for (std::size_t order : {1, 2, 3}) {
    const SplineGrid g = make_grid(5, order, -1.0, 1.0);
    s.check("bspline_basis order " + std::to_string(order), [g](const auto& in) { return bspline_basis(in[0], g); },
            {rnd({3, 4}, 70 + order, -0.98, 0.98)});
  }
}

void kan_suite(Suite& s) {
  for (bool shared : {true, false}) {
    Rng rng(80);
    KanLinearOptions o;
    o.in = 5;
    o.out = 4;
    o.rank = 3;
    o.spline_rank = 2;
    o.share_splines = shared;
    auto k = std::make_shared<KanLinear>(o, rng);
    const std::string tag = shared ? " shared" : " unshared";
    s.check("KanLinear input" + tag, [k](const auto& in) { return k->forward(in[0], RunContext{}); },
            {rnd({6, 5}, 81, -0.9, 0.9)});
    const Tensor x = rnd({6, 5}, 82, -0.9, 0.9);
    s.check("KanLinear parameters" + tag, [k, x](const auto&) { return k->forward(x, RunContext{}); },
            {k->base_u, k->base_v, k->base_bias, k->spline_u, k->spline_v, k->scale_base, k->scale_spline});
  }
  Rng rng(83);
  auto block = std::make_shared<KanBlock>(6, 6, RankConfig{3, 2}, true, GridConfig{}, KanInit::random, rng);
  s.check("KanBlock tokens", [block](const auto& in) { return block->forward(in[0], 2, 2, RunContext{true, 0}); },
          {rnd({2, 4, 6}, 84)});
  s.check("patch_embed / unpatchify",
          [](const auto& in) { return unpatchify(mul(patch_embed(in[0]), patch_embed(in[0])), 2, 3); },
          {rnd({2, 4, 2, 3}, 85)});
}

void backbone_suite(Suite& s) {
  Rng rng(90);
  auto inc = std::make_shared<InceptionSepConv>(3, 8, 2, rng);
  s.check("InceptionSepConv stride 2", [inc](const auto& in) { return inc->forward(in[0], RunContext{true, 0}); },
          {rnd({2, 3, 8, 8}, 91)});
  auto inc1 = std::make_shared<InceptionSepConv>(4, 6, 1, rng);
  s.check("InceptionSepConv stride 1", [inc1](const auto& in) { return inc1->forward(in[0], RunContext{true, 0}); },
          {rnd({2, 4, 6, 6}, 92)});
  auto dw = std::make_shared<DwSepConv>(3, 5, 3, rng);
  s.check("DwSepConv", [dw](const auto& in) { return dw->forward(in[0]); }, {rnd({1, 3, 5, 5}, 93)});
}

void loss_suite(Suite& s) {
  const auto lab = labels(2 * 9, 3, 100);
  const std::vector<double> w{0.5, 1.5, 2.0};
  s.check("weighted_ce", [lab, w](const auto& in) { return weighted_ce(in[0], lab, w); }, {rnd({2, 3, 3, 3}, 101, -2, 2)});
  s.check("focal_loss", [lab, w](const auto& in) { return focal_loss(in[0], lab, w, 2.0); },
          {rnd({2, 3, 3, 3}, 102, -2, 2)});
  s.check("dice_loss", [lab](const auto& in) { return dice_loss(in[0], lab, 1e-6); }, {rnd({2, 3, 3, 3}, 103, -2, 2)});
  Rng rng(104);
  KanLinearOptions o;
  o.in = 4;
  o.out = 3;
  o.rank = 2;
  o.spline_rank = 2;
  auto k = std::make_shared<KanLinear>(o, rng);
  s.check("smoothness_reg", [k](const auto&) { return smoothness_reg({k.get()}); }, {k->spline_u, k->spline_v});
  s.check("sparsity_reg",
          [](const auto& in) {
            return sparsity_reg({{"a", in[0], ParamKind::weight}, {"b", in[1], ParamKind::bias}}, true);
          },
          {rnd({5}, 105), rnd({3}, 106)});
}

void model_suite(Suite& s, std::uint64_t seed) {
  ModelConfig cfg = ModelConfig::preset("karma", 3);
  auto net = std::make_shared<KarmaNet>(cfg);
  const Tensor x = rnd({2, 3, 64, 64}, 110, 0.0, 1.0);
  const auto lab = labels(2 * 64 * 64, 3, 111);
  const std::vector<double> w{0.7, 1.1, 1.6};
  std::vector<Tensor> probe;
  for (const auto& p : net->parameters()) {
    for (const char* name :
         {"backbone.stage1.b1a.dw.weight", "backbone.stage1.b3.weight", "backbone.stage2.n2a.gamma",
          "backbone.stage3.b2b.pw.weight", "backbone.stage4.b1b.pw.bias", "backbone.stage5.b3.weight",
          "kan.norm.gamma", "kan.layer.fc1.base_u", "kan.layer.fc1.spline_v", "kan.layer.fc2.spline_u",
          "kan.layer.fc2.scale_spline", "kan.layer.dw2.weight", "p5_proj.weight", "lateral3.pw.weight",
          "head2.weight", "head5.bias"}) {
      if (p.name == name) probe.push_back(p.value);
    }
  }
  if (probe.size() != 16) throw ArgumentError("gradient suite: parameter names changed");
  // ReLU and max-pool switching points lie within 1e-5 of some probes at this
  // size, so the network-level stencil is narrower than the op-level one.
  GradCheckOptions opt;
  opt.samples_per_input = 1;
  opt.step = 1e-6;
  opt.seed = seed;
  s.check("KARMA end-to-end total loss (64x64, K=3)",
          [net, x, lab, w](const auto&) {
            return total_loss(net->forward(x, RunContext{true, 0}), lab, *net, w, LossConfig{}).total;
          },
          probe, 1e-4, opt);
}

}  // namespace

std::vector<std::string> gradient_suite_modules() { return {"tensor", "spline", "kan", "backbone", "losses", "model"}; }

std::vector<GradSuiteEntry> run_gradient_suite(const std::string& module) {
  const std::vector<std::pair<std::string, void (*)(Suite&)>> all = {
      {"tensor", tensor_suite}, {"spline", spline_suite}, {"kan", kan_suite},
      {"backbone", backbone_suite}, {"losses", loss_suite}, {"model", [](Suite& s) { model_suite(s, 7); }}};
  std::vector<GradSuiteEntry> out;
  bool found = false;
  for (const auto& [name, fn] : all) {
    if (module != "all" && module != name) continue;
    found = true;
    Suite s(name);
    fn(s);
    out.insert(out.end(), s.out.begin(), s.out.end());
  }
  if (!found) throw ArgumentError("unknown gradcheck module '" + module + "' (valid: all, tensor, spline, kan, backbone, losses, model)");
  return out;
}

}  // namespace karma
