#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <numbers>

#include "doctest.h"
#include "karma/error.hpp"
#include "karma/train.hpp"

using namespace karma;
namespace fs = std::filesystem;

namespace {

Dataset small_dataset(std::size_t n, std::size_t hw = 32, std::size_t k = 4) {
  const SynthSpec spec = SynthSpec::imbalanced(k, hw, hw, 3);
  Dataset d;
  d.height = d.width = hw;
  d.num_classes = k;
  for (std::size_t i = 0; i < n; ++i) {
    Sample s = generate_sample(spec, i);
    d.images.push_back(s.image);
    d.masks.push_back(s.mask);
  }
  return d;
}

TrainConfig small_config(std::size_t epochs) {
  TrainConfig c;
  c.model = ModelConfig::preset("flash", 4);
  c.epochs = epochs;
  c.batch_size = 4;
  c.threads = 1;
  return c;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("karma_train_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("adamw") {
  Tensor p = Tensor({1}, {1.0}, true);
  std::vector<ParamRef> ps{{"p", p, ParamKind::weight}};
  AdamW zero(ps, AdamWConfig{0.1, 0.9, 0.999, 1e-8, 0.0});
  p.mutable_grad()[0] = 0.0;
  zero.step();
  CHECK(p[0] == 1.0);

  AdamW one(ps, AdamWConfig{0.1, 0.9, 0.999, 1e-8, 0.0});
  p.mutable_grad()[0] = 1.0;
  one.step();
  // m_hat = v_hat = 1 after bias correction
  CHECK(p[0] == doctest::Approx(1.0 - 0.1 / (1.0 + 1e-8)).epsilon(1e-15));

  p.mutable_data()[0] = 2.0;
  AdamW decay(ps, AdamWConfig{0.1, 0.9, 0.999, 1e-8, 0.01});
  p.mutable_grad()[0] = 0.0;
  decay.step();
  CHECK(p[0] == doctest::Approx(2.0 * (1.0 - 0.1 * 0.01)).epsilon(1e-15));

  p.mutable_grad()[0] = std::nan("");
  CHECK_THROWS_AS(decay.step(), NumericError);
  CHECK(p[0] == doctest::Approx(2.0 * (1.0 - 0.1 * 0.01)).epsilon(1e-15));
}

TEST_CASE("cosine schedule") {
  CHECK(cosine_lr(0, 100, 1e-3, 1e-6) == 1e-3);
  CHECK(cosine_lr(100, 100, 1e-3, 1e-6) == 1e-6);
  CHECK(cosine_lr(150, 100, 1e-3, 1e-6) == 1e-6);
  CHECK(cosine_lr(50, 100, 1e-3, 1e-6) == doctest::Approx((1e-3 + 1e-6) / 2).epsilon(1e-14));
  double prev = 1.0;
  for (std::uint64_t s = 0; s <= 1000; ++s) {
    const double v = cosine_lr(s, 1000, 1e-3, 1e-6);
    REQUIRE(v <= prev);
    prev = v;
  }
  CHECK(cosine_lr_restarts(10, 10, 1e-3, 1e-6) == 1e-3);
  CHECK(cosine_lr_restarts(15, 10, 1e-3, 1e-6) == cosine_lr(5, 10, 1e-3, 1e-6));
}

TEST_CASE("gradient clipping") {
  Tensor a = Tensor({2}, {0.0, 0.0}, true);
  a.mutable_grad()[0] = 3.0;
  a.mutable_grad()[1] = 4.0;
  std::vector<ParamRef> ps{{"a", a, ParamKind::weight}};
  const ClipResult r = clip_grad_norm(ps, 1.0);
  CHECK(r.norm == 5.0);
  CHECK(r.scale == 0.2);
  CHECK(a.grad()[0] == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(a.grad()[1] == doctest::Approx(0.8).epsilon(1e-15));
  const ClipResult again = clip_grad_norm(ps, 1.0);
  CHECK(std::fabs(again.norm - 1.0) < 1e-12);
  CHECK(again.scale == 1.0);

  Tensor b = Tensor({3}, {0, 0, 0}, true);
  for (int s = 0; s < 20; ++s) {
    Rng rng(s);
    for (auto& g : b.mutable_grad()) g = rng.uniform(-2, 2);
    std::vector<ParamRef> bs{{"b", b, ParamKind::weight}};
    const double max = rng.uniform(0.1, 3.0);
    const double before = clip_grad_norm(bs, 1e9).norm;
    clip_grad_norm(bs, max);
    CHECK(std::fabs(clip_grad_norm(bs, 1e9).norm - std::min(before, max)) < 1e-12);
  }
}

TEST_CASE("config parsing") {
  const auto kv = parse_ini("# top\n[train]\nepochs = 3  # inline\nlr=0.01\n\n[model]\nvariant = flash\nrank = 32\n");
  CHECK(kv.at("train.epochs") == "3");
  CHECK(kv.at("model.rank") == "32");
  TrainConfig c;
  apply_config(c, kv);
  CHECK(c.epochs == 3);
  CHECK(c.optim.lr == 0.01);
  CHECK(c.model.variant == "flash");
  CHECK(c.model.pre_kan_projection == std::optional<std::size_t>{256});
  CHECK(c.model.ranks.rank == 32);

  TrainConfig back;
  apply_config(back, parse_ini(to_ini(c)));
  CHECK(to_ini(back) == to_ini(c));

  try {
    apply_config(c, {{"train.epoch", "3"}});
    FAIL("expected an error");
  } catch (const ArgumentError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("unknown key 'train.epoch'") != std::string::npos);
    CHECK(msg.find("train.epochs") != std::string::npos);
  }
  CHECK_THROWS_AS(apply_config(c, {{"train.epochs", "three"}}), ArgumentError);
  CHECK_THROWS_AS(apply_config(c, {{"model.variant", "huge"}}), ArgumentError);
  CHECK_THROWS_AS(parse_ini("[train\n"), FormatError);
  CHECK_THROWS_AS(parse_ini("novalue\n"), FormatError);

  ::setenv("TIKAN_SEED", "77", 1);
  apply_env(c);
  ::unsetenv("TIKAN_SEED");
  CHECK(c.seed == 77);
  CHECK(c.model.seed == 77);

  SynthSpec spec;
  std::size_t count = 1;
  apply_synth_config(spec, count, {{"synth.count", "5"}, {"synth.num_classes", "3"}});
  CHECK(count == 5);
  CHECK(spec.kinds.size() == 2);
  CHECK_THROWS_AS(apply_synth_config(spec, count, {{"synth.colour", "red"}}), ArgumentError);
}

TEST_CASE("augmentation") {
  std::vector<double> img{1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::vector<std::uint8_t> m{1, 2, 3, 4, 5, 6, 7, 8, 9};
  auto i2 = img;
  auto m2 = m;
  augment(i2, m2, 1, 3, 3, false, 1);
  // counter-clockwise quarter turn
  CHECK(m2 == std::vector<std::uint8_t>{3, 6, 9, 2, 5, 8, 1, 4, 7});
  augment(i2, m2, 1, 3, 3, false, 3);
  CHECK(m2 == m);
  augment(i2, m2, 1, 3, 3, true, 0);
  CHECK(m2 == std::vector<std::uint8_t>{3, 2, 1, 6, 5, 4, 9, 8, 7});
  augment(i2, m2, 1, 3, 3, true, 0);
  CHECK(i2 == img);
  std::vector<double> wide(6);
  std::vector<std::uint8_t> wm(6);
  CHECK_THROWS_AS(augment(wide, wm, 1, 2, 3, false, 1), ArgumentError);
}

TEST_CASE("split") {
  const Split s = split_indices(10, true);
  CHECK(s.val == std::vector<std::size_t>{4, 9});
  CHECK(s.train.size() == 8);
  CHECK(split_indices(3, true).val == split_indices(3, true).train);
}

TEST_CASE("training smoke run and checkpoint") {
  const Dataset d = small_dataset(8);
  const fs::path out = scratch("smoke");
  const TrainResult r = train(small_config(2), d, out);
  REQUIRE(r.epochs.size() == 2);
  CHECK(fs::exists(out / "best" / "manifest.txt"));
  CHECK(fs::exists(out / "train_log.txt"));
  CHECK(r.log.front().rfind("event=start", 0) == 0);

  Checkpoint ck = load_checkpoint(r.checkpoint);
  CHECK(ck.epoch == r.best_epoch);
  const auto split = split_indices(d.size(), true);
  const EvalResult ev = evaluate(*ck.model, d, split.val);
  CHECK(ev.metrics.miou_with_bg == r.best_val_miou);
  CHECK(ev.cm.counts == evaluate(*load_checkpoint(r.checkpoint).model, d, split.val).cm.counts);

  // bit-exact parameters after a second round trip
  const fs::path again = scratch("again");
  save_checkpoint(again, *ck.model, ck.config, ck.epoch, ck.val_miou);
  Checkpoint ck2 = load_checkpoint(again);
  auto a = ck.model->parameters(), b = ck2.model->parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i].name == b[i].name);
    REQUIRE(std::equal(a[i].value.data().begin(), a[i].value.data().end(), b[i].value.data().begin()));
  }

  CHECK_THROWS_AS(train(small_config(1), scratch("missing"), scratch("x")), FormatError);
  CHECK_THROWS_AS(load_checkpoint(scratch("none")), FormatError);
}

TEST_CASE("training reduces the loss and is deterministic") {
  const Dataset d = small_dataset(4);
  TrainConfig c = small_config(6);
  c.val_split = false;
  const TrainResult a = train(c, d, scratch("det_a"));
  const TrainResult b = train(c, d, scratch("det_b"));
  CHECK(a.epochs.back().loss < a.epochs.front().loss);
  REQUIRE(a.log.size() == b.log.size());
  for (std::size_t i = 0; i + 1 < a.log.size(); ++i) CHECK(a.log[i] == b.log[i]);
  c.seed = 2;
  c.model.seed = 2;
  CHECK(train(c, d, scratch("det_c")).log[1] != a.log[1]);
}
