// Acceptance report: one PASS/FAIL line per criterion.
//
//   acceptance [--only 1,2,...] [--expect-fail 3,...]
//
// Exit status is nonzero when any criterion fails, except those listed with
// --expect-fail (still reported as FAIL).
#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <set>
#include <sstream>

#include "karma/audit.hpp"
#include "karma/gradsuite.hpp"
#include "karma/linalg.hpp"
#include "karma/losses.hpp"
#include "karma/metrics.hpp"
#include "karma/spline.hpp"
#include "karma/train.hpp"

using namespace karma;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

bool within(double v, double target, double rel) { return std::fabs(v - target) <= rel * target; }

// 1. parameter counts
Outcome params_criterion() {
  Outcome o{true, ""};
  const std::pair<const char*, double> targets[] = {{"karma", 0.959}, {"flash", 0.505}, {"high", 9.58}};
  for (const auto& [variant, target] : targets) {
    const CostReport r = audit(ModelConfig::preset(variant), 256, 256);
    const bool ok = within(r.mparams(), target, 0.10);
    o.pass = o.pass && ok;
    o.detail += std::string(variant) + "=" + fmt("%.4fM", r.mparams()) + "(target " + fmt("%.3f", target) +
                fmt(", %+.1f%%) ", 100.0 * (r.mparams() / target - 1.0));
  }
  const CostReport k = audit(ModelConfig::preset("karma"), 256, 256);
  o.detail += "| karma breakdown:";
  for (const auto& m : k.modules) o.detail += " " + m.name + "=" + std::to_string(m.params);
  return o;
}

// 2. FLOPs
Outcome flops_criterion() {
  const CostReport a = audit(ModelConfig::preset("karma"), 256, 256);
  const CostReport b = audit(ModelConfig::preset("karma"), 512, 512);
  const double ratio = static_cast<double>(b.flops_total) / static_cast<double>(a.flops_total);
  const bool ok = within(a.gflops(), 0.264, 0.15) && ratio >= 3.6 && ratio <= 4.2;
  return {ok, "karma@256=" + fmt("%.4f", a.gflops()) + " GFLOPs (target 0.264 +-15%, 1 MAC = 1 FLOP) " +
                  "ratio512/256=" + fmt("%.3f", ratio) + " (in [3.6, 4.2])"};
}

// 3. memory scaling
Outcome memory_criterion() {
  const ModelConfig c = ModelConfig::preset("karma");
  const double m256 = static_cast<double>(estimate_activation_memory(c, 256, 256));
  const double m512 = static_cast<double>(estimate_activation_memory(c, 512, 512));
  const double m1024 = static_cast<double>(estimate_activation_memory(c, 1024, 1024));
  const double ratio = m1024 / m256;
  return {ratio >= 3.5 && ratio <= 4.0,
          "ratio1024/256=" + fmt("%.3f", ratio) + " (required [3.5, 4.0]); ratio1024/512=" + fmt("%.3f", m1024 / m512) +
              "; peak@256=" + fmt("%.2f MiB", m256 / 1048576.0) + "; every activation scales with H*W"};
}

// 4. gradient suite
Outcome gradient_criterion() {
  const auto entries = run_gradient_suite("all");
  double worst_op = 0, e2e = 0;
  std::string failed;
  for (const auto& e : entries) {
    if (e.module == "model") e2e = std::max(e2e, e.result.max_rel_error);
    else worst_op = std::max(worst_op, e.result.max_rel_error);
    if (!e.passed()) failed += " " + e.module + ":" + e.name;
  }
  return {failed.empty(), std::to_string(entries.size()) + " checks, worst op=" + fmt("%.2e", worst_op) +
                              " (<1e-5), end-to-end=" + fmt("%.2e", e2e) + " (<1e-4)" +
                              (failed.empty() ? "" : "; failed:" + failed)};
}

// 5. spline suite
Outcome spline_criterion() {
  double pu = 0;
  bool support = true;
  for (std::size_t g : {3, 5, 7})
    for (std::size_t order = 0; order <= 3; ++order) {
      const SplineGrid grid = make_grid(g, order, -1.0, 1.0);
      std::vector<double> v(grid.num_basis());
      for (int i = 0; i < 1000; ++i) {  // [lo, hi)
        const double x = -1.0 + 2.0 * i / 1000.0;
        bspline_eval(grid, x, v);
        double s = 0;
        for (double b : v) s += b;
        pu = std::max(pu, std::fabs(s - 1.0));
        for (std::size_t j = 0; j < v.size(); ++j) {
          const bool inside = x >= grid.knots[j] && x < grid.knots[j + order + 1];
          if (!inside && v[j] != 0.0) support = false;
        }
      }
    }
  const SplineGrid cubic = make_grid(5, 3, -1.0, 1.0);
  const double h = 1e-5;
  double jump = 0;
  std::vector<double> v(cubic.num_basis());
  auto f = [&](std::size_t j, double x) {
    bspline_eval(cubic, x, v);
    return v[j];
  };
  for (std::size_t j = 0; j < cubic.num_basis(); ++j)
    for (std::size_t k = 4; k + 4 < cubic.knots.size(); ++k) {
      const double t = cubic.knots[k];
      const double d1l = (3 * f(j, t) - 4 * f(j, t - h) + f(j, t - 2 * h)) / (2 * h);
      const double d1r = (-3 * f(j, t) + 4 * f(j, t + h) - f(j, t + 2 * h)) / (2 * h);
      const double d2l = (2 * f(j, t) - 5 * f(j, t - h) + 4 * f(j, t - 2 * h) - f(j, t - 3 * h)) / (h * h);
      const double d2r = (2 * f(j, t) - 5 * f(j, t + h) + 4 * f(j, t + 2 * h) - f(j, t + 3 * h)) / (h * h);
      jump = std::max({jump, std::fabs(d1l - d1r), std::fabs(d2l - d2r)});
    }
  return {pu < 1e-12 && support && jump < 1e-4, "partition-of-unity err=" + fmt("%.1e", pu) + " (<1e-12), local support " +
                                                    (support ? "exact" : "VIOLATED") + ", cubic C2 jump=" +
                                                    fmt("%.1e", jump) + " (<1e-4)"};
}

double frob(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

std::vector<double> product(const std::vector<double>& u, const std::vector<double>& v, std::size_t m, std::size_t r,
                            std::size_t n) {
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t k = 0; k < r; ++k)
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += u[i * r + k] * v[k * n + j];
  return out;
}

// 6. low-rank suite
Outcome lowrank_criterion() {
  // full-rank base path against a hand-written dense layer
  Rng rng(3);
  KanLinearOptions o;
  o.in = 6;
  o.out = 5;
  o.rank = 5;
  KanLinear k(o, rng);
  for (double& b : k.base_bias.mutable_data()) b = rng.uniform(-1, 1);
  const Tensor x = random_tensor({7, 6}, 4);
  const auto w = product({k.base_u.data().begin(), k.base_u.data().end()},
                         {k.base_v.data().begin(), k.base_v.data().end()}, 6, 5, 5);
  const Tensor y = k.base(x);
  double dense_err = 0;
  for (std::size_t n = 0; n < 7; ++n)
    for (std::size_t j = 0; j < 5; ++j) {
      double z = k.base_bias[j];
      for (std::size_t i = 0; i < 6; ++i) z += x[n * 6 + i] * w[i * 5 + j];
      dense_err = std::max(dense_err, std::fabs(y[n * 5 + j] - z / (1.0 + std::exp(-z))));
    }

  // Eckart-Young: truncated SVD beats random and perturbed competitors
  std::size_t losses = 0;
  for (std::uint64_t t = 0; t < 100; ++t) {
    const Tensor a = random_tensor({8, 8}, 100 + t);
    const std::vector<double> av(a.data().begin(), a.data().end());
    const std::size_t r = 1 + t % 7;
    const auto [u, v] = svd_init(a, r);
    const std::vector<double> uv(u.data().begin(), u.data().end()), vv(v.data().begin(), v.data().end());
    const double best = frob(av, product(uv, vv, 8, r, 8));
    Rng cr(hash64(9, t));
    for (int c = 0; c < 1000; ++c) {
      std::vector<double> cu(8 * r), cv(r * 8);
      if (c % 2 == 0) {
        for (auto& q : cu) q = cr.normal();
        for (auto& q : cv) q = cr.normal();
      } else {
        for (std::size_t i = 0; i < cu.size(); ++i) cu[i] = uv[i] + 0.05 * cr.normal();
        for (std::size_t i = 0; i < cv.size(); ++i) cv[i] = vv[i] + 0.05 * cr.normal();
      }
      if (frob(av, product(cu, cv, 8, r, 8)) < best) ++losses;
    }
  }

  // energy-based rank on diagonal matrices: diag(4,3,2,1) has cumulative
  // energies 16/30, 25/30, 29/30, 30/30
  const Tensor d4({4, 4}, {4, 0, 0, 0, 0, 3, 0, 0, 0, 0, 2, 0, 0, 0, 0, 1});
  const bool ranks = select_rank(d4, 0.5) == 1 && select_rank(d4, 16.0 / 30.0) == 1 && select_rank(d4, 0.8) == 2 &&
                     select_rank(d4, 0.95) == 3 && select_rank(d4, 0.99) == 4 &&
                     select_rank(Tensor({3, 3}, {5, 0, 0, 0, 0, 0, 0, 0, 0}), 0.95) == 1;
  return {dense_err < 1e-12 && losses == 0 && ranks,
          "full-rank vs dense err=" + fmt("%.1e", dense_err) + " (<1e-12), svd_init lost " + std::to_string(losses) +
              "/100000 competitor comparisons, select_rank " + (ranks ? "exact" : "MISMATCH")};
}

// 7. loss and metric oracles
Outcome oracle_criterion() {
  double ce_err = 0, dice_err = 0;
  for (std::size_t k : {2, 3})
    for (std::uint64_t t = 0; t < 50; ++t) {
      const Tensor logits = random_tensor({1, k, 4, 4}, 1000 * k + t, -3, 3);
      Rng rng(t);
      std::vector<std::uint8_t> lab(16);
      for (auto& l : lab) l = static_cast<std::uint8_t>(rng.below(k));
      std::vector<double> w(k);
      for (auto& q : w) q = rng.uniform(0.1, 3.0);
      double ce = 0, inter = 0, denom = 0;
      for (std::size_t i = 0; i < 16; ++i) {
        double z = 0;
        for (std::size_t c = 0; c < k; ++c) z += std::exp(logits[c * 16 + i]);
        for (std::size_t c = 0; c < k; ++c) {
          const double p = std::exp(logits[c * 16 + i]) / z, m = lab[i] == c ? 1.0 : 0.0;
          ce -= w[c] * m * std::log(p);
          inter += m * p;
          denom += m + p;
        }
      }
      ce /= 16.0;
      const double dice = 1.0 - (2 * inter + 1e-6) / (denom + 1e-6);
      ce_err = std::max(ce_err, std::fabs(weighted_ce(logits, lab, w).item() - ce));
      dice_err = std::max(dice_err, std::fabs(dice_loss(logits, lab, 1e-6).item() - dice));
    }

  std::size_t mismatches = 0;
  Rng rng(77);
  for (int t = 0; t < 200; ++t) {
    const std::size_t k = 2 + t % 8, n = 256;
    std::vector<std::uint8_t> truth(n), pred(n);
    for (std::size_t i = 0; i < n; ++i) {
      truth[i] = static_cast<std::uint8_t>(rng.below(k));
      pred[i] = rng.below(3) ? truth[i] : static_cast<std::uint8_t>(rng.below(k));
    }
    const SegMetrics m = compute_metrics(confusion(pred, truth, k));
    double sum_iou = 0, acc = 0;
    for (std::size_t c = 0; c < k; ++c) {
      std::uint64_t tp = 0, fp = 0, fn = 0;
      for (std::size_t i = 0; i < n; ++i) {
        tp += truth[i] == c && pred[i] == c;
        fp += truth[i] != c && pred[i] == c;
        fn += truth[i] == c && pred[i] != c;
      }
      const double iou = tp + fp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fp + fn) : 0.0;
      const double f1 = tp + fp + fn ? 2.0 * tp / static_cast<double>(2 * tp + fp + fn) : 0.0;
      if (m.per_class_iou[c] != iou || m.per_class_f1[c] != f1) ++mismatches;
      sum_iou += iou;
      acc += static_cast<double>(tp);
    }
    if (std::fabs(m.miou_with_bg - sum_iou / static_cast<double>(k)) > 1e-15 || m.pixel_acc != acc / n) ++mismatches;
  }

  const auto a = class_weights_from_frequencies({0.5, 0.25, 0.25});
  const auto b = class_weights_from_frequencies({0.2, 0.2, 0.01, 0.3, 0.29});
  const auto c = class_weights_from_frequencies({0.25, 0.25, 0.25, 0.25});
  const bool weights = a.weights == std::vector<double>{0.5, 1.0, 1.0} && std::fabs(b.weights[2] - 20.0) < 1e-12 &&
                       c.weights == std::vector<double>(4, 1.0);
  return {ce_err < 1e-12 && dice_err < 1e-12 && mismatches == 0 && weights,
          "ce err=" + fmt("%.1e", ce_err) + " dice err=" + fmt("%.1e", dice_err) + " (<1e-12), metric mismatches=" +
              std::to_string(mismatches) + "/200 masks, class weights " + (weights ? "exact" : "MISMATCH")};
}

// 9. efficiency ordering
Outcome ordering_criterion() {
  bool ok = true;
  for (std::size_t res : {64, 128, 256, 512, 1024}) {
    const auto f = audit(ModelConfig::preset("flash"), res, res);
    const auto k = audit(ModelConfig::preset("karma"), res, res);
    const auto h = audit(ModelConfig::preset("high"), res, res);
    ok = ok && f.params_total < k.params_total && k.params_total < h.params_total && f.flops_total < k.flops_total &&
         k.flops_total < h.flops_total;
  }
  std::size_t layers = 0, violations = 0;
  for (const char* v : {"flash", "karma", "high"}) {
    const ModelConfig cfg = ModelConfig::preset(v);
    std::size_t in = cfg.in_channels;
    for (std::size_t s = 0; s < 5; ++s) {
      const auto w = branch_widths(cfg.stage_channels[s]);
      const std::tuple<std::size_t, std::size_t, std::size_t> convs[] = {
          {in, w[0], 3}, {w[0], w[0], 3}, {in, w[1], 5}, {w[1], w[1], 5}};
      for (auto [ci, co, kk] : convs) {
        ++layers;
        const std::size_t dws = ci * kk * kk + ci * co + co, std_conv = ci * co * kk * kk + co;
        if (dws >= std_conv) ++violations;
      }
      in = cfg.stage_channels[s];
    }
  }
  return {ok && violations == 0, std::string("flash < karma < high in params and FLOPs at 64..1024: ") +
                                     (ok ? "yes" : "NO") + "; dwsep < standard in " +
                                     std::to_string(layers - violations) + "/" + std::to_string(layers) +
                                     " backbone layers"};
}

// 8 and 10 share the two training runs.
struct OverfitRuns {
  TrainResult a, b;
  fs::path dir;
};

OverfitRuns run_overfit() {
  OverfitRuns r;
  r.dir = fs::temp_directory_path() / "karma_acceptance";
  fs::remove_all(r.dir);
  SynthSpec spec = SynthSpec::imbalanced(4, 64, 64, 2024);
  Dataset d;
  d.height = d.width = 64;
  d.num_classes = 4;
  for (std::uint64_t i = 0; i < 8; ++i) {
    Sample s = generate_sample(spec, i);
    d.images.push_back(s.image);
    d.masks.push_back(s.mask);
  }
  TrainConfig cfg;
  cfg.model = ModelConfig::preset("flash", 4);
  cfg.epochs = 200;
  cfg.batch_size = 4;
  cfg.val_split = false;  // validation metrics are train-set metrics here
  cfg.augment_flip = cfg.augment_rotate = false;
  cfg.threads = 1;
  r.a = train(cfg, d, r.dir / "run_a");
  r.b = train(cfg, d, r.dir / "run_b");
  return r;
}

Outcome overfit_criterion(const OverfitRuns& r, double seconds) {
  double best = 0;
  std::size_t first = 0;
  for (const auto& e : r.a.epochs) {
    if (e.val.miou_wo_bg > best) best = e.val.miou_wo_bg;
    if (!first && e.val.miou_wo_bg > 0.90) first = e.epoch;
  }
  const auto& last = r.a.epochs.back();
  return {best > 0.90 && seconds < 600.0,
          "flash, 8 samples 64x64, K=4: train mIoU w/o bg final=" + fmt("%.4f", last.val.miou_wo_bg) + " best=" +
              fmt("%.4f", best) + (first ? " (first > 0.90 at epoch " + std::to_string(first) + ")" : "") +
              ", loss " + fmt("%.3f", r.a.epochs.front().loss) + " -> " + fmt("%.3f", last.loss)};
}

Outcome determinism_criterion(const OverfitRuns& r) {
  std::size_t diff = 0;
  // the final line names the run's own output directory
  const std::size_t n = std::min(r.a.log.size(), r.b.log.size());
  for (std::size_t i = 0; i + 1 < n; ++i) diff += r.a.log[i] != r.b.log[i];
  diff += r.a.log.size() != r.b.log.size();

  Checkpoint ck = load_checkpoint(r.a.checkpoint);
  const fs::path copy = r.dir / "roundtrip";
  save_checkpoint(copy, *ck.model, ck.config, ck.epoch, ck.val_miou);
  Checkpoint again = load_checkpoint(copy);
  auto p = ck.model->parameters(), q = again.model->parameters();
  std::size_t changed = p.size() == q.size() ? 0 : 1;
  std::size_t scalars = 0;
  for (std::size_t i = 0; i < std::min(p.size(), q.size()); ++i) {
    const auto a = p[i].value.data(), b = q[i].value.data();
    scalars += a.size();
    if (p[i].name != q[i].name || std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) != 0) ++changed;
  }
  return {diff == 0 && changed == 0, std::to_string(n) + " log lines, " + std::to_string(diff) +
                                         " differ between seeded single-thread runs; checkpoint round trip: " +
                                         std::to_string(p.size()) + " tensors / " + std::to_string(scalars) +
                                         " scalars, " + std::to_string(changed) + " changed"};
}

std::set<int> parse_set(const std::string& s) {
  std::set<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.insert(std::stoi(item));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria report"};
  std::string only, expect;
  app.add_option("--only", only, "comma-separated criteria to run");
  app.add_option("--expect-fail", expect, "criteria whose failure does not affect the exit status");
  CLI11_PARSE(app, argc, argv);
  const std::set<int> selected = parse_set(only), expected = parse_set(expect);
  auto want = [&](int c) { return selected.empty() || selected.count(c) > 0; };

  const char* titles[] = {"",
                          "parameter counts",
                          "FLOPs",
                          "memory scaling",
                          "gradient suite",
                          "spline suite",
                          "low-rank suite",
                          "loss/metric oracles",
                          "overfit smoke test",
                          "efficiency ordering",
                          "determinism"};
  const double budget[] = {0, 1, 1, 1, 300, 10, 60, 30, 600, 1, 600};
  int unexpected = 0;
  auto report = [&](int c, const Outcome& o, double seconds) {
    const bool in_time = seconds < budget[c];
    const bool pass = o.pass && in_time;
    std::printf("criterion %d %s: %s [%.2fs, limit %.0fs] %s\n", c, titles[c], pass ? "PASS" : "FAIL", seconds,
                budget[c], o.detail.c_str());
    std::fflush(stdout);
    if (!pass && !expected.count(c)) ++unexpected;
  };
  auto timed = [&](int c, const std::function<Outcome()>& fn) {
    if (!want(c)) return;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    report(c, o, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  };

  timed(1, params_criterion);
  timed(2, flops_criterion);
  timed(3, memory_criterion);
  timed(4, gradient_criterion);
  timed(5, spline_criterion);
  timed(6, lowrank_criterion);
  timed(7, oracle_criterion);
  if (want(8) || want(10)) {
    const auto t0 = std::chrono::steady_clock::now();
    try {
      const OverfitRuns runs = run_overfit();
      const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (want(8)) report(8, overfit_criterion(runs, runs.a.seconds), runs.a.seconds);
      timed(9, ordering_criterion);
      if (want(10)) report(10, determinism_criterion(runs), seconds);
    } catch (const std::exception& e) {
      if (want(8)) report(8, {false, std::string("exception: ") + e.what()}, 0);
      timed(9, ordering_criterion);
      if (want(10)) report(10, {false, std::string("exception: ") + e.what()}, 0);
    }
  } else {
    timed(9, ordering_criterion);
  }
  return unexpected == 0 ? 0 : 1;
}
