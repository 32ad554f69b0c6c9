#include "karma/losses.hpp"

#include <algorithm>
#include <cmath>

#include "karma/error.hpp"

namespace karma {

namespace {

void check_targets(const Tensor& logits, std::span<const std::uint8_t> labels, std::size_t nweights) {
  if (logits.rank() != 4) throw DimensionError("loss expects logits [B x K x H x W]");
  const std::size_t k = logits.dim(1);
  if (labels.size() != logits.dim(0) * logits.dim(2) * logits.dim(3)) {
    throw DimensionError("label count " + std::to_string(labels.size()) + " does not match logits " +
                         shape_str(logits.shape()));
  }
  if (nweights != 0 && nweights != k) {
    throw DimensionError("expected " + std::to_string(k) + " class weights, got " + std::to_string(nweights));
  }
  for (auto l : labels)
    if (l >= k) throw ArgumentError("label " + std::to_string(l) + " out of range for " + std::to_string(k) + " classes");
  for (double v : logits.data())
    if (!std::isfinite(v)) throw NumericError("non-finite logits");
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

ClassWeights class_weights_from_frequencies(const std::vector<double>& f) {
  if (f.empty()) throw ArgumentError("class_weights needs at least one class");
  ClassWeights cw;
  cw.frequencies = f;
  cw.weights.assign(f.size(), 0.0);
  std::vector<double> present;
  for (double v : f) {
    if (v < 0.0) throw ArgumentError("negative class frequency");
    if (v > 0.0) present.push_back(v);
  }
  if (present.empty()) throw ArgumentError("class_weights: no labelled pixels");
  const double med = median(present);
  double wmax = 0.0;
  for (std::size_t k = 0; k < f.size(); ++k) {
    if (f[k] > 0.0) {
      cw.weights[k] = med / f[k];
      wmax = std::max(wmax, cw.weights[k]);
    } else {
      cw.absent.push_back(k);
    }
  }
  for (auto k : cw.absent) cw.weights[k] = wmax;
  return cw;
}

ClassWeights class_weights(std::span<const std::uint8_t> labels, std::size_t num_classes) {
  if (labels.empty()) throw ArgumentError("class_weights: no labelled pixels");
  std::vector<double> counts(num_classes, 0.0);
  for (auto l : labels) {
    if (l >= num_classes) throw ArgumentError("label out of range in class_weights");
    counts[l] += 1.0;
  }
  for (auto& c : counts) c /= static_cast<double>(labels.size());
  return class_weights_from_frequencies(counts);
}

Tensor one_hot(std::span<const std::uint8_t> labels, const Shape& s, const std::vector<double>& scale) {
  const std::size_t b = s[0], k = s[1], hw = s[2] * s[3];
  std::vector<double> m(b * k * hw, 0.0);
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t i = 0; i < hw; ++i) {
      const std::size_t c = labels[n * hw + i];
      m[(n * k + c) * hw + i] = scale.empty() ? 1.0 : scale[c];
    }
  return Tensor(s, std::move(m));
}

Tensor weighted_ce(const Tensor& logits, std::span<const std::uint8_t> labels,
                   const std::vector<double>& weights) {
  check_targets(logits, labels, weights.size());
  const double n = static_cast<double>(labels.size());
  const Tensor mask = one_hot(labels, logits.shape(), weights);
  return scale(sum(mul(log_softmax(logits, 1), mask)), -1.0 / n);
}

Tensor focal_loss(const Tensor& logits, std::span<const std::uint8_t> labels,
                  const std::vector<double>& weights, double gamma) {
  check_targets(logits, labels, weights.size());
  const double n = static_cast<double>(labels.size());
  const Tensor mask = one_hot(labels, logits.shape(), weights);
  const Tensor p = softmax(logits, 1);
  const Tensor modulation = pow(add_scalar(scale(p, -1.0), 1.0), gamma);
  return scale(sum(mul(mul(modulation, log_softmax(logits, 1)), mask)), -1.0 / n);
}

Tensor dice_loss(const Tensor& logits, std::span<const std::uint8_t> labels, double eps) {
  check_targets(logits, labels, 0);
  const Tensor m = one_hot(labels, logits.shape(), {});
  const Tensor p = softmax(logits, 1);
  const Tensor inter = sum(mul(p, m));
  const Tensor denom = add_scalar(sum(p), static_cast<double>(labels.size()) + eps);
  return add_scalar(scale(div(add_scalar(scale(inter, 2.0), eps), denom), -1.0), 1.0);
}

Tensor smoothness_reg(const std::vector<KanLinear*>& layers) {
  Tensor acc = Tensor::scalar(0.0);
  for (const KanLinear* k : layers) {
    const std::size_t nb = k->grid.num_basis();
    if (nb < 3) continue;
    Tensor c = k->spline_coefficients();
    c = reshape(c, {c.numel() / nb, nb});
    std::vector<double> d(nb * (nb - 2), 0.0);
    for (std::size_t j = 0; j + 2 < nb; ++j) {
      d[j * (nb - 2) + j] = 1.0;
      d[(j + 1) * (nb - 2) + j] = -2.0;
      d[(j + 2) * (nb - 2) + j] = 1.0;
    }
    acc = add(acc, sum(square(matmul(c, Tensor({nb, nb - 2}, std::move(d))))));
  }
  return acc;
}

Tensor sparsity_reg(const std::vector<ParamRef>& params, bool include_bias) {
  Tensor acc = Tensor::scalar(0.0);
  for (const auto& p : params) {
    if (p.kind == ParamKind::weight || (include_bias && p.kind == ParamKind::bias)) {
      acc = add(acc, sum(abs(p.value)));
    }
  }
  return acc;
}

LossParts total_loss(const Tensor& logits, std::span<const std::uint8_t> labels, KarmaNet& model,
                     const std::vector<double>& weights, const LossConfig& cfg) {
  if (cfg.alpha < 0 || cfg.beta < 0 || cfg.gamma < 0 || cfg.lambda1 < 0 || cfg.lambda2 < 0 || cfg.dice_eps < 0)
    throw ArgumentError("loss weights must be non-negative");
  LossParts parts;
  const Tensor ce = cfg.focal ? focal_loss(logits, labels, weights, cfg.focal_gamma)
                              : weighted_ce(logits, labels, weights);
  const Tensor dice = dice_loss(logits, labels, cfg.dice_eps);
  Tensor total = add(scale(ce, cfg.alpha), scale(dice, cfg.beta));
  parts.ce = ce.item();
  parts.dice = dice.item();
  if (cfg.gamma > 0.0 && (cfg.lambda1 > 0.0 || cfg.lambda2 > 0.0)) {
    const Tensor smooth = smoothness_reg(model.kan_linears());
    const Tensor sparse = sparsity_reg(model.parameters(), cfg.l1_include_bias);
    parts.smooth = smooth.item();
    parts.sparsity = sparse.item();
    const Tensor reg = add(scale(smooth, cfg.lambda1), scale(sparse, cfg.lambda2));
    total = add(total, scale(reg, cfg.gamma));
  }
  parts.total = total;
  return parts;
}

}  // namespace karma
