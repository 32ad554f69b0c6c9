#include "karma/optim.hpp"

#include <cmath>
#include <numbers>

#include "karma/error.hpp"

namespace karma {

AdamW::AdamW(std::vector<ParamRef> params, const AdamWConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
  if (!(cfg.lr >= 0.0) || !(cfg.eps > 0.0) || cfg.weight_decay < 0.0 || !(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0) ||
      !(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0)) {
    throw ArgumentError("invalid AdamW hyper-parameters");
  }
  for (const auto& p : params_) {
    m_.emplace_back(p.value.numel(), 0.0);
    v_.emplace_back(p.value.numel(), 0.0);
  }
}

void AdamW::step(double lr) {
  for (const auto& p : params_) {
    if (!p.value.has_grad()) continue;
    for (double g : p.value.grad())
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter '" + p.name + "'");
  }
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& w = params_[i].value;
    const bool has = w.has_grad();
    const std::span<const double> grad = has ? w.grad() : std::span<const double>{};
    auto data = w.mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < data.size(); ++j) {
      const double g = has ? grad[j] : 0.0;
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
      data[j] -= lr * cfg_.weight_decay * data[j];
      data[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg_.eps);
    }
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.value.zero_grad();
}

double cosine_lr(std::uint64_t step, std::uint64_t total, double lr0, double lr_min) {
  if (total == 0 || step >= total) return lr_min;
  const double t = static_cast<double>(step) / static_cast<double>(total);
  return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + std::cos(std::numbers::pi * t));
}

double cosine_lr_restarts(std::uint64_t step, std::uint64_t period, double lr0, double lr_min) {
  if (period == 0) throw ArgumentError("restart period must be positive");
  return cosine_lr(step % period, period, lr0, lr_min);
}

ClipResult clip_grad_norm(const std::vector<ParamRef>& params, double max_norm) {
  if (!(max_norm > 0.0)) throw ArgumentError("max_norm must be positive");
  double sq = 0.0;
  for (const auto& p : params)
    if (p.value.has_grad())
      for (double g : p.value.grad()) sq += g * g;
  ClipResult r;
  r.norm = std::sqrt(sq);
  if (r.norm > max_norm) {
    r.scale = max_norm / r.norm;
    for (auto p : params) {
      if (!p.value.has_grad()) continue;
      for (double& g : p.value.mutable_grad()) g *= r.scale;
    }
  }
  return r;
}

}  // namespace karma
