#pragma once

#include <cstdint>
#include <vector>

#include "karma/nn.hpp"

namespace karma {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;
};

/// Adam with decoupled weight decay:
///   p <- p - lr * wd * p - lr * m_hat / (sqrt(v_hat) + eps)
class AdamW {
 public:
  AdamW(std::vector<ParamRef> params, const AdamWConfig& cfg = {});

  /// Applies one update with learning rate `lr`. Parameters without a grad
  /// slot are treated as having zero gradient. Throws NumericError on a
  /// non-finite gradient, naming the parameter; nothing is updated then.
  void step(double lr);
  void step() { step(cfg_.lr); }
  void zero_grad();

  std::uint64_t steps() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }
  const std::vector<double>& first_moment(std::size_t i) const { return m_.at(i); }
  const std::vector<double>& second_moment(std::size_t i) const { return v_.at(i); }

 private:
  std::vector<ParamRef> params_;
  AdamWConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t t_ = 0;
};

/// lr_min + (lr0 - lr_min) (1 + cos(pi step / total)) / 2, held at lr_min
/// past `total`.
double cosine_lr(std::uint64_t step, std::uint64_t total, double lr0, double lr_min);

/// Cosine annealing restarted every `period` steps.
double cosine_lr_restarts(std::uint64_t step, std::uint64_t period, double lr0, double lr_min);

struct ClipResult {
  double norm = 0.0;   // global L2 norm before clipping
  double scale = 1.0;  // factor applied to every grad
};

/// Rescales all grads so their global L2 norm is at most max_norm.
ClipResult clip_grad_norm(const std::vector<ParamRef>& params, double max_norm);

}  // namespace karma
