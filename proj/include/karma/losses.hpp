#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "karma/model.hpp"

namespace karma {

struct LossConfig {
  double alpha = 0.5;   // cross-entropy
  double beta = 0.3;    // dice
  double gamma = 0.2;   // regularisation
  double lambda1 = 0.1;   // smoothness
  double lambda2 = 0.01;  // sparsity
  double dice_eps = 1e-6;
  bool focal = false;  // replace cross-entropy with focal loss
  double focal_gamma = 2.0;
  bool l1_include_bias = false;
};

struct ClassWeights {
  std::vector<double> weights;
  std::vector<double> frequencies;
  std::vector<std::size_t> absent;  // classes with f = 0, given the max present weight
};

/// Median-frequency weights w_k = median(f) / f_k from label maps.
ClassWeights class_weights(std::span<const std::uint8_t> labels, std::size_t num_classes);
ClassWeights class_weights_from_frequencies(const std::vector<double>& frequencies);

/// logits [B x K x H x W]; labels B*H*W class indices. Mean over pixels.
Tensor weighted_ce(const Tensor& logits, std::span<const std::uint8_t> labels,
                   const std::vector<double>& weights);
Tensor focal_loss(const Tensor& logits, std::span<const std::uint8_t> labels,
                  const std::vector<double>& weights, double gamma);
/// Soft Dice over pixels and classes jointly.
Tensor dice_loss(const Tensor& logits, std::span<const std::uint8_t> labels, double eps);

/// Sum over KAN layers of ||second difference of spline coefficients||^2
/// along the basis axis.
Tensor smoothness_reg(const std::vector<KanLinear*>& layers);
/// L1 norm of weight parameters (optionally biases too).
Tensor sparsity_reg(const std::vector<ParamRef>& params, bool include_bias = false);

struct LossParts {
  Tensor total;
  double ce = 0.0, dice = 0.0, smooth = 0.0, sparsity = 0.0;
};

LossParts total_loss(const Tensor& logits, std::span<const std::uint8_t> labels, KarmaNet& model,
                     const std::vector<double>& weights, const LossConfig& cfg);

/// One-hot [B x K x H x W] mask scaled per class: out[b,k,h,w] = scale[k] * 1(label == k).
Tensor one_hot(std::span<const std::uint8_t> labels, const Shape& logits_shape,
               const std::vector<double>& scale);

}  // namespace karma
