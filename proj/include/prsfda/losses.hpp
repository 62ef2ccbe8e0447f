#pragma once

#include <span>
#include <vector>

#include "prsfda/tensor.hpp"
#include "prsfda/trainable.hpp"

namespace prsfda {

// Per-class weights for class-balanced cross-entropy, each in [0.1, 10].
struct ClassWeights {
  std::vector<double> w;
};

inline constexpr double kMinClassWeight = 0.1;
inline constexpr double kMaxClassWeight = 10.0;

// Median-frequency balancing: w_c = clamp(median(f) / max(f_c, 1e-8), 0.1, 10).
ClassWeights class_weights(std::span<const double> freqs);

// All losses take probabilities shaped [..., C] and average over pixels
// (every axis but the last). Gradients are with respect to the probabilities.

// mean of -log p_label
LossOutput pl_ce_loss(const Tensor& probs, const LabelMap& labels);
// mean of -w_label * log p_label
LossOutput cbce_loss(const Tensor& probs, const LabelMap& labels, const ClassWeights& weights);
// mean of -log(1 - p_comp)
LossOutput nl_loss(const Tensor& probs, const LabelMap& comp_labels);
// mean of -1/2 sum_c p_c^2
LossOutput msl_loss(const Tensor& probs);
// mean of -sum_c p_c log p_c / log C
LossOutput entropy_loss(const Tensor& probs);

// mean over ALL pixels of (1 - M) * PL + lambda * M * NL, where M = 1 marks
// an invalid pixel. Throws kMask when M is not binary.
LossOutput plnl_loss(const Tensor& probs, const LabelMap& pseudo_labels, const LabelMap& comp_labels,
                     const Mask& invalid_mask, double lambda_nl);

}  // namespace prsfda
