#include "prsfda/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "prsfda/error.hpp"
#include "prsfda/numerics.hpp"

namespace prsfda {

ClassWeights class_weights(std::span<const double> freqs) {
  if (freqs.empty()) throw Error(ErrorKind::kInvalidInput, "class frequency vector is empty");
  double total = 0.0;
  for (double f : freqs) {
    if (!(f >= 0.0) || !std::isfinite(f)) {
      throw Error(ErrorKind::kInvalidInput, "class frequency " + std::to_string(f) + " is negative or non-finite");
    }
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-6) {
    throw Error(ErrorKind::kInvalidInput, "class frequencies sum to " + std::to_string(total) + ", expected 1");
  }
  std::vector<double> sorted(freqs.begin(), freqs.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  const double median = n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);

  ClassWeights weights;
  weights.w.reserve(n);
  for (double f : freqs) {
    weights.w.push_back(std::clamp(median / std::max(f, 1e-8), kMinClassWeight, kMaxClassWeight));
  }
  return weights;
}

namespace {

std::size_t check_probs(const Tensor& probs) {
  if (probs.rank() < 2 || probs.channels() < 2) {
    throw Error(ErrorKind::kShape, "probabilities need shape [..., C] with C >= 2, got " + probs.shape_string());
  }
  return probs.rows();
}

void check_labels(const Tensor& probs, const LabelMap& labels, const char* what) {
  const std::size_t pixels = check_probs(probs);
  if (labels.size() != pixels) {
    throw Error(ErrorKind::kShape, std::string(what) + " cover " + std::to_string(labels.size()) + " pixels, probabilities " +
                                       std::to_string(pixels));
  }
  const auto classes = static_cast<std::int32_t>(probs.channels());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes) {
      throw Error(ErrorKind::kLabel, std::string(what) + " value " + std::to_string(labels[i]) + " at pixel " +
                                         std::to_string(i) + " outside [0, " + std::to_string(classes) + ")");
    }
  }
}

// Shared by PL and CBCE so that unit weights reproduce PL bit for bit.
LossOutput weighted_ce(const Tensor& probs, const LabelMap& labels, const double* weights) {
  check_labels(probs, labels, "labels");
  const std::size_t c = probs.channels();
  const std::size_t n = probs.rows();
  const double count = static_cast<double>(n);
  LossOutput out{0.0, Tensor(probs.shape())};
  auto g = out.grad_probs.data();
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto label = static_cast<std::size_t>(labels[i]);
    const double p = probs[i * c + label];
    const double w = weights ? weights[label] : 1.0;
    sum += -w * stable_log(p);
    g[i * c + label] = -w / (count * clamp_prob(p));
  }
  out.value = sum / count;
  return out;
}

}  // namespace

LossOutput pl_ce_loss(const Tensor& probs, const LabelMap& labels) { return weighted_ce(probs, labels, nullptr); }

LossOutput cbce_loss(const Tensor& probs, const LabelMap& labels, const ClassWeights& weights) {
  if (weights.w.size() != probs.channels()) {
    throw Error(ErrorKind::kShape, "got " + std::to_string(weights.w.size()) + " class weights for " +
                                       std::to_string(probs.channels()) + " classes");
  }
  for (double w : weights.w) {
    if (!(w >= kMinClassWeight && w <= kMaxClassWeight)) {
      throw Error(ErrorKind::kInvalidInput, "class weight " + std::to_string(w) + " outside [0.1, 10]");
    }
  }
  return weighted_ce(probs, labels, weights.w.data());
}

LossOutput nl_loss(const Tensor& probs, const LabelMap& comp_labels) {
  check_labels(probs, comp_labels, "complementary labels");
  const std::size_t c = probs.channels();
  const std::size_t n = probs.rows();
  const double count = static_cast<double>(n);
  LossOutput out{0.0, Tensor(probs.shape())};
  auto g = out.grad_probs.data();
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t idx = i * c + static_cast<std::size_t>(comp_labels[i]);
    sum += -stable_log1m(probs[idx]);
    g[idx] = 1.0 / (count * (1.0 - clamp_prob(probs[idx])));
  }
  out.value = sum / count;
  return out;
}

LossOutput msl_loss(const Tensor& probs) {
  const std::size_t n = check_probs(probs);
  const double count = static_cast<double>(n);
  LossOutput out{0.0, Tensor(probs.shape())};
  auto g = out.grad_probs.data();
  double sum = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    sum += probs[i] * probs[i];
    g[i] = -probs[i] / count;
  }
  out.value = -0.5 * sum / count;
  return out;
}

LossOutput entropy_loss(const Tensor& probs) {
  const std::size_t n = check_probs(probs);
  const double count = static_cast<double>(n);
  const double norm = std::log(static_cast<double>(probs.channels()));
  LossOutput out{0.0, Tensor(probs.shape())};
  auto g = out.grad_probs.data();
  double sum = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double log_p = stable_log(probs[i]);
    sum += -probs[i] * log_p;
    g[i] = -(log_p + 1.0) / (norm * count);
  }
  out.value = sum / (norm * count);
  return out;
}

LossOutput plnl_loss(const Tensor& probs, const LabelMap& pseudo_labels, const LabelMap& comp_labels,
                     const Mask& invalid_mask, double lambda_nl) {
  check_labels(probs, pseudo_labels, "pseudo labels");
  check_labels(probs, comp_labels, "complementary labels");
  if (invalid_mask.size() != probs.rows()) throw Error(ErrorKind::kShape, "invalid mask size mismatch");
  if (!(lambda_nl >= 0.0) || !std::isfinite(lambda_nl)) {
    throw Error(ErrorKind::kInvalidInput, "lambda_nl must be finite and non-negative");
  }
  for (std::size_t i = 0; i < invalid_mask.size(); ++i) {
    if (invalid_mask[i] > 1) {
      throw Error(ErrorKind::kMask, "invalid mask value " + std::to_string(invalid_mask[i]) + " at pixel " +
                                        std::to_string(i) + " is not binary");
    }
  }
  const std::size_t c = probs.channels();
  const std::size_t n = probs.rows();
  const double count = static_cast<double>(n);
  LossOutput out{0.0, Tensor(probs.shape())};
  auto g = out.grad_probs.data();
  // PL and NL sums are kept apart so the value is exactly affine in lambda.
  double pl_sum = 0.0;
  double nl_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (invalid_mask[i] == 0) {
      const std::size_t idx = i * c + static_cast<std::size_t>(pseudo_labels[i]);
      pl_sum += -stable_log(probs[idx]);
      g[idx] = -1.0 / (count * clamp_prob(probs[idx]));
    } else {
      const std::size_t idx = i * c + static_cast<std::size_t>(comp_labels[i]);
      nl_sum += -stable_log1m(probs[idx]);
      g[idx] = lambda_nl / (count * (1.0 - clamp_prob(probs[idx])));
    }
  }
  out.value = (pl_sum + lambda_nl * nl_sum) / count;
  return out;
}

}  // namespace prsfda
