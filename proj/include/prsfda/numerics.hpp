#pragma once

#include <functional>
#include <span>
#include <vector>

#include "prsfda/tensor.hpp"

namespace prsfda {

// Probability clamp shared by every log in the loss code.
inline constexpr double kProbEpsilon = 1e-7;
inline constexpr double kDefaultFiniteDiffStep = 1e-5;

// Softmax along the last axis. Throws kInvalidInput on non-finite logits or
// fewer than two classes.
Tensor softmax(const Tensor& logits);
void softmax_inplace(std::span<double> row);

// log(clamp(p)) and log(1 - clamp(p)) with clamp to [eps, 1 - eps].
double stable_log(double p);
double stable_log1m(double p);
Tensor stable_log(const Tensor& p);
Tensor stable_log1m(const Tensor& p);

double clamp_prob(double p) noexcept;

using ScalarFunction = std::function<double(std::span<const double>)>;

// Central-difference gradient of `f` at `x`.
std::vector<double> finite_diff_gradient(const ScalarFunction& f, std::span<const double> x,
                                         double h = kDefaultFiniteDiffStep);

// |a - b| / max(|a|, |b|, 1e-8)
double relative_error(double a, double b) noexcept;
double max_relative_error(std::span<const double> a, std::span<const double> b);

}  // namespace prsfda
